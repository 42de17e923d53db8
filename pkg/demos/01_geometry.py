"""Box arithmetic: IoU, merging, YOLO labels and offsets, anchor priors.

Run: python demos/01_geometry.py
"""
import numpy as np

from detkit import Box, iou, merge
from detkit.geometry import YoloOffsets, cluster_anchors, decode_yolo, encode_yolo, from_normalized, to_normalized

import scene


def main():
    a, b = Box(0, 0, 10, 10), Box(1, 1, 11, 11)
    print(f"IoU of {a.as_tuple()} and {b.as_tuple()}: {iou(a, b):.4f} (81/119)")

    # overlapping ulcer outlines collapse into their outer boundary
    print("merge:", merge(Box(2, 3, 8, 9), Box(5, 1, 10, 7)).as_tuple())

    # pixel box to a normalized YOLO label and back
    n = to_normalized(Box(100, 50, 300, 250), 640, 480)
    print("normalized:", n, "->", from_normalized(n, 640, 480).as_tuple())

    # raw network offsets decode around a grid cell and an anchor prior
    t = YoloOffsets(tx=0.2, ty=-0.4, tw=0.3, th=-0.1, cellx=5, celly=3, pw=116, ph=90)
    box = decode_yolo(t, stride=32)
    back = encode_yolo(box, (5, 3), (116, 90), 32)
    print("decoded:", tuple(round(v, 3) for v in box.as_tuple()),
          "re-encoded tx,ty,tw,th:", tuple(round(v, 6) for v in (back.tx, back.ty, back.tw, back.th)))

    # anchor priors from the dataset's own box shapes (1 - IoU distance)
    rng = np.random.default_rng(0)
    boxes = [a.box for a in scene.ground_truth(rng, n_images=400)]
    for k in (3, 9):
        anchors = cluster_anchors(boxes, k, seed=0)
        print(f"{k} anchors:", [(round(w), round(h)) for w, h in anchors])


if __name__ == "__main__":
    main()

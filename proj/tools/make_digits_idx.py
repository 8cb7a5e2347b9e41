#!/usr/bin/env python3
"""Regenerates the bundled handwritten-digits corpus under data/ as IDX files.

The images are the UCI 8x8 handwritten digits shipped with scikit-learn
(1797 samples, 10 classes, pixel values 0..16 rescaled to 0..255). The
train/test split is stratified per class and deterministic.

The generated files are committed, so this script only needs to run when
refreshing them.
"""

import os
import struct

import numpy as np
from sklearn.datasets import load_digits

SEED = 20240601
TRAIN_FRACTION = 0.75
OUT_DIR = os.path.join(os.path.dirname(os.path.abspath(__file__)), "..", "data")


def write_idx(images: np.ndarray, labels: np.ndarray, prefix: str) -> None:
    n, h, w = images.shape
    with open(prefix + "-images-idx3-ubyte", "wb") as f:
        f.write(struct.pack(">IIII", 0x00000803, n, h, w))
        f.write(images.astype(np.uint8).tobytes())
    with open(prefix + "-labels-idx1-ubyte", "wb") as f:
        f.write(struct.pack(">II", 0x00000801, n))
        f.write(labels.astype(np.uint8).tobytes())


def main() -> None:
    digits = load_digits()
    images = np.round(digits.images * (255.0 / 16.0)).astype(np.uint8)
    labels = digits.target.astype(np.uint8)

    rng = np.random.default_rng(SEED)
    train_idx, test_idx = [], []
    for c in range(10):
        idx = np.flatnonzero(labels == c)
        idx = idx[rng.permutation(len(idx))]
        cut = int(round(TRAIN_FRACTION * len(idx)))
        train_idx.extend(idx[:cut])
        test_idx.extend(idx[cut:])
    train_idx = np.sort(np.asarray(train_idx))
    test_idx = np.sort(np.asarray(test_idx))

    os.makedirs(OUT_DIR, exist_ok=True)
    write_idx(images[train_idx], labels[train_idx], os.path.join(OUT_DIR, "digits-train"))
    write_idx(images[test_idx], labels[test_idx], os.path.join(OUT_DIR, "digits-test"))
    print(f"train: {len(train_idx)} images, test: {len(test_idx)} images -> {OUT_DIR}")


if __name__ == "__main__":
    main()

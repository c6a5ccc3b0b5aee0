#!/usr/bin/env python3
"""Build the digits-0/1 MNIST subset used by the pixel-flipping acceptance test.

Source: the 5000-image MNIST sample bundled with the mlxtend wheel
(mlxtend/data/data/mnist_5k.csv.gz, 500 images per digit, 784 pixels + label).

    pip download mlxtend --no-deps -d /tmp/mlx
    python3 -m zipfile -e /tmp/mlx/mlxtend-*.whl /tmp/mlx
    python3 tools/make_mnist01.py /tmp/mlx/mlxtend/data/data/mnist_5k.csv.gz data

Writes IDX files (uint8 images 0x00000803, labels 0x00000801). The first 400
images of each digit go to the train split, the remaining 100 to the test split.
"""
import gzip
import struct
import sys
from pathlib import Path

import numpy as np


def write_images(path, images):
    with open(path, "wb") as f:
        f.write(struct.pack(">IIII", 0x00000803, len(images), 28, 28))
        f.write(images.astype(np.uint8).tobytes())


def write_labels(path, labels):
    with open(path, "wb") as f:
        f.write(struct.pack(">II", 0x00000801, len(labels)))
        f.write(labels.astype(np.uint8).tobytes())


def main():
    src, out = Path(sys.argv[1]), Path(sys.argv[2])
    rows = np.genfromtxt(gzip.open(src), delimiter=",")
    pixels, labels = rows[:, :-1], rows[:, -1].astype(int)
    train_idx, test_idx = [], []
    for digit in (0, 1):
        idx = np.flatnonzero(labels == digit)
        train_idx.extend(idx[:400])
        test_idx.extend(idx[400:])
    # interleave classes deterministically
    train_idx = sorted(train_idx)
    test_idx = sorted(test_idx)
    out.mkdir(parents=True, exist_ok=True)
    write_images(out / "mnist01-train-images.idx3-ubyte", pixels[train_idx])
    write_labels(out / "mnist01-train-labels.idx1-ubyte", labels[train_idx])
    write_images(out / "mnist01-test-images.idx3-ubyte", pixels[test_idx])
    write_labels(out / "mnist01-test-labels.idx1-ubyte", labels[test_idx])


if __name__ == "__main__":
    main()

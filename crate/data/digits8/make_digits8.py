"""Regenerate the 8x8 digit IDX files from the scikit-learn digits set.

Pixel values 0..16 are rescaled to bytes with round(v * 255 / 16). The
first 1500 images form the training split and the remaining 297 the test
split.
"""
import struct

import numpy as np
from sklearn.datasets import load_digits


def write(prefix, images, labels):
    with open(prefix + "-images-idx3-ubyte", "wb") as f:
        f.write(struct.pack(">IIII", 0x803, len(images), 8, 8))
        f.write(images.tobytes())
    with open(prefix + "-labels-idx1-ubyte", "wb") as f:
        f.write(struct.pack(">II", 0x801, len(labels)))
        f.write(labels.tobytes())


digits = load_digits()
images = np.round(digits.images * 255.0 / 16.0).astype(np.uint8)
labels = digits.target.astype(np.uint8)
write("train", images[:1500], labels[:1500])
write("test", images[1500:], labels[1500:])

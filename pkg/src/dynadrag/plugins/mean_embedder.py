"""Embedder plugin: per-channel mean and standard deviation (D=6).

Usage: image paths on stdin, one per line; emits a metadata header line
then one JSON vector per input line.
"""
import json
import sys

import numpy as np
from PIL import Image


def embed(path: str) -> list[float]:
    img = np.asarray(Image.open(path).convert("RGB"), dtype=np.float64) / 255.0
    return [*img.mean(axis=(0, 1)).tolist(), *img.std(axis=(0, 1)).tolist()]


def main() -> None:
    print(json.dumps({"name": "mean-embedder", "version": "1", "dim": 6}))
    for line in sys.stdin:
        line = line.strip()
        if line:
            print(json.dumps(embed(line)))


if __name__ == "__main__":
    main()

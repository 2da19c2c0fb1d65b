"""Perceptual-distance plugin: mean absolute pixel difference (0 = identical).

Usage: tab-separated path pairs on stdin; emits a metadata header line then
one JSON scalar per pair.
"""
import json
import sys

import numpy as np
from PIL import Image


def score(path_a: str, path_b: str) -> float:
    a = np.asarray(Image.open(path_a).convert("RGB"), dtype=np.float64) / 255.0
    b = np.asarray(Image.open(path_b).convert("RGB"), dtype=np.float64) / 255.0
    return float(np.abs(a - b).mean())


def main() -> None:
    print(json.dumps({"name": "absdiff", "version": "1"}))
    for line in sys.stdin:
        line = line.strip()
        if line:
            a, b = line.split("\t")
            print(json.dumps(score(a, b)))


if __name__ == "__main__":
    main()

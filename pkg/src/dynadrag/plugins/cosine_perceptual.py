"""Perceptual-similarity plugin: cosine similarity of flattened pixels
(1.0 = identical).

Usage: tab-separated path pairs on stdin; emits a metadata header line then
one JSON scalar per pair.
"""
import json
import sys

import numpy as np
from PIL import Image


def score(path_a: str, path_b: str) -> float:
    a = np.asarray(Image.open(path_a).convert("RGB"), dtype=np.float64).ravel()
    b = np.asarray(Image.open(path_b).convert("RGB"), dtype=np.float64).ravel()
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na == 0 or nb == 0:
        return 1.0 if na == nb else 0.0
    return float(a @ b / (na * nb))


def main() -> None:
    print(json.dumps({"name": "pixel-cosine", "version": "1"}))
    for line in sys.stdin:
        line = line.strip()
        if line:
            a, b = line.split("\t")
            print(json.dumps(score(a, b)))


if __name__ == "__main__":
    main()

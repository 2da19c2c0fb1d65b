"""Edit-quality metrics over (edited, target) image sets.

Fréchet distance runs over the vectors of a pluggable embedder; pairwise
metrics (MSE built in, perceptual ones pluggable) are averaged over aligned
filename pairs. Plugins are executables: paths in on stdin, JSON lines out,
first line being a {"name", "version", "dim"} metadata header.
"""
from __future__ import annotations

import hashlib
import json
import logging
import shlex
import subprocess
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image

logger = logging.getLogger(__name__)

IMAGE_SUFFIXES = {".png", ".jpg", ".jpeg", ".bmp"}


@dataclass
class EmbeddingSet:
    vectors: np.ndarray  # (N, D)
    source: str = ""

    def __post_init__(self):
        self.vectors = np.asarray(self.vectors, dtype=np.float64)
        if self.vectors.ndim != 2 or self.vectors.shape[0] < 2:
            raise ValueError("embedding set needs an (N >= 2, D) matrix")
        if not np.isfinite(self.vectors).all():
            raise ValueError("embedding set contains non-finite values")

    def moments(self) -> tuple[np.ndarray, np.ndarray]:
        mu = self.vectors.mean(axis=0)
        cov = np.cov(self.vectors, rowvar=False)
        return mu, np.atleast_2d(cov)


@dataclass
class MetricReport:
    metrics: dict = field(default_factory=dict)  # fid, mse_x1e3, lpips, clip_sim
    set_sizes: tuple = (0, 0)
    plugins: dict = field(default_factory=dict)
    config_hash: str = ""

    def to_dict(self) -> dict:
        return {"metrics": self.metrics, "set_sizes": list(self.set_sizes),
                "plugins": self.plugins, "config_hash": self.config_hash}

    def save(self, path: "str | Path") -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n")

    def to_table(self) -> str:
        columns = [("FID", "fid"), ("MSE (x10^3)", "mse_x1e3"),
                   ("LPIPS", "lpips"), ("CLIP SIM", "clip_sim")]
        header, values = [], []
        for title, key in columns:
            cell = f"{self.metrics[key]:.4f}" if key in self.metrics else "-"
            width = max(len(title), len(cell))
            header.append(title.rjust(width))
            values.append(cell.rjust(width))
        return "  ".join(header) + "\n" + "  ".join(values)


def frechet_distance(mu1, cov1, mu2, cov2) -> float:
    """||mu1-mu2||^2 + Tr(C1 + C2 - 2 (C1 C2)^(1/2)), the matrix root taken
    through the symmetric product C1^(1/2) C2 C1^(1/2) with negative
    eigenvalues clipped at zero."""
    mu1, mu2 = np.atleast_1d(np.asarray(mu1, float)), np.atleast_1d(np.asarray(mu2, float))
    cov1, cov2 = np.atleast_2d(np.asarray(cov1, float)), np.atleast_2d(np.asarray(cov2, float))
    if mu1.shape != mu2.shape or cov1.shape != cov2.shape or cov1.shape[0] != mu1.shape[0]:
        raise ValueError("moment dimensions do not match")
    covs = []
    for name, cov in (("cov1", cov1), ("cov2", cov2)):
        asym = float(np.abs(cov - cov.T).max())
        if asym >= 1e-8:
            raise ValueError(f"{name} is not symmetric (max asymmetry {asym:.3g})")
        if asym > 0:
            logger.warning("%s symmetrized (asymmetry %.3g)", name, asym)
        covs.append((cov + cov.T) / 2)
    cov1, cov2 = covs

    w1, v1 = np.linalg.eigh(cov1)
    root1 = (v1 * np.sqrt(np.clip(w1, 0, None))) @ v1.T
    inner = root1 @ cov2 @ root1
    wm = np.linalg.eigvalsh((inner + inner.T) / 2)
    tr_root = float(np.sqrt(np.clip(wm, 0, None)).sum())
    value = float(((mu1 - mu2) ** 2).sum() + np.trace(cov1) + np.trace(cov2) - 2 * tr_root)
    return max(value, 0.0)


def mse(a: np.ndarray, b: np.ndarray) -> float:
    a, b = np.asarray(a, dtype=np.float64), np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"image shapes differ: {a.shape} vs {b.shape}")
    return float(((a - b) ** 2).mean())


# -- plugin protocol -----------------------------------------------------------


def _run_plugin(command: str, lines: list[str], expected: int) -> tuple[dict, list]:
    proc = subprocess.run(shlex.split(command), input="\n".join(lines) + "\n",
                          capture_output=True, text=True)
    if proc.returncode != 0:
        raise RuntimeError(f"plugin {command!r} failed: {proc.stderr.strip()}")
    out = [ln for ln in proc.stdout.splitlines() if ln.strip()]
    if len(out) != expected + 1:
        raise RuntimeError(f"plugin {command!r} emitted {len(out)} lines, "
                           f"expected metadata + {expected}")
    meta = json.loads(out[0])
    return meta, [json.loads(ln) for ln in out[1:]]


def run_embedder(command: str, paths: list[Path]) -> tuple[dict, EmbeddingSet]:
    meta, rows = _run_plugin(command, [str(p) for p in paths], len(paths))
    return meta, EmbeddingSet(np.asarray(rows, dtype=np.float64), source=command)


def run_perceptual(command: str, pairs: list[tuple[Path, Path]]) -> tuple[dict, list[float]]:
    lines = [f"{a}\t{b}" for a, b in pairs]
    meta, rows = _run_plugin(command, lines, len(pairs))
    return meta, [float(r) for r in rows]


# -- set evaluation ------------------------------------------------------------


def _list_images(directory: "str | Path") -> dict[str, Path]:
    directory = Path(directory)
    return {p.name: p for p in sorted(directory.iterdir())
            if p.suffix.lower() in IMAGE_SUFFIXES}


def _load_unit_image(path: Path) -> np.ndarray:
    return np.asarray(Image.open(path).convert("RGB"), dtype=np.float64) / 255.0


def evaluate(edited_dir: "str | Path", target_dir: "str | Path",
             embedder: "str | None" = None,
             perceptual: "dict[str, str] | None" = None) -> MetricReport:
    """Metric report over two directories aligned by filename. ``embedder``
    enables the Fréchet score; ``perceptual`` maps report fields (e.g.
    "lpips", "clip_sim") to plugin commands. Absent plugins leave their
    fields out of the report."""
    edited, target = _list_images(edited_dir), _list_images(target_dir)
    missing = sorted(set(edited) ^ set(target))
    if missing:
        raise ValueError(f"sets are not aligned; unmatched names: {missing}")
    names = sorted(edited)
    if not names:
        raise ValueError("no images found")
    pairs = [(edited[n], target[n]) for n in names]

    report = MetricReport(set_sizes=(len(edited), len(target)))
    report.metrics["mse_x1e3"] = 1e3 * float(np.mean(
        [mse(_load_unit_image(a), _load_unit_image(b)) for a, b in pairs]))

    if embedder:
        if len(names) < 2:
            raise ValueError("the Fréchet score needs at least 2 images per set "
                             f"for covariance estimation; got {len(names)}")
        meta_e, set_e = run_embedder(embedder, [edited[n] for n in names])
        meta_t, set_t = run_embedder(embedder, [target[n] for n in names])
        report.plugins["embedder"] = {"command": embedder, **meta_e}
        if meta_e != meta_t:
            raise RuntimeError("embedder metadata differs between runs")
        report.metrics["fid"] = frechet_distance(*set_e.moments(), *set_t.moments())

    for name, command in (perceptual or {}).items():
        meta, scores = run_perceptual(command, pairs)
        report.plugins[name] = {"command": command, **meta}
        report.metrics[name] = float(np.mean(scores))

    digest = hashlib.sha256(json.dumps(
        {"names": names, "plugins": report.plugins}, sort_keys=True).encode()).hexdigest()
    report.config_hash = digest[:16]
    return report

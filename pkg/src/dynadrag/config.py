"""Edit-loop configuration and its flat key-value file format.

The config file is a flat TOML subset: ``key = value`` lines, ``#`` comments,
and optional ``[section]`` tables whose keys are read as ``section.key``.
Top-level keys map one-to-one onto :class:`EditConfig` fields.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass, fields
from pathlib import Path


class SelectionMode(str, enum.Enum):
    ADS = "ADS"  # re-select valid pairs every iteration
    FDS = "FDS"  # select once at the first iteration, then freeze
    RS = "RS"    # random control: same cardinality ADS would pick
    OFF = "OFF"  # all pairs stay valid

    @classmethod
    def parse(cls, value: "str | SelectionMode") -> "SelectionMode":
        if isinstance(value, SelectionMode):
            return value
        return cls(value.upper())


@dataclass
class EditConfig:
    max_iterations: int = 25
    ms_steps_per_iteration: int = 5
    ms_learning_rate: float = 0.01
    lambda_mask: float = 0.1
    r1_patch_radius: int = 1
    heatmap_radius: int = 4
    ddim_steps: int = 50
    lora_rank: int = 16
    lora_steps: int = 200
    lora_learning_rate: float = 2e-4
    similarity_threshold: float = 0.6
    stop_distance: float = 2.0
    selection_mode: SelectionMode = SelectionMode.ADS
    # Extensions beyond the flat keys above; settable via [ms] / [loop] tables.
    ms_optimizer: str = "adam"  # "adam" or "sgd" (plain descent)
    carry_latent: bool = False  # reuse the optimized latent instead of re-inverting

    def __post_init__(self):
        self.selection_mode = SelectionMode.parse(self.selection_mode)
        for name in ("max_iterations", "ms_steps_per_iteration", "ddim_steps",
                     "lora_rank", "lora_steps"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be a positive count")
        for name in ("ms_learning_rate", "lora_learning_rate", "lambda_mask"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        for name in ("r1_patch_radius", "heatmap_radius"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")
        if not (-1.0 < self.similarity_threshold <= 1.0):
            raise ValueError("similarity_threshold must be in (-1, 1]")
        if self.stop_distance < 0:
            raise ValueError("stop_distance must be >= 0")
        if self.ms_optimizer not in ("adam", "sgd"):
            raise ValueError("ms_optimizer must be 'adam' or 'sgd'")

    def to_dict(self) -> dict:
        d = {}
        for f in fields(self):
            v = getattr(self, f.name)
            d[f.name] = v.value if isinstance(v, SelectionMode) else v
        return d

    @classmethod
    def from_dict(cls, values: dict) -> "EditConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(values) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        return cls(**values)

    def save(self, path: "str | Path") -> None:
        write_flat_config(path, self.to_dict())

    @classmethod
    def load(cls, path: "str | Path") -> "EditConfig":
        flat, tables = read_flat_config(path)
        values = dict(flat)
        # Dotted extension keys override their flat aliases.
        if "optimizer" in tables.get("ms", {}):
            values["ms_optimizer"] = tables["ms"]["optimizer"]
        if "carry_latent" in tables.get("loop", {}):
            values["carry_latent"] = tables["loop"]["carry_latent"]
        return cls.from_dict(values)


def load_session_config(path: "str | Path") -> tuple["EditConfig", dict]:
    """Load an edit config plus the ``[backend]`` table (kind, model_id, ...)."""
    cfg = EditConfig.load(path)
    _, tables = read_flat_config(path)
    return cfg, dict(tables.get("backend", {}))


def _parse_value(raw: str):
    raw = raw.strip()
    if raw.startswith('"') and raw.endswith('"') and len(raw) >= 2:
        return raw[1:-1]
    low = raw.lower()
    if low == "true":
        return True
    if low == "false":
        return False
    try:
        return int(raw)
    except ValueError:
        pass
    try:
        return float(raw)
    except ValueError:
        pass
    return raw  # bare string


def _format_value(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, (int, float)):
        return repr(v)
    return f'"{v}"'


def read_flat_config(path: "str | Path") -> tuple[dict, dict]:
    """Parse a flat config file into (top-level keys, {section: keys})."""
    flat: dict = {}
    tables: dict = {}
    current = None
    for lineno, line in enumerate(Path(path).read_text().splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if line.startswith("[") and line.endswith("]"):
            current = line[1:-1].strip()
            tables.setdefault(current, {})
            continue
        if "=" not in line:
            raise ValueError(f"{path}:{lineno}: expected 'key = value'")
        key, raw = line.split("=", 1)
        key = key.strip()
        target = tables[current] if current else flat
        target[key] = _parse_value(raw)
    return flat, tables


def write_flat_config(path: "str | Path", flat: dict, tables: "dict | None" = None) -> None:
    lines = [f"{k} = {_format_value(v)}" for k, v in flat.items()]
    for section, values in (tables or {}).items():
        lines.append(f"[{section}]")
        lines.extend(f"{k} = {_format_value(v)}" for k, v in values.items())
    Path(path).write_text("\n".join(lines) + "\n")

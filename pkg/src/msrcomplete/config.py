"""Run configuration: plain ``key = value`` lines, ``#`` starts a comment.

Defaults are the desk-scale experiment. Every value is checked against the
module preconditions before any work starts; errors name the offending key.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, fields
from pathlib import Path

from .msr import MODES, SUBSAMPLED


class ConfigError(ValueError):
    def __init__(self, key: str, msg: str):
        super().__init__(f"config key {key!r}: {msg}")
        self.key = key


@dataclass
class RunConfig:
    # physics and data
    k: float = 5.0
    two_m: int = 32
    m1: int = 16
    n_nodes: int = 128
    count: int = 2500
    shape_N: int = 5
    shape_q: float = 0.0
    a0_min: float = 0.5
    a0_max: float = 1.5
    # task
    mode: str = "phased"
    subsample_p: int = 0
    n1: int = 2000
    n2: int = 500
    test_start: int = -1  # -1: right after the training records
    # network and training
    scale: float = 0.125
    epochs: int = 30
    batch: int = 64
    loss: str = "l2"
    alpha: float = 1e-3
    standardize: bool = False  # centre and rescale inputs and targets
    # seeds
    master_seed: int = 0
    train_seed: int = 0
    subsample_seed: int = 0
    noise_seed: int = 0
    noise: float = 0.0
    # imaging
    grid_x_min: float = -4.0
    grid_x_max: float = 4.0
    grid_y_min: float = -4.0
    grid_y_max: float = 4.0
    grid_nx: int = 201
    grid_ny: int = 201
    # metrics
    psnr_conventional: bool = False
    # execution
    workers: int = 1
    deterministic: bool = False
    dataset_path: str = ""
    checkpoint_path: str = ""

    def validate(self) -> "RunConfig":
        def need(key, ok, msg):
            if not ok:
                raise ConfigError(key, f"{msg} (got {getattr(self, key)!r})")

        need("k", self.k > 0, "must be positive")
        need("two_m", self.two_m >= 4 and self.two_m % 2 == 0, "must be an even integer >= 4")
        need("m1", 0 < self.m1 < self.two_m, "must lie strictly between 0 and two_m")
        need("n_nodes", self.n_nodes >= 32 and self.n_nodes % 2 == 0, "must be an even integer >= 32")
        need("count", self.count >= 1, "must be >= 1")
        need("shape_N", self.shape_N >= 0, "must be >= 0")
        need("a0_min", self.a0_min > 0, "must be positive")
        need("a0_max", self.a0_max >= self.a0_min, "must be >= a0_min")
        need("mode", self.mode in MODES, f"must be one of {', '.join(MODES)}")
        if self.mode == SUBSAMPLED:
            need("subsample_p", 0 < self.subsample_p <= min(self.m1, self.two_m - self.m1), "must lie in 1..min(m1, m2)")
        need("n1", self.n1 > 0, "must be positive")
        need("n2", self.n2 > 0, "must be positive")
        need("test_start", self.test_start == -1 or self.test_start >= self.n1, "must be -1 or >= n1")
        need("n2", self.test_offset + self.n2 <= self.count, "train and test records exceed count")
        need("scale", self.scale > 0, "must be positive")
        need("epochs", self.epochs >= 0, "must be >= 0")
        need("batch", self.batch >= 2, "must be >= 2")
        need("loss", self.loss in ("l1", "l2"), "must be l1 or l2")
        need("alpha", self.alpha >= 0, "must be >= 0")
        need("noise", self.noise >= 0, "must be >= 0")
        for key in ("master_seed", "train_seed", "subsample_seed", "noise_seed"):
            need(key, getattr(self, key) >= 0, "seeds must be non-negative")
        need("grid_x_max", self.grid_x_max > self.grid_x_min, "must exceed grid_x_min")
        need("grid_y_max", self.grid_y_max > self.grid_y_min, "must exceed grid_y_min")
        need("grid_nx", self.grid_nx >= 2, "must be >= 2")
        need("grid_ny", self.grid_ny >= 2, "must be >= 2")
        need("workers", self.workers >= 1, "must be >= 1")
        return self

    @property
    def test_offset(self) -> int:
        return self.n1 if self.test_start < 0 else self.test_start

    def snapshot(self) -> dict:
        return dataclasses.asdict(self)

    def to_text(self) -> str:
        return "".join(f"{key} = {_format(val)}\n" for key, val in self.snapshot().items())


def _format(val) -> str:
    if isinstance(val, bool):
        return "true" if val else "false"
    return str(val)


def _convert(key: str, kind: type, raw: str):
    try:
        if kind is bool:
            low = raw.lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError
        if kind is int:
            return int(raw)
        if kind is float:
            return float(raw)
        return raw
    except ValueError:
        raise ConfigError(key, f"cannot parse {raw!r} as {kind.__name__}") from None


_TYPES = {"int": int, "float": float, "bool": bool, "str": str}


def parse_config(text: str, base: RunConfig | None = None) -> RunConfig:
    cfg = dataclasses.replace(base) if base is not None else RunConfig()
    kinds = {f.name: _TYPES[f.type] if isinstance(f.type, str) else f.type for f in fields(RunConfig)}
    seen = set()
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(line, f"line {lineno} is not key = value")
        key, raw = (s.strip() for s in line.split("=", 1))
        if key not in kinds:
            raise ConfigError(key, "unknown key")
        if key in seen:
            raise ConfigError(key, "given twice")
        seen.add(key)
        setattr(cfg, key, _convert(key, kinds[key], raw))
    return cfg.validate()


def load_config(path) -> RunConfig:
    return parse_config(Path(path).read_text())

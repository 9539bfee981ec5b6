"""Run configuration: JSON config file with command-line overrides (flag wins)."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, fields
from pathlib import Path

from .errors import InputError, MalformedRecord, MissingFile


@dataclass
class RunConfig:
    # Paths; corr/depth/maps default to the scene directory when unset.
    scene: str | None = None
    corr: str | None = None
    depth: str | None = None
    maps: str | None = None
    out: str | None = None
    model: str | None = None
    cloud: str | None = None
    gaussians: str | None = None
    spec: str | None = None
    view_id: int | None = None

    # Pipeline parameters.
    gate_px: float = 2.0
    epsilon: float | None = None  # None: half the median NN spacing
    dedup_radius: float | None = None  # None: same as epsilon
    kernel_radius: int = 1
    stride: int = 4
    min_conf: float = 0.0

    # Classifier training.
    ratio: float = 1.0
    r_neg: float | None = None  # None: 2% of the bounding-box diagonal
    iters: int = 1000
    lr: float = 0.001
    seed: int = 0
    include_offset: bool = True

    # Objective and descent demo.
    lam: float = 0.2
    steps: int = 500
    n_points: int = 500
    step_size: float = 0.01
    snapshot_every: int = 50

    threads: int | None = None  # None: hardware parallelism

    def validate(self) -> "RunConfig":
        if self.gate_px <= 0:
            raise InputError(f"gate_px must be > 0, got {self.gate_px}")
        if self.epsilon is not None and self.epsilon < 0:
            raise InputError("epsilon must be >= 0")
        if self.dedup_radius is not None and self.dedup_radius < 0:
            raise InputError("dedup_radius must be >= 0")
        if self.kernel_radius < 0:
            raise InputError("kernel_radius must be >= 0")
        if self.stride < 1:
            raise InputError("stride must be >= 1")
        if not (0.0 <= self.min_conf <= 1.0):
            raise InputError("min_conf must lie in [0, 1]")
        if self.ratio <= 0:
            raise InputError("ratio must be > 0")
        if self.r_neg is not None and self.r_neg < 0:
            raise InputError("r_neg must be >= 0")
        if self.iters < 0:
            raise InputError("iters must be >= 0")
        if self.lr <= 0:
            raise InputError("lr must be > 0")
        if not (0.0 <= self.lam <= 1.0):
            raise InputError(f"lambda must lie in [0, 1], got {self.lam}")
        if self.steps < 0:
            raise InputError("steps must be >= 0")
        if self.n_points < 1:
            raise InputError("n_points must be >= 1")
        if self.step_size <= 0:
            raise InputError("step_size must be > 0")
        if self.snapshot_every < 1:
            raise InputError("snapshot_every must be >= 1")
        if self.threads is not None and self.threads < 1:
            raise InputError("threads must be >= 1")
        return self

    def resolved(self) -> dict:
        """Full config with defaults materialized, for run reports."""
        return asdict(self)

    @classmethod
    def load(cls, config_path=None, overrides: dict | None = None) -> "RunConfig":
        values = {}
        if config_path is not None:
            path = Path(config_path)
            if not path.is_file():
                raise MissingFile(f"missing config {path}")
            try:
                with open(path, "r") as fh:
                    data = json.load(fh)
            except json.JSONDecodeError as exc:
                raise MalformedRecord(path, exc.lineno, f"invalid JSON: {exc.msg}")
            if not isinstance(data, dict):
                raise InputError(f"{path}: config must be a JSON object")
            known = {f.name for f in fields(cls)}
            unknown = set(data) - known
            if unknown:
                raise InputError(f"{path}: unknown config keys {sorted(unknown)}")
            values.update(data)
        if overrides:
            values.update({k: v for k, v in overrides.items() if v is not None})
        try:
            cfg = cls(**values)
        except TypeError as exc:
            raise InputError(f"bad config: {exc}")
        return cfg.validate()

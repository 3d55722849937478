"""Run configuration: JSON-codable schema validated before any compute.

Defaults follow the usual training recipe for this trainer: Adam gamma 1e-3
with beta1 0.9 / beta2 0.999 / eps 1e-8, batch size 128. Command-line flags
override file values field by field (the flag wins).
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from . import layers as L
from .errors import ConfigError
from .optim import DiminishingSchedule, FixedSchedule, OptimizerConfig, Schedule


# ---------------------------------------------------------------------------
# layer spec <-> dict
# ---------------------------------------------------------------------------


def layer_to_dict(spec: L.LayerSpec) -> dict:
    if isinstance(spec, L.Affine):
        return {"kind": "affine", "in": spec.in_dim, "out": spec.out_dim}
    if isinstance(spec, L.Relu):
        return {"kind": "relu"}
    if isinstance(spec, L.Tanh):
        return {"kind": "tanh"}
    if isinstance(spec, L.SoftmaxCrossEntropyHead):
        return {"kind": "softmax_xent", "classes": spec.num_classes}
    if isinstance(spec, L.MseHead):
        return {"kind": "mse"}
    raise ConfigError(f"unknown layer spec {spec!r}")


def layer_from_dict(d: dict) -> L.LayerSpec:
    kind = d.get("kind")
    if kind == "affine":
        return L.Affine(int(d["in"]), int(d["out"]))
    if kind == "relu":
        return L.Relu()
    if kind == "tanh":
        return L.Tanh()
    if kind == "softmax_xent":
        return L.SoftmaxCrossEntropyHead(int(d["classes"]))
    if kind == "mse":
        return L.MseHead()
    raise ConfigError(f"unknown layer kind {kind!r}")


def schedule_to_dict(s: Schedule) -> dict:
    if isinstance(s, FixedSchedule):
        return {"kind": "fixed", "gamma": s.gamma}
    if isinstance(s, DiminishingSchedule):
        return {"kind": "diminishing", "gamma0": s.gamma0}
    raise ConfigError(f"unknown schedule {s!r}")


def schedule_from_dict(d: dict) -> Schedule:
    kind = d.get("kind")
    if kind == "fixed":
        return FixedSchedule(float(d["gamma"]))
    if kind == "diminishing":
        return DiminishingSchedule(float(d["gamma0"]))
    raise ConfigError(f"unknown schedule kind {kind!r}")


def optimizer_to_dict(o: OptimizerConfig) -> dict:
    d = {"kind": o.kind}
    if o.kind == "sgd":
        d["schedule"] = schedule_to_dict(o.schedule)
        d["momentum"] = o.momentum
        d["weight_decay"] = o.weight_decay
    else:
        d.update(
            gamma=o.gamma,
            beta1=o.beta1,
            beta2=o.beta2,
            eps=o.eps,
            weight_decay=o.weight_decay,
        )
    return d


def optimizer_from_dict(d: dict) -> OptimizerConfig:
    kind = d.get("kind")
    if kind == "sgd":
        return OptimizerConfig(
            kind="sgd",
            schedule=schedule_from_dict(d.get("schedule", {"kind": "fixed", "gamma": 0.01})),
            momentum=float(d.get("momentum", 0.0)),
            weight_decay=float(d.get("weight_decay", 0.0)),
        )
    if kind == "adam":
        return OptimizerConfig(
            kind="adam",
            gamma=float(d.get("gamma", 1e-3)),
            beta1=float(d.get("beta1", 0.9)),
            beta2=float(d.get("beta2", 0.999)),
            eps=float(d.get("eps", 1e-8)),
            weight_decay=float(d.get("weight_decay", 0.0)),
        )
    raise ConfigError(f"unknown optimizer kind {kind!r}")


# ---------------------------------------------------------------------------
# run config
# ---------------------------------------------------------------------------

_MODES = ("emulated", "parallel")
_PRECISIONS = {"f64": np.float64, "f32": np.float32}
_SAMPLING = ("shuffle", "sequential", "with_replacement")
_INIT_SCHEMES = ("he_gaussian", "xavier_uniform", "zeros")


@dataclass(frozen=True)
class RunConfig:
    layers: tuple[L.LayerSpec, ...]
    dataset: dict = field(default_factory=dict)
    split_points: tuple[int, ...] = ()
    modules: Optional[int] = None  # auto-balanced split when set
    optimizer: OptimizerConfig = field(
        default_factory=lambda: OptimizerConfig("adam", gamma=1e-3)
    )
    mode: str = "emulated"
    batch_size: int = 128
    iterations: Optional[int] = None
    epochs: Optional[int] = None
    seed: int = 0
    precision: str = "f64"
    init_scheme: str = "he_gaussian"
    sampling: str = "shuffle"
    eval_every: int = 0
    out_dir: Optional[str] = None
    deterministic_timings: bool = False

    @property
    def dtype(self):
        return _PRECISIONS[self.precision]

    def validate(self) -> None:
        L.validate_network(list(self.layers))
        if self.mode not in _MODES:
            raise ConfigError(f"mode must be one of {_MODES}, got {self.mode!r}")
        if self.precision not in _PRECISIONS:
            raise ConfigError(f"precision must be f64 or f32, got {self.precision!r}")
        if self.sampling not in _SAMPLING:
            raise ConfigError(f"sampling must be one of {_SAMPLING}")
        if self.init_scheme not in _INIT_SCHEMES:
            raise ConfigError(f"init_scheme must be one of {_INIT_SCHEMES}")
        if (self.iterations is None) == (self.epochs is None):
            raise ConfigError("exactly one of iterations/epochs must be set")
        if self.iterations is not None and self.iterations < 0:
            raise ConfigError(f"iterations must be >= 0, got {self.iterations}")
        if self.epochs is not None and self.epochs < 0:
            raise ConfigError(f"epochs must be >= 0, got {self.epochs}")
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.split_points and self.modules is not None:
            raise ConfigError("give either split_points or modules, not both")
        if self.modules is not None and self.modules < 1:
            raise ConfigError(f"modules must be >= 1, got {self.modules}")
        if self.eval_every < 0:
            raise ConfigError(f"eval_every must be >= 0, got {self.eval_every}")
        if not self.dataset.get("kind"):
            raise ConfigError("dataset.kind is required")

    def to_dict(self) -> dict:
        return {
            "layers": [layer_to_dict(s) for s in self.layers],
            "dataset": self.dataset,
            "split_points": list(self.split_points),
            "modules": self.modules,
            "optimizer": optimizer_to_dict(self.optimizer),
            "mode": self.mode,
            "batch_size": self.batch_size,
            "iterations": self.iterations,
            "epochs": self.epochs,
            "seed": self.seed,
            "precision": self.precision,
            "init_scheme": self.init_scheme,
            "sampling": self.sampling,
            "eval_every": self.eval_every,
            "out_dir": self.out_dir,
            "deterministic_timings": self.deterministic_timings,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        known = {
            "layers",
            "dataset",
            "split_points",
            "modules",
            "optimizer",
            "mode",
            "batch_size",
            "iterations",
            "epochs",
            "seed",
            "precision",
            "init_scheme",
            "sampling",
            "eval_every",
            "out_dir",
            "deterministic_timings",
        }
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown config fields: {sorted(unknown)}")
        if "layers" not in d:
            raise ConfigError("config requires a layers list")
        kwargs = dict(d)
        kwargs["layers"] = tuple(layer_from_dict(x) for x in d["layers"])
        kwargs["split_points"] = tuple(int(p) for p in d.get("split_points", []))
        if "optimizer" in d:
            kwargs["optimizer"] = optimizer_from_dict(d["optimizer"])
        return cls(**kwargs)

    def with_overrides(self, **kwargs) -> "RunConfig":
        kwargs = {k: v for k, v in kwargs.items() if v is not None}
        return replace(self, **kwargs)

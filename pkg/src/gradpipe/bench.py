"""Speed measurements against the pipeline cost model T_F + T_B / K.

T_F and T_B are the per-iteration forward and backward wall times of plain
backpropagation, measured with the single-threaded executor at K = 1. For
each requested module count the parallel executor's iteration wall time is
measured and compared with the model prediction.
"""

from __future__ import annotations

import os
import time
from dataclasses import dataclass, field
from statistics import median
from typing import Optional

from .config import RunConfig
from .data import BatchSampler, next_batch
from .errors import ConfigError
from .partition import balanced_split_points, make_partition
from .pipeline import build_pipeline
from .training import build_dataset, build_network


@dataclass
class BenchEntry:
    K: int
    measured_ms: float
    model_ms: float
    speedup_vs_bp: float
    warning: Optional[str] = None

    def to_dict(self) -> dict:
        return {
            "K": self.K,
            "measured_ms": self.measured_ms,
            "model_ms": self.model_ms,
            "speedup_vs_bp": self.speedup_vs_bp,
            "warning": self.warning,
        }


@dataclass
class BenchReport:
    t_f_ms: float
    t_b_ms: float
    forward_share: float
    iterations: int
    repeats: int
    cores: int
    entries: list[BenchEntry] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "t_f_ms": self.t_f_ms,
            "t_b_ms": self.t_b_ms,
            "forward_share": self.forward_share,
            "iterations": self.iterations,
            "repeats": self.repeats,
            "cores": self.cores,
            "entries": [e.to_dict() for e in self.entries],
        }


def _measure_reference(cfg: RunConfig, iterations: int) -> tuple[float, float]:
    """Median per-iteration forward/backward ms at K = 1, emulated."""
    train_ds, _ = build_dataset(cfg)
    specs, states = build_network(cfg)
    part = make_partition(len(specs), [])
    sampler = BatchSampler(
        cfg.seed, min(cfg.batch_size, train_ds.n), train_ds.n, "shuffle"
    )
    fwd, bwd = [], []
    with build_pipeline("emulated", specs, states, part, cfg.optimizer) as pipe:
        for t in range(iterations):
            x, y, idx = next_batch(sampler, train_ds, t)
            rec = pipe.run_iteration(t, x, y, idx)
            fwd.append(rec.forward_ms)
            bwd.append(rec.backward_ms)
    if len(fwd) > 2:  # first iteration pays the JIT warmup
        fwd, bwd = fwd[1:], bwd[1:]
    return median(fwd), median(bwd)


def _measure_parallel(cfg: RunConfig, K: int, iterations: int) -> float:
    """Median coordinator-side iteration wall time (ms) with K module workers."""
    train_ds, _ = build_dataset(cfg)
    specs, states = build_network(cfg)
    if K > len(specs):
        raise ConfigError(f"K={K} exceeds layer count {len(specs)}")
    splits = balanced_split_points(specs, K)
    part = make_partition(len(specs), splits)
    sampler = BatchSampler(
        cfg.seed, min(cfg.batch_size, train_ds.n), train_ds.n, "shuffle"
    )
    times = []
    with build_pipeline("parallel", specs, states, part, cfg.optimizer) as pipe:
        for t in range(iterations):
            x, y, idx = next_batch(sampler, train_ds, t)
            t0 = time.perf_counter()
            pipe.run_iteration(t, x, y, idx)
            times.append((time.perf_counter() - t0) * 1e3)
    # iterations t < K-1 skip part of the backward work (warmup)
    steady = times[K:] if len(times) > 2 * K else times
    return median(steady)


def run_bench(
    cfg: RunConfig,
    k_list: list[int],
    iterations: int = 200,
    repeats: int = 3,
) -> BenchReport:
    cores = os.cpu_count() or 1
    ref = [_measure_reference(cfg, iterations) for _ in range(repeats)]
    t_f = median(r[0] for r in ref)
    t_b = median(r[1] for r in ref)
    report = BenchReport(
        t_f_ms=t_f,
        t_b_ms=t_b,
        forward_share=t_f / (t_f + t_b),
        iterations=iterations,
        repeats=repeats,
        cores=cores,
    )
    bp_ms = t_f + t_b
    for K in k_list:
        measured = median(
            _measure_parallel(cfg, K, iterations) for _ in range(repeats)
        )
        warning = None
        if K > cores:
            warning = f"only {cores} cores for {K} module workers"
        report.entries.append(
            BenchEntry(
                K=K,
                measured_ms=measured,
                model_ms=t_f + t_b / K,
                speedup_vs_bp=bp_ms / measured,
                warning=warning,
            )
        )
    return report


def default_bench_config(
    seed: int = 0, batch_size: int = 128, width: int = 512
) -> RunConfig:
    """A compute-heavy stack of equal affine blocks; splits stay balanced."""
    from . import layers as L
    from .optim import FixedSchedule, OptimizerConfig

    layers = (
        L.Affine(width, width),
        L.Tanh(),
        L.Affine(width, width),
        L.Tanh(),
        L.Affine(width, width),
        L.Tanh(),
        L.Affine(width, width),
        L.SoftmaxCrossEntropyHead(width),
    )
    dataset = {
        "kind": "blobs",
        "classes": width,
        "dim": width,
        "sep": 1.0,
        "n_train": max(4 * batch_size, 512),
        "n_test": 0,
    }
    return RunConfig(
        layers=layers,
        dataset=dataset,
        optimizer=OptimizerConfig("sgd", FixedSchedule(1e-3)),
        batch_size=batch_size,
        iterations=200,
        seed=seed,
    )

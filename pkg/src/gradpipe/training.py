"""The outer training loop: dataset, sampler, pipeline, evaluation, metrics."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from . import layers as L
from .config import RunConfig
from .data import BatchSampler, Dataset, load_idx, next_batch, synth_blobs
from .errors import ConfigError
from .partition import Partition, balanced_split_points, make_partition
from .pipeline import build_pipeline
from .runfiles import MetricsRow
from .tensor import RandomSource


def build_network(cfg: RunConfig) -> tuple[list[L.LayerSpec], list[L.LayerState]]:
    specs = list(cfg.layers)
    states = L.init_network(specs, RandomSource(cfg.seed), cfg.init_scheme, cfg.dtype)
    return specs, states


def resolve_partition(cfg: RunConfig) -> Partition:
    n = len(cfg.layers)
    if cfg.modules is not None:
        return make_partition(n, balanced_split_points(list(cfg.layers), cfg.modules))
    return make_partition(n, list(cfg.split_points))


def _load_csv(path: str) -> Dataset:
    raw = np.loadtxt(path, delimiter=",", skiprows=1, dtype=np.float64, ndmin=2)
    features = raw[:, :-1]
    tgt = raw[:, -1]
    if np.all(tgt == np.round(tgt)):
        targets = tgt.astype(np.int64)
    else:
        targets = tgt.reshape(-1, 1)
    return Dataset(features, targets, metadata={"source": path})


def build_dataset(cfg: RunConfig) -> tuple[Dataset, Optional[Dataset]]:
    d = cfg.dataset
    kind = d.get("kind")
    if kind == "blobs":
        n_train = int(d.get("n_train", 2000))
        n_test = int(d.get("n_test", 0))
        ds = synth_blobs(
            classes=int(d.get("classes", 2)),
            dim=int(d.get("dim", 20)),
            sep=float(d.get("sep", 3.0)),
            seed=int(d.get("seed", cfg.seed + 1000)),
            n=n_train + n_test,
            standardize=bool(d.get("standardize", True)),
        )
        train = Dataset(
            ds.features[:n_train], ds.targets[:n_train], "train", ds.metadata
        )
        test = None
        if n_test > 0:
            test = Dataset(
                ds.features[n_train:], ds.targets[n_train:], "test", ds.metadata
            )
    elif kind == "idx":
        train = load_idx(d["train_images"], d.get("train_labels"), "train")
        test = None
        if "test_images" in d:
            test = load_idx(d["test_images"], d.get("test_labels"), "test")
    elif kind == "csv":
        train = _load_csv(d["train"])
        test = _load_csv(d["test"]) if "test" in d else None
    else:
        raise ConfigError(f"unknown dataset kind {kind!r}")
    train = train.astype(cfg.dtype)
    if test is not None:
        test = test.astype(cfg.dtype)
    return train, test


def evaluate(
    specs: list[L.LayerSpec],
    states: list[L.LayerState],
    ds: Dataset,
    chunk: int = 2048,
) -> tuple[float, float]:
    """Sequential forward over the whole split: (mean loss, top-1 fraction)."""
    total_loss = 0.0
    total_correct = 0
    for lo in range(0, ds.n, chunk):
        x = ds.features[lo : lo + chunk]
        y = ds.targets[lo : lo + chunk]
        logits = L.forward_logits(specs, states, x)
        loss, correct = L.loss_and_prediction(specs[-1], logits, y)
        total_loss += loss * x.shape[0]
        total_correct += correct
    return total_loss / ds.n, total_correct / ds.n


@dataclass
class TrainResult:
    specs: list[L.LayerSpec]
    states: list[L.LayerState]
    partition: Partition
    rows: list[MetricsRow]
    test_loss: Optional[float] = None
    test_top1: Optional[float] = None


def train(
    cfg: RunConfig,
    on_row: Optional[Callable[[MetricsRow], None]] = None,
    capture_grads: bool = False,
) -> TrainResult:
    """Run the configured training; streams one MetricsRow per iteration."""
    cfg.validate()
    train_ds, test_ds = build_dataset(cfg)
    specs, states = build_network(cfg)
    part = resolve_partition(cfg)
    sampler = BatchSampler(
        cfg.seed, min(cfg.batch_size, train_ds.n), train_ds.n, cfg.sampling
    )
    T = (
        cfg.iterations
        if cfg.iterations is not None
        else cfg.epochs * sampler.batches_per_epoch
    )

    rows: list[MetricsRow] = []
    min_gsq = math.inf
    last_eval: tuple[Optional[float], Optional[float]] = (None, None)
    pipe = build_pipeline(cfg.mode, specs, states, part, cfg.optimizer, capture_grads)
    try:
        for t in range(T):
            x, y, idx = next_batch(sampler, train_ds, t)
            rec = pipe.run_iteration(t, x, y, idx)
            min_gsq = min(min_gsq, rec.grad_sq_norm)

            test_loss = test_top1 = None
            due = cfg.eval_every and (t + 1) % cfg.eval_every == 0
            if (due or t == T - 1) and test_ds is not None:
                test_loss, test_top1 = evaluate(specs, pipe.current_states(), test_ds)
                last_eval = (test_loss, test_top1)

            if cfg.deterministic_timings:
                fwd = bwd = 0.0
                mod_fwd = [0.0] * part.K
                mod_bwd = [0.0] * part.K
            else:
                fwd, bwd = rec.forward_ms, rec.backward_ms
                mod_fwd = rec.module_forward_ms
                mod_bwd = rec.module_backward_ms
            row = MetricsRow(
                t=t,
                epoch=sampler.epoch_of(t),
                train_loss=rec.loss,
                grad_sq_norm=rec.grad_sq_norm,
                min_grad_sq_so_far=min_gsq,
                test_loss=test_loss,
                test_top1=test_top1,
                wall_ms_forward=fwd,
                wall_ms_backward=bwd,
                module_fwd_ms=mod_fwd,
                module_bwd_ms=mod_bwd,
            )
            rows.append(row)
            if on_row is not None:
                on_row(row)
        final_states = pipe.current_states()
    finally:
        pipe.close()

    return TrainResult(
        specs=specs,
        states=final_states,
        partition=part,
        rows=rows,
        test_loss=last_eval[0],
        test_top1=last_eval[1],
    )

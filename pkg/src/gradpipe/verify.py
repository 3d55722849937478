"""Verification oracles: finite differences, staleness replay, bound checks.

Each check returns a JSON-serializable dict with a boolean "passed" plus the
measured quantities and tolerances, suitable for the `verify` subcommand.
"""

from __future__ import annotations

from typing import Callable, Optional

import numpy as np

from . import layers as L
from .config import RunConfig
from .convergence import (
    LogisticObjective,
    check_theorem1,
    check_theorem2,
    estimate_fstar,
)
from .data import BatchSampler, Dataset, next_batch
from .errors import ConfigError
from .partition import make_partition, source_iteration
from .pipeline import build_pipeline
from .tensor import RandomSource
from .training import build_dataset, build_network, resolve_partition

FD_STEP = 1e-5
FD_REL_TOL = 1e-6


# ---------------------------------------------------------------------------
# finite-difference gradient checking
# ---------------------------------------------------------------------------


def central_difference(f: Callable[[np.ndarray], float], x: np.ndarray, step: float = FD_STEP) -> np.ndarray:
    """Central finite differences of scalar f at x, elementwise.

    Perturbs x in place and restores it, so f may close over the live array
    rather than take a copy.
    """
    grad = np.zeros_like(x, dtype=np.float64)
    flat = x.reshape(-1)
    gflat = grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + step
        fp = f(x)
        flat[i] = orig - step
        fm = f(x)
        flat[i] = orig
        gflat[i] = (fp - fm) / (2.0 * step)
    return grad


def relative_error(a: np.ndarray, b: np.ndarray) -> float:
    na = float(np.linalg.norm(a.ravel()))
    nb = float(np.linalg.norm(b.ravel()))
    return float(np.linalg.norm((a - b).ravel())) / max(na, nb, 1e-300)


def _network_loss(specs, states, x, targets) -> float:
    h = x
    for spec, state in zip(specs[:-1], states[:-1]):
        h, _ = L.forward(spec, state, h)
    loss, _ = L.forward(specs[-1], states[-1], h, targets)
    return loss


def check_network_gradients(
    specs: list[L.LayerSpec],
    states: list[L.LayerState],
    x: np.ndarray,
    targets: np.ndarray,
    step: float = FD_STEP,
) -> dict:
    """Analytic weight/input gradients vs central differences over a stack."""
    loss, grads, _ = L.full_backprop(specs, states, x, targets)
    failures = []
    worst = 0.0
    for i, (state, grad) in enumerate(zip(states, grads)):
        for name in ("weights", "bias"):
            w = getattr(state, name)
            g = getattr(grad, name)
            if w is None:
                continue
            fd = central_difference(
                lambda _w: _network_loss(specs, states, x, targets), w, step
            )
            err = relative_error(g, fd)
            worst = max(worst, err)
            if err >= FD_REL_TOL:
                failures.append({"layer": i + 1, "param": name, "rel_error": err})
    # input gradient of the composed loss
    _, tapes = _forward_with_tapes(specs, states, x, targets)
    delta = 1.0
    for i in range(len(specs) - 1, -1, -1):
        delta = L.backward_input(specs[i], states[i], tapes[i], delta)
    fd_in = central_difference(
        lambda _x: _network_loss(specs, states, x, targets), x, step
    )
    err_in = relative_error(delta, fd_in)
    worst = max(worst, err_in)
    if err_in >= FD_REL_TOL:
        failures.append({"layer": 0, "param": "input", "rel_error": err_in})
    return {
        "passed": not failures,
        "loss": loss,
        "max_rel_error": worst,
        "tolerance": FD_REL_TOL,
        "step": step,
        "failures": failures,
    }


def _forward_with_tapes(specs, states, x, targets):
    h = x
    tapes = []
    for spec, state in zip(specs[:-1], states[:-1]):
        h, tape = L.forward(spec, state, h)
        tapes.append(tape)
    loss, head_tape = L.forward(specs[-1], states[-1], h, targets)
    tapes.append(head_tape)
    return loss, tapes


def verify_gradients(seed: int = 0) -> dict:
    """Finite-difference checks for every layer kind and two full stacks."""
    src = RandomSource(seed)
    cases = []

    def classification_case(name, specs, batch=4):
        states = L.init_network(specs, src, "he_gaussian")
        in_dim = next(s.in_dim for s in specs if isinstance(s, L.Affine))
        x = src.gaussian(0.0, 1.0, (batch, in_dim))
        classes = specs[-1].num_classes
        y = src.integers(0, classes, batch)
        cases.append((name, specs, states, x, y))

    def regression_case(name, specs, out_dim, batch=4):
        states = L.init_network(specs, src, "he_gaussian")
        in_dim = next(s.in_dim for s in specs if isinstance(s, L.Affine))
        x = src.gaussian(0.0, 1.0, (batch, in_dim))
        y = src.gaussian(0.0, 1.0, (batch, out_dim))
        cases.append((name, specs, states, x, y))

    classification_case("affine+softmax", [L.Affine(5, 3), L.SoftmaxCrossEntropyHead(3)])
    classification_case(
        "relu", [L.Affine(5, 6), L.Relu(), L.Affine(6, 3), L.SoftmaxCrossEntropyHead(3)]
    )
    classification_case(
        "tanh", [L.Affine(5, 6), L.Tanh(), L.Affine(6, 3), L.SoftmaxCrossEntropyHead(3)]
    )
    regression_case("mse", [L.Affine(4, 3), L.Tanh(), L.Affine(3, 2), L.MseHead()], 2)
    classification_case(
        "full-stack",
        [
            L.Affine(6, 8),
            L.Relu(),
            L.Affine(8, 8),
            L.Tanh(),
            L.Affine(8, 4),
            L.SoftmaxCrossEntropyHead(4),
        ],
    )

    results = {}
    passed = True
    worst = 0.0
    for name, specs, states, x, y in cases:
        res = check_network_gradients(specs, states, x, y)
        results[name] = res
        passed &= res["passed"]
        worst = max(worst, res["max_rel_error"])
    return {
        "check": "gradients",
        "passed": passed,
        "max_rel_error": worst,
        "tolerance": FD_REL_TOL,
        "cases": results,
    }


# ---------------------------------------------------------------------------
# staleness exactness oracle
# ---------------------------------------------------------------------------


def verify_staleness(
    specs: list[L.LayerSpec],
    states: list[L.LayerState],
    train_ds: Dataset,
    split_points: list[int],
    iterations: int,
    seed: int,
    batch_size: int = 8,
    mode: str = "emulated",
    optimizer_config=None,
    tolerance: float = 0.0,
) -> dict:
    """Replay oracle for the delayed schedule.

    Snapshots the full weight vector before every iteration, captures the
    gradients each module applies, then recomputes every non-warmup gradient
    with plain full backpropagation on the stored snapshot w^{t-K+k} and the
    batch sampled at that iteration. Reports the worst absolute deviation
    (exactly zero is expected in emulated mode).
    """
    from .optim import FixedSchedule, OptimizerConfig

    if optimizer_config is None:
        optimizer_config = OptimizerConfig("sgd", FixedSchedule(0.05))
    part = make_partition(len(specs), split_points)
    K = part.K
    sampler = BatchSampler(seed, min(batch_size, train_ds.n), train_ds.n, "shuffle")
    pipe = build_pipeline(mode, specs, states, part, optimizer_config, capture_grads=True)

    snapshots: list[list[L.LayerState]] = []
    records = []
    try:
        for t in range(iterations):
            snapshots.append([s.copy() for s in pipe.current_states()])
            x, y, idx = next_batch(sampler, train_ds, t)
            records.append(pipe.run_iteration(t, x, y, idx))
    finally:
        pipe.close()

    max_abs = 0.0
    checked = 0
    first_mismatch = None
    for t, rec in enumerate(records):
        for k in range(1, K + 1):
            s = source_iteration(t, k, K)
            applied = rec.applied_grads[k - 1]
            if s < 0:
                if applied is not None:
                    first_mismatch = first_mismatch or {
                        "t": t,
                        "k": k,
                        "reason": "gradient applied during warmup",
                    }
                continue
            x, y, _ = next_batch(sampler, train_ds, s)
            _, oracle, _ = L.full_backprop(specs, snapshots[s], x, y)
            oracle_slice = oracle[part.layer_slice(k)]
            for g, og in zip(applied, oracle_slice):
                for name in ("weights", "bias"):
                    a = getattr(g, name)
                    b = getattr(og, name)
                    if a is None:
                        continue
                    diff = float(np.max(np.abs(a - b)))
                    max_abs = max(max_abs, diff)
                    checked += 1
                    if diff > tolerance and first_mismatch is None:
                        first_mismatch = {
                            "t": t,
                            "k": k,
                            "param": name,
                            "max_abs_diff": diff,
                        }
    return {
        "check": "staleness",
        "passed": first_mismatch is None,
        "mode": mode,
        "K": K,
        "iterations": iterations,
        "tensors_checked": checked,
        "max_abs_diff": max_abs,
        "tolerance": tolerance,
        "first_mismatch": first_mismatch,
    }


def verify_staleness_from_config(cfg: RunConfig, iterations: int = 50) -> dict:
    cfg.validate()
    train_ds, _ = build_dataset(cfg)
    specs, states = build_network(cfg)
    part = resolve_partition(cfg)
    splits = [hi for (_, hi) in part.ranges[:-1]]
    tol = 0.0 if cfg.mode == "emulated" else 1e-12
    return verify_staleness(
        specs,
        states,
        train_ds,
        splits,
        iterations,
        cfg.seed,
        batch_size=cfg.batch_size,
        mode=cfg.mode,
        optimizer_config=cfg.optimizer,
        tolerance=tol,
    )


# ---------------------------------------------------------------------------
# theorem checks from a run config
# ---------------------------------------------------------------------------


def _logistic_from_config(cfg: RunConfig, lam: Optional[float]) -> LogisticObjective:
    train_ds, _ = build_dataset(cfg)
    if train_ds.targets.ndim != 1 or train_ds.num_classes() != 2:
        raise ConfigError("theorem checks need a 2-class dataset")
    if lam is None:
        # strong enough that the diminishing schedule's contraction dominates
        # the sampling noise within desk-scale horizons
        lam = float(np.max(np.sum(np.square(train_ds.features), axis=1))) / 4.0
    return LogisticObjective.from_dataset(train_ds, lam)


def verify_theorem(
    cfg: RunConfig,
    which: str,
    K_values: tuple[int, ...] = (1, 2, 4),
    T: int = 10_000,
    seeds: int = 20,
    gamma_scale: Optional[float] = None,
    lam: Optional[float] = None,
    min_pass_fraction: float = 0.95,
) -> dict:
    """Run the fixed- or diminishing-stepsize bound check over seeds and K."""
    if which not in ("theorem1", "theorem2"):
        raise ConfigError(f"unknown theorem check {which!r}")
    if gamma_scale is None:
        gamma_scale = 0.25 if which == "theorem1" else 1.0
    objective = _logistic_from_config(cfg, lam)
    L_const = objective.lipschitz()
    gamma = gamma_scale / L_const
    fstar = estimate_fstar(objective)
    per_k = {}
    all_pass = True
    for K in K_values:
        sat = []
        reports = []
        for s in range(seeds):
            if which == "theorem1":
                rep = check_theorem1(
                    objective, K, gamma, T, seed=cfg.seed + s, fstar=fstar,
                    keep_series=False,
                )
            else:
                rep = check_theorem2(
                    objective, K, gamma, T, seed=cfg.seed + s, fstar=fstar,
                    keep_series=False,
                )
            sat.append(rep.satisfied)
            reports.append(
                {"seed": cfg.seed + s, "measured": rep.measured, "bound": rep.bound_value}
            )
        frac = sum(sat) / len(sat)
        ok = frac >= min_pass_fraction
        all_pass &= ok
        per_k[str(K)] = {
            "satisfied_fraction": frac,
            "passed": ok,
            "gamma": gamma,
            "runs": reports,
        }
    return {
        "check": which,
        "passed": all_pass,
        "T": T,
        "seeds": seeds,
        "lipschitz": L_const,
        "fstar_estimate": fstar,
        "min_pass_fraction": min_pass_fraction,
        "per_K": per_k,
    }

"""Update rules consuming (possibly delayed) gradients, plus stepsize schedules.

Optimizer state is partitioned per module: each pipeline module owns one
optimizer instance over its own layer slice, and updating module k never
touches any other module's buffers. During warmup iterations the caller passes
all-zero gradients; Adam's moment buffers absorb them exactly as written (the
bias-correction exponent is the global iteration counter, not a per-module
update count).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Union

import numpy as np

from .errors import ConfigError, ContractError
from .layers import LayerState, zero_grads


# ---------------------------------------------------------------------------
# stepsize schedules
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class FixedSchedule:
    gamma: float


@dataclass(frozen=True)
class DiminishingSchedule:
    """gamma_t = gamma0 / (1 + t)."""

    gamma0: float


Schedule = Union[FixedSchedule, DiminishingSchedule]


def stepsize(schedule: Schedule, t: int) -> float:
    if t < 0:
        raise ContractError(f"stepsize needs t >= 0, got {t}")
    if isinstance(schedule, FixedSchedule):
        return schedule.gamma
    if isinstance(schedule, DiminishingSchedule):
        return schedule.gamma0 / (1.0 + t)
    raise ConfigError(f"unknown schedule {schedule!r}")


def gamma_sum(schedule: Schedule, T: int) -> float:
    """Direct summation of gamma_t for t < T."""
    acc = 0.0
    for t in range(T):
        acc += stepsize(schedule, t)
    return acc


def gamma_sq_sum(schedule: Schedule, T: int) -> float:
    acc = 0.0
    for t in range(T):
        g = stepsize(schedule, t)
        acc += g * g
    return acc


def stepsize_ratio_bound(schedule: Schedule, K: int) -> float:
    """max_t gamma_{max(0, t-K+1)} / gamma_t: 1 for fixed, K for diminishing."""
    if isinstance(schedule, FixedSchedule):
        return 1.0
    return float(K)


# ---------------------------------------------------------------------------
# optimizers
# ---------------------------------------------------------------------------


def _check_grad_shapes(states: list[LayerState], grads: list[LayerState]) -> None:
    if len(states) != len(grads):
        raise ContractError(f"{len(grads)} gradients for {len(states)} layer states")
    for s, g in zip(states, grads):
        for a, b, name in ((s.weights, g.weights, "weights"), (s.bias, g.bias, "bias")):
            if (a is None) != (b is None):
                raise ContractError(f"gradient {name} presence mismatch")
            if a is not None and a.shape != b.shape:
                raise ContractError(f"gradient {name} shape {b.shape} != {a.shape}")


def _decayed(g: np.ndarray, w: np.ndarray, weight_decay: float) -> np.ndarray:
    return g + weight_decay * w if weight_decay > 0.0 else g


class SgdOptimizer:
    """w <- w - gamma_t * g, optionally with classical momentum and weight decay.

    momentum == 0 and weight_decay == 0 reproduces the plain delayed-gradient
    recurrence bit for bit.
    """

    def __init__(
        self,
        schedule: Schedule,
        momentum: float = 0.0,
        weight_decay: float = 0.0,
    ):
        if not 0.0 <= momentum < 1.0:
            raise ConfigError(f"momentum must be in [0, 1), got {momentum}")
        if weight_decay < 0.0:
            raise ConfigError(f"weight_decay must be >= 0, got {weight_decay}")
        self.schedule = schedule
        self.momentum = momentum
        self.weight_decay = weight_decay
        self.velocity: Optional[list[LayerState]] = None

    def step(self, states: list[LayerState], grads: list[LayerState], t: int) -> None:
        _check_grad_shapes(states, grads)
        gamma = stepsize(self.schedule, t)
        if self.momentum > 0.0 and self.velocity is None:
            self.velocity = zero_grads(states)
        for i, (s, g) in enumerate(zip(states, grads)):
            for name in ("weights", "bias"):
                w = getattr(s, name)
                gv = getattr(g, name)
                if w is None:
                    continue
                gv = _decayed(gv, w, self.weight_decay)
                if self.momentum > 0.0:
                    v = getattr(self.velocity[i], name)
                    v *= self.momentum
                    v += gv
                    w -= gamma * v
                else:
                    w -= gamma * gv


class AdamOptimizer:
    """Adaptive-moment updates on delayed gradients.

    m <- b1*m + (1-b1)*g ; v <- b2*v + (1-b2)*g^2
    m_hat = m / (1 - b1^(t+1)) ; v_hat = v / (1 - b2^(t+1))
    w <- w - gamma * m_hat / (sqrt(v_hat) + eps)

    t is the global iteration counter shared by all modules; at t == 0 the
    bias correction makes m_hat equal the raw gradient elementwise.
    """

    def __init__(
        self,
        gamma: float = 1e-3,
        beta1: float = 0.9,
        beta2: float = 0.999,
        eps: float = 1e-8,
        weight_decay: float = 0.0,
    ):
        if not 0.0 <= beta1 < 1.0 or not 0.0 <= beta2 < 1.0:
            raise ConfigError(f"betas must be in [0, 1), got {beta1}, {beta2}")
        if eps <= 0.0:
            raise ConfigError(f"eps must be > 0, got {eps}")
        self.gamma = gamma
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.weight_decay = weight_decay
        self.m: Optional[list[LayerState]] = None
        self.v: Optional[list[LayerState]] = None

    def step(self, states: list[LayerState], grads: list[LayerState], t: int) -> None:
        _check_grad_shapes(states, grads)
        if self.m is None:
            self.m = zero_grads(states)
            self.v = zero_grads(states)
        bc1 = 1.0 - self.beta1 ** (t + 1)
        bc2 = 1.0 - self.beta2 ** (t + 1)
        for i, (s, g) in enumerate(zip(states, grads)):
            for name in ("weights", "bias"):
                w = getattr(s, name)
                gv = getattr(g, name)
                if w is None:
                    continue
                gv = _decayed(gv, w, self.weight_decay)
                m = getattr(self.m[i], name)
                v = getattr(self.v[i], name)
                m *= self.beta1
                m += (1.0 - self.beta1) * gv
                v *= self.beta2
                v += (1.0 - self.beta2) * np.square(gv)
                m_hat = m / bc1
                v_hat = v / bc2
                w -= self.gamma * m_hat / (np.sqrt(v_hat) + self.eps)


Optimizer = Union[SgdOptimizer, AdamOptimizer]


@dataclass(frozen=True)
class OptimizerConfig:
    """Serializable recipe; each pipeline module builds its own instance."""

    kind: str  # "sgd" | "adam"
    schedule: Schedule = FixedSchedule(0.01)
    momentum: float = 0.0
    weight_decay: float = 0.0
    gamma: float = 1e-3  # adam only
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    def build(self) -> Optimizer:
        if self.kind == "sgd":
            return SgdOptimizer(self.schedule, self.momentum, self.weight_decay)
        if self.kind == "adam":
            return AdamOptimizer(
                self.gamma, self.beta1, self.beta2, self.eps, self.weight_decay
            )
        raise ConfigError(f"unknown optimizer kind {self.kind!r}")

"""Analytic objectives and empirical checks of the delayed-gradient bounds.

The update rule under test is the delayed-gradient recurrence itself: the
parameter vector is split into K contiguous blocks, and block k's update at
iteration t uses the stochastic gradient evaluated at the K-k iterations old
iterate (zero while that index is negative). This is exactly what the pipeline
executor realizes layer-wise; running it directly on analytic objectives lets
K exceed the layer count and keeps the constants (L, M) measurable.

Two bound checks are provided, one per stepsize regime:

  fixed gamma (gamma * L <= 1, sigma = 1, M_K = K*M + K^4*M):
      mean_t ||grad f(w^t)||^2  <=  2 (f(w^0) - f*) / (gamma T) + 2 gamma L M_K

  diminishing gamma_t = gamma0/(1+t) (sigma = K, M_K = K*M + K^5*M):
      sum_t gamma_t ||grad f(w^t)||^2 / Gamma_T
          <=  2 (f(w^0) - f*) / Gamma_T + 2 L M_K sum_t gamma_t^2 / Gamma_T

with Gamma_T = sum_{t<T} gamma_t. The bound side is a pure function of the
recorded constants; no fitted factors.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Union

import numpy as np

from .data import BatchSampler, Dataset
from .errors import ConfigError, ContractError, DomainError, NumericError
from .optim import (
    DiminishingSchedule,
    FixedSchedule,
    Schedule,
    gamma_sq_sum,
    gamma_sum,
    stepsize,
    stepsize_ratio_bound,
)
from .tensor import sq_l2_norm


# ---------------------------------------------------------------------------
# objectives
# ---------------------------------------------------------------------------


class QuadraticObjective:
    """f(w) = 0.5 w^T A w with A symmetric positive definite; f* = 0 at w* = 0.

    Stochastic gradients are the deterministic full gradient plus optional
    bounded, exactly-centered noise vectors (one per "sample").
    """

    def __init__(self, A: np.ndarray, noise: Optional[Dataset] = None):
        A = np.asarray(A, dtype=np.float64)
        if A.ndim != 2 or A.shape[0] != A.shape[1]:
            raise ConfigError(f"A must be square, got {A.shape}")
        if not np.allclose(A, A.T, atol=1e-12):
            raise ConfigError("A must be symmetric")
        self.A = A
        self.noise = noise
        self.fstar = 0.0

    @property
    def dim(self) -> int:
        return self.A.shape[0]

    @property
    def n_samples(self) -> int:
        return self.noise.n if self.noise is not None else 1

    def f(self, w: np.ndarray) -> float:
        return 0.5 * float(w @ (self.A @ w))

    def full_grad(self, w: np.ndarray) -> np.ndarray:
        return self.A @ w

    def batch_grad(self, w: np.ndarray, indices: np.ndarray) -> np.ndarray:
        g = self.A @ w
        if self.noise is not None:
            g = g + self.noise.features[indices].mean(axis=0)
        return g

    def lipschitz(self) -> float:
        return power_iteration(self.A)


class LogisticObjective:
    """Binary logistic regression with optional L2 term.

    f(w) = mean_i log(1 + exp(-y_i x_i^T w)) + lam/2 ||w||^2, y_i in {-1,+1}.
    The gradient is Lipschitz with L <= max_i ||x_i||^2 / 4 + lam.
    """

    def __init__(self, X: np.ndarray, y: np.ndarray, lam: float = 0.0):
        X = np.asarray(X, dtype=np.float64)
        y = np.asarray(y, dtype=np.float64)
        if set(np.unique(y)) - {-1.0, 1.0}:
            raise DomainError("labels must be -1/+1")
        if lam < 0:
            raise ConfigError(f"lam must be >= 0, got {lam}")
        self.X = X
        self.y = y
        self.lam = lam
        self.fstar: Optional[float] = None  # estimated by a reference run

    @classmethod
    def from_dataset(cls, ds: Dataset, lam: float = 0.0) -> "LogisticObjective":
        if ds.targets.ndim != 1 or ds.num_classes() != 2:
            raise ConfigError("logistic objective needs a 2-class dataset")
        return cls(ds.features, np.where(ds.targets == 1, 1.0, -1.0), lam)

    @property
    def dim(self) -> int:
        return self.X.shape[1]

    @property
    def n_samples(self) -> int:
        return self.X.shape[0]

    def f(self, w: np.ndarray) -> float:
        margins = self.y * (self.X @ w)
        loss = float(np.mean(np.logaddexp(0.0, -margins)))
        return loss + 0.5 * self.lam * float(w @ w)

    def full_grad(self, w: np.ndarray) -> np.ndarray:
        margins = self.y * (self.X @ w)
        coeff = -self.y / (1.0 + np.exp(margins))  # -y * sigmoid(-margin)
        return (self.X.T @ coeff) / self.n_samples + self.lam * w

    def batch_grad(self, w: np.ndarray, indices: np.ndarray) -> np.ndarray:
        Xb = self.X[indices]
        yb = self.y[indices]
        margins = yb * (Xb @ w)
        coeff = -yb / (1.0 + np.exp(margins))
        return (Xb.T @ coeff) / len(indices) + self.lam * w

    def lipschitz(self) -> float:
        r2 = float(np.max(np.sum(np.square(self.X), axis=1)))
        return r2 / 4.0 + self.lam


Objective = Union[QuadraticObjective, LogisticObjective]


def full_gradient_norm_sq(objective: Objective, w: np.ndarray) -> float:
    """Exact full-batch squared gradient norm at w."""
    if not np.all(np.isfinite(w)):
        raise NumericError("non-finite iterate")
    return sq_l2_norm(objective.full_grad(w))


def power_iteration(
    A: np.ndarray, tol: float = 1e-10, max_iter: int = 100_000, seed: int = 17
) -> float:
    """Dominant eigenvalue of a symmetric PSD matrix."""
    gen = np.random.Generator(np.random.PCG64(seed))
    v = gen.normal(size=A.shape[0])
    v /= np.linalg.norm(v)
    lam_prev = 0.0
    for _ in range(max_iter):
        av = A @ v
        norm = np.linalg.norm(av)
        if norm == 0.0:
            return 0.0
        v = av / norm
        lam = float(v @ (A @ v))
        if abs(lam - lam_prev) <= tol * max(1.0, abs(lam)):
            return lam
        lam_prev = lam
    raise NumericError(f"power iteration did not converge in {max_iter} iterations")


def estimate_fstar(
    objective: Objective, iters: int = 50_000, w0: Optional[np.ndarray] = None
) -> float:
    """Best objective value found by a long full-gradient descent reference run."""
    L = objective.lipschitz()
    gamma = 1.0 / L
    w = np.zeros(objective.dim) if w0 is None else w0.copy()
    best = objective.f(w)
    for _ in range(iters):
        w -= gamma * objective.full_grad(w)
        fv = objective.f(w)
        if fv < best:
            best = fv
    return best


# ---------------------------------------------------------------------------
# the delayed-gradient recurrence on a block-partitioned parameter vector
# ---------------------------------------------------------------------------


@dataclass
class DelayedSgdTrajectory:
    K: int
    T: int
    f0: float
    grad_sq: np.ndarray  # ||grad f(w^t)||^2 for t = 0..T-1
    f_series: np.ndarray  # f(w^t) for t = 0..T-1
    max_sample_grad_sq: float  # max observed ||grad f_{x_i}(w)||^2 (Assumption 2's M)
    final_w: np.ndarray

    @property
    def min_so_far(self) -> np.ndarray:
        return np.minimum.accumulate(self.grad_sq)


def param_blocks(d: int, K: int) -> list[slice]:
    """K contiguous blocks covering 0..d-1 (sizes differ by at most one)."""
    if not 1 <= K <= d:
        raise ConfigError(f"cannot split {d} coordinates into {K} blocks")
    bounds = np.linspace(0, d, K + 1).astype(int)
    return [slice(int(bounds[i]), int(bounds[i + 1])) for i in range(K)]


def run_delayed_sgd(
    objective: Objective,
    K: int,
    schedule: Schedule,
    T: int,
    seed: int,
    w0: Optional[np.ndarray] = None,
    batch_size: int = 1,
    sampling: str = "with_replacement",
) -> DelayedSgdTrajectory:
    """Run T iterations of block-partitioned SGD with delayed gradients.

    Block k's update at iteration t applies the gradient evaluated at iterate
    w^{t-K+k} on the batch sampled at that iteration (zero while negative).
    One full stochastic gradient per source iteration is computed and its K
    block slices are consumed over the following K iterations.
    """
    d = objective.dim
    blocks = param_blocks(d, K)
    sampler = BatchSampler(seed, batch_size, objective.n_samples, sampling)
    w = np.zeros(d) if w0 is None else np.asarray(w0, dtype=np.float64).copy()

    grad_cache: dict[int, np.ndarray] = {}  # s -> grad f_{x_i(s)}(w^s)
    grad_sq = np.empty(T)
    f_series = np.empty(T)
    max_sample_sq = 0.0
    f0 = objective.f(w)

    for t in range(T):
        grad_sq[t] = full_gradient_norm_sq(objective, w)
        f_series[t] = objective.f(w)
        gamma = stepsize(schedule, t)
        # source iteration t enters the cache now, evaluated at the current w
        g_now = objective.batch_grad(w, sampler.indices(t))
        grad_cache[t] = g_now
        sample_sq = sq_l2_norm(g_now)
        if sample_sq > max_sample_sq:
            max_sample_sq = sample_sq
        w_next = w.copy()
        for k in range(1, K + 1):
            s = t - K + k
            if s < 0:
                continue
            blk = blocks[k - 1]
            w_next[blk] = w[blk] - gamma * grad_cache[s][blk]
        if t - K + 1 in grad_cache and t - K + 1 >= 0:
            del grad_cache[t - K + 1]  # block 1 was its last consumer
        w = w_next
        if not np.all(np.isfinite(w)):
            raise NumericError(f"divergence at iteration {t}", t)

    return DelayedSgdTrajectory(
        K=K,
        T=T,
        f0=f0,
        grad_sq=grad_sq,
        f_series=f_series,
        max_sample_grad_sq=max_sample_sq,
        final_w=w,
    )


# ---------------------------------------------------------------------------
# constants and bound reports
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class BoundParams:
    """Constants feeding the bound formulas; no fitted factors."""

    L: float
    M: float
    K: int
    sigma: float
    M_K: float
    f0: float
    fstar: float

    @classmethod
    def for_schedule(
        cls, L: float, M: float, K: int, schedule: Schedule, f0: float, fstar: float
    ) -> "BoundParams":
        sigma = stepsize_ratio_bound(schedule, K)
        if isinstance(schedule, FixedSchedule):
            m_k = K * M + K**4 * M
        else:
            m_k = K * M + K**5 * M
        return cls(L=L, M=M, K=K, sigma=sigma, M_K=m_k, f0=f0, fstar=fstar)

    def to_dict(self) -> dict:
        return {
            "L": self.L,
            "M": self.M,
            "K": self.K,
            "sigma": self.sigma,
            "M_K": self.M_K,
            "f0": self.f0,
            "fstar": self.fstar,
        }


def estimate_constants(
    objective: Objective,
    trajectory: DelayedSgdTrajectory,
    schedule: Schedule,
    fstar: Optional[float] = None,
) -> BoundParams:
    """L from the objective, M from the trajectory's observed sample gradients."""
    if trajectory.T < 1:
        raise ContractError("empty trajectory")
    L = objective.lipschitz()
    if fstar is None:
        fstar = objective.fstar
    if fstar is None:
        raise ConfigError("fstar unknown; pass an estimate (see estimate_fstar)")
    return BoundParams.for_schedule(
        L, trajectory.max_sample_grad_sq, trajectory.K, schedule, trajectory.f0, fstar
    )


def bound_theorem1(params: BoundParams, gamma: float, T: int) -> float:
    """Fixed-stepsize bound; pure function of the recorded constants."""
    return 2.0 * (params.f0 - params.fstar) / (gamma * T) + 2.0 * gamma * params.L * params.M_K


def bound_theorem2(params: BoundParams, gamma0: float, T: int) -> float:
    """Diminishing-stepsize bound with Gamma_T and sum gamma_t^2 by direct summation."""
    sched = DiminishingSchedule(gamma0)
    big_gamma = gamma_sum(sched, T)
    sq = gamma_sq_sum(sched, T)
    return (2.0 * (params.f0 - params.fstar) + 2.0 * sq * params.L * params.M_K) / big_gamma


@dataclass
class BoundReport:
    kind: str  # "theorem1" | "theorem2"
    K: int
    T: int
    gamma: float  # fixed gamma, or gamma0 for the diminishing schedule
    measured: float
    bound_value: float
    satisfied: bool
    params: BoundParams
    series: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "K": self.K,
            "T": self.T,
            "gamma": self.gamma,
            "measured": self.measured,
            "bound_value": self.bound_value,
            "satisfied": self.satisfied,
            "params": self.params.to_dict(),
            "series": self.series,
        }


def check_theorem1(
    objective: Objective,
    K: int,
    gamma: float,
    T: int,
    seed: int,
    fstar: Optional[float] = None,
    batch_size: int = 1,
    w0: Optional[np.ndarray] = None,
    keep_series: bool = True,
) -> BoundReport:
    """Fixed-stepsize run vs its bound. Rejects configs violating gamma*L <= 1."""
    L = objective.lipschitz()
    if gamma * L > 1.0 + 1e-12:
        raise ConfigError(
            f"fixed-stepsize precondition violated: gamma*L = {gamma * L:.4g} > 1"
        )
    schedule = FixedSchedule(gamma)
    traj = run_delayed_sgd(objective, K, schedule, T, seed, w0=w0, batch_size=batch_size)
    params = estimate_constants(objective, traj, schedule, fstar)
    measured = float(np.mean(traj.grad_sq))
    bound = bound_theorem1(params, gamma, T)
    series = {}
    if keep_series:
        series = {
            "grad_sq": traj.grad_sq.tolist(),
            "min_so_far": traj.min_so_far.tolist(),
        }
    return BoundReport(
        "theorem1", K, T, gamma, measured, bound, measured <= bound, params, series
    )


def check_theorem2(
    objective: Objective,
    K: int,
    gamma0: float,
    T: int,
    seed: int,
    fstar: Optional[float] = None,
    batch_size: int = 1,
    w0: Optional[np.ndarray] = None,
    keep_series: bool = True,
) -> BoundReport:
    """Diminishing-stepsize run vs its bound, plus the bound's decay across T."""
    L = objective.lipschitz()
    if gamma0 * L > 1.0 + 1e-12:
        raise ConfigError(
            f"diminishing-stepsize precondition violated: gamma0*L = {gamma0 * L:.4g} > 1"
        )
    schedule = DiminishingSchedule(gamma0)
    traj = run_delayed_sgd(objective, K, schedule, T, seed, w0=w0, batch_size=batch_size)
    params = estimate_constants(objective, traj, schedule, fstar)
    gammas = np.array([stepsize(schedule, t) for t in range(T)])
    big_gamma = gamma_sum(schedule, T)
    measured = float(np.sum(gammas * traj.grad_sq) / big_gamma)
    bound = bound_theorem2(params, gamma0, T)
    checkpoints = sorted({max(1, T // 100), max(1, T // 10), T, 10 * T})
    series = {
        "bound_decay": [[tt, bound_theorem2(params, gamma0, tt)] for tt in checkpoints]
    }
    if keep_series:
        series["grad_sq"] = traj.grad_sq.tolist()
        series["min_so_far"] = traj.min_so_far.tolist()
    return BoundReport(
        "theorem2", K, T, gamma0, measured, bound, measured <= bound, params, series
    )

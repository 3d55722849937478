"""Dense tensor kernels with a mandated, reproducible summation order.

Tensors are plain C-contiguous numpy arrays (float64 by default, float32 as an
opt-in for speed benchmarks). Every reduction here has a fixed order of
operations, so results are bitwise reproducible across runs and across worker
threads. `matmul` accumulates the inner index in ascending order for every
output element, which makes it bitwise identical to the naive triple loop:

    out[i, j] = (((a[i,0]*b[0,j]) + a[i,1]*b[1,j]) + ...)

That property is what allows the parallel pipeline to be checked for bitwise
equality against the single-threaded reference executor.

The hot kernel is JIT-compiled with numba (``nogil=True`` so module workers can
overlap on real cores); set GRADPIPE_NO_NUMBA=1 to force the pure-numpy
fallback, which performs the same operations in the same order.
"""

from __future__ import annotations

import os

import numpy as np

from .errors import DomainError, ShapeError

DEFAULT_DTYPE = np.float64

_USE_NUMBA = os.environ.get("GRADPIPE_NO_NUMBA", "") not in ("1", "true", "yes")

if _USE_NUMBA:
    try:
        from numba import njit
    except ImportError:  # pragma: no cover - numba is a declared dependency
        _USE_NUMBA = False


def tensor(data, dtype=DEFAULT_DTYPE) -> np.ndarray:
    """Materialize `data` as a C-contiguous array of the working dtype."""
    return np.ascontiguousarray(np.asarray(data, dtype=dtype))


def backend_name() -> str:
    return "numba" if _USE_NUMBA else "numpy"


# ---------------------------------------------------------------------------
# matmul
# ---------------------------------------------------------------------------

if _USE_NUMBA:

    @njit(nogil=True, cache=True)
    def _mm_kernel(a, b, out):  # pragma: no cover - compiled
        m, kd = a.shape
        n = b.shape[1]
        for i in range(m):
            for k in range(kd):
                aik = a[i, k]
                for j in range(n):
                    out[i, j] += aik * b[k, j]

else:

    def _mm_kernel(a, b, out):
        # Outer-product accumulation: for each element the partial products
        # are added in ascending k, identical to the jitted loop.
        tmp = np.empty_like(out)
        for k in range(a.shape[1]):
            np.multiply(a[:, k, None], b[k, None, :], out=tmp)
            np.add(out, tmp, out=out)


def matmul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Matrix product (m,k) @ (k,n) with ascending-k accumulation per element."""
    if a.ndim != 2 or b.ndim != 2:
        raise ShapeError(f"matmul expects 2-d operands, got {a.shape} and {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul inner dimensions disagree: {a.shape} x {b.shape}")
    if a.dtype != b.dtype:
        raise DomainError(f"matmul operand dtypes disagree: {a.dtype} vs {b.dtype}")
    a = np.ascontiguousarray(a)
    b = np.ascontiguousarray(b)
    out = np.zeros((a.shape[0], b.shape[1]), dtype=a.dtype)
    _mm_kernel(a, b, out)
    return out


def matmul_tn(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """a.T @ b without the caller materializing the transpose."""
    return matmul(np.ascontiguousarray(a.T), b)


def matmul_nt(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """a @ b.T without the caller materializing the transpose."""
    return matmul(a, np.ascontiguousarray(b.T))


# ---------------------------------------------------------------------------
# elementwise ops
# ---------------------------------------------------------------------------


def _check_binary(op: str, a: np.ndarray, b) -> None:
    if isinstance(b, np.ndarray) and b.ndim > 0 and a.shape != b.shape:
        raise ShapeError(f"{op} requires equal shapes, got {a.shape} and {b.shape}")


def add(a: np.ndarray, b) -> np.ndarray:
    _check_binary("add", a, b)
    return np.add(a, b)


def sub(a: np.ndarray, b) -> np.ndarray:
    _check_binary("sub", a, b)
    return np.subtract(a, b)


def mul(a: np.ndarray, b) -> np.ndarray:
    _check_binary("mul", a, b)
    return np.multiply(a, b)


def scale(a: np.ndarray, s: float) -> np.ndarray:
    return np.multiply(a, a.dtype.type(s))


def relu(a: np.ndarray) -> np.ndarray:
    return np.maximum(a, a.dtype.type(0))


def tanh(a: np.ndarray) -> np.ndarray:
    return np.tanh(a)


def exp(a: np.ndarray) -> np.ndarray:
    return np.exp(a)


ELEMENTWISE = {
    "add": add,
    "sub": sub,
    "mul": mul,
    "scale": scale,
    "relu": relu,
    "tanh": tanh,
    "exp": exp,
}


def elementwise(op: str, a: np.ndarray, b=None) -> np.ndarray:
    """Dispatch-by-name form of the elementwise ops."""
    if op not in ELEMENTWISE:
        raise DomainError(f"unknown elementwise op {op!r}")
    fn = ELEMENTWISE[op]
    return fn(a) if b is None else fn(a, b)


# ---------------------------------------------------------------------------
# reductions
# ---------------------------------------------------------------------------


def _check_nonempty(op: str, a: np.ndarray) -> None:
    if a.size == 0:
        raise DomainError(f"{op} of an empty tensor is undefined")


def reduce_sum(a: np.ndarray) -> float:
    """Sum of all elements (numpy's fixed pairwise order; bitwise reproducible)."""
    _check_nonempty("sum", a)
    return float(np.sum(a))


def reduce_max(a: np.ndarray) -> float:
    _check_nonempty("max", a)
    return float(np.max(a))


def sq_l2_norm(a: np.ndarray) -> float:
    """Squared L2 norm of all elements."""
    _check_nonempty("sq_l2_norm", a)
    return float(np.sum(np.square(a.ravel())))


def reduce(op: str, a: np.ndarray) -> float:
    fns = {"sum": reduce_sum, "max": reduce_max, "sq_l2_norm": sq_l2_norm}
    if op not in fns:
        raise DomainError(f"unknown reduction {op!r}")
    return fns[op](a)


# ---------------------------------------------------------------------------
# random source
# ---------------------------------------------------------------------------


class RandomSource:
    """Seeded, platform-independent PRNG (numpy PCG64 behind `Generator`).

    Identical seeds give identical draw sequences. A RandomSource has a single
    owner; it is never shared between workers.
    """

    def __init__(self, seed: int):
        self.seed = int(seed)
        self._gen = np.random.Generator(np.random.PCG64(self.seed))

    def gaussian(self, mu: float, sigma: float, shape, dtype=DEFAULT_DTYPE) -> np.ndarray:
        if sigma < 0:
            raise DomainError(f"gaussian sigma must be >= 0, got {sigma}")
        return self._gen.normal(mu, sigma, size=shape).astype(dtype)

    def uniform(self, lo: float, hi: float, shape, dtype=DEFAULT_DTYPE) -> np.ndarray:
        if lo > hi:
            raise DomainError(f"uniform requires lo <= hi, got [{lo}, {hi}]")
        return self._gen.uniform(lo, hi, size=shape).astype(dtype)

    def permutation(self, n: int) -> np.ndarray:
        return self._gen.permutation(n)

    def integers(self, lo: int, hi: int, shape=None) -> np.ndarray:
        return self._gen.integers(lo, hi, size=shape)


def draw(src: RandomSource, dist: str, shape, **params) -> np.ndarray:
    """Draw a tensor from `dist` in {uniform(lo,hi), gaussian(mu,sigma)}."""
    if dist == "gaussian":
        return src.gaussian(params.get("mu", 0.0), params.get("sigma", 1.0), shape,
                            params.get("dtype", DEFAULT_DTYPE))
    if dist == "uniform":
        return src.uniform(params.get("lo", 0.0), params.get("hi", 1.0), shape,
                           params.get("dtype", DEFAULT_DTYPE))
    raise DomainError(f"unknown distribution {dist!r}")

"""Dataset loaders and deterministic batch samplers.

The sample-index sequence is a pure function of (seed, batch_size, N, mode),
so any past batch can be reconstructed exactly -- the staleness oracle relies
on replaying the batch that entered the network K-k iterations ago.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .errors import ConfigError, DomainError, IdxParseError
from .tensor import RandomSource

IDX_UBYTE = 0x08

_IDX_DTYPES = {
    0x08: np.dtype(">u1"),
    0x09: np.dtype(">i1"),
    0x0B: np.dtype(">i2"),
    0x0C: np.dtype(">i4"),
    0x0D: np.dtype(">f4"),
    0x0E: np.dtype(">f8"),
}


@dataclass
class Dataset:
    """Feature matrix plus targets (class indices or regression vectors)."""

    features: np.ndarray  # (N, d)
    targets: np.ndarray  # (N,) int64 class ids or (N, m) float
    split: str = "train"
    metadata: dict = field(default_factory=dict)

    @property
    def n(self) -> int:
        return self.features.shape[0]

    @property
    def dim(self) -> int:
        return self.features.shape[1]

    def num_classes(self) -> int:
        if self.targets.ndim != 1:
            raise DomainError("regression targets have no class count")
        return int(self.targets.max()) + 1

    def astype(self, dtype) -> "Dataset":
        t = self.targets if self.targets.ndim == 1 else self.targets.astype(dtype)
        return Dataset(self.features.astype(dtype), t, self.split, dict(self.metadata))


# ---------------------------------------------------------------------------
# IDX binary format (big-endian; magic 0x00000801 labels / 0x00000803 images)
# ---------------------------------------------------------------------------


def read_idx(path: str) -> np.ndarray:
    """Parse one IDX file into an array with the header's dimensions."""
    with open(path, "rb") as f:
        raw = f.read()
    if len(raw) < 4:
        raise IdxParseError(f"{path}: truncated magic", len(raw))
    zero1, zero2, type_code, ndim = struct.unpack(">BBBB", raw[:4])
    if zero1 != 0 or zero2 != 0:
        raise IdxParseError(f"{path}: bad magic {raw[:4].hex()}", 0)
    if type_code not in _IDX_DTYPES:
        raise IdxParseError(f"{path}: unknown type code 0x{type_code:02x}", 2)
    header_end = 4 + 4 * ndim
    if len(raw) < header_end:
        raise IdxParseError(f"{path}: truncated dimension table", len(raw))
    dims = struct.unpack(f">{ndim}i", raw[4:header_end])
    if any(d < 0 for d in dims):
        raise IdxParseError(f"{path}: negative dimension {dims}", 4)
    dtype = _IDX_DTYPES[type_code]
    count = int(np.prod(dims)) if dims else 1
    expected = header_end + count * dtype.itemsize
    if len(raw) != expected:
        raise IdxParseError(
            f"{path}: payload is {len(raw) - header_end} bytes, expected "
            f"{count * dtype.itemsize}",
            min(len(raw), expected),
        )
    data = np.frombuffer(raw, dtype=dtype, count=count, offset=header_end)
    return data.reshape(dims)


def write_idx(path: str, array: np.ndarray, type_code: int = IDX_UBYTE) -> None:
    """Inverse of read_idx: write(read(file)) reproduces the file byte for byte."""
    if type_code not in _IDX_DTYPES:
        raise DomainError(f"unknown IDX type code 0x{type_code:02x}")
    dtype = _IDX_DTYPES[type_code]
    with open(path, "wb") as f:
        f.write(struct.pack(">BBBB", 0, 0, type_code, array.ndim))
        f.write(struct.pack(f">{array.ndim}i", *array.shape))
        f.write(np.ascontiguousarray(array, dtype=dtype).tobytes())


def load_idx(
    images_path: str, labels_path: Optional[str] = None, split: str = "train"
) -> Dataset:
    """Load an IDX image file (pixels scaled to [0,1]) plus optional labels."""
    images = read_idx(images_path)
    if images.ndim < 2:
        raise IdxParseError(f"{images_path}: image file must have >= 2 dims", 3)
    n = images.shape[0]
    features = images.reshape(n, -1).astype(np.float64) / 255.0
    if labels_path is not None:
        labels = read_idx(labels_path)
        if labels.ndim != 1:
            raise IdxParseError(f"{labels_path}: label file must be 1-d", 3)
        if labels.shape[0] != n:
            raise IdxParseError(
                f"{labels_path}: {labels.shape[0]} labels for {n} images", 4
            )
        targets = labels.astype(np.int64)
    else:
        targets = np.zeros(n, dtype=np.int64)
    return Dataset(features, targets, split, {"source": images_path, "scale": "1/255"})


# ---------------------------------------------------------------------------
# synthetic datasets
# ---------------------------------------------------------------------------


def synth_blobs(
    classes: int,
    dim: int,
    sep: float,
    seed: int,
    n: int,
    standardize: bool = True,
    split: str = "train",
) -> Dataset:
    """Gaussian class clusters with unit noise and centers `sep` apart.

    sep == 0 collapses all classes onto the same distribution. Features are
    standardized per dimension by default (recorded in metadata).
    """
    if classes < 2 or dim < 1 or n < 1 or sep < 0:
        raise ConfigError(f"bad blob parameters: {classes=} {dim=} {n=} {sep=}")
    src = RandomSource(seed)
    dirs = src.gaussian(0.0, 1.0, (classes, dim))
    norms = np.linalg.norm(dirs, axis=1, keepdims=True)
    norms[norms == 0] = 1.0
    means = sep * dirs / norms
    labels = src.integers(0, classes, n).astype(np.int64)
    features = means[labels] + src.gaussian(0.0, 1.0, (n, dim))
    meta: dict = {"kind": "blobs", "classes": classes, "sep": sep, "seed": seed}
    if standardize:
        mu = features.mean(axis=0)
        sd = features.std(axis=0)
        sd[sd == 0] = 1.0
        features = (features - mu) / sd
        meta["standardize"] = {"mean": mu.tolist(), "std": sd.tolist()}
    return Dataset(features, labels, split, meta)


def synth_quadratic_stream(
    A: np.ndarray, noise_radius: float, seed: int, n: int, split: str = "train"
) -> Dataset:
    """Per-sample gradient perturbations for the quadratic objective.

    Rows are bounded noise vectors, centered so the sample mean is exactly
    zero: the full-batch gradient of the quadratic objective stays A @ w.
    """
    if noise_radius < 0:
        raise ConfigError(f"noise_radius must be >= 0, got {noise_radius}")
    d = A.shape[0]
    src = RandomSource(seed)
    eps = src.gaussian(0.0, 1.0, (n, d))
    norms = np.linalg.norm(eps, axis=1, keepdims=True)
    norms[norms == 0] = 1.0
    radii = src.uniform(0.0, noise_radius, (n, 1))
    eps = eps / norms * radii
    eps -= eps.mean(axis=0)
    return Dataset(
        eps,
        np.zeros(n, dtype=np.int64),
        split,
        {"kind": "quadratic_stream", "noise_radius": noise_radius, "seed": seed},
    )


# ---------------------------------------------------------------------------
# batch sampling
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class BatchSampler:
    """Deterministic index sequence i(t).

    mode "shuffle": a fresh seeded permutation per epoch, every sample
    exactly once per epoch. mode "sequential": no shuffling. mode
    "with_replacement": i.i.d. uniform draws per iteration.
    """

    seed: int
    batch_size: int
    n: int
    mode: str = "shuffle"

    def __post_init__(self):
        if self.batch_size < 1 or self.batch_size > self.n:
            raise ConfigError(
                f"batch_size {self.batch_size} outside [1, {self.n}]"
            )
        if self.mode not in ("shuffle", "sequential", "with_replacement"):
            raise ConfigError(f"unknown sampling mode {self.mode!r}")

    @property
    def batches_per_epoch(self) -> int:
        return (self.n + self.batch_size - 1) // self.batch_size

    def epoch_of(self, t: int) -> int:
        return t // self.batches_per_epoch

    def indices(self, t: int) -> np.ndarray:
        """Sample indices for iteration t; pure function of (self, t)."""
        if t < 0:
            raise DomainError(f"iteration must be >= 0, got {t}")
        if self.mode == "with_replacement":
            gen = np.random.Generator(
                np.random.PCG64(np.random.SeedSequence(self.seed, spawn_key=(t,)))
            )
            return gen.integers(0, self.n, self.batch_size)
        epoch = self.epoch_of(t)
        slot = t % self.batches_per_epoch
        if self.mode == "shuffle":
            gen = np.random.Generator(
                np.random.PCG64(np.random.SeedSequence(self.seed, spawn_key=(epoch,)))
            )
            order = gen.permutation(self.n)
        else:
            order = np.arange(self.n)
        lo = slot * self.batch_size
        return order[lo : min(lo + self.batch_size, self.n)]


def next_batch(
    sampler: BatchSampler, dataset: Dataset, t: int
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """(features, targets, indices) for iteration t."""
    idx = sampler.indices(t)
    return dataset.features[idx], dataset.targets[idx], idx

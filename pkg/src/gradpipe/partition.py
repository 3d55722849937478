"""Splitting an L-layer network into K contiguous modules.

Module indices k are 1-based. Module k trails the freshest module by a delay
of K - k iterations: its backward pass at iteration t applies to the forward
pass it ran at iteration t - K + k. While that index is negative the module is
warming up and applies a zero gradient.
"""

from __future__ import annotations

from dataclasses import dataclass

from .errors import ConfigError
from .layers import Affine, LayerSpec


@dataclass(frozen=True)
class Partition:
    """K contiguous, disjoint 1-based layer ranges covering 1..L in order."""

    num_layers: int
    ranges: tuple[tuple[int, int], ...]  # inclusive (lo, hi) per module

    @property
    def K(self) -> int:
        return len(self.ranges)

    def delay(self, k: int) -> int:
        self._check_k(k)
        return self.K - k

    def layer_slice(self, k: int) -> slice:
        """0-based python slice of module k's layers."""
        self._check_k(k)
        lo, hi = self.ranges[k - 1]
        return slice(lo - 1, hi)

    def module_of_layer(self, layer: int) -> int:
        """1-based module index owning 1-based layer `layer`."""
        for k, (lo, hi) in enumerate(self.ranges, start=1):
            if lo <= layer <= hi:
                return k
        raise ConfigError(f"layer {layer} outside 1..{self.num_layers}")

    def _check_k(self, k: int) -> None:
        if not 1 <= k <= self.K:
            raise ConfigError(f"module index {k} outside 1..{self.K}")


def make_partition(num_layers: int, split_points: list[int]) -> Partition:
    """Split layers 1..L after each index in `split_points`.

    K = len(split_points) + 1; module k spans (split[k-1], split[k]] with the
    implicit sentinels split[0] = 0 and split[K] = L.
    """
    if num_layers < 1:
        raise ConfigError(f"need at least one layer, got {num_layers}")
    pts = list(split_points)
    if len(pts) > num_layers - 1:
        raise ConfigError(f"{len(pts)} split points for {num_layers} layers")
    prev = 0
    for p in pts:
        if not 1 <= p <= num_layers - 1:
            raise ConfigError(f"split point {p} outside [1, {num_layers - 1}]")
        if p <= prev:
            raise ConfigError(f"split points must be strictly increasing, got {pts}")
        prev = p
    bounds = [0] + pts + [num_layers]
    ranges = tuple((bounds[i] + 1, bounds[i + 1]) for i in range(len(bounds) - 1))
    return Partition(num_layers, ranges)


def balanced_split_points(specs: list[LayerSpec], K: int) -> list[int]:
    """Choose K-1 split points that roughly balance per-module parameter count.

    Greedy sweep: cut whenever the running parameter mass reaches the next
    multiple of total/K. Parameter-free layers get weight 1 so empty modules
    cannot appear.
    """
    L = len(specs)
    if not 1 <= K <= L:
        raise ConfigError(f"cannot split {L} layers into {K} modules")
    weights = [
        s.in_dim * s.out_dim + s.out_dim if isinstance(s, Affine) else 1 for s in specs
    ]
    total = sum(weights)
    points: list[int] = []
    acc = 0
    for i, w in enumerate(weights[:-1], start=1):  # never cut after the last layer
        acc += w
        remaining_layers = L - i
        remaining_cuts = (K - 1) - len(points)
        if remaining_cuts == 0:
            break
        if acc >= total * (len(points) + 1) / K or remaining_layers == remaining_cuts:
            points.append(i)
    return points


def source_iteration(t: int, k: int, K: int) -> int:
    """Iteration whose forward pass module k's backward at iteration t replays."""
    return t - K + k


def is_warmup(t: int, k: int, K: int) -> bool:
    """True iff module k applies a zero gradient at iteration t."""
    return source_iteration(t, k, K) < 0

"""Module-parallel training schedule with delayed gradients.

The network is split into K contiguous modules. Each iteration t:

  1. the batch flows forward through modules 1..K in order, every module
     computing with its *current* weights and storing a tape entry (cached
     activations plus a byte-for-byte copy of the weights it used);
  2. every module k runs a backward pass -- not for today's sample, but for
     the one it forwarded at iteration s = t - K + k, using that iteration's
     tape entry and the stale error gradient received from module k+1 at the
     end of iteration t - 1. Module K (which owns the loss head) has delay 0
     and back-propagates today's sample. While s < 0 the module is warming up
     and applies a zero gradient;
  3. each module applies one optimizer step to its own weights;
  4. the consumed tape entry is discarded.

Because a sample's forward pass at iteration s used the same weights w^s in
every module, the pieces of its backward pass -- executed by module K at s,
module K-1 at s+1, ... -- reproduce exactly the full backpropagation gradient
evaluated at w^s. The emulated executor runs this schedule single-threaded and
is the reference semantics; the parallel executor runs one long-lived worker
thread per module, connected by single-slot handoff buffers, and must produce
bitwise-identical weight trajectories.

The error gradient produced by module k+1 at iteration t is consumed by
module k at iteration t+1, never earlier or later.
"""

from __future__ import annotations

import threading
import time
from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import layers as L
from . import tensor
from .errors import ConfigError, NumericError, ScheduleError
from .optim import OptimizerConfig
from .partition import Partition, source_iteration


# ---------------------------------------------------------------------------
# records and tapes
# ---------------------------------------------------------------------------


@dataclass
class TapeEntry:
    """Everything module k needs to replay iteration `iteration` exactly."""

    iteration: int
    tapes: list[L.LayerTape]
    weight_snapshot: list[L.LayerState]
    targets: Optional[np.ndarray] = None  # head module only


@dataclass
class IterationRecord:
    t: int
    indices: Optional[np.ndarray]
    loss: float
    correct: int
    batch_size: int
    grad_sq_norm: float
    module_forward_ms: list[float]
    module_backward_ms: list[float]
    applied_grads: Optional[list[Optional[list[L.LayerState]]]] = None

    @property
    def forward_ms(self) -> float:
        return sum(self.module_forward_ms)

    @property
    def backward_ms(self) -> float:
        return sum(self.module_backward_ms)


def _grads_sq_norm(grads: Optional[list[L.LayerState]]) -> float:
    if grads is None:
        return 0.0
    acc = 0.0
    for g in grads:
        if g.weights is not None:
            acc += tensor.sq_l2_norm(g.weights)
        if g.bias is not None:
            acc += tensor.sq_l2_norm(g.bias)
    return acc


# ---------------------------------------------------------------------------
# per-module runner (shared by both executors)
# ---------------------------------------------------------------------------


class ModuleRunner:
    """Owns one module's layer states, tape ring and optimizer."""

    def __init__(
        self,
        k: int,
        K: int,
        specs: list[L.LayerSpec],
        states: list[L.LayerState],
        optimizer_config: OptimizerConfig,
    ):
        self.k = k
        self.K = K
        self.specs = specs
        self.states = states
        self.optimizer = optimizer_config.build()
        self.has_head = L.is_head(specs[-1])
        self.ring_capacity = K - k + 1
        self.ring: dict[int, TapeEntry] = {}
        self.delta_pending: Optional[np.ndarray] = None
        self.last_loss: float = float("nan")
        self.last_correct: int = 0

    def forward(self, t: int, x: np.ndarray, targets: Optional[np.ndarray] = None):
        """Forward through the module slice; snapshots weights and tapes."""
        if len(self.ring) >= self.ring_capacity:
            raise ScheduleError(
                f"module {self.k}: tape ring overflow at iteration {t} "
                f"({len(self.ring)} live entries, capacity {self.ring_capacity})"
            )
        snapshot = [s.copy() for s in self.states]
        tapes: list[L.LayerTape] = []
        h = x
        for spec, state in zip(self.specs, self.states):
            if L.is_head(spec):
                h, tape = L.forward(spec, state, h, targets)
            else:
                h, tape = L.forward(spec, state, h)
            tapes.append(tape)
        self.ring[t] = TapeEntry(
            t, tapes, snapshot, targets if self.has_head else None
        )
        if self.has_head:
            self.last_loss = h
            head_tape = tapes[-1]
            if isinstance(self.specs[-1], L.SoftmaxCrossEntropyHead):
                logits = head_tape.cached_input
                self.last_correct = int(
                    np.sum(np.argmax(logits, axis=1) == head_tape.targets)
                )
            else:
                self.last_correct = 0
        return h

    def backward(self, s: int, delta_in: Optional[np.ndarray]):
        """Backward for source iteration s using its tape entry and snapshot.

        Returns (grads, delta_out) where delta_out is the error gradient for
        the upstream module, evaluated at the snapshot weights w^s.
        """
        entry = self.ring.pop(s, None)
        if entry is None:
            raise ScheduleError(
                f"module {self.k}: no tape entry for source iteration {s}"
            )
        if self.has_head:
            delta = 1.0
        else:
            if delta_in is None:
                raise ScheduleError(
                    f"module {self.k}: missing stale error gradient for iteration {s}"
                )
            delta = delta_in
        grads: list[L.LayerState] = [L.LayerState() for _ in self.specs]
        for i in range(len(self.specs) - 1, -1, -1):
            spec = self.specs[i]
            snap = entry.weight_snapshot[i]
            tape = entry.tapes[i]
            grads[i] = L.backward_weights(spec, snap, tape, delta)
            delta = L.backward_input(spec, snap, tape, delta)
        return grads, delta

    def step(self, t: int, grads: Optional[list[L.LayerState]]) -> None:
        """One optimizer step; warmup iterations pass grads=None (zero gradient)."""
        if grads is None:
            grads = L.zero_grads(self.states)
        self.optimizer.step(self.states, grads, t)

    def live_tape_count(self) -> int:
        return len(self.ring)


def _build_runners(
    specs: list[L.LayerSpec],
    states: list[L.LayerState],
    part: Partition,
    optimizer_config: OptimizerConfig,
) -> list[ModuleRunner]:
    L.validate_network(specs)
    if part.num_layers != len(specs):
        raise ConfigError(
            f"partition covers {part.num_layers} layers but network has {len(specs)}"
        )
    runners = []
    for k in range(1, part.K + 1):
        sl = part.layer_slice(k)
        runners.append(
            ModuleRunner(k, part.K, specs[sl], states[sl], optimizer_config)
        )
    return runners


# ---------------------------------------------------------------------------
# emulated executor (single-threaded reference semantics)
# ---------------------------------------------------------------------------


class EmulatedPipeline:
    """Deterministic single-threaded replay of the exact delayed schedule."""

    def __init__(
        self,
        specs: list[L.LayerSpec],
        states: list[L.LayerState],
        part: Partition,
        optimizer_config: OptimizerConfig,
        capture_grads: bool = False,
    ):
        self.part = part
        self.K = part.K
        self.runners = _build_runners(specs, states, part, optimizer_config)
        self.capture_grads = capture_grads

    def run_iteration(
        self,
        t: int,
        batch_x: np.ndarray,
        batch_y: np.ndarray,
        indices: Optional[np.ndarray] = None,
    ) -> IterationRecord:
        K = self.K
        fwd_ms = [0.0] * K
        bwd_ms = [0.0] * K

        h = batch_x
        for k, runner in enumerate(self.runners, start=1):
            t0 = time.perf_counter()
            h = runner.forward(t, h, batch_y if k == K else None)
            fwd_ms[k - 1] = (time.perf_counter() - t0) * 1e3
        loss = self.runners[-1].last_loss
        correct = self.runners[-1].last_correct

        grads_per_module: list[Optional[list[L.LayerState]]] = [None] * K
        next_inbox: list[Optional[np.ndarray]] = [None] * K
        for k in range(K, 0, -1):
            runner = self.runners[k - 1]
            s = source_iteration(t, k, K)
            if s < 0:
                continue
            t0 = time.perf_counter()
            delta_in = None if k == K else runner.delta_pending
            grads, delta_out = runner.backward(s, delta_in)
            bwd_ms[k - 1] = (time.perf_counter() - t0) * 1e3
            grads_per_module[k - 1] = grads
            if k > 1:
                next_inbox[k - 2] = delta_out

        grad_sq = sum(_grads_sq_norm(g) for g in grads_per_module)
        for k in range(1, K + 1):
            self.runners[k - 1].step(t, grads_per_module[k - 1])
        for k in range(1, K + 1):
            # delivery happens at the iteration boundary: consumed at t+1
            self.runners[k - 1].delta_pending = next_inbox[k - 1]

        if not np.isfinite(loss) or not np.isfinite(grad_sq):
            raise NumericError(
                f"divergence at iteration {t}: loss={loss}, grad_sq={grad_sq}", t
            )
        return IterationRecord(
            t=t,
            indices=indices,
            loss=loss,
            correct=correct,
            batch_size=batch_x.shape[0],
            grad_sq_norm=grad_sq,
            module_forward_ms=fwd_ms,
            module_backward_ms=bwd_ms,
            applied_grads=grads_per_module if self.capture_grads else None,
        )

    def current_states(self) -> list[L.LayerState]:
        """Live layer states in network order (read-only between iterations)."""
        out: list[L.LayerState] = []
        for runner in self.runners:
            out.extend(runner.states)
        return out

    def live_tape_count(self) -> int:
        return sum(r.live_tape_count() for r in self.runners)

    def close(self) -> None:  # symmetry with the parallel executor
        pass

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()
        return False


# ---------------------------------------------------------------------------
# single-slot handoff buffer
# ---------------------------------------------------------------------------


class _Aborted(Exception):
    pass


_EMPTY = object()


class HandoffSlot:
    """Blocking single-slot buffer with one producer and one consumer.

    The producer waits while the slot is full, the consumer while it is
    empty; a deeper buffer would change the staleness pattern.
    """

    def __init__(self):
        self._cond = threading.Condition()
        self._item = _EMPTY

    def put(self, item, abort: threading.Event) -> None:
        with self._cond:
            while self._item is not _EMPTY:
                if abort.is_set():
                    raise _Aborted()
                self._cond.wait(0.05)
            self._item = item
            self._cond.notify_all()

    def take(self, abort: threading.Event):
        with self._cond:
            while self._item is _EMPTY:
                if abort.is_set():
                    raise _Aborted()
                self._cond.wait(0.05)
            item = self._item
            self._item = _EMPTY
            self._cond.notify_all()
            return item


# ---------------------------------------------------------------------------
# parallel executor
# ---------------------------------------------------------------------------


class ParallelPipeline:
    """One long-lived worker thread per module.

    Workers own their layer states, tape rings and optimizer state
    exclusively. The only shared objects are 2(K-1) single-slot handoff
    buffers (activations downstream, error gradients upstream), each with one
    producer and one consumer. A pair of barriers separates iterations, so
    optimizer steps never overlap the next forward pass and the coordinator
    may read states safely between iterations.
    """

    def __init__(
        self,
        specs: list[L.LayerSpec],
        states: list[L.LayerState],
        part: Partition,
        optimizer_config: OptimizerConfig,
        capture_grads: bool = False,
    ):
        self.part = part
        self.K = part.K
        self.runners = _build_runners(specs, states, part, optimizer_config)
        self.capture_grads = capture_grads

        K = self.K
        self._act_slots = [HandoffSlot() for _ in range(K - 1)]
        self._grad_slots = [HandoffSlot() for _ in range(K - 1)]
        self._start = threading.Barrier(K + 1)
        self._end = threading.Barrier(K + 1)
        self._abort = threading.Event()
        self._stop = False
        self._broken = False

        self._t = 0
        self._batch_x: Optional[np.ndarray] = None
        self._batch_y: Optional[np.ndarray] = None
        self._loss = float("nan")
        self._correct = 0
        self._fwd_ms = [0.0] * K
        self._bwd_ms = [0.0] * K
        self._grad_sq = [0.0] * K
        self._applied: list[Optional[list[L.LayerState]]] = [None] * K
        self._errors: list[tuple[int, BaseException]] = []

        self._threads = [
            threading.Thread(
                target=self._worker, args=(k,), name=f"gradpipe-module-{k}", daemon=True
            )
            for k in range(1, K + 1)
        ]
        for th in self._threads:
            th.start()

    # -- worker side --------------------------------------------------------

    def _worker(self, k: int) -> None:
        runner = self.runners[k - 1]
        K = self.K
        while True:
            try:
                self._start.wait()
            except threading.BrokenBarrierError:
                return
            if self._stop:
                return
            try:
                t = self._t
                if k == 1:
                    x = self._batch_x
                else:
                    it, x = self._act_slots[k - 2].take(self._abort)
                    if it != t:
                        raise ScheduleError(
                            f"module {k}: expected activation for iteration {t}, got {it}"
                        )
                t0 = time.perf_counter()
                out = runner.forward(t, x, self._batch_y if k == K else None)
                self._fwd_ms[k - 1] = (time.perf_counter() - t0) * 1e3
                if k < K:
                    self._act_slots[k - 1].put((t, out), self._abort)
                else:
                    self._loss = runner.last_loss
                    self._correct = runner.last_correct

                s = source_iteration(t, k, K)
                grads: Optional[list[L.LayerState]] = None
                if s >= 0:
                    t0 = time.perf_counter()
                    delta_in = None if k == K else runner.delta_pending
                    grads, delta_out = runner.backward(s, delta_in)
                    self._bwd_ms[k - 1] = (time.perf_counter() - t0) * 1e3
                    if k > 1:
                        self._grad_slots[k - 2].put((s, delta_out), self._abort)
                else:
                    self._bwd_ms[k - 1] = 0.0

                if k < K and source_iteration(t + 1, k, K) >= 0:
                    src, delta = self._grad_slots[k - 1].take(self._abort)
                    if src != source_iteration(t + 1, k, K):
                        raise ScheduleError(
                            f"module {k}: stale gradient carries iteration {src}, "
                            f"expected {source_iteration(t + 1, k, K)}"
                        )
                    runner.delta_pending = delta

                runner.step(t, grads)
                self._grad_sq[k - 1] = _grads_sq_norm(grads)
                self._applied[k - 1] = grads if self.capture_grads else None
            except _Aborted:
                pass
            except BaseException as exc:  # propagate to the coordinator
                self._errors.append((k, exc))
                self._abort.set()
            try:
                self._end.wait()
            except threading.BrokenBarrierError:
                return

    # -- coordinator side ----------------------------------------------------

    def run_iteration(
        self,
        t: int,
        batch_x: np.ndarray,
        batch_y: np.ndarray,
        indices: Optional[np.ndarray] = None,
    ) -> IterationRecord:
        if self._broken:
            raise ScheduleError("pipeline aborted by a previous worker failure")
        self._t = t
        self._batch_x = batch_x
        self._batch_y = batch_y
        self._start.wait()
        self._end.wait()
        if self._errors:
            self._broken = True
            self._abort.set()
            k, exc = self._errors[0]
            if isinstance(exc, NumericError):
                raise NumericError(
                    f"module {k} diverged: {exc}", exc.iteration
                ) from exc
            raise ScheduleError(f"worker for module {k} failed: {exc!r}") from exc

        grad_sq = sum(self._grad_sq)
        loss = self._loss
        if not np.isfinite(loss) or not np.isfinite(grad_sq):
            raise NumericError(
                f"divergence at iteration {t}: loss={loss}, grad_sq={grad_sq}", t
            )
        return IterationRecord(
            t=t,
            indices=indices,
            loss=loss,
            correct=self._correct,
            batch_size=batch_x.shape[0],
            grad_sq_norm=grad_sq,
            module_forward_ms=list(self._fwd_ms),
            module_backward_ms=list(self._bwd_ms),
            applied_grads=list(self._applied) if self.capture_grads else None,
        )

    def current_states(self) -> list[L.LayerState]:
        """Safe only between iterations: workers are parked at the barrier."""
        out: list[L.LayerState] = []
        for runner in self.runners:
            out.extend(runner.states)
        return out

    def live_tape_count(self) -> int:
        return sum(r.live_tape_count() for r in self.runners)

    def close(self) -> None:
        if self._stop:
            return
        self._stop = True
        self._abort.set()
        self._start.abort()
        self._end.abort()
        for th in self._threads:
            th.join(timeout=5.0)

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()
        return False


def build_pipeline(
    mode: str,
    specs: list[L.LayerSpec],
    states: list[L.LayerState],
    part: Partition,
    optimizer_config: OptimizerConfig,
    capture_grads: bool = False,
):
    if mode == "emulated":
        return EmulatedPipeline(specs, states, part, optimizer_config, capture_grads)
    if mode == "parallel":
        return ParallelPipeline(specs, states, part, optimizer_config, capture_grads)
    raise ConfigError(f"unknown execution mode {mode!r}")

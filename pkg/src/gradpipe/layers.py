"""Dense layer zoo with hand-written forward and backward rules.

Each layer kind defines three operations: forward (producing an activation and
a tape of what backward needs), backward_input (gradient w.r.t. the layer
input) and backward_weights (gradient w.r.t. the layer parameters, shaped like
the parameters). Weight updates never happen here; backward is pure.

Loss heads are layers too: their forward consumes targets and returns the
scalar batch-mean loss, and their backward seeds the error gradient chain
(delta_out is the scalar d loss / d loss == 1).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Union

import numpy as np

from . import tensor
from .errors import ConfigError, ContractError, DomainError, NumericError, ShapeError


# ---------------------------------------------------------------------------
# specs and state
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Affine:
    in_dim: int
    out_dim: int


@dataclass(frozen=True)
class Relu:
    pass


@dataclass(frozen=True)
class Tanh:
    pass


@dataclass(frozen=True)
class SoftmaxCrossEntropyHead:
    num_classes: int


@dataclass(frozen=True)
class MseHead:
    pass


LayerSpec = Union[Affine, Relu, Tanh, SoftmaxCrossEntropyHead, MseHead]

HEAD_KINDS = (SoftmaxCrossEntropyHead, MseHead)


@dataclass
class LayerState:
    """Parameters of one layer; both fields are None for parameter-free layers."""

    weights: Optional[np.ndarray] = None
    bias: Optional[np.ndarray] = None

    def copy(self) -> "LayerState":
        return LayerState(
            None if self.weights is None else self.weights.copy(),
            None if self.bias is None else self.bias.copy(),
        )

    def param_count(self) -> int:
        n = 0
        if self.weights is not None:
            n += self.weights.size
        if self.bias is not None:
            n += self.bias.size
        return n


@dataclass
class LayerTape:
    """Forward-pass snapshot consumed by the matching backward call."""

    cached_input: np.ndarray
    cached_output_aux: Optional[np.ndarray] = None
    targets: Optional[np.ndarray] = None


def is_head(spec: LayerSpec) -> bool:
    return isinstance(spec, HEAD_KINDS)


def validate_network(specs: list[LayerSpec]) -> None:
    """Check layer ordering and dimension compatibility; ConfigError on failure."""
    if not specs:
        raise ConfigError("network must have at least one layer")
    if not is_head(specs[-1]):
        raise ConfigError("last layer must be a loss head")
    for i, spec in enumerate(specs[:-1]):
        if is_head(spec):
            raise ConfigError(f"head layer at position {i + 1} is not last")
    dim: Optional[int] = None
    for i, spec in enumerate(specs):
        if isinstance(spec, Affine):
            if spec.in_dim <= 0 or spec.out_dim <= 0:
                raise ConfigError(f"layer {i + 1}: non-positive affine dims {spec}")
            if dim is not None and dim != spec.in_dim:
                raise ConfigError(
                    f"layer {i + 1}: affine in_dim {spec.in_dim} != upstream dim {dim}"
                )
            dim = spec.out_dim
        elif isinstance(spec, SoftmaxCrossEntropyHead):
            if spec.num_classes <= 1:
                raise ConfigError(f"softmax head needs >= 2 classes, got {spec.num_classes}")
            if dim is not None and dim != spec.num_classes:
                raise ConfigError(
                    f"head expects {spec.num_classes} logits but upstream dim is {dim}"
                )


def param_count(specs: list[LayerSpec]) -> int:
    return sum(s.in_dim * s.out_dim + s.out_dim for s in specs if isinstance(s, Affine))


def init_network(
    specs: list[LayerSpec],
    src: tensor.RandomSource,
    scheme: str = "he_gaussian",
    dtype=tensor.DEFAULT_DTYPE,
) -> list[LayerState]:
    """Deterministic parameter init; biases are always zero."""
    validate_network(specs)
    states = []
    for spec in specs:
        if not isinstance(spec, Affine):
            states.append(LayerState())
            continue
        shape = (spec.in_dim, spec.out_dim)
        if scheme == "zeros":
            w = np.zeros(shape, dtype=dtype)
        elif scheme == "xavier_uniform":
            limit = np.sqrt(6.0 / (spec.in_dim + spec.out_dim))
            w = src.uniform(-limit, limit, shape, dtype)
        elif scheme == "he_gaussian":
            w = src.gaussian(0.0, np.sqrt(2.0 / spec.in_dim), shape, dtype)
        else:
            raise ConfigError(f"unknown init scheme {scheme!r}")
        states.append(LayerState(w, np.zeros(spec.out_dim, dtype=dtype)))
    return states


def zero_grads(states: list[LayerState]) -> list[LayerState]:
    """Gradient buffers of the same shapes as `states`, all zero."""
    return [
        LayerState(
            None if s.weights is None else np.zeros_like(s.weights),
            None if s.bias is None else np.zeros_like(s.bias),
        )
        for s in states
    ]


# ---------------------------------------------------------------------------
# forward / backward rules
# ---------------------------------------------------------------------------


def _require_finite(spec: LayerSpec, x: np.ndarray) -> None:
    if not np.all(np.isfinite(x)):
        raise NumericError(f"non-finite input to {type(spec).__name__}")


def _softmax_logprobs(logits: np.ndarray) -> np.ndarray:
    z = logits - np.max(logits, axis=1, keepdims=True)
    return z - np.log(np.sum(np.exp(z), axis=1, keepdims=True))


def forward(
    spec: LayerSpec,
    state: LayerState,
    x: np.ndarray,
    targets: Optional[np.ndarray] = None,
):
    """Apply the layer; returns (output, tape).

    For head layers `targets` is required and the output is the scalar
    batch-mean loss (a float); for all other layers it is the activation.
    """
    _require_finite(spec, x)
    if isinstance(spec, Affine):
        if x.ndim != 2 or x.shape[1] != spec.in_dim:
            raise ShapeError(f"affine expects (batch, {spec.in_dim}), got {x.shape}")
        out = tensor.matmul(x, state.weights) + state.bias
        return out, LayerTape(cached_input=x)
    if isinstance(spec, Relu):
        return tensor.relu(x), LayerTape(cached_input=x)
    if isinstance(spec, Tanh):
        y = tensor.tanh(x)
        return y, LayerTape(cached_input=x, cached_output_aux=y)
    if isinstance(spec, SoftmaxCrossEntropyHead):
        if targets is None:
            raise ContractError("softmax head forward requires targets")
        if x.ndim != 2 or x.shape[1] != spec.num_classes:
            raise ShapeError(f"head expects (batch, {spec.num_classes}), got {x.shape}")
        t = np.asarray(targets)
        if t.shape[0] != x.shape[0]:
            raise ShapeError(f"batch mismatch: {x.shape[0]} logits vs {t.shape[0]} targets")
        if np.any(t < 0) or np.any(t >= spec.num_classes):
            raise DomainError(f"target out of range [0, {spec.num_classes})")
        logp = _softmax_logprobs(x)
        loss = -float(np.mean(logp[np.arange(x.shape[0]), t]))
        probs = np.exp(logp)
        return loss, LayerTape(cached_input=x, cached_output_aux=probs, targets=t)
    if isinstance(spec, MseHead):
        if targets is None:
            raise ContractError("mse head forward requires targets")
        t = np.asarray(targets, dtype=x.dtype)
        if t.shape != x.shape:
            raise ShapeError(f"mse head shapes disagree: {x.shape} vs {t.shape}")
        diff = x - t
        loss = 0.5 * float(np.sum(np.square(diff))) / x.shape[0]
        return loss, LayerTape(cached_input=x, cached_output_aux=diff, targets=t)
    raise ConfigError(f"unknown layer spec {spec!r}")


def backward_input(
    spec: LayerSpec,
    state: LayerState,
    tape: LayerTape,
    delta_out,
) -> np.ndarray:
    """Gradient of the loss w.r.t. the layer input. Never mutates state."""
    x = tape.cached_input
    if isinstance(spec, Affine):
        if delta_out.shape != (x.shape[0], spec.out_dim):
            raise ContractError(
                f"affine delta shape {delta_out.shape} != {(x.shape[0], spec.out_dim)}"
            )
        return tensor.matmul_nt(delta_out, state.weights)
    if isinstance(spec, Relu):
        if delta_out.shape != x.shape:
            raise ContractError(f"relu delta shape {delta_out.shape} != {x.shape}")
        return np.where(x > 0, delta_out, x.dtype.type(0))
    if isinstance(spec, Tanh):
        if delta_out.shape != x.shape:
            raise ContractError(f"tanh delta shape {delta_out.shape} != {x.shape}")
        y = tape.cached_output_aux
        return delta_out * (1.0 - y * y)
    if isinstance(spec, SoftmaxCrossEntropyHead):
        probs = tape.cached_output_aux
        grad = probs.copy()
        grad[np.arange(x.shape[0]), tape.targets] -= 1.0
        grad /= x.shape[0]
        return grad * float(delta_out)
    if isinstance(spec, MseHead):
        return tape.cached_output_aux * (float(delta_out) / x.shape[0])
    raise ConfigError(f"unknown layer spec {spec!r}")


def backward_weights(
    spec: LayerSpec,
    state: LayerState,
    tape: LayerTape,
    delta_out,
) -> LayerState:
    """Gradient of the loss w.r.t. the layer parameters, shaped like the state."""
    if isinstance(spec, Affine):
        x = tape.cached_input
        if delta_out.shape != (x.shape[0], spec.out_dim):
            raise ContractError(
                f"affine delta shape {delta_out.shape} != {(x.shape[0], spec.out_dim)}"
            )
        dw = tensor.matmul_tn(x, delta_out)
        db = np.sum(delta_out, axis=0)
        return LayerState(dw, db)
    return LayerState()


# ---------------------------------------------------------------------------
# whole-network helpers
# ---------------------------------------------------------------------------


def loss_and_prediction(
    head: LayerSpec, logits: np.ndarray, targets: np.ndarray
) -> tuple[float, int]:
    """Batch-mean loss plus Top-1 correct count (0 for regression heads)."""
    loss, tape = forward(head, LayerState(), logits, targets)
    if isinstance(head, SoftmaxCrossEntropyHead):
        correct = int(np.sum(np.argmax(logits, axis=1) == tape.targets))
    else:
        correct = 0
    return loss, correct


def forward_logits(
    specs: list[LayerSpec], states: list[LayerState], x: np.ndarray
) -> np.ndarray:
    """Run the non-head layers; returns the head input (logits/predictions)."""
    h = x
    for spec, state in zip(specs[:-1], states[:-1]):
        h, _ = forward(spec, state, h)
    return h


def full_backprop(
    specs: list[LayerSpec],
    states: list[LayerState],
    x: np.ndarray,
    targets: np.ndarray,
) -> tuple[float, list[LayerState], int]:
    """Plain sequential backpropagation over the whole stack.

    The reference semantics every pipeline schedule is checked against:
    forward layers 1..L, then propagate the error gradient from the head back
    to layer 1, collecting parameter gradients. Returns (loss, grads, top1).
    """
    h = x
    tapes = []
    for spec, state in zip(specs[:-1], states[:-1]):
        h, tape = forward(spec, state, h)
        tapes.append(tape)
    loss, head_tape = forward(specs[-1], states[-1], h, targets)
    tapes.append(head_tape)

    if isinstance(specs[-1], SoftmaxCrossEntropyHead):
        correct = int(np.sum(np.argmax(h, axis=1) == head_tape.targets))
    else:
        correct = 0

    grads: list[LayerState] = [LayerState() for _ in specs]
    delta = 1.0
    for i in range(len(specs) - 1, -1, -1):
        grads[i] = backward_weights(specs[i], states[i], tapes[i], delta)
        delta = backward_input(specs[i], states[i], tapes[i], delta)
    return loss, grads, correct

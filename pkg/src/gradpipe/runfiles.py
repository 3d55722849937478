"""On-disk run artifacts: metrics CSV, run manifest, weights binary, reports.

Metrics CSV schema (UTF-8, header row, fixed column order):

    t, epoch, train_loss, grad_sq_norm, min_grad_sq_so_far,
    test_loss, test_top1, wall_ms_forward, wall_ms_backward,
    mod1_fwd_ms, mod1_bwd_ms, ..., modK_fwd_ms, modK_bwd_ms

Floats are written with repr (shortest round-trip), so a parsed row is
lossless; test columns are empty on iterations without an evaluation pass.
Rows are flushed as they are written so an aborted run leaves a usable log.

Weights binary (little-endian):

    magic  4 bytes  b"GPWT"
    u32    format version (1)
    u32    dtype code (1 = float64, 2 = float32)
    u32    layer count
    per layer:
      u8   flags (bit0: has weights, bit1: has bias)
      per present tensor: u32 ndim, then u64 * ndim dims
    payload: tensor data in declaration order, C order, little-endian
"""

from __future__ import annotations

import csv
import json
import struct
from dataclasses import dataclass, field
from typing import Optional, TextIO

import numpy as np

from .errors import IoError
from .layers import LayerState

FORMAT_VERSION = 1
WEIGHTS_MAGIC = b"GPWT"

_FIXED_COLUMNS = [
    "t",
    "epoch",
    "train_loss",
    "grad_sq_norm",
    "min_grad_sq_so_far",
    "test_loss",
    "test_top1",
    "wall_ms_forward",
    "wall_ms_backward",
]


@dataclass
class MetricsRow:
    t: int
    epoch: int
    train_loss: float
    grad_sq_norm: float
    min_grad_sq_so_far: float
    test_loss: Optional[float]
    test_top1: Optional[float]
    wall_ms_forward: float
    wall_ms_backward: float
    module_fwd_ms: list[float] = field(default_factory=list)
    module_bwd_ms: list[float] = field(default_factory=list)


def metrics_header(K: int) -> list[str]:
    cols = list(_FIXED_COLUMNS)
    for k in range(1, K + 1):
        cols += [f"mod{k}_fwd_ms", f"mod{k}_bwd_ms"]
    return cols


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, float):
        return repr(v)
    return str(v)


class MetricsWriter:
    """Streams MetricsRows to CSV, flushing after every row."""

    def __init__(self, fh: TextIO, K: int):
        self._fh = fh
        self.K = K
        self._writer = csv.writer(fh, lineterminator="\n")
        self._writer.writerow(metrics_header(K))
        fh.flush()

    def write_row(self, row: MetricsRow) -> None:
        cells = [
            _fmt(row.t),
            _fmt(row.epoch),
            _fmt(row.train_loss),
            _fmt(row.grad_sq_norm),
            _fmt(row.min_grad_sq_so_far),
            _fmt(row.test_loss),
            _fmt(row.test_top1),
            _fmt(row.wall_ms_forward),
            _fmt(row.wall_ms_backward),
        ]
        for k in range(self.K):
            cells.append(_fmt(row.module_fwd_ms[k]))
            cells.append(_fmt(row.module_bwd_ms[k]))
        self._writer.writerow(cells)
        self._fh.flush()


def read_metrics(path: str) -> list[MetricsRow]:
    """Parse a metrics CSV back into rows (lossless for repr-formatted floats)."""
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        n_fixed = len(_FIXED_COLUMNS)
        if header[:n_fixed] != _FIXED_COLUMNS or (len(header) - n_fixed) % 2 != 0:
            raise IoError(f"{path}: unrecognized metrics header")
        K = (len(header) - n_fixed) // 2
        rows = []
        for cells in reader:
            opt = lambda s: None if s == "" else float(s)
            mod = [float(c) for c in cells[n_fixed:]]
            rows.append(
                MetricsRow(
                    t=int(cells[0]),
                    epoch=int(cells[1]),
                    train_loss=float(cells[2]),
                    grad_sq_norm=float(cells[3]),
                    min_grad_sq_so_far=float(cells[4]),
                    test_loss=opt(cells[5]),
                    test_top1=opt(cells[6]),
                    wall_ms_forward=float(cells[7]),
                    wall_ms_backward=float(cells[8]),
                    module_fwd_ms=mod[0::2],
                    module_bwd_ms=mod[1::2],
                )
            )
    return rows


# ---------------------------------------------------------------------------
# manifest and reports
# ---------------------------------------------------------------------------


def write_manifest(path: str, config_dict: dict, extra: Optional[dict] = None) -> None:
    from . import __version__

    doc = {
        "version": f"gradpipe-{__version__}",
        "config": config_dict,
    }
    if extra:
        doc.update(extra)
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")


def write_report(path: str, report: dict) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(report, fh, indent=2, sort_keys=True)
        fh.write("\n")


# ---------------------------------------------------------------------------
# weights binary
# ---------------------------------------------------------------------------

_DTYPE_CODES = {1: np.dtype("<f8"), 2: np.dtype("<f4")}


def _dtype_code(dtype) -> int:
    for code, dt in _DTYPE_CODES.items():
        if np.dtype(dtype) == dt.newbyteorder("="):
            return code
    raise IoError(f"unsupported weights dtype {dtype}")


def save_weights(path: str, states: list[LayerState]) -> None:
    tensors: list[np.ndarray] = []
    for s in states:
        for arr in (s.weights, s.bias):
            if arr is not None:
                tensors.append(arr)
    dtype = tensors[0].dtype if tensors else np.dtype(np.float64)
    code = _dtype_code(dtype)
    le = _DTYPE_CODES[code]
    with open(path, "wb") as fh:
        fh.write(WEIGHTS_MAGIC)
        fh.write(struct.pack("<III", FORMAT_VERSION, code, len(states)))
        for s in states:
            flags = (1 if s.weights is not None else 0) | (
                2 if s.bias is not None else 0
            )
            fh.write(struct.pack("<B", flags))
            for arr in (s.weights, s.bias):
                if arr is None:
                    continue
                fh.write(struct.pack("<I", arr.ndim))
                fh.write(struct.pack(f"<{arr.ndim}Q", *arr.shape))
        for arr in tensors:
            fh.write(np.ascontiguousarray(arr, dtype=le).tobytes())


def load_weights(path: str) -> list[LayerState]:
    with open(path, "rb") as fh:
        raw = fh.read()
    if raw[:4] != WEIGHTS_MAGIC:
        raise IoError(f"{path}: bad magic {raw[:4]!r}")
    version, code, n_layers = struct.unpack_from("<III", raw, 4)
    if version != FORMAT_VERSION:
        raise IoError(f"{path}: unsupported format version {version}")
    if code not in _DTYPE_CODES:
        raise IoError(f"{path}: unknown dtype code {code}")
    dtype = _DTYPE_CODES[code]
    off = 16
    shapes: list[tuple[Optional[tuple], Optional[tuple]]] = []
    for _ in range(n_layers):
        (flags,) = struct.unpack_from("<B", raw, off)
        off += 1
        pair = []
        for bit in (1, 2):
            if flags & bit:
                (ndim,) = struct.unpack_from("<I", raw, off)
                off += 4
                dims = struct.unpack_from(f"<{ndim}Q", raw, off)
                off += 8 * ndim
                pair.append(tuple(int(d) for d in dims))
            else:
                pair.append(None)
        shapes.append((pair[0], pair[1]))
    states = []
    for w_shape, b_shape in shapes:
        arrs = []
        for shape in (w_shape, b_shape):
            if shape is None:
                arrs.append(None)
                continue
            count = int(np.prod(shape)) if shape else 1
            arr = np.frombuffer(raw, dtype=dtype, count=count, offset=off)
            off += count * dtype.itemsize
            arrs.append(arr.reshape(shape).astype(dtype.newbyteorder("="), copy=True))
        states.append(LayerState(arrs[0], arrs[1]))
    if off != len(raw):
        raise IoError(f"{path}: {len(raw) - off} trailing bytes")
    return states

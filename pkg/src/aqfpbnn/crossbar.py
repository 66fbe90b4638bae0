"""Logic-in-memory crossbar: XNOR cells, analog column summation, buffer readout.

The simulation stays in the integer column-sum domain and converts to current
only at the neuron, so the analog sum itself carries no rounding error.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .device import AttenuationModel, BufferModel, buffer_prob, unit_current
from .rng import as_generator


class CrossbarError(ValueError):
    pass


def _as_pm1(a, what):
    arr = np.asarray(a)
    if arr.size and not np.all((arr == 1) | (arr == -1)):
        raise CrossbarError(f"{what} must contain only +1/-1")
    return arr.astype(np.int8)


@dataclass(frozen=True, eq=False)
class Crossbar:
    """A ``size x columns`` array of pre-stored +/-1 weights.

    Rows at index >= ``active_rows`` are padding: they hold +1 but are
    excluded from every column sum.
    """

    weights: np.ndarray
    active_rows: int = field(default=-1)

    def __post_init__(self):
        w = _as_pm1(self.weights, "crossbar weights")
        if w.ndim != 2:
            raise CrossbarError("crossbar weights must be a 2-D matrix")
        w.setflags(write=False)
        object.__setattr__(self, "weights", w)
        rows = w.shape[0] if self.active_rows < 0 else self.active_rows
        if not 0 < rows <= w.shape[0]:
            raise CrossbarError(f"active_rows={rows} outside 1..{w.shape[0]}")
        object.__setattr__(self, "active_rows", rows)

    @property
    def size(self) -> int:
        return self.weights.shape[0]

    @property
    def columns(self) -> int:
        return self.weights.shape[1]

    @property
    def padding_rows(self) -> int:
        return self.size - self.active_rows


@dataclass(frozen=True)
class PartitionPlan:
    num_crossbars: int
    crossbar_size: int
    row_ranges: tuple
    padding_rows: int


def column_sums(xb: Crossbar, activations) -> np.ndarray:
    """XNOR-and-sum of every column: ``sum_i a_i * w_ij`` over the active rows.

    ``activations`` has trailing dimension ``xb.size``; leading dimensions are
    treated as a batch. Padding-row activations are ignored.
    """
    a = np.asarray(activations)
    if a.shape[-1] != xb.size:
        raise CrossbarError(f"expected {xb.size} activations, got {a.shape[-1]}")
    n = xb.active_rows
    _as_pm1(a[..., :n], "activations")
    return a[..., :n].astype(np.int32) @ xb.weights[:n].astype(np.int32)


def column_currents(sums, c_s: int, att: AttenuationModel) -> np.ndarray:
    """Merged column current (uA): each unit of column sum carries ``I_1(c_s)``."""
    s = np.asarray(sums)
    if np.any(np.abs(s) > c_s):
        raise CrossbarError(f"column sum exceeds crossbar size {c_s}")
    return s * unit_current(c_s, att)


def neuron_readout(currents, thresholds, m: BufferModel, rng, flip=None) -> np.ndarray:
    """Sample one AQFP buffer per column.

    ``thresholds`` gives the per-column threshold current. Where ``flip`` is
    set the +1/-1 branches are exchanged (folded BN with negative scale).
    """
    cur = np.asarray(currents, dtype=float)
    th = np.asarray(thresholds, dtype=float)
    if th.shape[-1:] != cur.shape[-1:]:
        raise CrossbarError(f"{th.shape[-1]} thresholds for {cur.shape[-1]} columns")
    p = np.asarray(buffer_prob(cur - th, m.with_threshold(0.0)))
    if flip is not None:
        p = np.where(np.asarray(flip, dtype=bool), 1.0 - p, p)
    gen = as_generator(rng)
    return np.where(gen.random(p.shape) < p, 1, -1).astype(np.int8)


def partition_layer(weight_matrix, c_s: int) -> tuple[PartitionPlan, list[Crossbar]]:
    """Split a ``K x F`` weight matrix row-wise over ``ceil(K / c_s)`` crossbars."""
    w = _as_pm1(weight_matrix, "layer weights")
    if w.ndim != 2 or w.size == 0:
        raise CrossbarError("weight matrix must be a non-empty K x F matrix")
    if c_s < 1:
        raise CrossbarError("crossbar size must be >= 1")
    k, f = w.shape
    m = math.ceil(k / c_s)
    ranges, bars = [], []
    for j in range(m):
        lo, hi = j * c_s, min((j + 1) * c_s, k)
        block = np.ones((c_s, f), dtype=np.int8)
        block[: hi - lo] = w[lo:hi]
        ranges.append((lo, hi))
        bars.append(Crossbar(block, active_rows=hi - lo))
    plan = PartitionPlan(m, c_s, tuple(ranges), m * c_s - k)
    return plan, bars


def split_activations(activations, plan: PartitionPlan) -> list[np.ndarray]:
    """Slice a length-K activation batch into per-crossbar, zero-padded inputs."""
    a = np.asarray(activations)
    out = []
    for lo, hi in plan.row_ranges:
        block = np.zeros(a.shape[:-1] + (plan.crossbar_size,), dtype=np.int8)
        block[..., : hi - lo] = a[..., lo:hi]
        out.append(block)
    return out


def partitioned_sums(weights, activations, c_s: int) -> np.ndarray:
    """Vectorised per-crossbar column sums, shape ``(..., M, F)``.

    Equivalent to calling :func:`column_sums` on every crossbar of
    :func:`partition_layer`; padding rows contribute zero.
    """
    w = np.asarray(weights)
    a = np.asarray(activations)
    k, f = w.shape
    m = math.ceil(k / c_s)
    pad = m * c_s - k
    if pad:
        w = np.concatenate([w, np.zeros((pad, f), w.dtype)])
        a = np.concatenate([a, np.zeros(a.shape[:-1] + (pad,), a.dtype)], axis=-1)
    a = a.reshape(a.shape[:-1] + (m, c_s)).astype(np.float32)
    # float32 matmul is exact for |sums| < 2**24
    return np.einsum("...mc,mcf->...mf", a, w.reshape(m, c_s, f).astype(np.float32)).astype(np.int32)

"""Stochastic numbers and the APC + comparator accumulation module."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .rng import as_generator

UNIPOLAR = "unipolar"
BIPOLAR = "bipolar"


class SCError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class StochasticNumber:
    bits: np.ndarray
    encoding: str = BIPOLAR

    def __post_init__(self):
        b = np.asarray(self.bits)
        if b.ndim != 1 or b.size < 1:
            raise SCError("a stochastic number needs a 1-D bitstream of length >= 1")
        if not np.all((b == 0) | (b == 1)):
            raise SCError("bitstream entries must be 0 or 1")
        if self.encoding not in (UNIPOLAR, BIPOLAR):
            raise SCError(f"unknown encoding {self.encoding!r}")
        b = b.astype(np.uint8)
        b.setflags(write=False)
        object.__setattr__(self, "bits", b)

    @property
    def length(self) -> int:
        return self.bits.size

    @property
    def ones(self) -> int:
        return int(self.bits.sum())

    @classmethod
    def from_string(cls, s: str, encoding: str = BIPOLAR) -> "StochasticNumber":
        return cls(np.array([int(c) for c in s], dtype=np.uint8), encoding)

    def __str__(self):
        return "".join(map(str, self.bits))

    @property
    def value(self) -> float:
        return decode(self)


@dataclass(frozen=True)
class AccumulationUnit:
    """APC over ``num_streams`` inputs followed by a comparator.

    The comparator fires (+1) when the total count of ones over the window is
    at least ``threshold = ceil(M * L / 2) + bn_offset``.
    """

    num_streams: int
    window: int
    bn_offset: int = 0

    def __post_init__(self):
        if self.num_streams < 1 or self.window < 1:
            raise SCError("need at least one stream and a window of at least one tick")
        if not 0 <= self.threshold <= self.num_streams * self.window:
            raise SCError(f"threshold {self.threshold} outside [0, {self.num_streams * self.window}]")

    @property
    def neutral_threshold(self) -> int:
        return math.ceil(self.num_streams * self.window / 2)

    @property
    def threshold(self) -> int:
        return self.neutral_threshold + int(self.bn_offset)


def _bernoulli(p, n, rng):
    gen = as_generator(rng)
    return (gen.random(n) < p).astype(np.uint8)


def encode_unipolar(x: float, length: int, rng) -> StochasticNumber:
    if not 0.0 <= x <= 1.0:
        raise SCError(f"unipolar value must lie in [0, 1], got {x}")
    if length < 1:
        raise SCError("bitstream length must be >= 1")
    return StochasticNumber(_bernoulli(x, length, rng), UNIPOLAR)


def encode_bipolar(x: float, length: int, rng) -> StochasticNumber:
    if not -1.0 <= x <= 1.0:
        raise SCError(f"bipolar value must lie in [-1, 1], got {x}")
    if length < 1:
        raise SCError("bitstream length must be >= 1")
    return StochasticNumber(_bernoulli((x + 1.0) / 2.0, length, rng), BIPOLAR)


def decode(sn: StochasticNumber) -> float:
    # integer numerators keep decimal examples exact (e.g. 4/10 rather than 2*0.7 - 1)
    if sn.encoding == UNIPOLAR:
        return sn.ones / sn.length
    return (2 * sn.ones - sn.length) / sn.length


def observe_window(column_sampler, length: int, rng) -> StochasticNumber:
    """Collect ``length`` ticks of a neuron whose crossbar input is held fixed.

    ``column_sampler`` is either a fixed probability of +1 or a callable
    ``sampler(rng) -> +1/-1`` drawing one buffer output from ``rng``.
    """
    if length < 1:
        raise SCError("observation window must be >= 1 tick")
    gen = as_generator(rng)
    if callable(column_sampler):
        bits = np.array([column_sampler(gen) for _ in range(length)])
        bits = (bits > 0).astype(np.uint8)
    else:
        p = float(column_sampler)
        if not 0.0 <= p <= 1.0:
            raise SCError(f"probability must lie in [0, 1], got {p}")
        bits = _bernoulli(p, length, gen)
    return StochasticNumber(bits, BIPOLAR)


def apc_count(bits_at_tick) -> int:
    """Number of ones among the M parallel inputs of one tick (exact popcount)."""
    b = np.asarray(bits_at_tick)
    if b.ndim != 1 or b.size < 1:
        raise SCError("APC needs at least one input bit")
    return int(np.count_nonzero(b > 0))


def accumulate_threshold(streams, unit: AccumulationUnit) -> int:
    """Sum APC counts over every tick of the window and compare with the threshold."""
    streams = list(streams)
    if len(streams) != unit.num_streams:
        raise SCError(f"expected {unit.num_streams} streams, got {len(streams)}")
    lengths = {s.length for s in streams}
    if lengths != {unit.window}:
        raise SCError(f"all streams must have length {unit.window}, got {sorted(lengths)}")
    ticks = np.stack([s.bits for s in streams])  # (M, L)
    total = sum(apc_count(ticks[:, t]) for t in range(unit.window))
    return 1 if total >= unit.threshold else -1


def compare_counts(total_ones, unit: AccumulationUnit) -> np.ndarray:
    """Vectorised comparator for precomputed window totals."""
    return np.where(np.asarray(total_ones) >= unit.threshold, 1, -1).astype(np.int8)

"""AQFP buffer and crossbar current-attenuation models.

Currents are in microamperes throughout. The buffer turns an input current
into a random bit: it outputs +1 with probability

    P(I_in) = 0.5 + 0.5 * erf(sqrt(pi) * (I_in - I_th) / dI_in)

where ``dI_in`` is the gray-zone width. A column of a C_s-row crossbar carries
``I_1(C_s) = A * C_s**-B`` per unit of (integer) column sum, so the same law
written in column-sum units has gray-zone ``dI_in / I_1(C_s)``.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.special import erf

from .rng import as_generator

SQRT_PI = math.sqrt(math.pi)

#: Placeholder calibration; the measured attenuation curve is not published.
DEFAULT_A = 70.0
DEFAULT_B = 0.5
#: Gray-zone width used for the bitstream-length experiments (uA).
DEFAULT_DELTA_I_IN = 2.4
#: Crossbar input amplitude representing logical +/-1 (uA).
DEFAULT_UNIT_CURRENT = 70.0


class DeviceError(ValueError):
    """Invalid device parameter or input."""


def _check_finite(x, what="input current"):
    arr = np.asarray(x, dtype=float)
    if not np.all(np.isfinite(arr)):
        raise DeviceError(f"non-finite {what}")
    return arr


@dataclass(frozen=True)
class BufferModel:
    delta_i_in: float = DEFAULT_DELTA_I_IN
    i_th: float = 0.0
    unit_current: float = DEFAULT_UNIT_CURRENT

    def __post_init__(self):
        if not (self.delta_i_in > 0 and math.isfinite(self.delta_i_in)):
            raise DeviceError(f"gray-zone width must be positive, got {self.delta_i_in}")
        if not (self.unit_current > 0):
            raise DeviceError(f"unit current must be positive, got {self.unit_current}")
        if not math.isfinite(self.i_th):
            raise DeviceError("threshold current must be finite")

    def with_threshold(self, i_th: float) -> "BufferModel":
        return BufferModel(self.delta_i_in, float(i_th), self.unit_current)


@dataclass(frozen=True)
class AttenuationModel:
    """Power-law fit ``I_1(C_s) = a * C_s**-b``."""

    a: float = DEFAULT_A
    b: float = DEFAULT_B

    def __post_init__(self):
        if not (self.a > 0 and self.b > 0):
            raise DeviceError(f"attenuation constants must be positive, got a={self.a}, b={self.b}")

    def __call__(self, c_s: int) -> float:
        return unit_current(c_s, self)


@dataclass(frozen=True)
class ValueDomainParams:
    """Buffer law expressed in column-sum units for a crossbar of ``crossbar_size`` rows."""

    v_th: float
    delta_v_in: float
    crossbar_size: int

    def __post_init__(self):
        if not self.delta_v_in > 0:
            raise DeviceError(f"value-domain gray-zone must be positive, got {self.delta_v_in}")
        if self.crossbar_size < 1:
            raise DeviceError("crossbar size must be >= 1")

    @classmethod
    def from_device(cls, buffer: BufferModel, att: AttenuationModel, c_s: int,
                    v_th: float = 0.0) -> "ValueDomainParams":
        i1 = unit_current(c_s, att)
        return cls(v_th=float(v_th), delta_v_in=buffer.delta_i_in / i1, crossbar_size=int(c_s))


def buffer_prob(i_in, m: BufferModel):
    """Probability that the buffer outputs +1 for input current ``i_in`` (uA)."""
    i_in = _check_finite(i_in)
    p = 0.5 + 0.5 * erf(SQRT_PI * (i_in - m.i_th) / m.delta_i_in)
    return float(p) if p.ndim == 0 else p


def sample_buffer(i_in, m: BufferModel, rng):
    """Draw +1/-1 buffer outputs; ``i_in`` may be scalar or an array."""
    p = np.asarray(buffer_prob(i_in, m))
    gen = as_generator(rng)
    bits = np.where(gen.random(p.shape) < p, 1, -1).astype(np.int8)
    return int(bits) if bits.ndim == 0 else bits


def unit_current(c_s: int, att: AttenuationModel) -> float:
    if int(c_s) != c_s or c_s < 1:
        raise DeviceError(f"crossbar size must be a positive integer, got {c_s}")
    return att.a * float(c_s) ** (-att.b)


def fit_attenuation(points) -> AttenuationModel:
    """Least-squares power-law fit of ``(size, current_uA)`` pairs in log-log space."""
    pts = [(float(s), float(c)) for s, c in points]
    if len(pts) < 2:
        raise DeviceError("need at least two (size, current) points to fit attenuation")
    sizes = np.array([p[0] for p in pts])
    currents = np.array([p[1] for p in pts])
    if np.any(sizes < 1) or np.any(sizes != np.round(sizes)):
        raise DeviceError("crossbar sizes must be positive integers")
    if len(np.unique(sizes)) != len(sizes):
        raise DeviceError("duplicate crossbar sizes in fit points")
    if np.any(currents <= 0):
        raise DeviceError("currents must be strictly positive")
    design = np.column_stack([np.ones_like(sizes), -np.log(sizes)])
    (log_a, b), *_ = np.linalg.lstsq(design, np.log(currents), rcond=None)
    return AttenuationModel(a=float(np.exp(log_a)), b=float(b))


def read_fit_points(path) -> list[tuple[int, float]]:
    """Read a two-column CSV ``size,current_uA``; a non-numeric header row is skipped."""
    rows = []
    with open(Path(path), newline="") as fh:
        for i, row in enumerate(csv.reader(fh)):
            if not row or row[0].strip().startswith("#"):
                continue
            try:
                size, cur = int(row[0]), float(row[1])
            except (ValueError, IndexError):
                if i == 0:
                    continue
                raise DeviceError(f"{path}: malformed row {i + 1}: {row!r}") from None
            rows.append((size, cur))
    return rows


def value_prob(v_in, p: ValueDomainParams):
    """Buffer law in the value (column-sum) domain."""
    v_in = _check_finite(v_in, "input value")
    out = 0.5 + 0.5 * erf(SQRT_PI * (v_in - p.v_th) / p.delta_v_in)
    return float(out) if out.ndim == 0 else out


def expected_bipolar(v_in, p: ValueDomainParams):
    """E[a_b] = 2 P_v - 1 = erf(sqrt(pi) (v - v_th) / dV)."""
    v_in = _check_finite(v_in, "input value")
    out = erf(SQRT_PI * (v_in - p.v_th) / p.delta_v_in)
    return float(out) if out.ndim == 0 else out

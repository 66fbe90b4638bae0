"""Hardware cost model, average mismatch error (AME), sweeps and efficiency.

The closed-form cost model interpolates the reference crossbar table exactly:

    latency  = 15 ps * C_s
    JJ count = 12 C_s^2 + 48 C_s      (memory cells + column computing)
    energy   = 0.005 aJ per JJ per cycle
"""
from __future__ import annotations

import csv
import io
import itertools
import math
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.special import erf

from .device import SQRT_PI, AttenuationModel, DeviceError
from .rng import as_generator

CLOCK_RATE_HZ = 5e9
STAGE_DELAY_PS = 50.0
LATENCY_PER_ROW_PS = 15
JJ_MEMORY_PER_CELL = 12
JJ_COMPUTE_PER_COLUMN = 48
#: energy per JJ per cycle, expressed as a ratio so table values stay exact
ENERGY_AJ_PER_JJ = (5, 1000)

#: computing-part JJ factors for the multi-phase clocking schemes
CLOCKING_FACTORS = {"4-phase": 1.0, "8-phase": 0.792, "16-phase": 0.727}
#: memory-part JJ factor with three-phase memory clocking
MEMORY_3PHASE_FACTOR = 0.80

COOLING_FACTORS = {"4.2K": 400.0, "77K": 9.65, "none": 1.0}


class HardwareError(ValueError):
    pass


class QuadratureError(ArithmeticError):
    pass


@dataclass(frozen=True)
class HardwareCost:
    latency_ps: float
    jj_count: int
    energy_aj: float
    clock_rate_hz: float = CLOCK_RATE_HZ
    stage_delay_ps: float = STAGE_DELAY_PS

    def __post_init__(self):
        for name in ("latency_ps", "jj_count", "energy_aj", "clock_rate_hz", "stage_delay_ps"):
            if getattr(self, name) < 0:
                raise HardwareError(f"{name} must be nonnegative")


def _energy(jj) -> float:
    num, den = ENERGY_AJ_PER_JJ
    return jj * num / den


def crossbar_cost(c_s: int, clocking: str = "4-phase", memory_3phase: bool = False) -> HardwareCost:
    """Latency, JJ count and per-cycle energy of one ``c_s x c_s`` crossbar."""
    if isinstance(c_s, bool) or int(c_s) != c_s or c_s < 1:
        raise HardwareError(f"crossbar size must be a positive integer, got {c_s}")
    if clocking not in CLOCKING_FACTORS:
        raise HardwareError(f"unknown clocking scheme {clocking!r}; use one of {sorted(CLOCKING_FACTORS)}")
    c = int(c_s)
    memory = JJ_MEMORY_PER_CELL * c * c
    compute = JJ_COMPUTE_PER_COLUMN * c
    if clocking == "4-phase" and not memory_3phase:
        jj = memory + compute
    else:
        mf = MEMORY_3PHASE_FACTOR if memory_3phase else 1.0
        jj = int(round(memory * mf + compute * CLOCKING_FACTORS[clocking]))
    return HardwareCost(LATENCY_PER_ROW_PS * c, jj, _energy(jj))


# ---------------------------------------------------------------------------
# average mismatch error

@dataclass(frozen=True)
class AmeReport:
    ame: float
    c_s: int
    delta_i_in: float
    v_th: float
    dist_mu: float
    dist_sigma: float
    quadrature_error_estimate: float
    panels: int = 0
    renormalized: bool = False


def _odd_erf(z):
    # explicitly odd so that mirrored nodes give mirrored values bit for bit
    return np.sign(z) * erf(np.abs(z))


def _ame_integrand(c_s, delta_v, v_th, mu, sigma):
    mean = c_s * mu
    sd = math.sqrt(c_s) * sigma
    norm = 1.0 / (sd * math.sqrt(2 * math.pi))

    def density(x):
        u = (x - mean) / sd
        return norm * np.exp(-0.5 * u * u)

    def g(x):
        y = c_s * _odd_erf(SQRT_PI * (x - v_th) / delta_v)
        d = x - y
        return density(x) * d * d

    return g, density


def _symmetric_gl(fn, half_width, panels, order):
    """Composite Gauss-Legendre on [-h, h] with nodes mirrored about zero.

    ``panels`` is even; the nodes on the negative half are exact negations
    of the positive ones and each mirrored pair is summed first.
    """
    t, w = np.polynomial.legendre.leggauss(order)
    edges = np.linspace(0.0, half_width, panels // 2 + 1)
    a, b = edges[:-1, None], edges[1:, None]
    half = (b - a) / 2
    x = a + half * (t[None, :] + 1)
    wts = half * w[None, :]
    return float(np.sum(wts * (fn(x) + fn(-x))))


def integrate_symmetric(fn, half_width, rtol=1e-6, atol=1e-300, order=16, max_panels=1 << 16):
    """Integrate ``fn`` over [-h, h], doubling panels until two estimates agree.

    Returns ``(value, error_estimate, panels)``.
    """
    panels = 2
    prev = _symmetric_gl(fn, half_width, panels, order)
    while panels < max_panels:
        panels *= 2
        cur = _symmetric_gl(fn, half_width, panels, order)
        err = abs(cur - prev)
        if err <= max(rtol * abs(cur), atol):
            return cur, err, panels
        prev = cur
    raise QuadratureError(
        f"quadrature did not converge: {panels} panels, last estimates {prev!r}, "
        f"difference {err!r} > rtol {rtol}")


def ame(c_s: int, delta_i_in: float, v_th: float, mu: float, sigma: float,
        att: AttenuationModel, renormalize: bool = False, rtol: float = 1e-6) -> AmeReport:
    """Gaussian-weighted squared gap between a column sum and its SC read-out.

    The column sum ``x`` is modelled as N(C_s mu, C_s sigma^2) and integrated
    over [-C_s, C_s]; the read-out is ``C_s * erf(sqrt(pi)(x - v_th)/dV)``
    with ``dV = delta_i_in / I1(C_s)``. ``renormalize`` divides by the
    Gaussian mass inside the interval (truncated density).
    """
    if not sigma > 0:
        raise HardwareError("sigma must be > 0")
    if not delta_i_in > 0:
        raise HardwareError("delta_i_in must be > 0")
    try:
        i1 = att(c_s)
    except DeviceError as exc:
        raise HardwareError(str(exc)) from None
    delta_v = delta_i_in / i1
    g, density = _ame_integrand(c_s, delta_v, v_th, mu, sigma)
    val, err, panels = integrate_symmetric(g, float(c_s), rtol)
    if renormalize:
        mass, merr, _ = integrate_symmetric(density, float(c_s), rtol)
        if mass <= 0:
            raise QuadratureError("no Gaussian mass inside the integration interval")
        err = err / mass + val * merr / mass ** 2
        val = val / mass
    return AmeReport(val / c_s, int(c_s), float(delta_i_in), float(v_th), float(mu), float(sigma),
                     err / c_s, panels, renormalize)


def ame_monte_carlo(c_s, delta_i_in, v_th, mu, sigma, att: AttenuationModel, samples=10**7,
                    rng=None, renormalize=False, chunk=10**6):
    """Independent sampling estimate of the same quantity as :func:`ame`."""
    gen = as_generator(rng if rng is not None else 0)
    delta_v = delta_i_in / att(c_s)
    total = 0.0
    inside = 0
    left = samples
    while left > 0:
        n = min(chunk, left)
        x = gen.normal(c_s * mu, math.sqrt(c_s) * sigma, n)
        keep = np.abs(x) <= c_s
        xs = x[keep]
        d = xs - c_s * erf(SQRT_PI * (xs - v_th) / delta_v)
        total += float(np.sum(d * d))
        inside += int(keep.sum())
        left -= n
    est = total / samples
    if renormalize:
        est = total / max(inside, 1)
    return est / c_s


def activation_stats(model, x, hw) -> tuple[float, float]:
    """Per-row mean and std of XNOR products implied by the measured crossbar sums.

    Partial sums of the first crossbar-mapped SC layer are collected and
    converted to per-row statistics: ``mu = mean(S)/C_s``, ``sigma^2 = var(S)/C_s``.
    """
    from . import crossbar as xbar
    from .bnn.model import ACT_RANDOMIZED, ACT_SC
    from .inference import _patches, _run, _sc_expectation, crossbar_probabilities

    found = {}

    def hidden(li, layer, a, start):
        if not found:
            s = xbar.partitioned_sums(layer.matrix(True), _patches(layer, a), hw.crossbar_size)
            found["s"] = s.astype(np.float64).ravel()
        return _sc_expectation(crossbar_probabilities(layer, a, hw), hw)

    if not any(l.binary and l.activation in (ACT_SC, ACT_RANDOMIZED) for l in model.layers):
        raise HardwareError("model has no crossbar-mapped stochastic layer")
    _run(model, x, hidden)
    s = found["s"]
    c = hw.crossbar_size
    return float(s.mean() / c), float(max(s.std(), 1e-12) / math.sqrt(c))


# ---------------------------------------------------------------------------
# sweeps

OBJECTIVE_KEYS = ("ame", "energy_aj", "latency_ps", "jj_count")


@dataclass
class SweepEntry:
    c_s: int
    delta_i_in: float
    bitstream_length: int
    ame: float
    cost: HardwareCost
    tops_per_w: float
    feasible: bool
    energy_ok: bool
    jj_ok: bool
    objective: float

    def row(self):
        return {"c_s": self.c_s, "delta_i_in": self.delta_i_in,
                "bitstream_length": self.bitstream_length, "ame": self.ame,
                "latency_ps": self.cost.latency_ps, "jj_count": self.cost.jj_count,
                "energy_aj": self.cost.energy_aj, "tops_per_w": self.tops_per_w,
                "feasible": self.feasible, "objective": self.objective}


@dataclass
class SweepResult:
    entries: list = field(default_factory=list)  # feasible, ranked best first
    rejected: list = field(default_factory=list)

    def __len__(self):
        return len(self.entries)

    def to_csv(self) -> str:
        buf = io.StringIO()
        rows = [e.row() for e in self.entries + self.rejected]
        names = ["c_s", "delta_i_in", "bitstream_length", "ame", "latency_ps", "jj_count",
                 "energy_aj", "tops_per_w", "feasible", "objective"]
        w = csv.DictWriter(buf, fieldnames=names, lineterminator="\n")
        w.writeheader()
        for r in rows:
            w.writerow({k: repr(v) if isinstance(v, float) else v for k, v in r.items()})
        return buf.getvalue()


def crossbar_tops_per_w(c_s, cost: HardwareCost, window: int) -> float:
    """2 C_s^2 ops per crossbar evaluation over a window of ``window`` cycles."""
    ops = 2 * c_s * c_s
    return ops / (cost.energy_aj * 1e-18 * window) / 1e12


def sweep(sizes, delta_i_ins, lengths, mu=0.0, sigma=1.0, v_th=0.0, att=None,
          max_energy_aj=None, max_jj=None, objective=None, clocking="4-phase") -> SweepResult:
    """Evaluate AME and cost on the cross product of the ranges and rank feasible points.

    ``objective`` maps any of ``ame``, ``energy_aj``, ``latency_ps``,
    ``jj_count`` to a weight; the score is the weighted sum (lower is better).
    Ties are broken by ``(c_s, delta_i_in, L)``.
    """
    sizes, delta_i_ins, lengths = list(sizes), list(delta_i_ins), list(lengths)
    if not sizes or not delta_i_ins or not lengths:
        raise HardwareError("sweep ranges must be nonempty")
    att = att or AttenuationModel()
    objective = {"ame": 1.0} if objective is None else dict(objective)
    bad = set(objective) - set(OBJECTIVE_KEYS)
    if bad:
        raise HardwareError(f"unknown objective terms {sorted(bad)}")
    result = SweepResult()
    ame_cache = {}
    for c, di, L in itertools.product(sorted(set(sizes)), sorted(set(delta_i_ins)), sorted(set(lengths))):
        if (c, di) not in ame_cache:
            ame_cache[c, di] = ame(c, di, v_th, mu, sigma, att).ame
        a = ame_cache[c, di]
        cost = crossbar_cost(c, clocking)
        energy_ok = max_energy_aj is None or cost.energy_aj <= max_energy_aj
        jj_ok = max_jj is None or cost.jj_count <= max_jj
        metrics = {"ame": a, "energy_aj": cost.energy_aj * L, "latency_ps": cost.latency_ps * L,
                   "jj_count": cost.jj_count}
        score = sum(wt * metrics[k] for k, wt in objective.items())
        e = SweepEntry(c, float(di), int(L), a, cost, crossbar_tops_per_w(c, cost, L),
                       energy_ok and jj_ok, energy_ok, jj_ok, score)
        (result.entries if e.feasible else result.rejected).append(e)
    result.entries.sort(key=lambda e: (e.objective, e.c_s, e.delta_i_in, e.bitstream_length))
    return result


# ---------------------------------------------------------------------------
# system efficiency

@dataclass
class EfficiencyReport:
    ops_per_image: int
    crossbars: int
    energy_per_image_aj: float
    power_w: float
    latency_ps: float
    throughput_images_per_ms: float
    tops_per_w: float
    tops_per_w_cooled: float
    cooling: str
    empty: bool = False

    def as_dict(self):
        return asdict(self)


def efficiency_report(model, config, cost: HardwareCost | None = None,
                      cooling: str = "4.2K") -> EfficiencyReport:
    """System estimate for ``model`` mapped on ``config.crossbar_size`` crossbars.

    Every weight layer is tiled onto ``ceil(K/C_s) * ceil(F/C_s)`` crossbars,
    reused over output positions for convolutions. One image costs the tile
    energy for ``L`` cycles at every position; ops count 2 per MAC.
    Latency sums, per layer and position, the crossbar latency plus ``L``
    stage delays; throughput is its inverse.
    """
    if cooling not in COOLING_FACTORS:
        raise HardwareError(f"unknown cooling mode {cooling!r}")
    c = config.crossbar_size
    L = config.bitstream_length
    cost = cost or crossbar_cost(c)
    ops = tiles = 0
    energy = latency = 0.0
    for layer, in_hw, out_hw in model.layer_geometry():
        positions = 1 if out_hw is None else out_hw[0] * out_hw[1]
        t = math.ceil(layer.fan_in / c) * math.ceil(layer.out_channels / c)
        tiles += t
        ops += 2 * layer.fan_in * layer.out_channels * positions
        energy += t * positions * cost.energy_aj * L
        latency += positions * (cost.latency_ps + L * cost.stage_delay_ps)
    if ops == 0:
        return EfficiencyReport(0, 0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, cooling, True)
    tops_w = ops / (energy * 1e-18) / 1e12
    power = tiles * cost.energy_aj * 1e-18 * cost.clock_rate_hz
    return EfficiencyReport(ops, tiles, energy, power, latency, 1e9 / latency, tops_w,
                            tops_w / COOLING_FACTORS[cooling], cooling)

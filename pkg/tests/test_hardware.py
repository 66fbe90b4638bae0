import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import integrate, special, stats

from aqfpbnn.bnn.model import BnnModel
from aqfpbnn.bnn.train import build_mlp
from aqfpbnn.device import AttenuationModel
from aqfpbnn.hardware import (COOLING_FACTORS, HardwareCost, HardwareError, QuadratureError, ame,
                              ame_monte_carlo, crossbar_cost, efficiency_report, integrate_symmetric,
                              sweep)
from aqfpbnn.inference import HardwareConfig

# reference rows: (size, latency ps, JJ count, energy aJ)
TABLE = [(4, 60, 384, 1.92), (8, 120, 1152, 5.76), (16, 240, 3840, 19.20), (18, 270, 4752, 23.76),
         (36, 540, 17280, 86.4), (72, 1080, 65664, 328.32), (144, 2160, 255744, 1278.72)]


@pytest.mark.parametrize("c,lat,jj,e", TABLE)
def test_cost_table_rows_exact(c, lat, jj, e):
    cost = crossbar_cost(c)
    assert cost.latency_ps == lat and cost.jj_count == jj and cost.energy_aj == e


def test_cost_errors_and_defaults():
    for bad in (0, -3, 2.5, True):
        with pytest.raises(HardwareError):
            crossbar_cost(bad)
    with pytest.raises(HardwareError):
        crossbar_cost(8, "5-phase")
    c = crossbar_cost(8)
    assert c.clock_rate_hz == 5e9 and c.stage_delay_ps == 50
    with pytest.raises(HardwareError):
        HardwareCost(-1, 1, 1)


def test_clocking_reductions():
    base = crossbar_cost(16)
    compute, memory = 48 * 16, 12 * 256
    assert crossbar_cost(16, "8-phase").jj_count == round(memory + 0.792 * compute)
    assert crossbar_cost(16, "16-phase").jj_count == round(memory + 0.727 * compute)
    assert crossbar_cost(16, memory_3phase=True).jj_count == round(0.8 * memory + compute)
    for mode in ("8-phase", "16-phase"):
        r = crossbar_cost(16, mode)
        assert r.jj_count < base.jj_count
        assert r.energy_aj == pytest.approx(r.jj_count * 0.005)


def ame_scipy(c, di, v_th, mu, sigma, att):
    """Second route: scipy's adaptive QUADPACK on the same integrand."""
    dv = di / att(c)
    f = lambda x: (stats.norm.pdf(x, c * mu, math.sqrt(c) * sigma)
                   * (x - c * special.erf(math.sqrt(math.pi) * (x - v_th) / dv)) ** 2)
    val, _ = integrate.quad(f, -c, c, limit=500, points=[v_th], epsabs=0, epsrel=1e-10)
    return val / c


def random_configs(n, seed):
    gen = np.random.default_rng(seed)
    for _ in range(n):
        yield (int(gen.choice([4, 8, 16, 18, 36, 72, 144])), gen.uniform(0.5, 5), gen.uniform(-1, 1),
               gen.uniform(-0.3, 0.3), gen.uniform(0.5, 1.5))


def test_ame_matches_independent_quadrature():
    att = AttenuationModel(70, 1.75)
    for c, di, v_th, mu, sigma in random_configs(20, 0):
        r = ame(c, di, v_th, mu, sigma, att)
        assert r.ame == pytest.approx(ame_scipy(c, di, v_th, mu, sigma, att), rel=1e-5)
        assert r.quadrature_error_estimate <= 1e-6 * r.ame + 1e-300


def test_ame_matches_monte_carlo_quick():
    att = AttenuationModel(70, 1.75)
    for k, (c, di, v_th, mu, sigma) in enumerate(random_configs(3, 1)):
        mc = ame_monte_carlo(c, di, v_th, mu, sigma, att, samples=2 * 10**6, rng=k)
        assert ame(c, di, v_th, mu, sigma, att).ame == pytest.approx(mc, rel=0.01)


@settings(max_examples=40, deadline=None)
@given(st.sampled_from([4, 8, 16, 36]), st.floats(0.3, 5), st.floats(-2, 2), st.floats(-0.5, 0.5),
       st.floats(0.3, 2))
def test_ame_sign_flip_exact_and_nonnegative(c, di, v_th, mu, sigma):
    att = AttenuationModel(70, 0.5)
    a = ame(c, di, v_th, mu, sigma, att)
    b = ame(c, di, -v_th, -mu, sigma, att)
    assert a.ame == b.ame
    assert a.ame >= 0


def test_ame_renormalize_divides_by_mass():
    att = AttenuationModel(70, 0.5)
    plain = ame(4, 2.4, 0.0, 0.0, 3.0, att)
    norm = ame(4, 2.4, 0.0, 0.0, 3.0, att, renormalize=True)
    mass = stats.norm.cdf(4, 0, 6) - stats.norm.cdf(-4, 0, 6)
    assert norm.ame == pytest.approx(plain.ame / mass, rel=1e-6)
    assert norm.renormalized


def test_ame_errors():
    att = AttenuationModel()
    with pytest.raises(HardwareError):
        ame(8, 2.4, 0, 0, 0.0, att)
    with pytest.raises(HardwareError):
        ame(8, 0.0, 0, 0, 1.0, att)
    with pytest.raises(HardwareError):
        ame(0, 2.4, 0, 0, 1.0, att)


def test_quadrature_non_convergence_reports_diagnostics():
    with pytest.raises(QuadratureError, match="did not converge"):
        integrate_symmetric(lambda x: np.sin(1e6 * x) ** 2 + np.sign(x), 1.0, rtol=1e-14, max_panels=8)


def test_sweep_jj_constraint():
    res = sweep([4, 8, 16, 18, 36], [2.4], [16], max_jj=4000)
    assert sorted(e.c_s for e in res.entries) == [4, 8, 16]
    assert sorted(e.c_s for e in res.rejected) == [18, 36]


def test_sweep_single_point_and_empty():
    assert len(sweep([8], [2.4], [16])) == 1
    res = sweep([8, 16], [2.4], [16], max_energy_aj=1.0)
    assert len(res) == 0 and len(res.rejected) == 2
    with pytest.raises(HardwareError):
        sweep([], [2.4], [16])
    with pytest.raises(HardwareError):
        sweep([8], [2.4], [16], objective={"speed": 1})


def test_sweep_pure_ame_ranking_is_sorted_ame():
    att = AttenuationModel(70, 1.75)
    sizes, dis = [4, 8, 16, 36], [0.8, 2.4, 4.0]
    res = sweep(sizes, dis, [16], att=att, mu=0.1, sigma=0.8, v_th=0.2)
    direct = sorted((ame(c, d, 0.2, 0.1, 0.8, att).ame, c, d) for c in sizes for d in dis)
    assert [(e.ame, e.c_s, e.delta_i_in) for e in res.entries] == direct


def test_sweep_deterministic_and_csv():
    a = sweep([4, 8], [1.0, 2.4], [8, 16], objective={"ame": 1, "energy_aj": 0.01})
    b = sweep([4, 8], [1.0, 2.4], [8, 16], objective={"ame": 1, "energy_aj": 0.01})
    assert a.to_csv() == b.to_csv()
    lines = a.to_csv().splitlines()
    assert lines[0].startswith("c_s,delta_i_in,bitstream_length,ame")
    assert len(lines) == 1 + 8
    scores = [e.objective for e in a.entries]
    assert scores == sorted(scores)


def test_efficiency_mlp_and_cooling():
    model = build_mlp()
    hw = HardwareConfig()
    rep = efficiency_report(model, hw)
    assert 1e5 <= rep.tops_per_w <= 1e7
    assert rep.tops_per_w_cooled == rep.tops_per_w / 400
    assert efficiency_report(model, hw, cooling="77K").tops_per_w_cooled == rep.tops_per_w / 9.65
    assert rep.ops_per_image == 2 * (784 * 512 + 512 * 512 + 512 * 10)
    assert rep.crossbars == 49 * 32 + 32 * 32 + 32 * 1
    assert COOLING_FACTORS["4.2K"] == 400
    with pytest.raises(HardwareError):
        efficiency_report(model, hw, cooling="300K")


def test_efficiency_hand_computed_single_layer():
    model = build_mlp((16, 16, 16, 4))
    hw = HardwareConfig(crossbar_size=16, bitstream_length=16)
    rep = efficiency_report(model, hw)
    cost = crossbar_cost(16)
    # three layers, one tile each, one position each
    energy = 3 * cost.energy_aj * 16
    assert rep.energy_per_image_aj == pytest.approx(energy)
    assert rep.tops_per_w == pytest.approx(2 * (256 + 256 + 64) / (energy * 1e-18) / 1e12)
    assert rep.latency_ps == pytest.approx(3 * (240 + 16 * 50))
    assert rep.throughput_images_per_ms == pytest.approx(1e9 / rep.latency_ps)


def test_efficiency_empty_model():
    rep = efficiency_report(BnnModel([], (4,)), HardwareConfig())
    assert rep.empty and rep.ops_per_image == 0

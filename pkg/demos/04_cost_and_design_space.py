"""
Crossbar cost, mismatch error and the design space
==================================================

Latency, JJ count and energy grow with the crossbar size; the mismatch
between a column sum and its stochastic read-out depends on the size and on
the gray-zone width. A sweep puts both together under a JJ budget.
"""
from aqfpbnn.bnn.train import build_mlp
from aqfpbnn.device import AttenuationModel
from aqfpbnn.hardware import ame, crossbar_cost, efficiency_report, sweep
from aqfpbnn.inference import HardwareConfig

print(" size  latency(ps)    JJ   energy(aJ)   8-phase JJ  16-phase JJ")
for c in (4, 8, 16, 18, 36, 72, 144):
    k = crossbar_cost(c)
    print(f"{c:5d} {k.latency_ps:10.0f} {k.jj_count:7d} {k.energy_aj:10.2f} "
          f"{crossbar_cost(c, '8-phase').jj_count:11d} {crossbar_cost(c, '16-phase').jj_count:11d}")

att = AttenuationModel(70, 1.75)
print("\naverage mismatch error, mu = 0, sigma = 1:")
for c in (4, 16, 36):
    row = [ame(c, di, 0.0, 0.0, 1.0, att).ame for di in (0.5, 1.0, 2.4, 5.0)]
    print(f"  C_s = {c:3d}:", "  ".join(f"{v:8.4f}" for v in row))

res = sweep([4, 8, 16, 18, 36], [0.5, 1.0, 2.4], [16], att=att, max_jj=4000,
            objective={"ame": 1.0, "energy_aj": 0.001})
print(f"\nsweep: {len(res)} feasible, {len(res.rejected)} rejected by the JJ budget")
for e in res.entries[:5]:
    print(f"  C_s={e.c_s:3d} dI={e.delta_i_in:4.1f}  AME={e.ame:.4f}  E={e.cost.energy_aj:6.2f} aJ  "
          f"score={e.objective:.4f}")

rep = efficiency_report(build_mlp(), HardwareConfig())
print(f"\nMLP on 16x16 crossbars: {rep.crossbars} crossbars, {rep.tops_per_w:.3g} TOPS/W, "
      f"{rep.tops_per_w_cooled:.3g} TOPS/W with 4.2 K cooling, {rep.throughput_images_per_ms:.0f} images/ms")

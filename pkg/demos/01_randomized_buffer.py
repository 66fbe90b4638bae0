"""
Randomized buffer and crossbar attenuation
==========================================

A buffer fed by a crossbar column switches to +1 with a probability that
rises smoothly through a gray zone around its threshold. Bigger crossbars
attenuate the per-cell current, which widens that gray zone when measured
in column-sum units.
"""
import numpy as np

from aqfpbnn.device import (AttenuationModel, BufferModel, ValueDomainParams, buffer_prob,
                            fit_attenuation, sample_buffer, unit_current)
from aqfpbnn.rng import stream

buf = BufferModel(delta_i_in=2.4, i_th=0.0)

# probability of +1 across the gray zone
for i_in in (-4.8, -2.4, -1.2, 0.0, 1.2, 2.4, 4.8):
    print(f"I_in = {i_in:+5.1f} uA  ->  P(+1) = {float(buffer_prob(i_in, buf)):.6f}")

# the sampler follows the law; a fixed key replays the same bits
bits = sample_buffer(np.full(100_000, 1.2), buf, stream(0, 1))
print("\nempirical P(+1) at 1.2 uA:", np.mean(bits == 1), "exact:", float(buffer_prob(1.2, buf)))

# attenuation: fit A, B from (size, current) measurements
points = [(4, 70 * 4 ** -1.75), (16, 70 * 16 ** -1.75), (36, 70 * 36 ** -1.75)]
att = fit_attenuation(points)
print(f"\nfitted A = {att.a:.3f} uA, B = {att.b:.3f}")

# gray-zone width in column-sum units for a few sizes
for c in (4, 8, 16, 36, 72):
    p = ValueDomainParams.from_device(buf, att, c)
    print(f"C_s = {c:3d}: I1 = {unit_current(c, att):8.4f} uA, dV_in = {p.delta_v_in:8.3f}")

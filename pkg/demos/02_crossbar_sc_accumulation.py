"""
Partitioned crossbars and stochastic accumulation
=================================================

A layer with more inputs than rows is split over several crossbars. Each
column buffer is observed for L ticks, an approximate parallel counter
adds up the ones and a comparator makes the final decision.
"""
import numpy as np

from aqfpbnn.bnn.model import ACT_SC, DENSE, BinLayer, BnnModel, BnParams
from aqfpbnn.crossbar import partition_layer
from aqfpbnn.inference import HardwareConfig, crossbar_probabilities, evaluate_logits, simulate_logits
from aqfpbnn.sc import AccumulationUnit, StochasticNumber, decode

gen = np.random.default_rng(0)

# stochastic numbers
for text, enc in (("0100110100", "unipolar"), ("1011011101", "bipolar"), ("0100100000", "bipolar")):
    print(f"{text} ({enc}) -> {decode(StochasticNumber.from_string(text, enc))}")

# a 40-input layer on 16-row crossbars needs three of them, the last one padded
w = gen.normal(size=(40, 4))
plan, bars = partition_layer(np.where(w >= 0, 1, -1), 16)
print("\ncrossbars:", plan.num_crossbars, "row ranges:", plan.row_ranges, "padding rows:", plan.padding_rows)

layer = BinLayer(DENSE, w, np.ones(4), BnParams([1.0, -0.8, 1.2, 0.5], [0.1, 0.0, -0.2, 0.3],
                                                 [0.5, -1.0, 0.0, 2.0], [2.0, 3.0, 1.5, 2.5]),
                 True, ACT_SC)
model = BnnModel([layer], (40,))
x = np.where(gen.random((2000, 40)) < 0.5, -1.0, 1.0)

hw = HardwareConfig(crossbar_size=16, delta_i_in=2.4, bitstream_length=16, att_b=1.75)
p = crossbar_probabilities(layer, x[:1], hw)
print("per-crossbar P(+1) for the first sample:\n", np.round(p[0], 3))
print("comparator threshold:", AccumulationUnit(plan.num_crossbars, 16).threshold, "of", 3 * 16)

# longer windows bring the hardware closer to its expected decision
for L in (1, 4, 16, 64):
    hwL = HardwareConfig(16, 2.4, L, att_b=1.75)
    agree = np.mean(simulate_logits(model, x, hwL, seed=1) == evaluate_logits(model, x, hwL))
    print(f"L = {L:3d}: simulate agrees with the expected decision on {100 * agree:.1f}% of neurons")

# vanishing gray zone, one tick: every crossbar votes with its partial sign
det = HardwareConfig(16, 1e-9, 1)
print("\ndeterministic limit, simulate == eval:",
      np.array_equal(simulate_logits(model, x, det, seed=2), evaluate_logits(model, x, det)))

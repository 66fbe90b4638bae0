"""
Folding batch normalization into buffer thresholds
==================================================

sign(BN(alpha * x)) only depends on where x sits relative to one number per
channel. That number, scaled by the unit current, becomes the buffer's
threshold current and is split evenly over the crossbars of the layer. A
negative BN scale flips which branch counts as +1.
"""
import numpy as np

from aqfpbnn.bnn.model import BnParams
from aqfpbnn.bnn.ops import distribute_threshold, fold_bn, fold_threshold_value
from aqfpbnn.device import AttenuationModel

bn = BnParams(gamma=[2.0, -1.5], beta=[0.5, 0.2], mu=[0.1, -0.4], sigma=[0.2, 0.9])
alpha = np.array([1.0, 0.6])
att = AttenuationModel(10.0, 0.5)

v_th = fold_threshold_value(bn.gamma, bn.beta, bn.mu, bn.sigma, bn.eps, alpha)
i_th, flip = fold_bn(bn, alpha, 1, att)
print("value-domain thresholds:", v_th)
print("threshold currents (uA):", i_th, "flip:", flip)

# check the fold against the explicit BN on a grid of column sums
x = np.arange(-16, 17, dtype=float)[:, None]
explicit = bn.apply(alpha * x) >= 0
folded = np.where(flip, x <= v_th, x >= v_th)
print("fold reproduces sign(BN) on all column sums:", np.array_equal(explicit, folded))

# a 1 uA threshold over three crossbars: parts add back exactly
parts = distribute_threshold(1.0, 3)
print("\nsplit of 1 uA over 3 crossbars:", parts, "sum:", sum(parts))

"""Numpy inference: software-model evaluation and hardware-accurate simulation.

Both paths share the full-precision layers and the per-crossbar buffer
probabilities, so in the deterministic limit (vanishing gray-zone, one tick)
they produce identical predictions.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import crossbar as xbar
from .bnn.model import (ACT_NONE, ACT_RANDOMIZED, ACT_SC, ACT_SIGN, CONV2D, BinLayer,
                        BnnModel)
from .bnn.ops import (BnnError, distribute_threshold, fold_bn, fold_threshold_value,
                      sign_binarize)
from .device import AttenuationModel, BufferModel, buffer_prob, unit_current
from .rng import stream
from .sc import AccumulationUnit, compare_counts

EXPECTATION = "expectation"
SAMPLE = "sample"


@dataclass(frozen=True)
class HardwareConfig:
    crossbar_size: int = 16
    delta_i_in: float = 2.4
    bitstream_length: int = 16
    att_a: float = 70.0
    att_b: float = 0.5

    @property
    def attenuation(self) -> AttenuationModel:
        return AttenuationModel(self.att_a, self.att_b)

    @property
    def buffer(self) -> BufferModel:
        return BufferModel(delta_i_in=self.delta_i_in)

    @property
    def unit_current(self) -> float:
        return unit_current(self.crossbar_size, self.attenuation)

    @property
    def delta_v_in(self) -> float:
        return self.delta_i_in / self.unit_current


def im2col(x, kh, kw, stride=1, padding=0):
    """``(N, C, H, W)`` -> ``(N, OH, OW, C*kh*kw)`` with zero padding."""
    if padding:
        x = np.pad(x, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    n, c, h, w = x.shape
    oh = (h - kh) // stride + 1
    ow = (w - kw) // stride + 1
    win = np.lib.stride_tricks.sliding_window_view(x, (kh, kw), axis=(2, 3))
    win = win[:, :, ::stride, ::stride][:, :, :oh, :ow]  # N, C, OH, OW, kh, kw
    return win.transpose(0, 2, 3, 1, 4, 5).reshape(n, oh, ow, c * kh * kw)


def maxpool(x, k):
    if k == 1:
        return x
    n, c, h, w = x.shape
    h2, w2 = h // k, w // k
    return x[:, :, : h2 * k, : w2 * k].reshape(n, c, h2, k, w2, k).max(axis=(3, 5))


def _patches(layer: BinLayer, x):
    """Rows presented to the crossbar(s): ``(N, [OH, OW,] K)``."""
    if layer.kind == CONV2D:
        kh, kw = layer.weight.shape[2:]
        return im2col(x, kh, kw, layer.stride, layer.padding)
    return x.reshape(x.shape[0], -1)


def _to_nchw(y, layer):
    return y.transpose(0, 3, 1, 2) if layer.kind == CONV2D else y


def bin_forward(layer: BinLayer, a_b):
    """Binary matmul/convolution of +/-1 inputs with ``sign(w_r)``, scaled per channel by alpha."""
    a = np.asarray(a_b)
    if a.size and not np.all((a == 1) | (a == -1)):
        raise BnnError("bin_forward expects +/-1 activations")
    if layer.kind == CONV2D:
        if a.ndim != 4 or a.shape[1] != layer.weight.shape[1]:
            raise BnnError(f"expected (N, {layer.weight.shape[1]}, H, W) input, got {a.shape}")
    elif a.shape[-1] != layer.fan_in:
        raise BnnError(f"expected {layer.fan_in} inputs, got {a.shape[-1]}")
    y = _to_nchw(_patches(layer, a.astype(np.float64)) @ layer.matrix(True).astype(np.float64), layer)
    return y * layer.alpha.reshape((1, -1) + (1,) * (y.ndim - 2))


def _fp_layer(layer: BinLayer, x):
    y = _patches(layer, x) @ layer.matrix()
    if layer.binary:
        y = y * layer.alpha
    if layer.bias is not None:
        y = y + layer.bias
    y = _to_nchw(y, layer)
    if layer.bn is not None:
        y = layer.bn.apply(y)
    if layer.activation == ACT_NONE:
        return y
    return sign_binarize(y).astype(np.float64)


def _fold(layer: BinLayer, hw: HardwareConfig):
    f = layer.out_channels
    if layer.bn is None:
        return np.zeros(f), np.zeros(f, dtype=bool)
    return fold_bn(layer.bn, layer.alpha, hw.crossbar_size, hw.attenuation)


def crossbar_probabilities(layer: BinLayer, a, hw: HardwareConfig):
    """Per-crossbar probability of a +1 buffer output, shape ``(N, [OH, OW,] M, F)``."""
    sums = xbar.partitioned_sums(layer.matrix(True), _patches(layer, a), hw.crossbar_size)
    m = sums.shape[-2]
    i_th, flip = _fold(layer, hw)
    parts = np.array([distribute_threshold(t, m) for t in i_th]).T  # (M, F)
    currents = sums * hw.unit_current
    p = buffer_prob(currents - parts, BufferModel(hw.delta_i_in, 0.0))
    return np.where(flip, 1.0 - p, p)


def _sc_expectation(p, hw: HardwareConfig):
    """Deterministic software read-out: expected window count against the comparator."""
    m = p.shape[-2]
    unit = AccumulationUnit(m, hw.bitstream_length)
    expected = hw.bitstream_length * p.sum(axis=-2)
    return np.where(expected + 0.5 >= unit.threshold, 1.0, -1.0)


def _sc_probability(p, hw: HardwareConfig):
    """Normal approximation of P(window count >= threshold)."""
    from scipy.special import ndtr

    m, L = p.shape[-2], hw.bitstream_length
    unit = AccumulationUnit(m, L)
    mean = L * p.sum(axis=-2)
    var = L * (p * (1 - p)).sum(axis=-2)
    return ndtr((mean - unit.threshold + 0.5) / np.sqrt(var + 0.05))


def _full_sum_expectation(layer, a, hw, rng=None):
    y = _patches(layer, a) @ layer.matrix(True).astype(np.float64)
    if layer.bn is None:
        v_th, sg = np.zeros(layer.out_channels), np.ones(layer.out_channels)
    else:
        b = layer.bn
        v_th = fold_threshold_value(b.gamma, b.beta, b.mu, b.sigma, b.eps, layer.alpha)
        sg = np.sign(b.gamma)
    z = sg * (y - v_th)
    if rng is None:
        return np.where(z >= 0, 1.0, -1.0)
    from scipy.special import erf
    p = 0.5 + 0.5 * erf(math.sqrt(math.pi) * z / hw.delta_v_in)
    return np.where(rng.random(p.shape) < p, 1.0, -1.0)


def _run(model: BnnModel, x, hidden, batch_size=500):
    x = np.asarray(x, dtype=np.float64)
    outs = []
    for start in range(0, len(x), batch_size):
        xb = (x[start:start + batch_size] - model.input_mean) / model.input_std
        xb = xb.reshape((len(xb),) + tuple(model.input_shape))
        for li, layer in enumerate(model.layers):
            if layer.binary and li == 0:
                xb = sign_binarize(xb).astype(np.float64)
            if layer.binary and layer.activation in (ACT_SC, ACT_RANDOMIZED):
                xb = _to_nchw(hidden(li, layer, xb, start), layer)
            else:
                xb = _fp_layer(layer, xb)
            if layer.kind == CONV2D:
                xb = maxpool(xb, layer.pool)
        outs.append(xb.reshape(len(xb), -1))
    return np.concatenate(outs)


def evaluate_logits(model: BnnModel, x, hw: HardwareConfig, mode=EXPECTATION, seed=None,
                    batch_size=500):
    """Software-model inference.

    ``expectation`` (default) is deterministic: every stochastic neuron is
    replaced by the sign of its expected output. ``sample`` draws each neuron
    from the model's output distribution using ``seed``.
    """
    if mode not in (EXPECTATION, SAMPLE):
        raise ValueError(f"unknown evaluation mode {mode!r}")

    def hidden(li, layer, a, start):
        gen = stream(seed, 1, li, start) if mode == SAMPLE else None
        if layer.activation == ACT_RANDOMIZED:
            return _full_sum_expectation(layer, a, hw, gen)
        p = crossbar_probabilities(layer, a, hw)
        if gen is None:
            return _sc_expectation(p, hw)
        q = _sc_probability(p, hw)
        return np.where(gen.random(q.shape) < q, 1.0, -1.0)

    return _run(model, x, hidden, batch_size)


def simulate_logits(model: BnnModel, x, hw: HardwareConfig, seed: int, batch_size=500):
    """Hardware-accurate inference through partitioned crossbars and SC accumulation.

    Every binary layer is split over ``ceil(K / C_s)`` crossbars; each column
    buffer is observed for ``L`` ticks with its input held fixed, the APC sums
    the ones over crossbars and ticks, and the comparator emits the activation.
    The window count of one buffer is drawn as Binomial(L, p), which has the
    same law as L independent ticks. Streams are keyed by
    ``(layer, crossbar, batch offset)``.
    """
    if seed is None:
        raise ValueError("simulate requires an explicit seed")
    L = hw.bitstream_length

    def hidden(li, layer, a, start):
        p = crossbar_probabilities(layer, a, hw)
        m = p.shape[-2]
        total = np.zeros(p.shape[:-2] + p.shape[-1:], dtype=np.int64)
        for k in range(m):
            total += stream(seed, 0, li, k, start).binomial(L, p[..., k, :])
        return compare_counts(total, AccumulationUnit(m, L)).astype(np.float64)

    return _run(model, x, hidden, batch_size)


def accuracy(logits, labels) -> float:
    return float(np.mean(np.argmax(logits, axis=1) == np.asarray(labels)))

"""Torch modules for randomized-aware training.

Only autograd and the dense kernels come from torch; the neuron models are
written out here so their forward/backward pair is explicit:

* binary weights: forward ``sign(w_r)``, backward straight-through;
* stochastic neurons: forward samples the buffer output, backward uses the
  gradient of its expectation (an erf for a single buffer; for a partitioned
  layer, the expected SC-accumulated comparator output).
"""
from __future__ import annotations

import math

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from .model import (ACT_NONE, ACT_RANDOMIZED, ACT_SC, ACT_SIGN, CONV2D, BinLayer, BnParams,
                    BnnModel)

SQRT_PI = math.sqrt(math.pi)
#: below this value-domain gray-zone the erf gradient is an impulse; fall back to STE
DETERMINISTIC_DV = 1e-6
#: variance floor in the normal approximation of the window count
COUNT_VAR_FLOOR = 0.05


class SignSTE(torch.autograd.Function):
    """sign with sign(0) = +1; gradient passed where |x| <= 1 (HardTanh window)."""

    @staticmethod
    def forward(ctx, x):
        ctx.save_for_backward(x)
        return torch.where(x >= 0, 1.0, -1.0).to(x.dtype)

    @staticmethod
    def backward(ctx, g):
        (x,) = ctx.saved_tensors
        return g * (x.abs() <= 1).to(g.dtype)


def binarize_weights(w):
    """Forward sign(w) (sign(0) = +1), backward identity."""
    return w + (torch.where(w >= 0, 1.0, -1.0).to(w.dtype) - w).detach()


def erf_expectation(z, delta_v):
    """E[a_b] for a buffer at distance ``z`` (column-sum units) from threshold."""
    return torch.erf(SQRT_PI * z / delta_v)


def sc_expectation(z_k, delta_v, window):
    """Expected comparator output of an SC-accumulated partitioned neuron.

    ``z_k`` holds per-crossbar signed distances to the split threshold, with
    the crossbar index on dim 1. The window count is approximated as normal.
    """
    m = z_k.shape[1]
    p = 0.5 + 0.5 * torch.erf(SQRT_PI * z_k / delta_v)
    mean = window * p.sum(1)
    var = window * (p * (1 - p)).sum(1)
    t = math.ceil(m * window / 2)
    prob = 0.5 * (1 + torch.erf((mean - t + 0.5) / torch.sqrt(2 * (var + COUNT_VAR_FLOOR))))
    return 2 * prob - 1


class TorchBnn(nn.Module):
    """Trainable mirror of a :class:`BnnModel`."""

    def __init__(self, model: BnnModel, crossbar_size=16, delta_v=1.0, window=16,
                 expectation_forward=False, bn_momentum=0.1):
        super().__init__()
        self.layer_defs = [l for l in model.layers]
        self.input_shape = tuple(model.input_shape)
        self.input_mean = model.input_mean
        self.input_std = model.input_std
        self.crossbar_size = int(crossbar_size)
        self.delta_v = float(delta_v)
        self.window = int(window)
        self.expectation_forward = expectation_forward
        self.bn_momentum = bn_momentum
        self.generator = torch.Generator().manual_seed(0)
        self.weights = nn.ParameterList()
        self.alphas = nn.ParameterList()
        self.gammas = nn.ParameterList()
        self.betas = nn.ParameterList()
        self.biases = nn.ParameterList()
        for i, l in enumerate(model.layers):
            f = l.out_channels
            self.weights.append(nn.Parameter(torch.tensor(l.weight, dtype=torch.float32)))
            self.alphas.append(nn.Parameter(torch.tensor(l.alpha, dtype=torch.float32),
                                            requires_grad=l.binary))
            bn = l.bn if l.bn is not None else BnParams.identity(f)
            self.gammas.append(nn.Parameter(torch.tensor(bn.gamma, dtype=torch.float32),
                                            requires_grad=l.bn is not None))
            self.betas.append(nn.Parameter(torch.tensor(bn.beta, dtype=torch.float32),
                                           requires_grad=l.bn is not None))
            self.register_buffer(f"running_mean{i}", torch.tensor(bn.mu, dtype=torch.float32))
            self.register_buffer(f"running_var{i}", torch.tensor(bn.sigma ** 2, dtype=torch.float32))
            bias = l.bias if l.bias is not None else np.zeros(f)
            self.biases.append(nn.Parameter(torch.tensor(bias, dtype=torch.float32),
                                            requires_grad=l.bias is not None))
        self.bn_eps = [(l.bn.eps if l.bn is not None else 1e-5) for l in model.layers]

    # -- helpers ----------------------------------------------------------
    def _linear(self, i, ldef, x, w):
        if ldef.kind == CONV2D:
            return F.conv2d(x, w, stride=ldef.stride, padding=ldef.padding)
        return x @ w

    def _bn_stats(self, i, y):
        dims = [0] + list(range(2, y.dim()))
        if self.training:
            mu = y.mean(dims)
            var = y.var(dims, unbiased=False)
            with torch.no_grad():
                n = y.numel() / y.shape[1]
                rm, rv = getattr(self, f"running_mean{i}"), getattr(self, f"running_var{i}")
                rm.mul_(1 - self.bn_momentum).add_(self.bn_momentum * mu)
                rv.mul_(1 - self.bn_momentum).add_(self.bn_momentum * var * n / max(n - 1, 1))
            return mu, var
        return getattr(self, f"running_mean{i}"), getattr(self, f"running_var{i}")

    @staticmethod
    def _chan(v, y):
        return v.view((1, -1) + (1,) * (y.dim() - 2))

    def _batchnorm(self, i, y):
        mu, var = self._bn_stats(i, y)
        c = lambda v: self._chan(v, y)
        return c(self.gammas[i]) * (y - c(mu)) / torch.sqrt(c(var) + self.bn_eps[i]) + c(self.betas[i])

    def _partial_sums(self, ldef, a, w_b):
        """Per-crossbar column sums with the crossbar index on dim 1."""
        cs = self.crossbar_size
        if ldef.kind == CONV2D:
            kh, kw = w_b.shape[2:]
            cols = F.unfold(a, (kh, kw), padding=ldef.padding, stride=ldef.stride)  # B, K, P
            k = cols.shape[1]
            m = math.ceil(k / cs)
            cols = F.pad(cols, (0, 0, 0, m * cs - k))
            wm = F.pad(w_b.reshape(w_b.shape[0], -1).t(), (0, 0, 0, m * cs - k))
            s = torch.einsum("bmcp,mcf->bmfp", cols.view(a.shape[0], m, cs, -1),
                             wm.view(m, cs, -1))
            oh = (a.shape[2] + 2 * ldef.padding - kh) // ldef.stride + 1
            return s.reshape(a.shape[0], m, w_b.shape[0], oh, -1)
        k = a.shape[1]
        m = math.ceil(k / cs)
        a = F.pad(a, (0, m * cs - k))
        wm = F.pad(w_b, (0, 0, 0, m * cs - k))
        return torch.einsum("bmc,mcf->bmf", a.view(a.shape[0], m, cs), wm.view(m, cs, -1))

    def _sample(self, expectation):
        if self.expectation_forward:
            return expectation
        if not self.training:
            return torch.where(expectation >= 0, 1.0, -1.0)
        u = torch.rand(expectation.shape, generator=self.generator)
        s = torch.where(u < 0.5 * (1 + expectation), 1.0, -1.0)
        return expectation + (s - expectation).detach()

    def _stochastic(self, i, ldef, a, w_b):
        alpha, gamma, beta = self.alphas[i], self.gammas[i], self.betas[i]
        s_full = self._linear(i, ldef, a, w_b)
        y = self._chan(alpha, s_full) * s_full
        if ldef.bn is None:
            v_th = torch.zeros_like(alpha)
            sg = torch.ones_like(alpha)
            x_bn = y
        else:
            mu, var = self._bn_stats(i, y)
            sd = torch.sqrt(var + self.bn_eps[i])
            v_th = -beta * sd / (gamma * alpha) + mu / alpha
            sg = torch.sign(gamma).detach()
            c = lambda v: self._chan(v, y)
            x_bn = c(gamma) * (y - c(mu)) / c(sd) + c(beta)
        if self.delta_v < DETERMINISTIC_DV:
            # vanishing gray-zone: the buffer is a sign; use the plain STE
            return SignSTE.apply(x_bn)
        if ldef.activation == ACT_RANDOMIZED:
            z = self._chan(sg, s_full) * (s_full - self._chan(v_th, s_full))
            return self._sample(erf_expectation(z, self.delta_v))
        s_k = self._partial_sums(ldef, a, w_b)
        m = s_k.shape[1]
        view = (1, 1, -1) + (1,) * (s_k.dim() - 3)
        z_k = sg.view(view) * (s_k - v_th.view(view) / m)
        return self._sample(sc_expectation(z_k, self.delta_v, self.window))

    def forward(self, x):
        x = x.reshape((x.shape[0],) + self.input_shape)
        for i, ldef in enumerate(self.layer_defs):
            w = self.weights[i]
            if ldef.binary:
                w = binarize_weights(w)
                if i == 0:
                    x = SignSTE.apply(x)
            if ldef.binary and ldef.activation in (ACT_SC, ACT_RANDOMIZED):
                x = self._stochastic(i, ldef, x, w)
            else:
                y = self._linear(i, ldef, x, w)
                if ldef.binary:
                    y = self._chan(self.alphas[i], y) * y
                if ldef.bias is not None:
                    y = y + self._chan(self.biases[i], y)
                if ldef.bn is not None:
                    y = self._batchnorm(i, y)
                x = y if ldef.activation == ACT_NONE else SignSTE.apply(y)
            if ldef.kind == CONV2D and ldef.pool > 1:
                x = F.max_pool2d(x, ldef.pool)
            if ldef.kind == CONV2D and i + 1 < len(self.layer_defs) and self.layer_defs[i + 1].kind != CONV2D:
                x = x.flatten(1)
        return x

    # -- training utilities -----------------------------------------------
    def binary_weight_params(self):
        return [self.weights[i] for i, s in enumerate(self.layer_defs) if s.binary]

    @torch.no_grad()
    def recu_(self, tau):
        """In-place rectified clamp of every binary layer's latent weights."""
        for w in self.binary_weight_params():
            q = torch.quantile(w.flatten().double(), torch.tensor([1 - tau, tau], dtype=torch.float64))
            w.clamp_(float(q[0]), float(q[1]))

    @torch.no_grad()
    def positive_alpha_(self, floor=1e-6):
        for i, s in enumerate(self.layer_defs):
            if s.binary:
                self.alphas[i].clamp_(min=floor)

    def to_model(self, template: BnnModel) -> BnnModel:
        layers = []
        for i, ldef in enumerate(self.layer_defs):
            t = lambda p: p.detach().double().numpy().copy()
            bn = None
            if ldef.bn is not None:
                bn = BnParams(t(self.gammas[i]), t(self.betas[i]),
                              t(getattr(self, f"running_mean{i}")),
                              np.sqrt(t(getattr(self, f"running_var{i}"))), self.bn_eps[i])
            layers.append(BinLayer(ldef.kind, t(self.weights[i]), t(self.alphas[i]), bn,
                                   ldef.binary, ldef.activation,
                                   t(self.biases[i]) if ldef.bias is not None else None,
                                   ldef.stride, ldef.padding, ldef.pool))
        out = template.copy()
        out.layers = layers
        return out

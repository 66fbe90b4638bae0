"""Numpy reference operations for randomized-aware BNN layers.

These are the definitions the torch training code and the hardware simulator
are both checked against.
"""
from __future__ import annotations

import math

import numpy as np
from scipy.special import erf

from ..device import (SQRT_PI, AttenuationModel, ValueDomainParams, unit_current,
                      value_prob)
from ..rng import as_generator


class BnnError(ValueError):
    pass


def sign_binarize(x_r) -> np.ndarray:
    """+1 where x >= 0, -1 elsewhere (so sign(0) = +1)."""
    x = np.asarray(x_r, dtype=float)
    if np.isnan(x).any():
        raise BnnError("cannot binarize NaN entries")
    return np.where(x >= 0, 1, -1).astype(np.int8)


def hardtanh(x):
    return np.clip(x, -1.0, 1.0)


def randomized_activation(a_r, params: ValueDomainParams, rng) -> np.ndarray:
    """+1 with probability P_v(a_r), -1 otherwise."""
    p = np.asarray(value_prob(a_r, params))
    gen = as_generator(rng)
    return np.where(gen.random(p.shape) < p, 1, -1).astype(np.int8)


def grad_weights_ste(g_wb):
    """Straight-through estimator: the latent weight receives the binary weight's gradient."""
    return np.array(g_wb, dtype=float, copy=True)


def erf_surrogate_factor(a_r, params: ValueDomainParams):
    """d/da erf(sqrt(pi) (a - V_th) / dV) = (2 / dV) exp(-pi (a - V_th)^2 / dV^2)."""
    u = (np.asarray(a_r, dtype=float) - params.v_th) / params.delta_v_in
    return (2.0 / params.delta_v_in) * np.exp(-math.pi * u * u)


def grad_activation_erf(g_ab, a_r, params: ValueDomainParams):
    """Backpropagate through the expectation of the randomized sign."""
    return np.asarray(g_ab, dtype=float) * erf_surrogate_factor(a_r, params)


def expected_activation(a_r, params: ValueDomainParams):
    return erf(SQRT_PI * (np.asarray(a_r, dtype=float) - params.v_th) / params.delta_v_in)


def recu_clamp(w_r, tau: float) -> np.ndarray:
    """Clamp weights to their empirical ``[Q(1 - tau), Q(tau)]`` quantile band.

    Quantiles interpolate linearly between order statistics (the usual
    "type 7" rule), computed over the whole tensor.
    """
    w = np.asarray(w_r, dtype=float)
    if w.size == 0:
        raise BnnError("cannot clamp an empty weight tensor")
    if not 0.5 < tau <= 1.0:
        raise BnnError(f"tau must lie in (0.5, 1], got {tau}")
    lo, hi = np.quantile(w, [1.0 - tau, tau])
    return np.clip(w, lo, hi)


def fold_threshold_value(gamma, beta, mu, sigma, eps, alpha):
    """Column-sum threshold that reproduces ``sign(BN(alpha * x))``.

    BN(alpha * x) >= 0  <=>  sign(gamma) * (x - v_th) >= 0 with
    v_th = -beta * sqrt(sigma^2 + eps) / (gamma * alpha) + mu / alpha.
    """
    gamma = np.asarray(gamma, dtype=float)
    if np.any(gamma == 0):
        raise BnnError("BN scale gamma == 0 cannot be folded into a threshold")
    alpha = np.asarray(alpha, dtype=float)
    if np.any(alpha <= 0):
        raise BnnError("channel scale alpha must be positive")
    sd = np.sqrt(np.asarray(sigma, dtype=float) ** 2 + eps)
    return -np.asarray(beta) * sd / (gamma * alpha) + np.asarray(mu) / alpha


def fold_bn(bn, alpha, c_s: int, att: AttenuationModel):
    """Fold inference BN into per-channel buffer threshold currents.

    Returns ``(i_th, flip)``: threshold currents in uA and a boolean mask of
    channels whose +1/-1 probability branches must be exchanged (gamma < 0).
    """
    v_th = fold_threshold_value(bn.gamma, bn.beta, bn.mu, bn.sigma, bn.eps, alpha)
    flip = np.asarray(bn.gamma) < 0
    return v_th * unit_current(c_s, att), flip


def distribute_threshold(i_th: float, m: int) -> list[float]:
    """Split a threshold evenly over ``m`` crossbars so the parts sum back bit-exactly."""
    if m < 1:
        raise BnnError("need at least one crossbar")
    i_th = float(i_th)
    if m == 1:
        return [i_th]
    part = i_th / m
    head = [part] * (m - 1)
    acc = 0.0
    for v in head:
        acc += v
    # acc is within a factor of two of i_th, so this subtraction is exact
    parts = head + [i_th - acc]
    total = 0.0
    for v in parts:
        total += v
    if total != i_th:  # pragma: no cover - guarded by the Sterbenz bound above
        raise BnnError("threshold split failed to reproduce the total")
    return parts


def lr_schedule(epoch: float, cfg) -> float:
    """Linear warmup from 0 to ``lr0`` then cosine annealing; ``epoch`` may be fractional."""
    lr0, warm, total = cfg.lr0, cfg.warmup_epochs, cfg.epochs
    if warm > 0 and epoch < warm:
        return lr0 * epoch / warm
    span = max(total - warm, 1)
    t = min(epoch - warm, span)
    return lr0 * 0.5 * (1.0 + math.cos(math.pi * t / span))


def tau_schedule(epoch: float, cfg) -> float:
    """ReCU tau grows linearly from ``tau_start`` to ``tau_end`` over training."""
    frac = min(max(epoch / max(cfg.epochs, 1), 0.0), 1.0)
    return cfg.tau_start + (cfg.tau_end - cfg.tau_start) * frac

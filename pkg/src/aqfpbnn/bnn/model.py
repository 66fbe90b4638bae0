"""Framework-independent BNN model description (numpy arrays only)."""
from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .ops import BnnError, sign_binarize

DENSE = "dense"
CONV2D = "conv2d"

#: hidden activation kinds
ACT_SC = "sc"            # crossbar-mapped: per-crossbar buffers + SC accumulation
ACT_RANDOMIZED = "randomized"  # single buffer on the whole pre-activation
ACT_SIGN = "sign"        # digital deterministic sign (full-precision layers)
ACT_NONE = "none"        # logits


@dataclass
class BnParams:
    gamma: np.ndarray
    beta: np.ndarray
    mu: np.ndarray
    sigma: np.ndarray
    eps: float = 1e-5

    def __post_init__(self):
        for name in ("gamma", "beta", "mu", "sigma"):
            setattr(self, name, np.asarray(getattr(self, name), dtype=np.float64))
        if np.any(self.sigma < 0):
            raise BnnError("BN standard deviation must be >= 0")
        if not self.eps > 0:
            raise BnnError("BN epsilon must be > 0")

    def apply(self, y):
        """Inference-time BN; ``y`` has channels on axis 1 (or last for 2-D input)."""
        shape = (1, -1) + (1,) * (np.ndim(y) - 2)
        g, b, m, s = (v.reshape(shape) for v in (self.gamma, self.beta, self.mu, self.sigma))
        return g * (y - m) / np.sqrt(s ** 2 + self.eps) + b

    @classmethod
    def identity(cls, n):
        return cls(np.ones(n), np.zeros(n), np.zeros(n), np.ones(n), 1e-5)


@dataclass
class BinLayer:
    """One layer: weights, per-output-channel scale and optional BN.

    Dense weights are stored ``(in, out)``; conv weights ``(out, in, kh, kw)``.
    ``binary`` layers binarize their latent weights and are mapped onto
    crossbars; the others run in full precision.
    """

    kind: str
    weight: np.ndarray
    alpha: np.ndarray
    bn: BnParams | None = None
    binary: bool = True
    activation: str = ACT_SC
    bias: np.ndarray | None = None
    stride: int = 1
    padding: int = 0
    pool: int = 1

    def __post_init__(self):
        if self.kind not in (DENSE, CONV2D):
            raise BnnError(f"unknown layer kind {self.kind!r}")
        self.weight = np.asarray(self.weight, dtype=np.float64)
        self.alpha = np.asarray(self.alpha, dtype=np.float64)
        if self.alpha.shape != (self.out_channels,):
            raise BnnError(f"alpha must have shape ({self.out_channels},)")
        if np.any(self.alpha <= 0):
            raise BnnError("alpha must be strictly positive")
        if self.activation in (ACT_SC, ACT_RANDOMIZED) and not self.binary:
            raise BnnError("stochastic neurons require a binary (crossbar-mapped) layer")

    @property
    def out_channels(self) -> int:
        return self.weight.shape[1] if self.kind == DENSE else self.weight.shape[0]

    @property
    def fan_in(self) -> int:
        """Crossbar rows needed per output: K."""
        return self.weight.shape[0] if self.kind == DENSE else int(np.prod(self.weight.shape[1:]))

    @property
    def w_b(self) -> np.ndarray:
        return sign_binarize(self.weight)

    def matrix(self, binarized=None) -> np.ndarray:
        """Weights as a ``K x F`` matrix (conv kernels flattened in (in, kh, kw) order)."""
        binarized = self.binary if binarized is None else binarized
        w = self.w_b if binarized else self.weight
        if self.kind == DENSE:
            return w
        return w.reshape(w.shape[0], -1).T

    def macs(self, input_hw=None) -> int:
        if self.kind == DENSE:
            return int(self.weight.size)
        oh, ow = input_hw
        return int(self.weight.size) * oh * ow


@dataclass
class BnnModel:
    layers: list = field(default_factory=list)
    input_shape: tuple = (784,)
    #: input normalisation applied before the first layer
    input_mean: np.ndarray | float = 0.0
    input_std: np.ndarray | float = 1.0
    meta: dict = field(default_factory=dict)

    def copy(self) -> "BnnModel":
        return replace(self, layers=[replace(l) for l in self.layers], meta=dict(self.meta))

    @property
    def crossbar_layers(self):
        return [i for i, l in enumerate(self.layers) if l.binary]

    def layer_geometry(self):
        """Yield ``(layer, input_hw, output_hw)``; spatial sizes are None for dense layers."""
        hw = tuple(self.input_shape[1:]) if len(self.input_shape) == 3 else None
        for layer in self.layers:
            if layer.kind == CONV2D:
                kh, kw = layer.weight.shape[2:]
                oh = (hw[0] + 2 * layer.padding - kh) // layer.stride + 1
                ow = (hw[1] + 2 * layer.padding - kw) // layer.stride + 1
                out = (oh // layer.pool, ow // layer.pool)
                yield layer, hw, (oh, ow)
                hw = out
            else:
                yield layer, None, None
                hw = None

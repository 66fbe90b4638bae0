"""Randomized-aware training loop (torch autograd backend)."""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, fields

import numpy as np
import torch
import torch.nn.functional as F

from ..device import AttenuationModel, unit_current
from ..rng import stream
from .model import (ACT_NONE, ACT_SC, ACT_SIGN, CONV2D, DENSE, BinLayer, BnnModel, BnParams)
from .ops import BnnError, lr_schedule, tau_schedule
from .torch_layers import TorchBnn


class TrainingDivergedError(BnnError):
    def __init__(self, epoch, step):
        super().__init__(f"training diverged (non-finite loss) at epoch {epoch}, step {step}")
        self.epoch = epoch
        self.step = step


@dataclass
class TrainConfig:
    epochs: int = 15
    batch_size: int = 128
    lr0: float = 0.05
    warmup_epochs: float = 1.0
    tau_start: float = 0.85
    tau_end: float = 0.99
    crossbar_size: int = 16
    delta_i_in: float = 2.4
    bitstream_length: int = 16
    seed: int = 0
    dataset: str = "mnist"
    att_a: float = 70.0
    att_b: float = 0.5
    momentum: float = 0.9
    weight_decay: float = 0.0
    recu: bool = True
    expectation_forward: bool = False
    shift_augment: int = 0
    train_samples: int = 0  # 0 = use all

    def __post_init__(self):
        if int(self.epochs) < 1:
            raise BnnError(f"epochs must be >= 1, got {self.epochs}")
        if self.batch_size < 1:
            raise BnnError("batch_size must be >= 1")
        if not (0.5 < self.tau_start < 1 and 0.5 < self.tau_end < 1):
            raise BnnError("ReCU tau must lie strictly between 0.5 and 1")
        if self.bitstream_length < 1:
            raise BnnError("bitstream_length must be >= 1")
        if self.crossbar_size < 1:
            raise BnnError("crossbar_size must be >= 1")
        if not self.delta_i_in > 0:
            raise BnnError("delta_i_in must be > 0")

    @property
    def delta_v_in(self) -> float:
        """Gray-zone width in column-sum units for the configured crossbar."""
        return self.delta_i_in / unit_current(self.crossbar_size, AttenuationModel(self.att_a, self.att_b))

    @classmethod
    def from_dict(cls, d):
        names = {f.name for f in fields(cls)}
        unknown = set(d) - names
        if unknown:
            raise BnnError(f"unknown training keys: {sorted(unknown)}")
        return cls(**d)


def _init_alpha(w, kind):
    """Mean absolute latent weight per output channel."""
    axes = 0 if kind == DENSE else (1, 2, 3)
    return np.maximum(np.abs(w).mean(axis=axes), 1e-3)


def _uniform(gen, fan_in, shape):
    bound = 1.0 / math.sqrt(fan_in)
    return gen.uniform(-bound, bound, size=shape)


def build_mlp(sizes=(784, 512, 512, 10), seed=0, hidden_activation=ACT_SC,
              fp_first_last=True) -> BnnModel:
    """MLP whose middle layers are binary crossbar layers.

    With ``fp_first_last`` the first and last layers stay full precision
    (deterministic sign / logits); otherwise every layer is binary.
    """
    layers = []
    n = len(sizes) - 1
    for i in range(n):
        k, f = sizes[i], sizes[i + 1]
        gen = stream(seed, 3, i)
        last = i == n - 1
        binary = not (fp_first_last and (i == 0 or last))
        if binary:
            w = gen.normal(0.0, 0.05, size=(k, f))
            alpha = _init_alpha(w, DENSE)
        else:
            w = _uniform(gen, k, (k, f))
            alpha = np.ones(f)
        act = ACT_NONE if last else (hidden_activation if binary else ACT_SIGN)
        bias = _uniform(gen, k, f) if last else None
        layers.append(BinLayer(DENSE, w, alpha, BnParams.identity(f), binary, act, bias))
    return BnnModel(layers, (sizes[0],), meta={"architecture": "mlp-" + "-".join(map(str, sizes))})


def build_vgg_small(width=64, seed=0, hidden_activation=ACT_SC, num_classes=10) -> BnnModel:
    """Reduced VGG-Small for 32x32x3 inputs (demo scale)."""
    plan = [(3, width, 1), (width, width, 2), (width, 2 * width, 1), (2 * width, 2 * width, 2),
            (2 * width, 4 * width, 1), (4 * width, 4 * width, 2)]
    layers = []
    for i, (cin, cout, pool) in enumerate(plan):
        gen = stream(seed, 3, i)
        binary = i > 0
        if binary:
            w = gen.normal(0.0, 0.05, size=(cout, cin, 3, 3))
            alpha = _init_alpha(w, CONV2D)
        else:
            w = _uniform(gen, cin * 9, (cout, cin, 3, 3))
            alpha = np.ones(cout)
        layers.append(BinLayer(CONV2D, w, alpha, BnParams.identity(cout), binary,
                               hidden_activation if binary else ACT_SIGN, padding=1, pool=pool))
    k = 4 * width * 4 * 4
    gen = stream(seed, 3, len(plan))
    layers.append(BinLayer(DENSE, _uniform(gen, k, (k, num_classes)), np.ones(num_classes),
                           BnParams.identity(num_classes), False, ACT_NONE,
                           _uniform(gen, k, num_classes)))
    return BnnModel(layers, (3, 32, 32), meta={"architecture": f"vgg-small-{width}"})


def _torch_seed(seed, *key) -> int:
    return int(np.random.SeedSequence(seed, spawn_key=key).generate_state(1, np.uint64)[0] >> 1)


def _input_stats(x, model):
    if len(model.input_shape) == 3:
        axes = (0, 2, 3)
        xs = x.reshape((len(x),) + tuple(model.input_shape))
        return xs.mean(axis=axes).astype(np.float64), xs.std(axis=axes).astype(np.float64) + 1e-8
    return float(x.mean()), float(x.std()) + 1e-8


def _shift(xb, shape, max_shift, gen):
    """Random per-sample translation by up to ``max_shift`` pixels, zero fill."""
    n = xb.shape[0]
    img = xb.reshape((n,) + (shape if len(shape) == 3 else (1, 28, 28)))
    p = max_shift
    pad = F.pad(img, (p, p, p, p))
    h, w = img.shape[-2:]
    dy = torch.from_numpy(gen.integers(0, 2 * p + 1, n))
    dx = torch.from_numpy(gen.integers(0, 2 * p + 1, n))
    rows = (dy[:, None] + torch.arange(h)[None, :])[:, None, :, None].expand(n, img.shape[1], h, w + 2 * p)
    out = pad.gather(2, rows)
    cols = (dx[:, None] + torch.arange(w)[None, :])[:, None, None, :].expand(n, img.shape[1], h, w)
    return out.gather(3, cols).reshape(xb.shape)


def make_net(model: BnnModel, cfg: TrainConfig) -> TorchBnn:
    return TorchBnn(model, cfg.crossbar_size, cfg.delta_v_in, cfg.bitstream_length,
                    cfg.expectation_forward)


def train_step(net: TorchBnn, opt, xb, yb, lr, tau, recu=True, generator_seed=None):
    """One SGD step; returns the (pre-update) minibatch loss as a float."""
    if generator_seed is not None:
        net.generator.manual_seed(generator_seed)
    for g in opt.param_groups:
        g["lr"] = lr
    net.train()
    loss = F.cross_entropy(net(xb), yb)
    opt.zero_grad()
    loss.backward()
    opt.step()
    if recu:
        net.recu_(tau)
    net.positive_alpha_()
    return float(loss.detach())


def make_optimizer(net: TorchBnn, cfg: TrainConfig):
    decay, rest = [], []
    for i, ldef in enumerate(net.layer_defs):
        (rest if ldef.binary else decay).append(net.weights[i])
    others = [p for n, p in net.named_parameters() if not n.startswith("weights.")]
    groups = [{"params": decay, "weight_decay": cfg.weight_decay},
              {"params": rest + others, "weight_decay": 0.0}]
    return torch.optim.SGD(groups, lr=cfg.lr0, momentum=cfg.momentum)


def train(cfg: TrainConfig, train_set, test_set=None, model: BnnModel | None = None,
          log=None):
    """Train ``model`` (default: the reference MLP) on ``train_set``.

    Returns ``(model, history)``; history holds one dict per epoch with the
    mean training loss, the per-step losses and, if ``test_set`` is given,
    the software-model test accuracy.
    """
    if train_set is None or train_set.x is None or train_set.y is None:
        raise BnnError("training dataset missing")
    torch.manual_seed(_torch_seed(cfg.seed, 9))
    if model is None:
        model = build_mlp(seed=cfg.seed) if cfg.dataset == "mnist" else build_vgg_small(seed=cfg.seed)
    x = np.asarray(train_set.x, dtype=np.float32)
    y = np.asarray(train_set.y, dtype=np.int64)
    if cfg.train_samples:
        x, y = x[:cfg.train_samples], y[:cfg.train_samples]
    model = model.copy()
    model.input_mean, model.input_std = _input_stats(x, model)
    shape = tuple(model.input_shape)
    mean = np.reshape(model.input_mean, (1, -1) + (1,) * (len(shape) - 1)) if len(shape) == 3 else model.input_mean
    std = np.reshape(model.input_std, (1, -1) + (1,) * (len(shape) - 1)) if len(shape) == 3 else model.input_std
    xt = torch.from_numpy(((x.reshape((len(x),) + shape) - mean) / std).astype(np.float32))
    yt = torch.from_numpy(y)
    fill = float(((0.0 - np.min(mean)) / np.max(std)))
    net = make_net(model, cfg)
    opt = make_optimizer(net, cfg)
    nb = max(len(xt) // cfg.batch_size, 1)
    history = []
    for epoch in range(cfg.epochs):
        order = stream(cfg.seed, 2, epoch).permutation(len(xt))
        aug = stream(cfg.seed, 4, epoch)
        losses = []
        for b in range(nb):
            idx = torch.from_numpy(order[b * cfg.batch_size:(b + 1) * cfg.batch_size])
            xb = xt[idx]
            if cfg.shift_augment:
                xb = _shift(xb - fill, shape, cfg.shift_augment, aug) + fill
            t = epoch + b / nb
            loss = train_step(net, opt, xb, yt[idx], lr_schedule(t, cfg), tau_schedule(t, cfg),
                              cfg.recu, _torch_seed(cfg.seed, 5, epoch, b))
            if not math.isfinite(loss):
                raise TrainingDivergedError(epoch, b)
            losses.append(loss)
        rec = {"epoch": epoch, "loss": float(np.mean(losses)), "step_losses": losses}
        if test_set is not None:
            rec["test_accuracy"] = evaluate_net(net, test_set, model)
        history.append(rec)
        if log is not None:
            log(rec)
    out = net.to_model(model)
    out.meta = dict(model.meta, train_config=asdict(cfg))
    return out, history


@torch.no_grad()
def evaluate_net(net: TorchBnn, dataset, model: BnnModel, batch_size=1000) -> float:
    """Software-model accuracy of a torch net (deterministic expectation read-out)."""
    net.eval()
    shape = tuple(model.input_shape)
    x = np.asarray(dataset.x, dtype=np.float32).reshape((len(dataset.x),) + shape)
    if len(shape) == 3:
        x = (x - np.reshape(model.input_mean, (1, -1, 1, 1))) / np.reshape(model.input_std, (1, -1, 1, 1))
    else:
        x = (x - model.input_mean) / model.input_std
    correct = 0
    for s in range(0, len(x), batch_size):
        out = net(torch.from_numpy(x[s:s + batch_size].astype(np.float32)))
        correct += int((out.argmax(1).numpy() == dataset.y[s:s + batch_size]).sum())
    return correct / len(x)

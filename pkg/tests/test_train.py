import math
from pathlib import Path

import numpy as np
import pytest
import torch

from aqfpbnn.bnn import torch_layers
from aqfpbnn.bnn.model import ACT_SC, ACT_SIGN
from aqfpbnn.bnn.ops import BnnError, grad_activation_erf, lr_schedule, recu_clamp
from aqfpbnn.bnn.torch_layers import SignSTE, TorchBnn, binarize_weights, erf_expectation
from aqfpbnn.bnn.train import (TrainConfig, TrainingDivergedError, _torch_seed, build_mlp,
                               make_net, make_optimizer, train, train_step)
from aqfpbnn.checkpoint import decode, encode
from aqfpbnn.data import DatasetHandle, load_mnist
from aqfpbnn.device import ValueDomainParams
from aqfpbnn.inference import HardwareConfig, evaluate_logits

MNIST = Path(__file__).resolve().parents[2] / "data" / "mnist"


def synthetic(n=200, k=20, classes=3, seed=0):
    gen = np.random.default_rng(seed)
    centers = gen.normal(size=(classes, k)) * 2
    y = gen.integers(0, classes, n)
    x = centers[y] + gen.normal(size=(n, k))
    return DatasetHandle("synthetic", "train", x.astype(np.float32), y)


def small_cfg(**kw):
    base = dict(epochs=2, batch_size=32, lr0=0.05, warmup_epochs=0.5, crossbar_size=4,
                bitstream_length=4, att_b=1.75, seed=3)
    base.update(kw)
    return TrainConfig(**base)


def test_sign_ste_matches_numpy_rules():
    x = torch.tensor([-2.0, -1.0, -0.3, 0.0, 0.4, 1.0, 1.5], requires_grad=True)
    y = SignSTE.apply(x)
    assert y.tolist() == [-1, -1, -1, 1, 1, 1, 1]
    y.backward(torch.ones_like(y))
    assert x.grad.tolist() == [0, 1, 1, 1, 1, 1, 0]


def test_erf_expectation_grad_matches_numpy_surrogate():
    gen = np.random.default_rng(0)
    for _ in range(100):
        dv, v_th = gen.uniform(0.05, 5), gen.uniform(-3, 3)
        a = gen.uniform(-3, 3) * dv + v_th
        z = torch.tensor(a - v_th, dtype=torch.float64, requires_grad=True)
        erf_expectation(z, dv).backward()
        ref = grad_activation_erf(1.0, a, ValueDomainParams(v_th, dv, 16))
        assert float(z.grad) == pytest.approx(float(ref), rel=1e-12, abs=1e-300)


def test_binarize_weights_passes_gradient_unchanged():
    w = torch.tensor([[-0.2, 0.0], [3.0, -4.0]], requires_grad=True)
    wb = binarize_weights(w)
    assert wb.tolist() == [[-1, 1], [1, -1]]
    g = torch.tensor([[0.5, -1.0], [2.0, 0.0]])
    wb.backward(g)
    assert torch.equal(w.grad, g)


def test_ste_gradient_equals_finite_differences_with_frozen_signs(monkeypatch):
    """Autograd w.r.t. latent weights equals d loss / d w_b of the smooth binarized forward."""
    gen = np.random.default_rng(1)
    model = build_mlp((6, 5, 4, 3), seed=2, hidden_activation=ACT_SC)
    for l in model.layers:
        if l.bn is not None:
            l.bn.beta = gen.normal(size=l.out_channels) * 0.3
    net = TorchBnn(model, crossbar_size=2, delta_v=0.8, window=3, expectation_forward=True).double()
    net.eval()
    x = torch.from_numpy(gen.normal(size=(7, 6)))
    y = torch.from_numpy(gen.integers(0, 3, 7))
    loss = torch.nn.functional.cross_entropy(net(x), y)
    loss.backward()
    latent = net.weights[1]
    grad = latent.grad.clone()

    # freeze the signs: the latent tensor now holds w_b itself and binarization is the identity
    monkeypatch.setattr(torch_layers, "binarize_weights", lambda w: w)
    wb = torch.where(latent >= 0, 1.0, -1.0).double()
    h = 1e-6
    with torch.no_grad():
        latent.copy_(wb)
        for idx in np.ndindex(*wb.shape):
            orig = latent[idx].item()
            latent[idx] = orig + h
            up = torch.nn.functional.cross_entropy(net(x), y).item()
            latent[idx] = orig - h
            down = torch.nn.functional.cross_entropy(net(x), y).item()
            latent[idx] = orig
            fd = (up - down) / (2 * h)
            assert grad[idx].item() == pytest.approx(fd, rel=1e-5, abs=1e-8)


def test_recu_matches_numpy():
    gen = np.random.default_rng(2)
    model = build_mlp((10, 40, 30, 3), seed=1)
    net = TorchBnn(model)
    for tau in (0.6, 0.85, 0.99):
        with torch.no_grad():
            for w in net.binary_weight_params():
                w.copy_(torch.from_numpy(gen.normal(size=w.shape).astype(np.float32)))
        before = [w.detach().double().numpy().copy() for w in net.binary_weight_params()]
        net.recu_(tau)
        for b, w in zip(before, net.binary_weight_params()):
            assert np.array_equal(w.detach().numpy(), recu_clamp(b, tau).astype(np.float32))


def test_config_validation():
    with pytest.raises(BnnError):
        TrainConfig(epochs=0)
    with pytest.raises(BnnError):
        TrainConfig(tau_start=0.5)
    with pytest.raises(BnnError):
        TrainConfig.from_dict({"epochs": 1, "learning_rate": 0.1})
    assert TrainConfig.from_dict({"epochs": 2}).epochs == 2


def test_missing_dataset_is_error():
    with pytest.raises(BnnError):
        train(small_cfg(), None)
    with pytest.raises(BnnError):
        train(small_cfg(), DatasetHandle("x", "train", None, None))


def test_nan_loss_reports_epoch(monkeypatch):
    from aqfpbnn.bnn import train as train_mod

    # a sane first epoch, then an infinite step size
    monkeypatch.setattr(train_mod, "lr_schedule", lambda t, cfg: 0.01 if t < 1 else float("inf"))
    with pytest.raises(TrainingDivergedError) as err:
        train(small_cfg(epochs=3), synthetic(), model=build_mlp((20, 16, 12, 3), seed=0))
    assert err.value.epoch == 1 and "epoch 1" in str(err.value)


def test_training_reproducible_and_loss_decreases():
    data = synthetic(400)
    cfg = small_cfg(epochs=4)
    m1, h1 = train(cfg, data, data, model=build_mlp((20, 16, 12, 3), seed=0))
    m2, h2 = train(cfg, data, data, model=build_mlp((20, 16, 12, 3), seed=0))
    assert h1 == h2
    assert encode(m1) == encode(m2)
    losses = [h["loss"] for h in h1]
    assert losses[-1] < losses[0]
    assert h1[-1]["test_accuracy"] > 0.8


@pytest.mark.skipif(not (MNIST / "train-images-idx3-ubyte").exists(), reason="MNIST files not present")
def test_one_epoch_on_100_mnist_samples_is_bit_identical():
    data = load_mnist(MNIST, "train").subset(100)
    cfg = TrainConfig(epochs=1, batch_size=25, seed=7)
    runs = [train(cfg, data, data) for _ in range(2)]
    assert runs[0][1] == runs[1][1]
    assert encode(runs[0][0]) == encode(runs[1][0])


def test_deterministic_limit_matches_reference_ste_run():
    data = synthetic(300)
    cfg = small_cfg(epochs=2, delta_i_in=1e-9)
    sizes = (20, 24, 16, 3)
    _, limit = train(cfg, data, model=build_mlp(sizes, seed=4, hidden_activation=ACT_SC))
    _, ref = train(cfg, data, model=build_mlp(sizes, seed=4, hidden_activation=ACT_SIGN))
    a = np.concatenate([h["step_losses"] for h in limit])
    b = np.concatenate([h["step_losses"] for h in ref])
    assert len(a) == len(b) > 10
    assert np.max(np.abs(a - b)) <= 1e-6


def test_torch_eval_agrees_with_numpy_software_model():
    data = synthetic(400)
    cfg = small_cfg(epochs=3)
    model, _ = train(cfg, data, model=build_mlp((20, 24, 16, 3), seed=5))
    net = make_net(model, cfg)
    net.eval()
    x = (data.x - model.input_mean) / model.input_std
    with torch.no_grad():
        t = net(torch.from_numpy(x.astype(np.float32))).numpy()
    hw = HardwareConfig(cfg.crossbar_size, cfg.delta_i_in, cfg.bitstream_length, cfg.att_a, cfg.att_b)
    n = evaluate_logits(model, data.x, hw)
    assert np.mean(t.argmax(1) == n.argmax(1)) >= 0.99
    # rows differ only where a float32 neuron lands on the other side of a tie
    assert np.mean(np.all(np.isclose(t, n, atol=1e-3), axis=1)) >= 0.99


def test_checkpoint_round_trip_resumes_identical_next_step_loss():
    data = synthetic(64)
    cfg = small_cfg(epochs=1)
    model = build_mlp((20, 16, 12, 3), seed=6)
    model.input_mean, model.input_std = 0.0, 1.0
    xb = torch.from_numpy(data.x[:32])
    yb = torch.from_numpy(data.y[:32])
    net = make_net(model, cfg)
    opt = make_optimizer(net, cfg)
    train_step(net, opt, xb, yb, 0.05, 0.9, generator_seed=_torch_seed(1, 0))
    trained = net.to_model(model)

    # next step on the live net vs on a net rebuilt from the serialized model
    restored = decode(encode(trained))
    fresh = make_net(restored, cfg)
    live = train_step(net, opt, xb, yb, 0.05, 0.9, generator_seed=_torch_seed(1, 1))
    again = train_step(fresh, make_optimizer(fresh, cfg), xb, yb, 0.05, 0.9,
                       generator_seed=_torch_seed(1, 1))
    assert live == again


def test_per_step_lr_is_the_schedule():
    cfg = small_cfg(epochs=5, warmup_epochs=1.0)
    assert lr_schedule(0.0, cfg) == 0.0
    assert lr_schedule(0.5, cfg) == pytest.approx(0.025)
    assert lr_schedule(1.0, cfg) == pytest.approx(0.05)
    t = 4.0
    assert lr_schedule(t, cfg) == pytest.approx(0.05 * 0.5 * (1 + math.cos(math.pi * 3 / 4)))

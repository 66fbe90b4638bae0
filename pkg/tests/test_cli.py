import json
import struct

import numpy as np
import pytest

from aqfpbnn.bnn.model import BnParams
from aqfpbnn.bnn.train import build_mlp
from aqfpbnn.checkpoint import save_checkpoint
from aqfpbnn.cli import main


def write_idx(root, split, x, y):
    names = {"train": ("train-images-idx3-ubyte", "train-labels-idx1-ubyte"),
             "test": ("t10k-images-idx3-ubyte", "t10k-labels-idx1-ubyte")}[split]
    (root / names[0]).write_bytes(struct.pack(">IIII", 0x803, len(x), 28, 28) + x.astype(np.uint8).tobytes())
    (root / names[1]).write_bytes(struct.pack(">II", 0x801, len(y)) + y.astype(np.uint8).tobytes())


@pytest.fixture(scope="module")
def fake_mnist(tmp_path_factory):
    root = tmp_path_factory.mktemp("mnist")
    gen = np.random.default_rng(0)
    # two coarse prototype digits per class plus noise, so a short run learns something
    protos = gen.integers(0, 256, (10, 28, 28))
    for split, n in (("train", 400), ("test", 1000)):
        y = gen.integers(0, 10, n)
        x = np.clip(protos[y] + gen.normal(0, 40, (n, 28, 28)), 0, 255)
        write_idx(root, split, x, y)
    return root


@pytest.fixture(scope="module")
def checkpoint(tmp_path_factory):
    """Untrained MLP with non-integer folded thresholds (no exact-threshold ties)."""
    gen = np.random.default_rng(1)
    model = build_mlp((784, 64, 48, 10), seed=2)
    for l in model.layers:
        f = l.out_channels
        l.bn = BnParams(gen.uniform(0.5, 1.5, f) * gen.choice([-1, 1], f), gen.normal(0, 0.5, f),
                        gen.normal(0, 0.5, f), gen.uniform(0.5, 2, f))
    model.input_mean, model.input_std = 0.5, 0.3
    path = tmp_path_factory.mktemp("ck") / "m.aqbn"
    save_checkpoint(model, path)
    return path


def run(capsys, *argv):
    rc = main([str(a) for a in argv])
    out = capsys.readouterr()
    return rc, out.out, out.err


def test_cost_size_8(capsys):
    rc, out, _ = run(capsys, "cost", "--size", 8)
    assert rc == 0
    assert out.strip() == "8x8: latency 120 ps, 1152 JJ, 5.76 aJ"
    rc, out, _ = run(capsys, "cost", "--size", 8, "--json")
    m = json.loads(out)["metrics"]
    assert (m["latency_ps"], m["jj_count"], m["energy_aj"]) == (120, 1152, 5.76)


def test_train_zero_epochs_is_error(capsys, fake_mnist, tmp_path):
    rc, out, err = run(capsys, "train", "--epochs", 0, "--seed", 1, "--data-dir", fake_mnist,
                       "--out", tmp_path / "m.aqbn")
    assert rc != 0 and "epochs" in err
    assert not (tmp_path / "m.aqbn").exists()


def test_stochastic_commands_need_seed(capsys, fake_mnist, checkpoint):
    rc, _, err = run(capsys, "simulate", "--checkpoint", checkpoint, "--data-dir", fake_mnist)
    assert rc != 0 and "--seed" in err
    rc, _, err = run(capsys, "train", "--epochs", 1, "--data-dir", fake_mnist)
    assert rc != 0 and "--seed" in err


def test_unknown_flag(capsys):
    rc, _, err = run(capsys, "cost", "--size", 8, "--colour", "red")
    assert rc != 0 and "unrecognized arguments" in err


def test_invalid_config_key(capsys, tmp_path):
    (tmp_path / "run.cfg").write_text("crossbar_size = 8\nspeed = 3\n")
    rc, _, err = run(capsys, "cost", "--size", 8, "--config", tmp_path / "run.cfg")
    assert rc != 0 and "unknown configuration key 'speed'" in err


def test_missing_dataset(capsys, tmp_path, checkpoint):
    rc, _, err = run(capsys, "eval", "--checkpoint", checkpoint, "--data-dir", tmp_path / "nowhere")
    assert rc != 0 and "dataset file not found" in err


def test_missing_checkpoint(capsys, tmp_path, fake_mnist):
    rc, _, err = run(capsys, "eval", "--checkpoint", tmp_path / "none.aqbn", "--data-dir", fake_mnist)
    assert rc != 0 and "checkpoint not found" in err


def test_simulate_matches_eval_in_deterministic_limit(capsys, tmp_path, fake_mnist, checkpoint):
    common = ["--checkpoint", checkpoint, "--data-dir", fake_mnist, "--delta-i-in", "1e-9",
              "--bitstream-length", 1, "--att-b", 1.75]
    assert run(capsys, "eval", *common, "--predictions", tmp_path / "e.txt")[0] == 0
    assert run(capsys, "simulate", *common, "--seed", 3, "--predictions", tmp_path / "s.txt")[0] == 0
    e = (tmp_path / "e.txt").read_text().split()
    s = (tmp_path / "s.txt").read_text().split()
    assert len(e) == 1000 and e == s


def test_simulate_replay_identical(capsys, tmp_path, fake_mnist, checkpoint):
    args = ["simulate", "--checkpoint", checkpoint, "--data-dir", fake_mnist, "--seed", 4,
            "--limit", 200, "--att-b", 1.75]
    run(capsys, *args, "--metrics", tmp_path / "a.json")
    run(capsys, *args, "--metrics", tmp_path / "b.json")
    rec, again = (json.loads((tmp_path / n).read_text()) for n in ("a.json", "b.json"))
    # identical apart from the recorded output path
    rec["config"].pop("metrics"), again["config"].pop("metrics")
    assert rec == again
    assert rec["schema_version"] == 1 and rec["seed"] == 4 and rec["metrics"]["samples"] == 200
    assert rec["config"]["att_b"] == 1.75


def test_train_then_eval_uses_trained_calibration(capsys, tmp_path, fake_mnist):
    ck = tmp_path / "m.aqbn"
    rc, out, _ = run(capsys, "train", "--epochs", 1, "--seed", 0, "--data-dir", fake_mnist,
                     "--out", ck, "--batch-size", 50, "--att-b", 1.75, "--crossbar-size", 8,
                     "--metrics", tmp_path / "t.json")
    assert rc == 0 and ck.exists() and "epoch 0" in out
    hist = json.loads((tmp_path / "t.json").read_text())["metrics"]["history"]
    assert len(hist) == 1 and "test_accuracy" in hist[0]
    rc, out, _ = run(capsys, "eval", "--checkpoint", ck, "--data-dir", fake_mnist, "--json")
    hw = json.loads(out)["metrics"]["hardware"]
    assert hw["att_b"] == 1.75 and hw["crossbar_size"] == 8


def test_fold_bn_example(capsys):
    rc, out, _ = run(capsys, "fold-bn", "--gamma", 2, "--beta", 0.5, "--mu", 0.1, "--sigma", 0.2,
                     "--alpha", 1, "--size", 1, "--att-a", 10, "--json", "--crossbars", 3)
    m = json.loads(out)["metrics"]
    assert m["i_th_uA"] == pytest.approx(0.49994, abs=1e-5) and m["flip"] is False
    assert sum(m["parts_uA"]) == m["i_th_uA"] and len(m["parts_uA"]) == 3


def test_fit_attenuation(capsys, tmp_path):
    (tmp_path / "p.csv").write_text("size,current_uA\n4,35\n16,17.5\n64,8.75\n")
    rc, out, _ = run(capsys, "fit-attenuation", "--points", tmp_path / "p.csv", "--json")
    m = json.loads(out)["metrics"]
    assert m["att_a"] == pytest.approx(70) and m["att_b"] == pytest.approx(0.5)


def test_sweep_csv(capsys, tmp_path):
    rc, out, _ = run(capsys, "sweep", "--sizes", "4,8,16,18,36", "--max-jj", 4000, "--csv", tmp_path / "s.csv")
    assert rc == 0 and out.startswith("3 feasible of 5 points")
    assert len((tmp_path / "s.csv").read_text().splitlines()) == 6

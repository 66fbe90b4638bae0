"""Command-line entry point: ``aqfpbnn <command> [options]``.

Human-readable results go to stdout; ``--metrics PATH`` additionally writes
a versioned JSON record with the resolved configuration and seed.
"""
from __future__ import annotations

import argparse
import json
import os
import sys

import numpy as np

from . import config as cfgmod
from .checkpoint import CheckpointError, atomic_write, load_checkpoint, save_checkpoint
from .data import DatasetError, load_cifar10, load_mnist

METRICS_SCHEMA = 1
HW_KEYS = ("crossbar_size", "delta_i_in", "bitstream_length", "att_a", "att_b")
STOCHASTIC = {"train", "simulate"}


class CliError(Exception):
    pass


def _add(p, *names, **kw):
    kw.setdefault("default", None)
    p.add_argument(*names, **kw)


def _common(p):
    _add(p, "--config", help="key = value configuration file")
    _add(p, "--metrics", help="write JSON metrics to this path")
    _add(p, "--seed", type=int)
    _add(p, "--json", action="store_true", default=False, help="print JSON instead of text")


def _hardware(p):
    _add(p, "--crossbar-size", dest="crossbar_size", type=int)
    _add(p, "--delta-i-in", dest="delta_i_in", type=float, help="gray-zone width (uA)")
    _add(p, "--bitstream-length", dest="bitstream_length", type=int)
    _add(p, "--att-a", dest="att_a", type=float, help="attenuation prefactor A (uA)")
    _add(p, "--att-b", dest="att_b", type=float, help="attenuation exponent B")


def _data(p):
    _add(p, "--data-dir", dest="data_dir")
    _add(p, "--dataset", choices=["mnist", "cifar10"])
    _add(p, "--limit", type=int, help="use only the first N test samples")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="aqfpbnn", description=__doc__.splitlines()[0])
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="randomized-aware training")
    _common(p), _hardware(p), _data(p)
    _add(p, "--epochs", type=int)
    _add(p, "--batch-size", dest="batch_size", type=int)
    _add(p, "--lr0", type=float)
    _add(p, "--train-samples", dest="train_samples", type=int)
    _add(p, "--out", dest="checkpoint", help="checkpoint path to write")

    for name, text in (("eval", "software-model inference"),
                       ("simulate", "hardware-accurate inference")):
        p = sub.add_parser(name, help=text)
        _common(p), _hardware(p), _data(p)
        _add(p, "--checkpoint")
        _add(p, "--predictions", help="write predicted labels, one per line")
        if name == "eval":
            _add(p, "--mode", choices=["expectation", "sample"])

    p = sub.add_parser("sweep", help="AME/cost design-space sweep")
    _common(p)
    _add(p, "--sizes", type=lambda s: [int(v) for v in s.split(",")])
    _add(p, "--delta-i-ins", dest="delta_i_ins", type=lambda s: [float(v) for v in s.split(",")])
    _add(p, "--lengths", type=lambda s: [int(v) for v in s.split(",")])
    _add(p, "--mu", dest="dist_mu", type=float)
    _add(p, "--sigma", dest="dist_sigma", type=float)
    _add(p, "--v-th", dest="v_th", type=float)
    _add(p, "--max-energy", dest="max_energy_aj", type=float)
    _add(p, "--max-jj", dest="max_jj", type=int)
    _add(p, "--objective", help="weights, e.g. ame=1,energy_aj=0.01")
    _add(p, "--att-a", dest="att_a", type=float)
    _add(p, "--att-b", dest="att_b", type=float)
    _add(p, "--csv", help="write the sweep table as CSV")

    p = sub.add_parser("cost", help="crossbar latency / JJ count / energy")
    _common(p)
    _add(p, "--size", dest="crossbar_size", type=int, required=True)
    _add(p, "--clocking", choices=["4-phase", "8-phase", "16-phase"])
    _add(p, "--memory-3phase", dest="memory_3phase", action="store_true", default=None)

    p = sub.add_parser("fit-attenuation", help="fit I1 = A * C_s^-B to measured points")
    _common(p)
    _add(p, "--points", required=True, help="CSV of size,current_uA rows")

    p = sub.add_parser("fold-bn", help="fold BN parameters into a threshold current")
    _common(p)
    for flag in ("gamma", "beta", "mu", "sigma", "alpha"):
        _add(p, f"--{flag}", type=float, required=True)
    _add(p, "--eps", type=float, default=1e-5)
    _add(p, "--size", dest="crossbar_size", type=int)
    _add(p, "--crossbars", type=int, default=1, help="split the threshold over this many crossbars")
    _add(p, "--att-a", dest="att_a", type=float)
    _add(p, "--att-b", dest="att_b", type=float)
    return ap


def _overrides(ns) -> dict:
    names = set(cfgmod.field_names())
    return {k: v for k, v in vars(ns).items() if k in names and v is not None}


def _load_split(cfg, split):
    if cfg.dataset == "mnist":
        return load_mnist(cfg.data_dir, split)
    if split == "train":
        files = [os.path.join(cfg.data_dir, f"data_batch_{i}.bin") for i in range(1, 6)]
        return load_cifar10(files, "train")
    mean = load_cifar10([os.path.join(cfg.data_dir, f"data_batch_{i}.bin") for i in range(1, 6)]).meta["channel_mean"]
    return load_cifar10(os.path.join(cfg.data_dir, "test_batch.bin"), "test", mean)


def _hw(cfg):
    from .inference import HardwareConfig
    return HardwareConfig(cfg.crossbar_size, cfg.delta_i_in, cfg.bitstream_length, cfg.att_a, cfg.att_b)


def _emit(ns, cfg, command, metrics, lines):
    record = {"schema_version": METRICS_SCHEMA, "command": command, "seed": cfg.seed,
              "config": cfg.as_dict(), "metrics": metrics}
    text = json.dumps(record, sort_keys=True, indent=2)
    if ns.json:
        print(text)
    else:
        for line in lines:
            print(line)
    path = ns.metrics or cfg.metrics
    if path:
        atomic_write(path, (text + "\n").encode())


def cmd_train(ns, cfg, explicit):
    from .bnn.train import TrainConfig, build_mlp, build_vgg_small, train

    if cfg.epochs < 1:
        raise CliError(f"--epochs must be >= 1 (got {cfg.epochs}); nothing would be trained")
    tc = TrainConfig(epochs=cfg.epochs, batch_size=cfg.batch_size, lr0=cfg.lr0,
                     warmup_epochs=cfg.warmup_epochs, tau_start=cfg.tau_start, tau_end=cfg.tau_end,
                     crossbar_size=cfg.crossbar_size, delta_i_in=cfg.delta_i_in,
                     bitstream_length=cfg.bitstream_length, seed=cfg.seed, dataset=cfg.dataset,
                     att_a=cfg.att_a, att_b=cfg.att_b, momentum=cfg.momentum,
                     weight_decay=cfg.weight_decay, recu=cfg.recu,
                     expectation_forward=cfg.expectation_forward, shift_augment=cfg.shift_augment,
                     train_samples=cfg.train_samples)
    train_set = _load_split(cfg, "train")
    test_set = _load_split(cfg, "test")
    if cfg.limit:
        test_set = test_set.subset(cfg.limit)
    if cfg.dataset == "mnist":
        model = build_mlp(seed=cfg.seed, hidden_activation=cfg.hidden_activation)
    else:
        model = build_vgg_small(seed=cfg.seed, hidden_activation=cfg.hidden_activation)
    lines = []

    def log(rec):
        line = f"epoch {rec['epoch']}: loss {rec['loss']:.6f}"
        if "test_accuracy" in rec:
            line += f", software accuracy {rec['test_accuracy']:.4f}"
        print(line, file=sys.stderr if ns.json else sys.stdout, flush=True)

    model, history = train(tc, train_set, test_set, model, log)
    model.meta["data"] = {"train": train_set.meta, "test": test_set.meta}
    save_checkpoint(model, cfg.checkpoint)
    lines.append(f"checkpoint written to {cfg.checkpoint}")
    metrics = {"history": [{k: v for k, v in h.items() if k != "step_losses"} for h in history],
               "final_test_accuracy": history[-1].get("test_accuracy")}
    _emit(ns, cfg, "train", metrics, lines)


def _inference(ns, cfg, explicit, simulate):
    from .inference import accuracy, evaluate_logits, simulate_logits

    try:
        model = load_checkpoint(cfg.checkpoint)
    except FileNotFoundError:
        raise CliError(f"checkpoint not found: {cfg.checkpoint} (train one with `aqfpbnn train`)") from None
    trained = model.meta.get("train_config", {})
    for k in HW_KEYS:  # fall back to the calibration the model was trained with
        if k not in explicit and k in trained:
            setattr(cfg, k, trained[k])
    test = _load_split(cfg, "test")
    if cfg.limit:
        test = test.subset(cfg.limit)
    hw = _hw(cfg)
    if simulate:
        logits = simulate_logits(model, test.x, hw, cfg.seed)
    else:
        if cfg.mode == "sample" and cfg.seed is None:
            raise CliError("--seed is required for --mode sample")
        logits = evaluate_logits(model, test.x, hw, cfg.mode, cfg.seed)
    pred = np.argmax(logits, axis=1)
    acc = accuracy(logits, test.y)
    if ns.predictions:
        atomic_write(ns.predictions, "".join(f"{int(v)}\n" for v in pred).encode())
    name = "simulate" if simulate else "eval"
    metrics = {"accuracy": acc, "samples": int(len(test.y)), "hardware": {k: getattr(cfg, k) for k in HW_KEYS}}
    _emit(ns, cfg, name, metrics, [f"{name}: accuracy {acc:.4f} on {len(test.y)} samples "
                                   f"(C_s={cfg.crossbar_size}, dI_in={cfg.delta_i_in}, L={cfg.bitstream_length})"])


def cmd_sweep(ns, cfg, explicit):
    from .device import AttenuationModel
    from .hardware import sweep

    res = sweep(cfg.sizes, cfg.delta_i_ins, cfg.lengths, cfg.dist_mu, cfg.dist_sigma, cfg.v_th,
                AttenuationModel(cfg.att_a, cfg.att_b), cfg.max_energy_aj, cfg.max_jj,
                cfgmod.parse_objective(cfg.objective), cfg.clocking)
    if ns.csv:
        atomic_write(ns.csv, res.to_csv().encode())
    rows = [e.row() for e in res.entries]
    lines = [f"{len(res.entries)} feasible of {len(res.entries) + len(res.rejected)} points"]
    lines += [f"  C_s={r['c_s']:<4} dI_in={r['delta_i_in']:<6g} L={r['bitstream_length']:<4} "
              f"AME={r['ame']:.6g} JJ={r['jj_count']} E={r['energy_aj']:g} aJ" for r in rows]
    _emit(ns, cfg, "sweep", {"feasible": rows, "rejected": [e.row() for e in res.rejected]}, lines)


def cmd_cost(ns, cfg, explicit):
    from .hardware import crossbar_cost

    c = crossbar_cost(cfg.crossbar_size, cfg.clocking, cfg.memory_3phase)
    metrics = {"crossbar_size": cfg.crossbar_size, "latency_ps": c.latency_ps,
               "jj_count": c.jj_count, "energy_aj": c.energy_aj}
    _emit(ns, cfg, "cost", metrics, [f"{cfg.crossbar_size}x{cfg.crossbar_size}: latency {c.latency_ps} ps, "
                                     f"{c.jj_count} JJ, {c.energy_aj:g} aJ"])


def cmd_fit(ns, cfg, explicit):
    from .device import fit_attenuation, read_fit_points

    att = fit_attenuation(read_fit_points(ns.points))
    _emit(ns, cfg, "fit-attenuation", {"att_a": att.a, "att_b": att.b},
          [f"A = {att.a:.6g} uA, B = {att.b:.6g}"])


def cmd_fold(ns, cfg, explicit):
    from .bnn.model import BnParams
    from .bnn.ops import distribute_threshold, fold_bn
    from .device import AttenuationModel

    bn = BnParams(np.array([ns.gamma]), np.array([ns.beta]), np.array([ns.mu]),
                  np.array([ns.sigma]), ns.eps)
    i_th, flip = fold_bn(bn, np.array([ns.alpha]), cfg.crossbar_size, AttenuationModel(cfg.att_a, cfg.att_b))
    parts = distribute_threshold(float(i_th[0]), ns.crossbars)
    metrics = {"i_th_uA": float(i_th[0]), "flip": bool(flip[0]), "parts_uA": parts}
    _emit(ns, cfg, "fold-bn", metrics, [f"I_th = {float(i_th[0]):.9g} uA, flip = {bool(flip[0])}",
                                        "per-crossbar: " + ", ".join(f"{v:.9g}" for v in parts)])


COMMANDS = {"train": cmd_train, "eval": lambda n, c, e: _inference(n, c, e, False),
            "simulate": lambda n, c, e: _inference(n, c, e, True), "sweep": cmd_sweep,
            "cost": cmd_cost, "fit-attenuation": cmd_fit, "fold-bn": cmd_fold}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        ns = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        file_values = cfgmod.load_config(ns.config) if ns.config else {}
        cfg, explicit = cfgmod.resolve(file_values, _overrides(ns))
        if ns.command in STOCHASTIC and cfg.seed is None:
            raise CliError(f"`{ns.command}` is stochastic: pass --seed (or set seed in the config)")
        COMMANDS[ns.command](ns, cfg, explicit)
    except (CliError, cfgmod.ConfigError, DatasetError, CheckpointError, ValueError,
            FileNotFoundError) as exc:
        print(f"aqfpbnn {ns.command}: error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())

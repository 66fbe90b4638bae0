import struct

import numpy as np
import pytest

from aqfpbnn.bnn.model import BnParams
from aqfpbnn.bnn.train import build_mlp, build_vgg_small
from aqfpbnn.checkpoint import (CheckpointError, CheckpointVersionError, decode, encode,
                                load_checkpoint, save_checkpoint)


def populated(model, seed=0):
    gen = np.random.default_rng(seed)
    for l in model.layers:
        l.weight = gen.normal(size=l.weight.shape)
        l.alpha = gen.uniform(0.1, 1, l.alpha.shape)
        f = l.out_channels
        l.bn = BnParams(gen.normal(size=f), gen.normal(size=f), gen.normal(size=f),
                        gen.uniform(0.1, 2, f), 1e-5)
    model.meta["note"] = "x"
    return model


@pytest.mark.parametrize("build", [lambda: build_mlp((12, 9, 7, 3)), lambda: build_vgg_small(4)])
def test_round_trip_bit_exact(tmp_path, build):
    m = populated(build())
    p = tmp_path / "m.aqbn"
    save_checkpoint(m, p)
    r = load_checkpoint(p)
    for a, b in zip(m.layers, r.layers):
        assert a.weight.tobytes() == b.weight.tobytes()
        assert a.alpha.tobytes() == b.alpha.tobytes()
        for k in ("gamma", "beta", "mu", "sigma"):
            assert getattr(a.bn, k).tobytes() == getattr(b.bn, k).tobytes()
        assert a.bn.eps == b.bn.eps
        assert (a.bias is None) == (b.bias is None)
        assert (a.kind, a.binary, a.activation, a.pool, a.padding) == (b.kind, b.binary, b.activation, b.pool, b.padding)
    assert r.meta == m.meta and tuple(r.input_shape) == tuple(m.input_shape)
    # save -> load -> save is a fixed point
    save_checkpoint(r, tmp_path / "again.aqbn")
    assert (tmp_path / "again.aqbn").read_bytes() == p.read_bytes()


def test_header_prefix_layout():
    raw = encode(build_mlp((4, 3, 3, 2)))
    magic, version, hlen = struct.unpack_from("<4sII", raw)
    assert magic == b"AQBN" and version == 1
    assert raw[12:12 + hlen].startswith(b"{")


def test_unknown_version_refused():
    raw = bytearray(encode(build_mlp((4, 3, 3, 2))))
    raw[4:8] = struct.pack("<I", 7)
    with pytest.raises(CheckpointVersionError):
        decode(bytes(raw))


def test_corruption_detected():
    raw = encode(build_mlp((4, 3, 3, 2)))
    with pytest.raises(CheckpointError):
        decode(b"NOPE" + raw[4:])
    with pytest.raises(CheckpointError):
        decode(raw[:12] + b"\xff" + raw[13:])
    with pytest.raises(CheckpointError):
        decode(raw[:-8])
    with pytest.raises(CheckpointError):
        decode(raw[:5])


def test_no_partial_file_left_on_failure(tmp_path):
    m = build_mlp((4, 3, 3, 2))
    m.meta["bad"] = float("nan")  # not JSON-encodable with allow_nan=False
    with pytest.raises(ValueError):
        save_checkpoint(m, tmp_path / "m.aqbn")
    assert list(tmp_path.iterdir()) == []

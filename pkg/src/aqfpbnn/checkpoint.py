"""Checkpoint container.

Layout (all integers little-endian)::

    b"AQBN"            4-byte magic
    u32 version        currently 1
    u32 header_len
    header             UTF-8 JSON, keys sorted, no whitespace
    payload            raw little-endian float64 arrays, back to back

The header lists every layer's kind, flags and geometry plus, for each array,
its name, shape and byte offset into the payload. Writing the same model
twice gives identical bytes, so save -> load -> save is a fixed point.
"""
from __future__ import annotations

import json
import os
import struct
import tempfile

import numpy as np

from .bnn.model import BinLayer, BnnModel, BnParams

MAGIC = b"AQBN"
VERSION = 1
_PREFIX = struct.Struct("<4sII")


class CheckpointError(ValueError):
    pass


class CheckpointVersionError(CheckpointError):
    pass


def _json(obj) -> bytes:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), allow_nan=False).encode()


def encode(model: BnnModel) -> bytes:
    arrays = []
    offset = 0

    def put(name, arr):
        nonlocal offset
        a = np.ascontiguousarray(np.asarray(arr, dtype="<f8"))
        arrays.append(a)
        entry = {"name": name, "shape": list(a.shape), "offset": offset}
        offset += a.nbytes
        return entry

    layers = []
    for i, l in enumerate(model.layers):
        d = {"kind": l.kind, "binary": l.binary, "activation": l.activation,
             "stride": l.stride, "padding": l.padding, "pool": l.pool,
             "weight": put(f"{i}.weight", l.weight), "alpha": put(f"{i}.alpha", l.alpha),
             "bias": None if l.bias is None else put(f"{i}.bias", l.bias), "bn": None}
        if l.bn is not None:
            d["bn"] = {"eps": l.bn.eps, **{k: put(f"{i}.bn.{k}", getattr(l.bn, k))
                                          for k in ("gamma", "beta", "mu", "sigma")}}
        layers.append(d)
    header = {
        "layers": layers,
        "input_shape": list(model.input_shape),
        "input_mean": put("input_mean", model.input_mean),
        "input_std": put("input_std", model.input_std),
        "meta": model.meta,
        "payload_bytes": offset,
    }
    hb = _json(header)
    return _PREFIX.pack(MAGIC, VERSION, len(hb)) + hb + b"".join(a.tobytes() for a in arrays)


def decode(raw: bytes) -> BnnModel:
    if len(raw) < _PREFIX.size:
        raise CheckpointError("checkpoint too short for its header")
    magic, version, hlen = _PREFIX.unpack_from(raw)
    if magic != MAGIC:
        raise CheckpointError(f"not a checkpoint (magic {magic!r})")
    if version != VERSION:
        raise CheckpointVersionError(f"unsupported checkpoint version {version} (expected {VERSION})")
    start = _PREFIX.size + hlen
    try:
        header = json.loads(raw[_PREFIX.size:start].decode())
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"corrupted checkpoint header: {exc}") from None
    payload = raw[start:]
    if len(payload) != header["payload_bytes"]:
        raise CheckpointError(
            f"payload is {len(payload)} bytes, header declares {header['payload_bytes']}")

    def get(entry):
        n = int(np.prod(entry["shape"])) * 8
        buf = payload[entry["offset"]: entry["offset"] + n]
        return np.frombuffer(buf, dtype="<f8").reshape(entry["shape"]).astype(np.float64)

    layers = []
    for d in header["layers"]:
        bn = None
        if d["bn"] is not None:
            b = d["bn"]
            bn = BnParams(get(b["gamma"]), get(b["beta"]), get(b["mu"]), get(b["sigma"]), b["eps"])
        layers.append(BinLayer(d["kind"], get(d["weight"]), get(d["alpha"]), bn, d["binary"],
                               d["activation"], None if d["bias"] is None else get(d["bias"]),
                               d["stride"], d["padding"], d["pool"]))
    mean, std = get(header["input_mean"]), get(header["input_std"])
    return BnnModel(layers, tuple(header["input_shape"]),
                    float(mean) if mean.ndim == 0 else mean,
                    float(std) if std.ndim == 0 else std, header["meta"])


def atomic_write(path, data: bytes):
    """Write via a temporary file in the same directory, then rename."""
    path = os.fspath(path)
    d = os.path.dirname(os.path.abspath(path))
    os.makedirs(d, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=d, prefix=".tmp-")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def save_checkpoint(model: BnnModel, path):
    atomic_write(path, encode(model))


def load_checkpoint(path) -> BnnModel:
    with open(path, "rb") as fh:
        return decode(fh.read())

"""Policy checkpoint serialization.

Layout: a UTF-8 JSON header describing the network configuration and an
ordered parameter manifest (name, shape, byte offset), a single zero
byte as separator, then every parameter tensor concatenated as
little-endian float32. The format is platform independent and loadable
without executing any stored code.
"""
from __future__ import annotations

import dataclasses
import json

import numpy as np

from .net import ActorCritic, NetConfig

MAGIC = "lidarflock-policy"
VERSION = 1
_BLOB_DTYPE = np.dtype("<f4")


class CheckpointError(ValueError):
    pass


def save_policy(model: ActorCritic, path, meta=None):
    """Write the model's parameters and configuration to `path`."""
    params = model.params()
    layers = []
    offset = 0
    for p in params:
        nbytes = p.v.size * _BLOB_DTYPE.itemsize
        layers.append({"name": p.name, "shape": list(p.v.shape),
                       "offset": offset, "nbytes": nbytes})
        offset += nbytes
    header = {
        "format": MAGIC,
        "version": VERSION,
        "dtype": str(_BLOB_DTYPE.str),
        "config": dataclasses.asdict(model.config),
        "layers": layers,
        "meta": dict(meta) if meta else {},
    }
    blob = np.concatenate([p.v.astype(np.float64).ravel() for p in params])
    with open(path, "wb") as f:
        f.write(json.dumps(header, sort_keys=True).encode("utf-8"))
        f.write(b"\0")
        f.write(blob.astype(_BLOB_DTYPE).tobytes())


def read_header(path):
    """Return the parsed JSON header without loading the blob."""
    with open(path, "rb") as f:
        raw = f.read()
    sep = raw.find(b"\0")
    if sep < 0:
        raise CheckpointError("missing header separator")
    try:
        header = json.loads(raw[:sep].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"unreadable header: {exc}") from exc
    if header.get("format") != MAGIC:
        raise CheckpointError("not a policy checkpoint")
    if header.get("version") != VERSION:
        raise CheckpointError(f"unsupported version {header.get('version')!r}")
    return header, raw[sep + 1:]


def load_policy(path):
    """Rebuild an ActorCritic from a checkpoint. Returns (model, meta).

    Raises CheckpointError on malformed headers or when the blob length
    disagrees with the manifest.
    """
    header, blob = read_header(path)
    cfg_fields = {f.name for f in dataclasses.fields(NetConfig)}
    cfg_dict = dict(header["config"])
    unknown = set(cfg_dict) - cfg_fields
    if unknown:
        raise CheckpointError(f"unknown config fields: {sorted(unknown)}")
    for key in ("conv_channels", "conv_strides"):
        if key in cfg_dict:
            cfg_dict[key] = tuple(cfg_dict[key])
    config = NetConfig(**cfg_dict)
    model = ActorCritic(config, seed=0)

    expected = sum(layer["nbytes"] for layer in header["layers"])
    if len(blob) != expected:
        raise CheckpointError(
            f"blob holds {len(blob)} bytes, manifest expects {expected}")

    params = {p.name: p for p in model.params()}
    if set(params) != {layer["name"] for layer in header["layers"]}:
        raise CheckpointError("manifest names do not match this architecture")
    for layer in header["layers"]:
        p = params[layer["name"]]
        shape = tuple(layer["shape"])
        if shape != p.v.shape:
            raise CheckpointError(
                f"{layer['name']}: stored shape {shape} != model {p.v.shape}")
        start, nbytes = layer["offset"], layer["nbytes"]
        arr = np.frombuffer(blob[start:start + nbytes], dtype=_BLOB_DTYPE)
        if arr.size != p.v.size:
            raise CheckpointError(f"{layer['name']}: size mismatch")
        p.v = arr.reshape(shape).astype(config.np_dtype)
    return model, header.get("meta", {})

"""Binary model container.

Layout, all integers and floats little-endian::

    magic        8 bytes   b"EXSNNMDL"
    version      u32       1
    n_layers     u32
    per layer:
      kind       u8        0 dense, 1 conv2d, 2 pool2d
      in_ndim    u8, in_shape  u32 * in_ndim
      out_ndim   u8, out_shape u32 * out_ndim
      if not pool2d:
        tau_s    f64
        theta    f64
        max_spikes u32
        init_a   f64
        init_b   f64
    per weighted layer, in layer order:
      ndim       u8, shape u32 * ndim
      values     f64 * prod(shape), C order
    config_len   u32
    config       config_len bytes, UTF-8 JSON (may be empty)
"""
from __future__ import annotations

import json
import struct
from typing import Optional

import numpy as np

from .core import LayerSpec, NetworkSpec, NeuronParams

MAGIC = b"EXSNNMDL"
VERSION = 1
KINDS = ("dense", "conv2d", "pool2d")


class ModelFormatError(ValueError):
    pass


def _shape(shape) -> bytes:
    return struct.pack("<B", len(shape)) + struct.pack(f"<{len(shape)}I", *shape)


def dumps(net: NetworkSpec, config: Optional[dict] = None) -> bytes:
    out = [MAGIC, struct.pack("<II", VERSION, len(net.layers))]
    for layer in net.layers:
        out.append(struct.pack("<B", KINDS.index(layer.kind)))
        out.append(_shape(layer.in_shape))
        out.append(_shape(layer.out_shape))
        if layer.kind != "pool2d":
            p = layer.params
            a, b = layer.init if layer.init is not None else (0.0, 0.0)
            out.append(struct.pack("<ddIdd", p.tau_s, p.theta, p.max_spikes, a, b))
    for layer in net.layers:
        if layer.has_weights:
            w = np.ascontiguousarray(layer.weights, dtype="<f8")
            out.append(_shape(w.shape))
            out.append(w.tobytes(order="C"))
    blob = json.dumps(config, sort_keys=True).encode() if config is not None else b""
    out.append(struct.pack("<I", len(blob)))
    out.append(blob)
    return b"".join(out)


class _Reader:
    def __init__(self, raw: bytes):
        self.raw = raw
        self.pos = 0

    def take(self, fmt: str):
        size = struct.calcsize(fmt)
        if self.pos + size > len(self.raw):
            raise ModelFormatError("model file truncated")
        vals = struct.unpack_from(fmt, self.raw, self.pos)
        self.pos += size
        return vals

    def shape(self) -> tuple:
        (n,) = self.take("<B")
        return self.take(f"<{n}I")


def loads(raw: bytes):
    """Return ``(NetworkSpec, config dict or None)``."""
    if raw[:8] != MAGIC:
        raise ModelFormatError("not a model file (bad magic)")
    r = _Reader(raw)
    r.pos = 8
    version, n_layers = r.take("<II")
    if version != VERSION:
        raise ModelFormatError(f"unsupported model version {version}")
    headers = []
    for _ in range(n_layers):
        (kind,) = r.take("<B")
        if kind >= len(KINDS):
            raise ModelFormatError(f"unknown layer kind code {kind}")
        in_shape, out_shape = r.shape(), r.shape()
        params = init = None
        if KINDS[kind] != "pool2d":
            tau_s, theta, cap, a, b = r.take("<ddIdd")
            params = NeuronParams(tau_s, theta, cap)
            init = (a, b) if a < b else None
        headers.append((KINDS[kind], in_shape, out_shape, params, init))
    layers = []
    for kind, in_shape, out_shape, params, init in headers:
        weights = None
        if kind != "pool2d":
            shape = r.shape()
            n = int(np.prod(shape))
            if r.pos + 8 * n > len(raw):
                raise ModelFormatError("model file truncated")
            weights = np.frombuffer(raw, dtype="<f8", count=n, offset=r.pos).reshape(shape).astype(np.float64)
            r.pos += 8 * n
        layers.append(LayerSpec(kind, in_shape, out_shape, params, init, weights))
    (n_cfg,) = r.take("<I")
    blob = raw[r.pos:r.pos + n_cfg]
    if len(blob) != n_cfg:
        raise ModelFormatError("model file truncated")
    config = json.loads(blob) if n_cfg else None
    return NetworkSpec(tuple(layers)), config


def save(path, net: NetworkSpec, config: Optional[dict] = None):
    with open(path, "wb") as f:
        f.write(dumps(net, config))


def load(path):
    with open(path, "rb") as f:
        return loads(f.read())

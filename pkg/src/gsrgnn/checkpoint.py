"""Parameter checkpoints.

Layout (all little-endian)::

    b"GSRP"  u32 version  u64 block_count
    block_count x { u64 width  w: width*width f64  b: width f64 }
    b"GSRH"  u8 model  u8 use_weight  u8 use_bias
             u64 layers  u64 groups  u64 d_in  u64 hidden
             layers x u64 k (0 for the baseline)
             encoder w, b  head w, b  (f64)
    u32 crc32 of every preceding byte

Blocks are stored layer by layer, group by group. The header section and
the checksum make a checkpoint self-describing and tamper-evident.
"""

from __future__ import annotations

import struct
import zlib
from pathlib import Path

import numpy as np

from . import tensor as T
from .blocks import BlockParams
from .errors import FormatError
from .gsrnet import GsrLayer, GsrNet
from .linear import Linear
from .revnet import RevLayer, RevNet

MAGIC = b"GSRP"
HEAD_MAGIC = b"GSRH"
VERSION = 1
_MODELS = {0: "baseline", 1: "gsr"}


def _f64(a: np.ndarray) -> bytes:
    return np.ascontiguousarray(a, dtype="<f8").tobytes()


def dumps(net) -> bytes:
    model = 1 if isinstance(net, GsrNet) else 0
    blocks = [p for layer in net.layers for p in layer.blocks]
    parts = [MAGIC, struct.pack("<IQ", VERSION, len(blocks))]
    for p in blocks:
        parts += [struct.pack("<Q", p.width), _f64(p.w), _f64(p.b)]
    flags = blocks[0] if blocks else BlockParams.identity(1)
    parts += [HEAD_MAGIC, struct.pack("<BBB", model, flags.use_weight, flags.use_bias),
              struct.pack("<QQQQ", len(net.layers), net.groups, net.encoder.d_in, net.hidden)]
    ks = [layer.k if model else 0 for layer in net.layers]
    parts.append(np.asarray(ks, "<u8").tobytes())
    parts += [_f64(net.encoder.w), _f64(net.encoder.b), _f64(net.head.w), _f64(net.head.b)]
    body = b"".join(parts)
    return body + struct.pack("<I", zlib.crc32(body))


def save(path, net) -> None:
    Path(path).write_bytes(dumps(net))


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, nbytes: int, what: str) -> bytes:
        if self.pos + nbytes > len(self.data):
            raise FormatError(f"checkpoint truncated reading {what}", self.pos)
        out = self.data[self.pos:self.pos + nbytes]
        self.pos += nbytes
        return out

    def unpack(self, fmt: str, what: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt), what))

    def array(self, shape, what: str, dtype=None) -> np.ndarray:
        count = int(np.prod(shape))
        raw = np.frombuffer(self.take(8 * count, what), "<f8").reshape(shape)
        return raw.astype(dtype or T.get_dtype())


def loads(data: bytes):
    if len(data) < 4 or data[:4] != MAGIC:
        raise FormatError(f"bad checkpoint magic {data[:4]!r}", 0)
    if len(data) < 8:
        raise FormatError("checkpoint truncated in header", len(data))
    body, trailer = data[:-4], data[-4:]
    r = _Reader(data)
    r.pos = 4
    (version,) = r.unpack("<I", "version")
    if version != VERSION:
        if version.to_bytes(4, "little") == VERSION.to_bytes(4, "big"):
            raise FormatError("endianness marker mismatch in checkpoint version", 4)
        raise FormatError(f"unsupported checkpoint version {version}", 4)
    (crc,) = struct.unpack("<I", trailer)
    if crc != zlib.crc32(body):
        raise FormatError("checkpoint checksum mismatch (file corrupted)", len(body))
    (count,) = r.unpack("<Q", "block count")
    raw_blocks = []
    for i in range(count):
        (width,) = r.unpack("<Q", f"block {i} width")
        if width == 0 or width > 1 << 16:
            raise FormatError(f"implausible width {width} for block {i}", r.pos - 8)
        w = r.array((width, width), f"block {i} weights")
        b = r.array((width,), f"block {i} bias")
        raw_blocks.append((w, b))
    if r.take(4, "header magic") != HEAD_MAGIC:
        raise FormatError("missing GSRH header section", r.pos - 4)
    model, use_weight, use_bias = r.unpack("<BBB", "model flags")
    layers, groups, d_in, hidden = r.unpack("<QQQQ", "architecture")
    ks = np.frombuffer(r.take(8 * layers, "per-layer k"), "<u8").astype(int).tolist()
    enc = Linear(r.array((d_in, hidden), "encoder weights"), r.array((hidden,), "encoder bias"))
    head = Linear(r.array((hidden, 1), "head weights"), r.array((1,), "head bias"))
    if r.pos != len(body):
        raise FormatError(f"{len(body) - r.pos} unexpected bytes before checksum", r.pos)
    if model not in _MODELS or layers * groups != count:
        raise FormatError(f"header inconsistent: model={model}, {layers}x{groups} != {count} blocks", 4)
    params = [BlockParams(w, b, bool(use_weight), bool(use_bias)) for w, b in raw_blocks]
    per_layer = [params[l * groups:(l + 1) * groups] for l in range(layers)]
    if _MODELS[model] == "gsr":
        return GsrNet(enc, [GsrLayer(bl, k) for bl, k in zip(per_layer, ks)], head)
    return RevNet(enc, [RevLayer(bl) for bl in per_layer], head, groups)


def load(path):
    return loads(Path(path).read_bytes())

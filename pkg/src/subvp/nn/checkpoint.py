"""Binary model checkpoints.

Layout, little-endian: ``b"VSPM"``, u32 format version, u32 descriptor
length, a UTF-8 JSON descriptor (``config`` plus ``layers``: a list of
``{"name", "shape"}`` in declaration order), then every parameter tensor as
float32 in that same order.
"""

import json
import struct
from pathlib import Path

import numpy as np

from ..errors import ParseError

MAGIC = b"VSPM"
VERSION = 1


def dumps(params, config) -> bytes:
    layers = [{"name": k, "shape": list(v.shape)} for k, v in params.items()]
    desc = json.dumps({"config": config, "layers": layers}, sort_keys=True).encode("utf-8")
    parts = [MAGIC, struct.pack("<II", VERSION, len(desc)), desc]
    parts += [np.ascontiguousarray(v, dtype="<f4").tobytes() for v in params.values()]
    return b"".join(parts)


def loads(data: bytes):
    """Returns ``(params, config)``; params keep declaration order."""
    if data[:4] != MAGIC:
        raise ParseError("not a VSPM checkpoint")
    if len(data) < 12:
        raise ParseError("truncated checkpoint header")
    version, n = struct.unpack("<II", data[4:12])
    if version != VERSION:
        raise ParseError(f"unsupported checkpoint version {version}")
    try:
        desc = json.loads(data[12:12 + n].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ParseError(f"bad checkpoint descriptor: {exc}") from None
    offset = 12 + n
    params = {}
    for layer in desc["layers"]:
        shape = tuple(layer["shape"])
        count = int(np.prod(shape, dtype=np.int64))
        end = offset + 4 * count
        if end > len(data):
            raise ParseError(f"checkpoint truncated inside {layer['name']!r}")
        params[layer["name"]] = np.frombuffer(data[offset:end], dtype="<f4").reshape(shape).astype(np.float32)
        offset = end
    if offset != len(data):
        raise ParseError(f"{len(data) - offset} trailing bytes after the last tensor")
    return params, desc["config"]


def save(path, params, config):
    Path(path).write_bytes(dumps(params, config))


def load(path):
    return loads(Path(path).read_bytes())

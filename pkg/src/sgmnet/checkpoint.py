"""Binary checkpoint format.

Layout::

    b"SGMN"                       magic
    uint32 LE                     format version
    uint64 LE                     manifest byte length
    manifest                      UTF-8 JSON
    tensor bytes                  raw little-endian, in manifest order

The manifest lists ``{"name", "shape", "dtype", "role"}`` per tensor, where
``role`` is ``"param"`` or ``"momentum"``, plus ``seed``, ``dtype``, an
optional model ``config`` and free-form ``meta``.
"""
from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .nn import ParamStore

MAGIC = b"SGMN"
VERSION = 1


class CheckpointError(ValueError):
    pass


def dumps(params: ParamStore, config: dict | None = None, meta: dict | None = None) -> bytes:
    entries = []
    blobs = []
    for name in params.names():
        for role, arr in (("param", params[name].data), ("momentum", params.momentum(name))):
            le = arr.astype(arr.dtype.newbyteorder("<"), copy=False)
            entries.append(
                {"name": name, "shape": list(arr.shape), "dtype": arr.dtype.name, "role": role}
            )
            blobs.append(np.ascontiguousarray(le).tobytes())
    manifest = {
        "seed": params.seed,
        "dtype": params.dtype.name,
        "tensors": entries,
    }
    if config is not None:
        manifest["config"] = config
    if meta is not None:
        manifest["meta"] = meta
    head = json.dumps(manifest, sort_keys=True).encode("utf-8")
    return MAGIC + struct.pack("<IQ", VERSION, len(head)) + head + b"".join(blobs)


def loads(buf: bytes) -> tuple[ParamStore, dict]:
    """Parse checkpoint bytes into a :class:`ParamStore` and the manifest dict."""
    if buf[:4] != MAGIC:
        raise CheckpointError("not an SGMN checkpoint (bad magic bytes)")
    if len(buf) < 16:
        raise CheckpointError("truncated checkpoint header")
    try:
        return _parse(buf)
    except (KeyError, TypeError) as exc:
        raise CheckpointError(f"malformed checkpoint manifest ({exc!r})") from None


def _parse(buf: bytes) -> tuple[ParamStore, dict]:
    version, hlen = struct.unpack_from("<IQ", buf, 4)
    if version != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    try:
        manifest = json.loads(buf[16 : 16 + hlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"corrupt checkpoint manifest: {exc}") from None
    params = ParamStore(seed=manifest["seed"], dtype=manifest["dtype"])
    offset = 16 + hlen
    pending: dict[str, np.ndarray] = {}
    for e in manifest["tensors"]:
        dt = np.dtype(e["dtype"]).newbyteorder("<")
        count = int(np.prod(e["shape"], dtype=np.int64))
        nbytes = count * dt.itemsize
        if offset + nbytes > len(buf):
            raise CheckpointError(f"checkpoint truncated inside tensor {e['name']!r}")
        arr = np.frombuffer(buf, dtype=dt, count=count, offset=offset).reshape(e["shape"])
        arr = arr.astype(dt.newbyteorder("="))
        offset += nbytes
        if e["role"] == "param":
            pending[e["name"]] = arr
        else:
            params.add(e["name"], pending.pop(e["name"]), momentum=arr)
    if offset != len(buf):
        raise CheckpointError(f"{len(buf) - offset} trailing bytes after tensor data")
    if pending:
        raise CheckpointError(f"parameters without momentum entries: {sorted(pending)}")
    return params, manifest


def save(path, params: ParamStore, config: dict | None = None, meta: dict | None = None) -> None:
    Path(path).write_bytes(dumps(params, config, meta))


def load(path) -> tuple[ParamStore, dict]:
    return loads(Path(path).read_bytes())

"""Versioned binary checkpoint container.

Layout (all integers little-endian)::

    8 bytes   magic b"PCLRCKPT"
    4 bytes   uint32 format version
    8 bytes   uint64 header length H
    H bytes   UTF-8 JSON header: model config, training counters and an array
              directory of {name, shape, offset, count}; offsets are bytes from
              the start of the payload
    rest      payload of little-endian float32 values

Trainable parameters store their Adam moments as ``<name>:m`` and ``<name>:v``.
"""
from __future__ import annotations

import json
import os
import struct
from pathlib import Path

import numpy as np

from .autodiff.tensor import Parameter
from .encoder import EncoderConfig, ModelState, parameter_shapes
from .errors import CheckpointError, PayloadLengthError, ShapeMismatchError, VersionError

MAGIC = b"PCLRCKPT"
VERSION = 1
_PREFIX = struct.Struct("<8sIQ")
_F32 = np.dtype("<f4")


def _arrays(model: ModelState):
    for name, p in model.params.items():
        yield name, p.data
        if p.trainable:
            yield f"{name}:m", p.m
            yield f"{name}:v", p.v


def save_checkpoint(model: ModelState, path) -> Path:
    path = Path(path)
    directory, chunks, offset = [], [], 0
    for name, arr in _arrays(model):
        buf = np.ascontiguousarray(arr, dtype=_F32).tobytes()
        directory.append({"name": name, "shape": list(arr.shape), "offset": offset, "count": int(arr.size)})
        chunks.append(buf)
        offset += len(buf)
    header = {
        "config": model.config.to_dict(),
        "head": model.head,
        "epoch": model.epoch,
        "step_count": model.step_count,
        "extra": model.extra,
        "arrays": directory,
    }
    raw = json.dumps(header, sort_keys=True).encode("utf-8")
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "wb") as fh:
        fh.write(_PREFIX.pack(MAGIC, VERSION, len(raw)))
        fh.write(raw)
        for chunk in chunks:
            fh.write(chunk)
    os.replace(tmp, path)
    return path


def load_checkpoint(path, expected_config: EncoderConfig | None = None) -> ModelState:
    """Read a checkpoint, validating its directory against the payload and config.

    Raises:
        PayloadLengthError: the payload is shorter or longer than the directory says.
        VersionError: bad magic or unsupported format version.
        ShapeMismatchError: an array does not match ``expected_config`` (or the
            checkpoint's own config), naming the first offending array.
    """
    blob = Path(path).read_bytes()
    if len(blob) < _PREFIX.size:
        raise PayloadLengthError("payload length mismatch: file shorter than the fixed prefix")
    magic, version, hlen = _PREFIX.unpack_from(blob)
    if magic != MAGIC:
        raise VersionError(f"not a pclr checkpoint (magic {magic!r})")
    if version != VERSION:
        raise VersionError(f"unsupported checkpoint version {version}")
    start = _PREFIX.size + hlen
    if start > len(blob):
        raise PayloadLengthError("payload length mismatch: header extends past end of file")
    try:
        header = json.loads(blob[_PREFIX.size:start].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"corrupt checkpoint header: {exc}") from None
    payload = memoryview(blob)[start:]
    entries = header["arrays"]
    expected_bytes = 4 * sum(e["count"] for e in entries)
    if expected_bytes != len(payload):
        raise PayloadLengthError(
            f"payload length mismatch: directory describes {expected_bytes} bytes, found {len(payload)}"
        )
    cursor = 0
    arrays = {}
    for e in entries:
        if e["offset"] != cursor or int(np.prod(e["shape"], dtype=np.int64)) != e["count"]:
            raise CheckpointError(f"inconsistent directory entry for {e['name']!r}")
        arr = np.frombuffer(payload, dtype=_F32, count=e["count"], offset=cursor)
        arrays[e["name"]] = arr.reshape(e["shape"]).astype(np.float32)
        cursor += 4 * e["count"]

    config = EncoderConfig.from_dict(header["config"])
    head = header.get("head", "projection")
    spec = parameter_shapes(expected_config or config, head)
    for name, (shape, _) in spec.items():
        got = arrays.get(name)
        if got is None or got.shape != shape:
            found = None if got is None else got.shape
            raise ShapeMismatchError(f"array {name!r}: checkpoint has {found}, model expects {shape}")
    params = {}
    for name, (shape, trainable) in spec.items():
        p = Parameter(arrays[name], trainable=trainable, name=name)
        if trainable:
            p.m = arrays[f"{name}:m"]
            p.v = arrays[f"{name}:v"]
        params[name] = p
    return ModelState(
        expected_config or config,
        params,
        head,
        int(header.get("epoch", 0)),
        int(header.get("step_count", 0)),
        dict(header.get("extra", {})),
    )

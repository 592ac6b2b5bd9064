"""Versioned binary checkpoints.

Layout: magic ``MZBC``, little-endian u16 version, u32 header length, a UTF-8
JSON header, then the raw little-endian float64 tensors listed in the header's
directory. The header carries the model config, the vocabulary digest, a CRC32
of the payload and any extra JSON state (trainer counters, curricula).
"""
from __future__ import annotations

import json
import os
import struct
import zlib
from pathlib import Path
from typing import Optional

import numpy as np

MAGIC = b"MZBC"
VERSION = 1
_PREFIX = struct.Struct("<4sHI")


class CheckpointError(ValueError):
    pass


def dumps(model_config: dict, vocab_digest: str, tensors: dict[str, np.ndarray],
          extra: Optional[dict] = None) -> bytes:
    directory, chunks, offset = [], [], 0
    for name, arr in tensors.items():
        data = np.ascontiguousarray(arr, dtype="<f8").tobytes()
        directory.append({"name": name, "shape": list(np.shape(arr)), "offset": offset, "nbytes": len(data)})
        chunks.append(data)
        offset += len(data)
    payload = b"".join(chunks)
    header = {"model": model_config, "vocab_digest": vocab_digest, "tensors": directory,
              "crc32": zlib.crc32(payload), "extra": extra or {}}
    hbytes = json.dumps(header, sort_keys=True).encode("utf-8")
    return _PREFIX.pack(MAGIC, VERSION, len(hbytes)) + hbytes + payload


def loads(blob: bytes, expect_vocab: Optional[str] = None) -> tuple[dict, dict[str, np.ndarray]]:
    """Return (header, tensors); refuses unknown versions, corruption and vocabulary mismatch."""
    if len(blob) < _PREFIX.size:
        raise CheckpointError("checkpoint truncated before header")
    magic, version, hlen = _PREFIX.unpack_from(blob)
    if magic != MAGIC:
        raise CheckpointError("not a checkpoint (bad magic)")
    if version != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version} (expected {VERSION})")
    start = _PREFIX.size
    try:
        header = json.loads(blob[start:start + hlen].decode("utf-8"))
        directory = header["tensors"]
    except (UnicodeDecodeError, json.JSONDecodeError, KeyError, TypeError) as exc:
        raise CheckpointError(f"corrupted checkpoint header: {exc}") from None
    payload = blob[start + hlen:]
    if zlib.crc32(payload) != header.get("crc32"):
        raise CheckpointError("checkpoint payload checksum mismatch")
    if expect_vocab is not None and header.get("vocab_digest") != expect_vocab:
        raise CheckpointError("vocabulary mismatch: checkpoint was trained with a different vocabulary "
                              f"({str(header.get('vocab_digest'))[:12]} != {expect_vocab[:12]})")
    tensors = {}
    for entry in directory:
        raw = payload[entry["offset"]:entry["offset"] + entry["nbytes"]]
        tensors[entry["name"]] = np.frombuffer(raw, dtype="<f8").astype(np.float64).reshape(entry["shape"])
    return header, tensors


def save(path, model_config, vocab_digest, tensors, extra=None) -> None:
    """Write atomically so an interrupted save never clobbers the previous file."""
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(dumps(model_config, vocab_digest, tensors, extra))
    os.replace(tmp, path)


def load(path, expect_vocab=None):
    return loads(Path(path).read_bytes(), expect_vocab)

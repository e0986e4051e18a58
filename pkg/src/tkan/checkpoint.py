"""Checkpoint file format.

Byte layout (all integers little-endian)::

    offset  size  field
    0       8     magic b"TKANCKPT"
    8       4     uint32 format version (currently 1)
    12      4     uint32 header length H in bytes
    16      H     UTF-8 JSON header: {"variant", "config", "param_count",
                  "registry": [[name, [shape...]], ...]}
    16+H    8*P   P float64 parameters, registry order, each array row-major
    end-4   4     uint32 CRC-32 over everything before it

The registry order is the one reported by ``Forecaster.parameters()``.
"""
from __future__ import annotations

import json
import struct
import zlib
from pathlib import Path

import numpy as np

from .errors import CheckpointMismatchError, CheckpointVersionError, CorruptCheckpointError
from .models import Forecaster, ModelConfig, build_model

MAGIC = b"TKANCKPT"
FORMAT_VERSION = 1


def checkpoint_bytes(model: Forecaster) -> bytes:
    header = {
        "variant": model.config.variant,
        "config": model.config.to_dict(),
        "param_count": model.param_count,
        "registry": [[name, list(arr.shape)] for name, arr in model.parameters()],
    }
    hbytes = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    body = MAGIC + struct.pack("<II", FORMAT_VERSION, len(hbytes)) + hbytes
    body += model.get_flat().astype("<f8").tobytes()
    return body + struct.pack("<I", zlib.crc32(body))


def save_checkpoint(model: Forecaster, path) -> Path:
    path = Path(path)
    path.write_bytes(checkpoint_bytes(model))
    return path


def parse_checkpoint(data: bytes, expected: ModelConfig | None = None) -> Forecaster:
    if len(data) < 20 or data[:8] != MAGIC:
        raise CorruptCheckpointError("not a checkpoint file (bad magic or too short)")
    version, hlen = struct.unpack_from("<II", data, 8)
    if version != FORMAT_VERSION:
        raise CheckpointVersionError(f"checkpoint format version {version}, expected {FORMAT_VERSION}")
    if 16 + hlen + 4 > len(data):
        raise CorruptCheckpointError("checkpoint truncated inside header")
    (crc,) = struct.unpack_from("<I", data, len(data) - 4)
    if zlib.crc32(data[:-4]) != crc:
        raise CorruptCheckpointError("checksum mismatch (truncated or corrupted file)")
    try:
        header = json.loads(data[16:16 + hlen].decode("utf-8"))
        config = ModelConfig.from_dict(header["config"])
    except Exception as exc:
        raise CorruptCheckpointError(f"unreadable checkpoint header: {exc}") from exc
    if expected is not None and expected.to_dict() != config.to_dict():
        diff = sorted(k for k, v in expected.to_dict().items() if config.to_dict().get(k) != v)
        raise CheckpointMismatchError(f"checkpoint config differs from expected in {diff}")
    model = build_model(config, seed=None)
    registry = [[n, list(a.shape)] for n, a in model.parameters()]
    if header.get("registry") != registry or header.get("param_count") != model.param_count:
        raise CheckpointMismatchError("parameter registry in file does not match its config")
    payload = data[16 + hlen:-4]
    if len(payload) != 8 * model.param_count:
        raise CorruptCheckpointError(f"payload holds {len(payload)} bytes, expected {8 * model.param_count}")
    model.set_flat(np.frombuffer(payload, dtype="<f8").astype(np.float64))
    return model


def load_checkpoint(path, expected: ModelConfig | None = None) -> Forecaster:
    return parse_checkpoint(Path(path).read_bytes(), expected)

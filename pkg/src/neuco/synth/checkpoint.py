"""NCSM model checkpoints: config plus named float32 tensors."""

from __future__ import annotations

import json
import os
import struct
import tempfile
from dataclasses import asdict

import numpy as np

from ..errors import CorruptionError, FormatError
from .model import SynthConfig, SynthModel

NCSM_MAGIC = b"NCSM"
NCSM_VERSION = 1


def save_checkpoint(model: SynthModel, path) -> None:
    """Write magic, version, field-tagged config, then sorted named tensors."""
    config_blob = json.dumps(asdict(model.config), sort_keys=True).encode("utf-8")
    payload = bytearray()
    payload += NCSM_MAGIC
    payload += struct.pack("<H", NCSM_VERSION)
    payload += struct.pack("<I", len(config_blob))
    payload += config_blob
    names = sorted(model.params)
    payload += struct.pack("<I", len(names))
    for name in names:
        tensor = np.ascontiguousarray(model.params[name], dtype="<f4")
        raw_name = name.encode("utf-8")
        payload += struct.pack("<H", len(raw_name))
        payload += raw_name
        payload += struct.pack("<I", tensor.ndim)
        payload += struct.pack(f"<{tensor.ndim}I", *tensor.shape)
        payload += tensor.tobytes()

    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=directory, suffix=".ncsm.tmp")
    try:
        with os.fdopen(fd, "wb") as f:
            f.write(payload)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _read_exact(f, n, what):
    data = f.read(n)
    if len(data) != n:
        raise CorruptionError(f"truncated NCSM file while reading {what}")
    return data


def load_checkpoint(path) -> SynthModel:
    with open(path, "rb") as f:
        magic = _read_exact(f, 4, "magic")
        if magic != NCSM_MAGIC:
            raise FormatError(f"bad magic {magic!r}, expected {NCSM_MAGIC!r}")
        (version,) = struct.unpack("<H", _read_exact(f, 2, "version"))
        if version != NCSM_VERSION:
            raise FormatError(f"unsupported NCSM version {version}")
        (config_len,) = struct.unpack("<I", _read_exact(f, 4, "config length"))
        try:
            fields = json.loads(_read_exact(f, config_len, "config"))
        except json.JSONDecodeError as exc:
            raise CorruptionError("unreadable checkpoint config") from exc
        config = SynthConfig(**fields)
        (n_tensors,) = struct.unpack("<I", _read_exact(f, 4, "tensor count"))
        params = {}
        for _ in range(n_tensors):
            (name_len,) = struct.unpack("<H", _read_exact(f, 2, "name length"))
            name = _read_exact(f, name_len, "name").decode("utf-8")
            (rank,) = struct.unpack("<I", _read_exact(f, 4, "rank"))
            dims = struct.unpack(f"<{rank}I", _read_exact(f, 4 * rank, "dims"))
            count = int(np.prod(dims)) if rank else 1
            data = np.frombuffer(
                _read_exact(f, 4 * count, f"tensor {name}"), dtype="<f4")
            params[name] = data.reshape(dims).copy()
    return SynthModel(config=config, params=params)

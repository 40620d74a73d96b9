"""NCSF feature-file writer.

Layout (little-endian): magic "NCSF", version u16 = 1, flags u16 = 0,
n_frames/key_dim/value_dim u32, frame_period_ms f32, two u16-length-prefixed
UTF-8 strings (utterance_id, speaker_id), then keys and values as row-major
float32 matrices.
"""

from __future__ import annotations

import os
import struct
import tempfile

import numpy as np

MAGIC = b"NCSF"
VERSION = 1


def write_ncsf(path, keys, values, utterance_id: str, speaker_id: str,
               frame_period_ms: float = 20.0) -> None:
    """Write one feature file atomically (temp file + rename)."""
    keys = np.ascontiguousarray(keys, dtype="<f4")
    values = np.ascontiguousarray(values, dtype="<f4")
    if keys.ndim != 2 or values.ndim != 2:
        raise ValueError("keys and values must be 2-D [n_frames, dim]")
    if keys.shape[0] != values.shape[0]:
        raise ValueError(
            f"frame count mismatch: {keys.shape[0]} keys vs "
            f"{values.shape[0]} values")
    if keys.shape[0] == 0:
        raise ValueError("refusing to write an empty feature file")
    if not (np.all(np.isfinite(keys)) and np.all(np.isfinite(values))):
        raise ValueError("non-finite feature values")

    payload = bytearray()
    payload += MAGIC
    payload += struct.pack("<HH", VERSION, 0)
    payload += struct.pack("<III", keys.shape[0], keys.shape[1],
                           values.shape[1])
    payload += struct.pack("<f", frame_period_ms)
    for text in (utterance_id, speaker_id):
        raw = text.encode("utf-8")
        if len(raw) > 0xFFFF:
            raise ValueError("id string too long for the format")
        payload += struct.pack("<H", len(raw))
        payload += raw
    payload += keys.tobytes()
    payload += values.tobytes()

    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=directory, suffix=".ncsf.tmp")
    try:
        with os.fdopen(fd, "wb") as f:
            f.write(payload)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise

"""SSL feature sequences, matching pools and exact kNN replacement.

Feature sequences carry two parallel per-frame vectors: a *key* used for
cosine-similarity matching and a *value* used for synthesis. Sequences are
persisted in the NCSF binary format (little-endian, float32 payload).
"""

from __future__ import annotations

import os
import struct
import tempfile
from dataclasses import dataclass, field

import numpy as np

from .errors import CorruptionError, FormatError, ValidationError

NCSF_MAGIC = b"NCSF"
NCSF_VERSION = 1

DEFAULT_FRAME_PERIOD_MS = 20.0


@dataclass(frozen=True)
class SslFrameSequence:
    """Per-frame (key, value) vector pairs for one utterance."""

    keys: np.ndarray          # [n_frames, key_dim] float32
    values: np.ndarray        # [n_frames, value_dim] float32
    utterance_id: str
    speaker_id: str
    frame_period_ms: float = DEFAULT_FRAME_PERIOD_MS

    def __post_init__(self):
        keys = np.asarray(self.keys, dtype=np.float32)
        values = np.asarray(self.values, dtype=np.float32)
        if keys.ndim != 2 or values.ndim != 2:
            raise ValidationError("keys and values must be 2-D matrices")
        if keys.shape[0] != values.shape[0]:
            raise ValidationError(
                f"keys have {keys.shape[0]} frames but values have {values.shape[0]}"
            )
        if keys.shape[0] < 1:
            raise ValidationError("a feature sequence needs at least one frame")
        if keys.shape[1] < 1 or values.shape[1] < 1:
            raise ValidationError("key_dim and value_dim must be positive")
        zero_rows = np.flatnonzero(~np.any(keys != 0.0, axis=1))
        if zero_rows.size:
            raise ValidationError(
                f"all-zero key row at frame {int(zero_rows[0])}: cosine similarity undefined"
            )
        object.__setattr__(self, "keys", keys)
        object.__setattr__(self, "values", values)

    @property
    def n_frames(self) -> int:
        return self.keys.shape[0]

    @property
    def key_dim(self) -> int:
        return self.keys.shape[1]

    @property
    def value_dim(self) -> int:
        return self.values.shape[1]


@dataclass(frozen=True)
class MatchingPool:
    """Immutable collection of frames from one target speaker.

    Safe for concurrent queries: nothing mutates after construction.
    """

    keys: np.ndarray          # [n, key_dim]
    values: np.ndarray        # [n, value_dim]
    origins: tuple            # per frame: (utterance_id, frame_index)
    speaker_id: str
    _unit_keys: np.ndarray = field(repr=False, default=None)

    @property
    def n_frames(self) -> int:
        return self.keys.shape[0]

    @property
    def key_dim(self) -> int:
        return self.keys.shape[1]

    @property
    def value_dim(self) -> int:
        return self.values.shape[1]

    def utterance_ids(self) -> set:
        return {u for u, _ in self.origins}


@dataclass(frozen=True)
class MatchResult:
    """kNN replacement output for one query sequence."""

    matched_values: np.ndarray   # [n_query, value_dim]
    # per query frame: list of (origin, similarity), similarity non-increasing
    neighbor_origins: tuple
    neighbor_indices: np.ndarray  # [n_query, k] pool frame indices


def build_pool(sequences) -> MatchingPool:
    """Flatten sequences into a pool, preserving input order and origins."""
    sequences = list(sequences)
    if not sequences:
        raise ValidationError("cannot build a pool from zero sequences")
    key_dim = sequences[0].key_dim
    value_dim = sequences[0].value_dim
    for seq in sequences:
        if seq.key_dim != key_dim or seq.value_dim != value_dim:
            raise ValidationError(
                f"dimension mismatch: expected key_dim={key_dim}/value_dim={value_dim}, "
                f"got {seq.key_dim}/{seq.value_dim} in utterance {seq.utterance_id!r}"
            )
    keys = np.concatenate([s.keys for s in sequences], axis=0)
    values = np.concatenate([s.values for s in sequences], axis=0)
    origins = tuple(
        (s.utterance_id, i) for s in sequences for i in range(s.n_frames)
    )
    # Precompute unit-norm keys in float64 for reproducible similarities.
    unit = keys.astype(np.float64)
    unit /= np.linalg.norm(unit, axis=1, keepdims=True)
    return MatchingPool(
        keys=keys,
        values=values,
        origins=origins,
        speaker_id=sequences[0].speaker_id,
        _unit_keys=unit,
    )


def _unit_rows(mat: np.ndarray) -> np.ndarray:
    out = np.asarray(mat, dtype=np.float64)
    norms = np.linalg.norm(out, axis=1, keepdims=True)
    if np.any(norms == 0.0):
        raise ValidationError("zero key row has no cosine direction")
    return out / norms


def knn_match(query: SslFrameSequence, pool: MatchingPool, k: int,
              metric: str = "cosine") -> MatchResult:
    """Replace each query frame's value with the mean of its k nearest pool values.

    Neighbors ranked by cosine similarity between keys; ties broken by the
    lower pool frame index so results are fully deterministic.
    """
    if metric != "cosine":
        raise ValidationError(f"unsupported metric {metric!r}")
    if k < 1:
        raise ValidationError("k must be >= 1")
    if k > pool.n_frames:
        raise ValidationError(f"k={k} exceeds pool size {pool.n_frames}")
    if query.key_dim != pool.key_dim:
        raise ValidationError(
            f"query key_dim {query.key_dim} != pool key_dim {pool.key_dim}"
        )

    q = _unit_rows(query.keys)
    p = pool._unit_keys
    if p is None:
        p = _unit_rows(pool.keys)
    sims = q @ p.T                                   # [n_query, n_pool]
    # Stable sort on -sim keeps ascending pool index among ties.
    order = np.argsort(-sims, axis=1, kind="stable")[:, :k]   # [n_query, k]
    rows = np.arange(sims.shape[0])[:, None]
    top_sims = sims[rows, order]

    matched = pool.values[order].astype(np.float64).mean(axis=1).astype(np.float32)
    neighbor_origins = tuple(
        tuple((pool.origins[j], float(s)) for j, s in zip(idx_row, sim_row))
        for idx_row, sim_row in zip(order, top_sims)
    )
    return MatchResult(
        matched_values=matched,
        neighbor_origins=neighbor_origins,
        neighbor_indices=order,
    )


def prematch_training_features(target: SslFrameSequence,
                               same_speaker_pool: MatchingPool,
                               k: int) -> SslFrameSequence:
    """Training-time replacement: same-speaker kNN average of values.

    The pool must not contain frames from the target utterance itself; keys
    stay untouched because training consumes only values.
    """
    if any(u == target.utterance_id for u in same_speaker_pool.utterance_ids()):
        raise ValidationError(
            f"pool contains frames from the target utterance {target.utterance_id!r}"
        )
    result = knn_match(target, same_speaker_pool, k)
    return SslFrameSequence(
        keys=target.keys,
        values=result.matched_values,
        utterance_id=target.utterance_id,
        speaker_id=target.speaker_id,
        frame_period_ms=target.frame_period_ms,
    )


def _read_exact(f, n: int, what: str) -> bytes:
    data = f.read(n)
    if len(data) != n:
        raise CorruptionError(f"truncated NCSF file while reading {what}")
    return data


def _read_string(f, what: str) -> str:
    (length,) = struct.unpack("<H", _read_exact(f, 2, what + " length"))
    return _read_exact(f, length, what).decode("utf-8")


def load_feature_file(path) -> SslFrameSequence:
    """Decode an NCSF file into a validated sequence."""
    with open(path, "rb") as f:
        magic = _read_exact(f, 4, "magic")
        if magic != NCSF_MAGIC:
            raise FormatError(f"bad magic {magic!r}, expected {NCSF_MAGIC!r}")
        version, flags = struct.unpack("<HH", _read_exact(f, 4, "version/flags"))
        if version != NCSF_VERSION:
            raise FormatError(f"unsupported NCSF version {version}")
        n_frames, key_dim, value_dim = struct.unpack(
            "<III", _read_exact(f, 12, "dimensions"))
        (frame_period,) = struct.unpack("<f", _read_exact(f, 4, "frame period"))
        utterance_id = _read_string(f, "utterance_id")
        speaker_id = _read_string(f, "speaker_id")
        keys = np.frombuffer(
            _read_exact(f, 4 * n_frames * key_dim, "keys"), dtype="<f4"
        ).reshape(n_frames, key_dim)
        values = np.frombuffer(
            _read_exact(f, 4 * n_frames * value_dim, "values"), dtype="<f4"
        ).reshape(n_frames, value_dim)
    return SslFrameSequence(
        keys=keys.copy(), values=values.copy(),
        utterance_id=utterance_id, speaker_id=speaker_id,
        frame_period_ms=float(frame_period),
    )


def save_feature_file(seq: SslFrameSequence, path) -> None:
    """Write NCSF bit-exactly round-trippable; atomic via temp + rename."""
    directory = os.path.dirname(os.path.abspath(path))
    payload = bytearray()
    payload += NCSF_MAGIC
    payload += struct.pack("<HH", NCSF_VERSION, 0)
    payload += struct.pack("<III", seq.n_frames, seq.key_dim, seq.value_dim)
    payload += struct.pack("<f", seq.frame_period_ms)
    for text in (seq.utterance_id, seq.speaker_id):
        raw = text.encode("utf-8")
        payload += struct.pack("<H", len(raw))
        payload += raw
    payload += np.ascontiguousarray(seq.keys, dtype="<f4").tobytes()
    payload += np.ascontiguousarray(seq.values, dtype="<f4").tobytes()

    fd, tmp = tempfile.mkstemp(dir=directory, suffix=".ncsf.tmp")
    try:
        with os.fdopen(fd, "wb") as f:
            f.write(payload)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise

"""Frame-level pitch and loudness analysis on a 10 ms grid.

Pitch comes either from the built-in YIN-style detector or from external
plain-text tracks fused with a median ensemble. Loudness is the log10 of
the A-weighted power spectrum. Tracks persist in the NCDT binary format.
"""

from __future__ import annotations

import os
import struct
import tempfile
from dataclasses import dataclass

import numpy as np

from .errors import CorruptionError, FormatError, ValidationError

NCDT_MAGIC = b"NCDT"
NCDT_VERSION = 1

HOP_MS = 10.0
LOUDNESS_FLOOR = -10.0


@dataclass(frozen=True)
class DspTrack:
    """f0 (Hz, 0 = unvoiced) and loudness per 10 ms frame."""

    f0: np.ndarray
    loudness: np.ndarray
    sample_rate_src: int
    hop_ms: float = HOP_MS

    def __post_init__(self):
        f0 = np.asarray(self.f0, dtype=np.float32)
        loud = np.asarray(self.loudness, dtype=np.float32)
        if f0.ndim != 1 or loud.ndim != 1 or f0.shape != loud.shape:
            raise ValidationError("f0 and loudness must be equal-length 1-D arrays")
        if f0.shape[0] < 1:
            raise ValidationError("a DSP track needs at least one frame")
        if np.any(f0 < 0):
            raise ValidationError("f0 must be non-negative")
        voiced = f0[f0 > 0]
        if voiced.size and (voiced.min() < 20 or voiced.max() > self.sample_rate_src / 2):
            raise ValidationError("voiced f0 outside [20, sample_rate/2]")
        if not np.all(np.isfinite(loud)):
            raise ValidationError("loudness must be finite")
        object.__setattr__(self, "f0", f0)
        object.__setattr__(self, "loudness", loud)

    @property
    def n_frames(self) -> int:
        return self.f0.shape[0]


@dataclass(frozen=True)
class AlignedFeatures:
    """SSL values duplicated to the 10 ms grid alongside f0 and loudness."""

    values: np.ndarray    # [n_frames, value_dim]
    f0: np.ndarray        # [n_frames]
    loudness: np.ndarray  # [n_frames]

    @property
    def n_frames(self) -> int:
        return self.values.shape[0]


def median_pitch_ensemble(tracks) -> np.ndarray:
    """Fuse 1-3 pitch tracks: majority voicing vote, median of voiced values."""
    tracks = [np.asarray(t, dtype=np.float64) for t in tracks]
    if not tracks:
        raise ValidationError("pitch ensemble needs at least one track")
    if len(tracks) > 3:
        raise ValidationError("pitch ensemble accepts at most three tracks")
    length = tracks[0].shape[0]
    for t in tracks:
        if t.ndim != 1 or t.shape[0] != length:
            raise ValidationError("pitch tracks must share one length")
        if np.any(t < 0):
            raise ValidationError("pitch values must be non-negative")

    stack = np.stack(tracks)                       # [n_tracks, n_frames]
    voiced = stack > 0
    n_voiced = voiced.sum(axis=0)
    # voiced iff strictly more than half of the tracks are voiced, except
    # the 2-track case where both must agree (2 of 2).
    if len(tracks) == 2:
        is_voiced = n_voiced == 2
    else:
        is_voiced = n_voiced * 2 > len(tracks)

    out = np.zeros(length)
    for i in np.flatnonzero(is_voiced):
        vals = stack[voiced[:, i], i]
        out[i] = np.median(vals)
    return out


def _frame_count(n_samples: int, hop_samples: int) -> int:
    return int(np.ceil(n_samples / hop_samples))


def detect_pitch(audio, sample_rate: int, hop_ms: float = HOP_MS,
                 f0_range=(50.0, 1000.0)) -> np.ndarray:
    """YIN-style per-frame f0 estimate; 0 marks unvoiced frames.

    Difference function computed via FFT autocorrelation, cumulative-mean
    normalization, absolute threshold, parabolic interpolation of the dip.
    """
    audio = np.asarray(audio, dtype=np.float64)
    if audio.ndim != 1 or audio.size == 0:
        raise ValidationError("audio must be a non-empty mono array")
    f0_min, f0_max = float(f0_range[0]), float(f0_range[1])
    if not (20.0 <= f0_min < f0_max <= sample_rate / 2):
        raise ValidationError(
            f"invalid f0 range [{f0_min}, {f0_max}] for fs={sample_rate}")

    hop = int(round(sample_rate * hop_ms / 1000.0))
    tau_min = max(2, int(np.floor(sample_rate / f0_max)))
    tau_max = int(np.ceil(sample_rate / f0_min))
    win = 2 * tau_max                       # at least two periods of f0_min
    n_frames = _frame_count(audio.size, hop)

    padded = np.concatenate([audio, np.zeros(win + tau_max)])
    threshold = 0.15
    power_floor = 1e-8

    out = np.zeros(n_frames)
    for m in range(n_frames):
        frame = padded[m * hop: m * hop + win]
        if np.mean(frame * frame) < power_floor:
            continue
        d = _difference_function(frame, tau_max)
        cmndf = _cmnd(d)
        tau = _absolute_threshold(cmndf, tau_min, tau_max, threshold)
        if tau is None:
            continue
        tau = _parabolic_refine(cmndf, tau)
        f0 = sample_rate / tau
        if f0_min <= f0 <= f0_max:
            out[m] = f0
    return out


def _difference_function(x: np.ndarray, tau_max: int) -> np.ndarray:
    """d(tau) = sum_n (x[n] - x[n+tau])^2 over the frame, via FFT."""
    w = x.size
    tau_max = min(tau_max, w - 1)
    cumsq = np.concatenate([[0.0], np.cumsum(x * x)])
    size = w + tau_max
    fc = np.fft.rfft(x, 2 ** int(np.ceil(np.log2(size))))
    acf = np.fft.irfft(fc * fc.conjugate())[: tau_max + 1]
    # energy terms: sum over the overlapping region of length w - tau
    taus = np.arange(tau_max + 1)
    e1 = cumsq[w - taus] - cumsq[0]
    e2 = cumsq[w] - cumsq[taus]
    return e1 + e2 - 2.0 * acf


def _cmnd(d: np.ndarray) -> np.ndarray:
    out = np.ones_like(d)
    cs = np.cumsum(d[1:])
    with np.errstate(divide="ignore", invalid="ignore"):
        out[1:] = d[1:] * np.arange(1, d.size) / np.where(cs > 0, cs, np.inf)
    return out


def _absolute_threshold(cmndf, tau_min, tau_max, threshold):
    tau_max = min(tau_max, cmndf.size - 1)
    below = np.flatnonzero(cmndf[tau_min:tau_max] < threshold)
    if below.size == 0:
        return None
    tau = tau_min + below[0]
    # descend to the local minimum of this dip
    while tau + 1 < tau_max and cmndf[tau + 1] < cmndf[tau]:
        tau += 1
    return tau


def _parabolic_refine(cmndf, tau):
    if tau <= 0 or tau + 1 >= cmndf.size:
        return float(tau)
    a, b, c = cmndf[tau - 1], cmndf[tau], cmndf[tau + 1]
    denom = a - 2 * b + c
    if denom == 0:
        return float(tau)
    shift = 0.5 * (a - c) / denom
    return float(tau) + float(np.clip(shift, -1.0, 1.0))


def _a_weight_power(freqs: np.ndarray) -> np.ndarray:
    """Squared magnitude of the analog A-curve, normalized to 1 at 1 kHz."""
    f2 = np.asarray(freqs, dtype=np.float64) ** 2
    num = (12194.0 ** 2) * f2 * f2
    den = ((f2 + 20.6 ** 2)
           * np.sqrt((f2 + 107.7 ** 2) * (f2 + 737.9 ** 2))
           * (f2 + 12194.0 ** 2))
    with np.errstate(invalid="ignore", divide="ignore"):
        r = np.where(den > 0, num / den, 0.0)
    ref = _a_weight_ref()
    return (r / ref) ** 2


def _a_weight_ref() -> float:
    f2 = 1000.0 ** 2
    return (12194.0 ** 2) * f2 * f2 / (
        (f2 + 20.6 ** 2)
        * np.sqrt((f2 + 107.7 ** 2) * (f2 + 737.9 ** 2))
        * (f2 + 12194.0 ** 2))


def a_weighted_loudness(audio, sample_rate: int, hop_ms: float = HOP_MS,
                        window: int | None = None) -> np.ndarray:
    """Per-frame log10 A-weighted power, clamped at the floor of -10.

    The window is a Hann of 4x the hop by default, centered on each frame.
    """
    audio = np.asarray(audio, dtype=np.float64)
    if audio.ndim != 1 or audio.size == 0:
        raise ValidationError("audio must be a non-empty mono array")
    hop = int(round(sample_rate * hop_ms / 1000.0))
    if window is None:
        window = 4 * hop
    if window < 2:
        raise ValidationError("window must span at least 2 samples")
    if window < hop:
        raise ValidationError("window must be at least one hop long")

    n_frames = _frame_count(audio.size, hop)
    half = window // 2
    padded = np.concatenate([np.zeros(half), audio, np.zeros(window)])
    hann = np.hanning(window)
    freqs = np.fft.rfftfreq(window, d=1.0 / sample_rate)
    weights = _a_weight_power(freqs)

    out = np.empty(n_frames)
    for m in range(n_frames):
        frame = padded[m * hop: m * hop + window] * hann
        power = np.abs(np.fft.rfft(frame)) ** 2
        total = float(np.sum(power * weights))
        out[m] = max(np.log10(total), LOUDNESS_FLOOR) if total > 0 else LOUDNESS_FLOOR
    return out


def align_streams(ssl_values, dsp: DspTrack) -> AlignedFeatures:
    """Duplicate each 20 ms SSL frame twice and truncate all streams to match."""
    ssl_values = np.asarray(ssl_values, dtype=np.float32)
    if ssl_values.ndim != 2 or ssl_values.shape[0] < 1:
        raise ValidationError("ssl_values must be a non-empty matrix")
    duplicated = np.repeat(ssl_values, 2, axis=0)
    n = min(duplicated.shape[0], dsp.n_frames)
    if n < 1:
        raise ValidationError("alignment produced zero frames")
    return AlignedFeatures(
        values=duplicated[:n],
        f0=dsp.f0[:n].copy(),
        loudness=dsp.loudness[:n].copy(),
    )


def pitch_shift_factor(source_f0, target_f0, geometric: bool = False) -> float:
    """Ratio of target to source average voiced pitch.

    `geometric=True` averages in the log domain instead of arithmetically.
    """
    src = np.asarray(source_f0, dtype=np.float64)
    tgt = np.asarray(target_f0, dtype=np.float64)
    src_v = src[src > 0]
    tgt_v = tgt[tgt > 0]
    if src_v.size == 0 or tgt_v.size == 0:
        raise ValidationError("both tracks need at least one voiced frame")
    if geometric:
        return float(np.exp(np.mean(np.log(tgt_v)) - np.mean(np.log(src_v))))
    return float(np.mean(tgt_v) / np.mean(src_v))


def load_pitch_text(path) -> np.ndarray:
    """Plain-text pitch track: one f0 value per line, 0 for unvoiced."""
    values = []
    with open(path) as f:
        for lineno, line in enumerate(f, 1):
            line = line.strip()
            if not line:
                continue
            try:
                v = float(line)
            except ValueError as exc:
                raise FormatError(f"{path}:{lineno}: not a number: {line!r}") from exc
            if v < 0:
                raise ValidationError(f"{path}:{lineno}: negative f0")
            values.append(v)
    if not values:
        raise ValidationError(f"{path}: empty pitch track")
    return np.asarray(values, dtype=np.float64)


def save_dsp_track(track: DspTrack, path) -> None:
    payload = bytearray()
    payload += NCDT_MAGIC
    payload += struct.pack("<H", NCDT_VERSION)
    payload += struct.pack("<I", track.n_frames)
    payload += struct.pack("<f", track.hop_ms)
    payload += struct.pack("<I", track.sample_rate_src)
    payload += np.ascontiguousarray(track.f0, dtype="<f4").tobytes()
    payload += np.ascontiguousarray(track.loudness, dtype="<f4").tobytes()

    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=directory, suffix=".ncdt.tmp")
    try:
        with os.fdopen(fd, "wb") as f:
            f.write(payload)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def load_dsp_track(path) -> DspTrack:
    with open(path, "rb") as f:
        magic = f.read(4)
        if magic != NCDT_MAGIC:
            raise FormatError(f"bad magic {magic!r}, expected {NCDT_MAGIC!r}")
        header = f.read(14)
        if len(header) != 14:
            raise CorruptionError("truncated NCDT header")
        version, n_frames, hop_ms, sample_rate = struct.unpack("<HIfI", header)
        if version != NCDT_VERSION:
            raise FormatError(f"unsupported NCDT version {version}")
        raw = f.read(8 * n_frames)
        if len(raw) != 8 * n_frames:
            raise CorruptionError("truncated NCDT payload")
    f0 = np.frombuffer(raw[: 4 * n_frames], dtype="<f4")
    loud = np.frombuffer(raw[4 * n_frames:], dtype="<f4")
    return DspTrack(f0=f0.copy(), loudness=loud.copy(),
                    sample_rate_src=int(sample_rate), hop_ms=float(hop_ms))

"""Sample-level harmonic excitation signals.

Frame-level f0 is upsampled to audio rate, turned into a band-limited sum
of harmonic cosines driven by a running phase accumulator, mixed with a
Gaussian noise branch through per-frame linear time-varying FIR filters,
and stacked into the 2-channel conditioning signal fed to the synthesizer.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ValidationError

NOISE_STD = 0.03
DEFAULT_LTV_TAPS = 64

_SINE_BLOCK = 16384  # limits the [K_max, block] cosine workspace


@dataclass(frozen=True)
class SampleF0:
    """Audio-rate f0 contour; 0 encodes unvoiced samples."""

    f0: np.ndarray
    sample_rate: int

    def __post_init__(self):
        f0 = np.asarray(self.f0, dtype=np.float64)
        if f0.ndim != 1 or f0.size == 0:
            raise ValidationError("sample f0 must be a non-empty 1-D array")
        if np.any(f0 < 0):
            raise ValidationError("f0 must be non-negative")
        if np.any(f0 > self.sample_rate / 2):
            raise ValidationError("voiced f0 above Nyquist")
        object.__setattr__(self, "f0", f0)

    @property
    def n_samples(self) -> int:
        return self.f0.size


@dataclass(frozen=True)
class HarmonicSignals:
    """Raw excitation p, filtered excitation, their 2-channel stack, noise."""

    p: np.ndarray
    p_filtered: np.ndarray
    s: np.ndarray            # [2, n] = stack(p, p_filtered)
    z: np.ndarray
    rng_seed: int


def upsample_f0(frame_f0, fs: int, hop_ms: float = 10.0) -> SampleF0:
    """Expand 10 ms frame f0 to audio rate.

    Voiced runs are linearly interpolated between frame centers; a voiced
    frame bordering an unvoiced frame (or the signal edge) holds its own
    value on that side. Unvoiced frames expand to zeros.
    """
    frame_f0 = np.asarray(frame_f0, dtype=np.float64)
    if frame_f0.ndim != 1 or frame_f0.size == 0:
        raise ValidationError("frame f0 must be a non-empty 1-D array")
    hop = int(round(fs * hop_ms / 1000.0))
    n_frames = frame_f0.size
    n = n_frames * hop

    out = np.zeros(n)
    centers = np.arange(n_frames) * hop + hop / 2.0
    sample_pos = np.arange(n)
    frame_of = np.minimum(sample_pos // hop, n_frames - 1)

    voiced = frame_f0 > 0
    for m in range(n_frames):
        if not voiced[m]:
            continue
        idx = np.flatnonzero(frame_of == m)
        pos = sample_pos[idx].astype(np.float64)
        vals = np.full(idx.size, frame_f0[m])
        # left half of the frame interpolates toward the previous center
        left = pos < centers[m]
        if m > 0 and voiced[m - 1]:
            t = (pos[left] - centers[m - 1]) / hop
            vals[left] = frame_f0[m - 1] + t * (frame_f0[m] - frame_f0[m - 1])
        right = pos >= centers[m]
        if m + 1 < n_frames and voiced[m + 1]:
            t = (pos[right] - centers[m]) / hop
            vals[right] = frame_f0[m] + t * (frame_f0[m + 1] - frame_f0[m])
        out[idx] = vals
    return SampleF0(f0=out, sample_rate=fs)


def max_harmonics(f0: float, fs: int) -> int:
    """Largest harmonic index that stays at or below Nyquist."""
    if f0 <= 0:
        raise ValidationError("max_harmonics requires a voiced f0 > 0")
    if fs <= 0:
        raise ValidationError("sample rate must be positive")
    return int(np.floor(fs / (2.0 * f0)))


def sine_excitation(f0s: SampleF0, normalize: bool = True) -> np.ndarray:
    """Band-limited harmonic cosine sum driven by the running phase sum.

    The phase accumulator runs over every sample, unvoiced included, with
    no reset at voicing onsets. With `normalize` each sample is divided by
    its harmonic count so |p| <= 1; `normalize=False` keeps the literal
    unnormalized sum.
    """
    f0 = f0s.f0
    fs = f0s.sample_rate
    n = f0.size
    phase = np.cumsum(f0)                    # inclusive running sum of f0
    voiced = f0 > 0

    k_count = np.zeros(n, dtype=np.int64)
    k_count[voiced] = np.floor(fs / (2.0 * f0[voiced])).astype(np.int64)

    p = np.zeros(n)
    base = 2.0 * np.pi * phase / fs
    for start in range(0, n, _SINE_BLOCK):
        stop = min(start + _SINE_BLOCK, n)
        blk_voiced = voiced[start:stop]
        if not np.any(blk_voiced):
            continue
        kc = k_count[start:stop]
        kmax = int(kc.max())
        ks = np.arange(1, kmax + 1)[:, None]          # [kmax, 1]
        args = ks * base[start:stop][None, :]          # [kmax, blk]
        mask = ks <= kc[None, :]
        total = np.sum(np.cos(args) * mask, axis=0)
        if normalize:
            total = np.where(kc > 0, total / np.maximum(kc, 1), 0.0)
        p[start:stop] = np.where(blk_voiced, total, 0.0)
    return p


def sample_noise(n: int, seed: int) -> np.ndarray:
    """Deterministic Gaussian noise branch, std fixed at 0.03."""
    if n < 1:
        raise ValidationError("noise length must be >= 1")
    rng = np.random.default_rng(seed)
    return rng.normal(0.0, NOISE_STD, size=n)


def apply_ltv(signal, filters, frame_hop: int) -> np.ndarray:
    """Frame-wise causal FIR with a triangular cross-fade of one hop.

    Each output sample blends the convolutions under the current frame's
    filter and the previous frame's filter, with the blend ramping across
    the frame; a single frame reduces to plain causal convolution.
    """
    signal = np.asarray(signal, dtype=np.float64)
    filters = np.asarray(filters, dtype=np.float64)
    if frame_hop < 1:
        raise ValidationError("frame_hop must be >= 1")
    if filters.ndim != 2:
        raise ValidationError("filters must be a [n_frames, taps] matrix")
    if not np.all(np.isfinite(filters)):
        raise ValidationError("filter taps must be finite")
    n = signal.size
    n_frames = int(np.ceil(n / frame_hop))
    if filters.shape[0] != n_frames:
        raise ValidationError(
            f"expected {n_frames} filter frames for {n} samples at hop "
            f"{frame_hop}, got {filters.shape[0]}")
    taps = filters.shape[1]

    def frame_conv(m, start, stop):
        # causal convolution of signal with h_m, evaluated on [start, stop)
        lo = max(0, start - taps + 1)
        seg = np.convolve(signal[lo:stop], filters[m])
        return seg[start - lo: stop - lo]

    out = np.empty(n)
    for m in range(n_frames):
        start = m * frame_hop
        stop = min(start + frame_hop, n)
        y_cur = frame_conv(m, start, stop)
        if m == 0:
            out[start:stop] = y_cur
            continue
        y_prev = frame_conv(m - 1, start, stop)
        a = (np.arange(stop - start) + 0.5) / frame_hop
        # written so equal neighbor filters blend bit-exactly
        out[start:stop] = y_prev + a * (y_cur - y_prev)
    return out


def filtered_excitation(p, z, filters_h1, filters_h2, frame_hop: int) -> np.ndarray:
    """LTV-filtered excitation: h1 * p + h2 * z."""
    p = np.asarray(p, dtype=np.float64)
    z = np.asarray(z, dtype=np.float64)
    if p.shape != z.shape:
        raise ValidationError("p and z must have equal length")
    return apply_ltv(p, filters_h1, frame_hop) + apply_ltv(z, filters_h2, frame_hop)


def assemble_harmonics(p, p_filtered, z=None, rng_seed: int = 0) -> HarmonicSignals:
    """Stack raw and filtered excitation into the 2-channel signal."""
    p = np.asarray(p, dtype=np.float64)
    pf = np.asarray(p_filtered, dtype=np.float64)
    if p.shape != pf.shape:
        raise ValidationError("p and filtered excitation must have equal length")
    if z is None:
        z = np.zeros_like(p)
    return HarmonicSignals(
        p=p, p_filtered=pf, s=np.stack([p, pf]), z=np.asarray(z, dtype=np.float64),
        rng_seed=rng_seed,
    )


def generate(frame_f0, fs: int, filters_h1, filters_h2, frame_hop: int,
             seed: int) -> HarmonicSignals:
    """Full excitation path: upsample, sine sum, noise, LTV mix, stack."""
    f0s = upsample_f0(frame_f0, fs)
    p = sine_excitation(f0s)
    z = sample_noise(f0s.n_samples, seed)
    pf = filtered_excitation(p, z, filters_h1, filters_h2, frame_hop)
    return assemble_harmonics(p, pf, z=z, rng_seed=seed)

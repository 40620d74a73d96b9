"""Plain-text pitch-track export.

A self-contained autocorrelation tracker on a 10 ms grid, written in the
one-Hz-value-per-line format the conversion pipeline accepts as an
external tracker; deliberately a different algorithm from the pipeline's
built-in detector so the ensemble gains an independent vote.
"""

from __future__ import annotations

import os
import tempfile

import numpy as np

HOP_MS = 10.0
WINDOW_MS = 40.0
VOICING_THRESHOLD = 0.5
POWER_FLOOR = 1e-8


def track_pitch(audio, sample_rate: int,
                f0_range=(50.0, 1000.0)) -> np.ndarray:
    """Per-frame f0 in Hz, 0 for unvoiced, on a 10 ms grid."""
    audio = np.asarray(audio, dtype=np.float64)
    hop = int(round(sample_rate * HOP_MS / 1000.0))
    win = int(round(sample_rate * WINDOW_MS / 1000.0))
    n_frames = int(np.ceil(audio.size / hop))
    padded = np.concatenate([audio, np.zeros(win)])

    lag_min = max(1, int(sample_rate / f0_range[1]))
    lag_max = min(win - 1, int(sample_rate / f0_range[0]))
    out = np.zeros(n_frames)
    for m in range(n_frames):
        frame = padded[m * hop: m * hop + win]
        frame = frame - frame.mean()
        power = float(np.dot(frame, frame)) / win
        if power < POWER_FLOOR or lag_min >= lag_max:
            continue
        # autocorrelation via the power spectrum
        spec = np.fft.rfft(frame, 2 * win)
        ac = np.fft.irfft(spec * np.conj(spec))[:win]
        if ac[0] <= 0:
            continue
        ac = ac / ac[0]
        lag = lag_min + int(np.argmax(ac[lag_min: lag_max + 1]))
        if ac[lag] < VOICING_THRESHOLD:
            continue
        # parabolic refinement around the peak
        if 1 <= lag < win - 1:
            a, b, c = ac[lag - 1], ac[lag], ac[lag + 1]
            denom = a - 2 * b + c
            if denom != 0:
                lag = lag + 0.5 * (a - c) / denom
        out[m] = sample_rate / lag
    return out


def write_pitch_text(f0, path) -> None:
    """One Hz value per line, 0 for unvoiced; atomic write."""
    f0 = np.asarray(f0, dtype=np.float64)
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=directory, suffix=".txt.tmp")
    try:
        with os.fdopen(fd, "w") as f:
            for value in f0:
                f.write(f"{value:.4f}\n")
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise

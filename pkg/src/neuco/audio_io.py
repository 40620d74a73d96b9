"""WAV I/O and sample-rate conversion.

Reads mono 16-bit PCM or 32-bit float WAV (multichannel is averaged down),
always writes 32-bit float mono, atomically. Resampling uses a polyphase
windowed-sinc filter.
"""

from __future__ import annotations

import os
import tempfile
from fractions import Fraction

import numpy as np
from scipy.io import wavfile
from scipy.signal import resample_poly

from .errors import FormatError, ValidationError


def read_wav(path):
    """Returns (samples float64 in [-1, 1], sample_rate)."""
    try:
        rate, data = wavfile.read(path)
    except ValueError as exc:
        raise FormatError(f"{path}: unreadable WAV: {exc}") from exc
    if data.size == 0:
        raise ValidationError(f"{path}: empty audio")
    if data.dtype == np.int16:
        audio = data.astype(np.float64) / 32768.0
    elif data.dtype in (np.float32, np.float64):
        audio = data.astype(np.float64)
    elif data.dtype == np.int32:
        audio = data.astype(np.float64) / 2147483648.0
    else:
        raise FormatError(f"{path}: unsupported WAV sample format {data.dtype}")
    if audio.ndim == 2:
        audio = audio.mean(axis=1)
    return audio, int(rate)


def write_wav(path, audio, sample_rate: int) -> None:
    """32-bit float mono, written via temp + rename."""
    audio = np.asarray(audio, dtype=np.float32)
    if audio.ndim != 1:
        raise ValidationError("output audio must be mono")
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=directory, suffix=".wav.tmp")
    try:
        with os.fdopen(fd, "wb") as f:
            wavfile.write(f, sample_rate, audio)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def resample(audio, rate_in: int, rate_out: int):
    """Windowed-sinc (polyphase Kaiser) resampling."""
    if rate_in == rate_out:
        return np.asarray(audio, dtype=np.float64)
    frac = Fraction(rate_out, rate_in)
    return resample_poly(np.asarray(audio, dtype=np.float64),
                         frac.numerator, frac.denominator)

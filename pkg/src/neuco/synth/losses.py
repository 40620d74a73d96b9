"""Training losses: multi-resolution STFT loss and least-squares GAN terms.

The STFT loss combines spectral convergence and log-magnitude L1 per
resolution. Gradients with respect to the predicted audio are derived by
hand (adjoint of the windowed rFFT) so the whole training graph stays
inside the manual-backprop framework.
"""

from __future__ import annotations

import numpy as np

from ..errors import ValidationError

DEFAULT_RESOLUTIONS = ((512, 128, 512), (1024, 256, 1024), (256, 64, 256))
_EPS = 1e-8
# floor added (in quadrature) to every magnitude; keeps the log term and
# its derivatives bounded on near-empty bins
MAG_FLOOR = 1e-2


def _frame_signal(x, hop, win_length):
    n_frames = 1 + (x.size - win_length) // hop
    idx = hop * np.arange(n_frames)[:, None] + np.arange(win_length)[None, :]
    return x[idx]


def _stft_mag(x, nfft, hop, win_length, window, mag_floor=MAG_FLOOR):
    frames = _frame_signal(x, hop, win_length) * window[None, :]
    spec = np.fft.rfft(frames, n=nfft, axis=1)
    power = (spec * spec.conj()).real
    return np.sqrt(power + mag_floor * mag_floor), spec, frames.shape[0]


def _resolution_loss(mag_a, mag_b):
    diff = mag_a - mag_b
    norm_diff = np.sqrt(np.sum(diff * diff))
    norm_a = np.sqrt(np.sum(mag_a * mag_a))
    sc = norm_diff / max(norm_a, _EPS)
    log_l1 = np.mean(np.abs(np.log(mag_a) - np.log(mag_b)))
    return sc, log_l1, norm_diff, norm_a


def multiscale_stft_loss(a, b, resolutions=DEFAULT_RESOLUTIONS) -> float:
    """Sum over resolutions of spectral convergence + log-magnitude L1."""
    loss, _ = multiscale_stft_loss_grad(a, b, resolutions, want_grad=False)
    return loss


def multiscale_stft_loss_grad(a, b, resolutions=DEFAULT_RESOLUTIONS,
                              want_grad=True, mag_floor=MAG_FLOOR):
    """Loss plus its gradient with respect to `b` (the predicted audio)."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape or a.ndim != 1:
        raise ValidationError("STFT loss needs two equal-length 1-D signals")

    total = 0.0
    grad = np.zeros_like(b) if want_grad else None
    for nfft, hop, win_length in resolutions:
        if win_length > a.size:
            raise ValidationError(
                f"window {win_length} exceeds signal length {a.size}")
        window = np.hanning(win_length)
        mag_a, _, _ = _stft_mag(a, nfft, hop, win_length, window, mag_floor)
        mag_b, spec_b, n_frames = _stft_mag(b, nfft, hop, win_length, window,
                                            mag_floor)
        sc, log_l1, norm_diff, norm_a = _resolution_loss(mag_a, mag_b)
        total += sc + log_l1
        if not want_grad:
            continue

        # d loss / d mag_b
        dmag = np.zeros_like(mag_b)
        if norm_diff > _EPS:
            dmag += (mag_b - mag_a) / (norm_diff * max(norm_a, _EPS))
        dmag += (np.sign(np.log(mag_b) - np.log(mag_a))
                 / (mag_b.size * mag_b))

        # adjoint of sqrt(|rfft(window * frame)|^2 + floor^2)
        y = dmag * spec_b / mag_b
        # each interior rfft bin represents one term of the loss, but
        # irfft doubles them; halve before inverting
        y[:, 1:-1] *= 0.5
        if nfft % 2 == 1:
            y[:, -1] *= 0.5  # odd nfft has no Nyquist bin
        frame_grads = nfft * np.fft.irfft(y, n=nfft, axis=1)[:, :win_length]
        frame_grads *= window[None, :]
        for f in range(n_frames):
            start = f * hop
            grad[start:start + win_length] += frame_grads[f]
    return float(total), grad


def lsgan_losses(disc_out_real, disc_out_fake):
    """Least-squares GAN objectives for the critic and the generator."""
    real = np.asarray(disc_out_real, dtype=np.float64)
    fake = np.asarray(disc_out_fake, dtype=np.float64)
    if not (np.all(np.isfinite(real)) and np.all(np.isfinite(fake))):
        raise ValidationError("discriminator outputs must be finite")
    d_loss = float(np.mean((real - 1.0) ** 2) + np.mean(fake ** 2))
    g_loss = float(np.mean((fake - 1.0) ** 2))
    return d_loss, g_loss


def lsgan_grads(disc_out_real, disc_out_fake):
    """Gradients of (d_loss, g_loss) with respect to the critic outputs.

    Returns (d_real_grad, d_fake_grad_for_d, fake_grad_for_g).
    """
    real = np.asarray(disc_out_real, dtype=np.float64)
    fake = np.asarray(disc_out_fake, dtype=np.float64)
    d_real = 2.0 * (real - 1.0) / real.size
    d_fake = 2.0 * fake / fake.size
    g_fake = 2.0 * (fake - 1.0) / fake.size
    return d_real, d_fake, g_fake

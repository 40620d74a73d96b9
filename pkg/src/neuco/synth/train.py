"""Toy-scale adversarial training with hand-derived gradients.

The generator loss is multi-resolution STFT plus the LSGAN generator term;
gradients flow through the waveform generator, the LTV filtering of the
excitation, and the filter estimator. A finite-difference harness verifies
the analytic gradients on tiny configurations.
"""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import as_strided

from ..errors import TrainingError, ValidationError
from .. import harmonics as hg
from .losses import (
    DEFAULT_RESOLUTIONS,
    _stft_mag,
    lsgan_grads,
    lsgan_losses,
    multiscale_stft_loss_grad,
)
from .model import FRAME_TO_SAMPLE, SynthModel


class Adam:
    """Standard Adam over a flat parameter dict."""

    def __init__(self, lr=0.001, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = {}
        self.v = {}

    def step(self, params, grads):
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        bias1 = 1.0 - b1 ** self.t
        bias2 = 1.0 - b2 ** self.t
        for name, g in grads.items():
            g = np.asarray(g, dtype=np.float64)
            if name not in self.m:
                self.m[name] = np.zeros_like(g)
                self.v[name] = np.zeros_like(g)
            self.m[name] = b1 * self.m[name] + (1 - b1) * g
            self.v[name] = b2 * self.v[name] + (1 - b2) * g * g
            m_hat = self.m[name] / bias1
            v_hat = self.v[name] / bias2
            update = self.lr * m_hat / (np.sqrt(v_hat) + self.eps)
            params[name] = (params[name].astype(np.float64) - update).astype(
                params[name].dtype)


def ltv_filter_grad(signal, grad_out, frame_hop, n_frames, taps):
    """Gradient of apply_ltv's output with respect to the filter taps.

    Mirrors the triangular cross-fade of hg.apply_ltv: frame m's taps see
    its own samples with the rising ramp and the next frame's samples with
    the falling ramp (frame 0 owns its samples outright).
    """
    signal = np.asarray(signal, dtype=np.float64)
    grad_out = np.asarray(grad_out, dtype=np.float64)
    n = signal.size
    xpad = np.concatenate([np.zeros(taps - 1), signal])
    st = xpad.strides[0]
    # windows[n, j] = xpad[n + j] = signal[n - (taps - 1) + j]
    windows = as_strided(xpad, shape=(n, taps), strides=(st, st),
                         writeable=False)

    dfilters = np.zeros((n_frames, taps))
    for m in range(n_frames):
        start = m * frame_hop
        stop = min(start + frame_hop, n)
        g = grad_out[start:stop]
        w = windows[start:stop]
        if m == 0:
            dfilters[0] += (g @ w)[::-1]
        else:
            a = (np.arange(stop - start) + 0.5) / frame_hop
            dfilters[m] += ((a * g) @ w)[::-1]
            dfilters[m - 1] += (((1.0 - a) * g) @ w)[::-1]
    return dfilters


def _generator_forward(model: SynthModel, batch):
    params = model.params
    dtype = next(iter(params.values())).dtype
    ssl = np.asarray(batch["ssl"], dtype=dtype)
    loud = np.asarray(batch["loudness"], dtype=dtype)
    p = np.asarray(batch["p"], dtype=np.float64)
    z = np.asarray(batch["z"], dtype=np.float64)

    (h1, h2), est_cache = model.estimator.forward(params, ssl, loud)
    pf = hg.filtered_excitation(p, z, h1, h2, FRAME_TO_SAMPLE)
    s = np.stack([p, pf]).astype(dtype)
    fake, gen_cache = model.generator.forward(params, ssl, s, loud)
    return fake, (est_cache, gen_cache, p, z)


def _generator_backward(model: SynthModel, cache, dfake, grads):
    est_cache, gen_cache, p, z = cache
    ds = model.generator.backward(model.params, gen_cache, dfake, grads)
    dpf = ds[1].astype(np.float64)
    n_frames = int(np.ceil(p.size / FRAME_TO_SAMPLE))
    taps = model.config.ltv_taps
    dh1 = ltv_filter_grad(p, dpf, FRAME_TO_SAMPLE, n_frames, taps)
    dh2 = ltv_filter_grad(z, dpf, FRAME_TO_SAMPLE, n_frames, taps)
    model.estimator.backward(model.params, est_cache, dh1, dh2, grads)


def generator_loss_and_grads(model, batch, disc=None, disc_params=None,
                             resolutions=DEFAULT_RESOLUTIONS, want_grads=True,
                             mag_floor=None):
    """Total generator loss (STFT + LSGAN-g) and parameter gradients.

    Also accumulates the adversarial path's gradients into the returned
    discriminator grads dict; callers decide whether to apply them.
    """
    target = np.asarray(batch["target"], dtype=np.float64)
    fake, cache = _generator_forward(model, batch)
    fake64 = fake.astype(np.float64)

    floor_kwargs = {} if mag_floor is None else {"mag_floor": mag_floor}
    stft_loss, dfake = multiscale_stft_loss_grad(
        target, fake64, resolutions, want_grad=want_grads, **floor_kwargs)

    g_adv = 0.0
    grads_disc = {}
    disc_cache = None
    d_fake_out = None
    if disc is not None:
        d_fake_out, disc_cache = disc.forward(disc_params, fake)
        _, g_adv = lsgan_losses(np.ones(1), d_fake_out)

    losses = {"stft": stft_loss, "g_adv": g_adv, "g_total": stft_loss + g_adv}
    if not want_grads:
        return losses, None, None

    grads = {}
    if disc is not None:
        _, _, g_fake_grad = lsgan_grads(np.ones(1), d_fake_out)
        dfake = dfake + disc.backward(disc_params, disc_cache, g_fake_grad,
                                      grads_disc)
    _generator_backward(model, cache, dfake, grads)
    return losses, grads, grads_disc


def discriminator_loss_and_grads(disc, disc_params, real, fake):
    """LSGAN critic loss on real vs (detached) fake audio, with gradients."""
    real = np.asarray(real)
    fake = np.asarray(fake)
    out_real, cache_real = disc.forward(disc_params, real)
    out_fake, cache_fake = disc.forward(disc_params, fake)
    d_loss, _ = lsgan_losses(out_real, out_fake)
    d_real_grad, d_fake_grad, _ = lsgan_grads(out_real, out_fake)
    grads = {}
    disc.backward(disc_params, cache_real, d_real_grad, grads)
    disc.backward(disc_params, cache_fake, d_fake_grad, grads)
    return d_loss, grads


def backward_and_step(model, batch, optimizer, disc=None, disc_params=None,
                      disc_optimizer=None,
                      resolutions=DEFAULT_RESOLUTIONS):
    """One critic update (if adversarial) followed by one generator update."""
    report = {}
    if disc is not None:
        fake, _ = _generator_forward(model, batch)
        d_loss, d_grads = discriminator_loss_and_grads(
            disc, disc_params, batch["target"], fake)
        if not np.isfinite(d_loss):
            raise TrainingError(f"non-finite discriminator loss: {d_loss}")
        disc_optimizer.step(disc_params, d_grads)
        report["d_loss"] = d_loss

    losses, grads, _ = generator_loss_and_grads(
        model, batch, disc, disc_params, resolutions)
    if not np.isfinite(losses["g_total"]):
        raise TrainingError(f"non-finite generator loss: {losses}")
    optimizer.step(model.params, grads)
    report.update(losses)
    return model, report


def train_toy(model, batch, steps, lr=0.001, disc=None, disc_params=None,
              resolutions=DEFAULT_RESOLUTIONS, log_fn=None):
    """Seeded toy training loop; returns the per-step loss history."""
    opt = Adam(lr=lr)
    disc_opt = Adam(lr=lr) if disc is not None else None
    history = []
    for step in range(steps):
        model, report = backward_and_step(
            model, batch, opt, disc, disc_params, disc_opt, resolutions)
        history.append(report)
        if log_fn is not None:
            log_fn(step, report)
    return model, history


def make_toy_batch(config, n_frames, seed, fs=24000):
    """Synthetic 1-utterance batch: harmonic target plus random features."""
    rng = np.random.default_rng(seed)
    t = n_frames
    ssl = rng.normal(0.0, 1.0, size=(t, config.value_dim))
    loudness = rng.normal(-1.0, 0.3, size=t)
    # gently varying voiced pitch contour
    frame_f0 = 220.0 * 2.0 ** np.cumsum(rng.normal(0, 0.005, size=t))
    f0s = hg.upsample_f0(frame_f0, fs)
    p = hg.sine_excitation(f0s)
    z = hg.sample_noise(f0s.n_samples, seed + 1)
    # target: the excitation with a slow amplitude envelope plus a touch of noise
    env = 0.4 + 0.2 * np.sin(2 * np.pi * np.arange(p.size) / p.size)
    target = env * p + 0.01 * z / 0.03
    return {
        "ssl": ssl,
        "loudness": loudness,
        "frame_f0": frame_f0,
        "p": p,
        "z": z,
        "target": target,
        "seed": seed,
    }


def finite_difference_errors(loss_fn, params, analytic_grads, sample,
                             eps=1e-4):
    """Central-difference check for selected (name, flat_index) coordinates.

    Returns a list of (name, index, analytic, numeric, rel_error); params
    must already be float64 for the stated tolerances to be meaningful.
    """
    errors = []
    for name, idx in sample:
        p = params[name]
        flat = p.reshape(-1)
        orig = flat[idx]
        flat[idx] = orig + eps
        hi = loss_fn()
        flat[idx] = orig - eps
        lo = loss_fn()
        flat[idx] = orig
        numeric = (hi - lo) / (2.0 * eps)
        analytic = float(np.asarray(analytic_grads.get(name, np.zeros_like(p))
                                    ).reshape(-1)[idx])
        denom = max(abs(analytic), abs(numeric), 1e-6)
        errors.append((name, idx, analytic, numeric,
                       abs(analytic - numeric) / denom))
    return errors


def _loss_and_kink_signature(model, batch, disc, disc_params, resolutions,
                             mag_floor):
    """Generator loss plus the piecewise-linearity signature of the graph.

    The signature records every leaky-rectifier slope pattern and the sign
    pattern of the log-magnitude differences; two evaluations with equal
    signatures lie on the same smooth piece of the loss, so a central
    difference between them approximates a true derivative.
    """
    fake, (est_cache, gen_cache, _, _) = _generator_forward(model, batch)
    fake64 = fake.astype(np.float64)
    signature = [est_cache[1]]
    _, block_caches, _, _, harm_caches, loud_caches, _, _ = gen_cache
    for bc in block_caches:
        signature += [bc[2], bc[4]]
    for stream_caches in (harm_caches, loud_caches):
        for g, _ in stream_caches[1:]:
            signature.append(g)

    target = np.asarray(batch["target"], dtype=np.float64)
    loss, _ = multiscale_stft_loss_grad(target, fake64, resolutions,
                                        want_grad=False, mag_floor=mag_floor)
    for nfft, hop, win_length in resolutions:
        window = np.hanning(win_length)
        mag_a, _, _ = _stft_mag(target, nfft, hop, win_length, window, mag_floor)
        mag_b, _, _ = _stft_mag(fake64, nfft, hop, win_length, window, mag_floor)
        signature.append(np.signbit(mag_a - mag_b))

    if disc is not None:
        d_out, d_caches = disc.forward(disc_params, fake)
        _, g_adv = lsgan_losses(np.ones(1), d_out)
        loss += g_adv
        for g, _ in d_caches[1:-1]:
            signature.append(g)
    return loss, signature


def _same_signature(sig_a, sig_b):
    return all(np.array_equal(a, b) for a, b in zip(sig_a, sig_b))


def gradient_check(model, batch, disc=None, disc_params=None,
                   n_samples=120, eps=1e-4, seed=0,
                   resolutions=((64, 16, 64), (128, 32, 128))):
    """Compare analytic gradients against central differences in float64.

    Samples coordinates across all parameter tensors (generator, estimator
    and, when given, discriminator) and reports the worst relative error.
    The loss is piecewise smooth (leaky rectifiers, L1 terms); probes whose
    +/-eps evaluations land on different smooth pieces are skipped and
    replaced, since a central difference across a kink measures nothing.
    """
    model64 = model.astype(np.float64)
    disc_params64 = None
    if disc is not None:
        disc_params64 = {k: v.astype(np.float64) for k, v in disc_params.items()}
    # condition the check point: zero-bias init parks every pre-activation
    # exactly on a leaky-rectifier kink and the output near the STFT
    # magnitude floor; a random offset moves to a generic point
    crng = np.random.default_rng(seed + 0x5eed)
    for group in ([model64.params] if disc is None
                  else [model64.params, disc_params64]):
        for name in group:
            group[name] = group[name] + crng.normal(0.0, 0.3, group[name].shape)
    # a larger magnitude floor at the check point keeps the loss curvature
    # (which scales as 1 / floor^2 on near-empty bins) small enough that
    # the eps^2 truncation error of central differences stays below the
    # tolerance; the adjoint code path is identical for any floor value
    check_floor = 0.3

    _, grads_model, grads_disc = generator_loss_and_grads(
        model64, batch, disc, disc_params64, resolutions,
        mag_floor=check_floor)
    all_params = dict(model64.params)
    all_grads = dict(grads_model)
    if disc is not None:
        all_params.update(disc_params64)
        all_grads.update(grads_disc)

    rng = np.random.default_rng(seed)
    coords = [(name, i) for name, p in all_params.items()
              for i in range(p.size)]
    order = rng.permutation(len(coords))

    errors = []
    n_skipped = 0
    for pos in order:
        if len(errors) >= n_samples:
            break
        name, idx = coords[pos]
        flat = all_params[name].reshape(-1)
        orig = flat[idx]
        flat[idx] = orig + eps
        hi, sig_hi = _loss_and_kink_signature(model64, batch, disc,
                                              disc_params64, resolutions,
                                              check_floor)
        flat[idx] = orig - eps
        lo, sig_lo = _loss_and_kink_signature(model64, batch, disc,
                                              disc_params64, resolutions,
                                              check_floor)
        flat[idx] = orig
        if not _same_signature(sig_hi, sig_lo):
            n_skipped += 1
            continue
        numeric = (hi - lo) / (2.0 * eps)
        analytic = float(np.asarray(all_grads[name]).reshape(-1)[idx])
        denom = max(abs(analytic), abs(numeric), 1e-6)
        errors.append((name, idx, analytic, numeric,
                       abs(analytic - numeric) / denom))

    worst = max(errors, key=lambda e: e[4])
    return {
        "max_rel_error": worst[4],
        "worst_param": (worst[0], worst[1]),
        "n_checked": len(errors),
        "n_skipped": n_skipped,
        "errors": errors,
    }

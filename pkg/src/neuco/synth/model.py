"""The FiLM-conditioned up/down-sampling waveform generator.

One up-sampling stream of five blocks turns aligned SSL values at frame
rate into audio samples; two four-block down-sampling streams reduce the
audio-rate harmonic and loudness conditioning signals back to the
resolutions of the deeper up blocks, where they are injected through FiLM.
A small convolutional estimator predicts the per-frame LTV filter taps.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..errors import ValidationError
from . import nn

FRAME_TO_SAMPLE = 240  # 10 ms frames -> 24 kHz samples


@dataclass(frozen=True)
class FilmParams:
    """Per-channel-and-time affine modulation coefficients."""

    gamma: np.ndarray
    beta: np.ndarray


def film(x, cond: FilmParams):
    """Apply gamma * x + beta elementwise."""
    y, _ = nn.film_forward(np.asarray(x), np.asarray(cond.gamma),
                           np.asarray(cond.beta))
    return y


@dataclass(frozen=True)
class SynthConfig:
    value_dim: int
    base_channels: int
    up_factors: tuple = (2, 2, 4, 5, 3)
    down_factors: tuple = (3, 5, 4, 2)
    harmonic_channels: int = 2
    loudness_channels: int = 1
    ltv_taps: int = 64
    sample_rate_out: int = 24000

    def __post_init__(self):
        up = tuple(int(f) for f in self.up_factors)
        down = tuple(int(f) for f in self.down_factors)
        object.__setattr__(self, "up_factors", up)
        object.__setattr__(self, "down_factors", down)
        if len(up) != 5:
            raise ValidationError("exactly five up-sampling factors required")
        if len(down) != 4:
            raise ValidationError("exactly four down-sampling factors required")
        if int(np.prod(up)) != FRAME_TO_SAMPLE:
            raise ValidationError(
                f"up factors {up} multiply to {int(np.prod(up))}, need {FRAME_TO_SAMPLE}")
        if down != tuple(reversed(up[1:])):
            raise ValidationError(
                f"down factors {down} must mirror the deeper up factors "
                f"{tuple(reversed(up[1:]))} so conditioning resolutions match")
        if self.value_dim < 1 or self.base_channels < 1 or self.ltv_taps < 1:
            raise ValidationError("dimensions must be positive")

    @property
    def cond_channels(self) -> int:
        # width of each down-sampling stream, derived so shapes follow
        # from the config alone
        return max(self.base_channels // 2, 2)


class _DownStream:
    """Audio-rate conditioning input reduced through four strided convs."""

    def __init__(self, prefix, c_in, c_mid, factors):
        self.in_conv = nn.Conv1d(prefix + ".in", c_in, c_mid, kernel=3)
        self.blocks = [
            nn.DownConv1d(f"{prefix}.down{j}", c_mid, c_mid, factor)
            for j, factor in enumerate(factors)
        ]

    def layers(self):
        return [self.in_conv] + self.blocks

    def forward(self, params, x):
        h, c_in = self.in_conv.forward(params, x)
        caches = [c_in]
        outs = []
        for blk in self.blocks:
            h, g = nn.leaky_forward(h)
            h, c = blk.forward(params, h)
            caches.append((g, c))
            outs.append(h)
        return outs, caches

    def backward(self, params, caches, douts, grads):
        dh = None
        for blk, (g, c), dout in zip(reversed(self.blocks),
                                     reversed(caches[1:]), reversed(douts)):
            dh = dout if dh is None else dout + dh
            dh = blk.backward(params, c, dh, grads)
            dh = nn.leaky_backward(g, dh)
        return self.in_conv.backward(params, caches[0], dh, grads)


class Generator:
    """Layer graph of the synthesizer; parameters live outside in a dict."""

    def __init__(self, config: SynthConfig):
        self.config = config
        c = config.base_channels
        cd = config.cond_channels
        self.pre = nn.Conv1d("gen.pre", config.value_dim, c, kernel=3)
        self.up_blocks = []
        for i, factor in enumerate(config.up_factors):
            cond_in = (config.loudness_channels + config.harmonic_channels
                       if i == 0 else 2 * cd)
            self.up_blocks.append({
                "film": nn.Conv1d(f"gen.up{i}.film", cond_in, 2 * c, kernel=1),
                "upconv": nn.ConvTranspose1d(f"gen.up{i}.tconv", c, c, factor),
                "res": nn.Conv1d(f"gen.up{i}.res", c, c, kernel=3),
            })
        self.head = nn.Conv1d("gen.head", c, 1, kernel=3)
        self.harm_stream = _DownStream("gen.harm", config.harmonic_channels,
                                       cd, config.down_factors)
        self.loud_stream = _DownStream("gen.loud", config.loudness_channels,
                                       cd, config.down_factors)

    def layers(self):
        out = [self.pre, self.head]
        for blk in self.up_blocks:
            out += [blk["film"], blk["upconv"], blk["res"]]
        out += self.harm_stream.layers() + self.loud_stream.layers()
        return out

    def forward(self, params, ssl_values, s, loudness):
        """ssl_values [T, value_dim], s [2, 240T], loudness [T] -> audio [240T]."""
        cfg = self.config
        t = ssl_values.shape[0]
        if ssl_values.shape[1] != cfg.value_dim:
            raise ValidationError(
                f"ssl value_dim {ssl_values.shape[1]} != config {cfg.value_dim}")
        if s.shape != (cfg.harmonic_channels, FRAME_TO_SAMPLE * t):
            raise ValidationError(
                f"harmonic signal shape {s.shape} inconsistent with "
                f"{t} frames (expected {(cfg.harmonic_channels, FRAME_TO_SAMPLE * t)})")
        if loudness.shape != (t,):
            raise ValidationError("loudness length must equal the frame count")

        loud_audio = nn.repeat_forward(loudness[None, :], FRAME_TO_SAMPLE)
        harm_feats, harm_caches = self.harm_stream.forward(params, s)
        loud_feats, loud_caches = self.loud_stream.forward(params, loud_audio)

        # conditioning per up block: block 0 sees frame-rate features
        # directly, blocks 1..4 see the matching down-stream resolution
        s_pooled = nn.avgpool_forward(s, FRAME_TO_SAMPLE)
        conds = [np.concatenate([loudness[None, :], s_pooled], axis=0)]
        for i in range(1, 5):
            j = 4 - i
            conds.append(np.concatenate([harm_feats[j], loud_feats[j]], axis=0))

        c = self.config.base_channels
        x, cache_pre = self.pre.forward(params, ssl_values.T)
        block_caches = []
        for blk, cond in zip(self.up_blocks, conds):
            gb, c_film = blk["film"].forward(params, cond)
            gamma = 1.0 + gb[:c]
            beta = gb[c:]
            x, c_mod = nn.film_forward(x, gamma, beta)
            x, g1 = nn.leaky_forward(x)
            x, c_up = blk["upconv"].forward(params, x)
            xr, g2 = nn.leaky_forward(x)
            r, c_res = blk["res"].forward(params, xr)
            x = x + r
            block_caches.append((c_film, c_mod, g1, c_up, g2, c_res))
        y, cache_head = self.head.forward(params, x)
        audio, tanh_cache = nn.tanh_forward(y[0])
        cache = (cache_pre, block_caches, cache_head, tanh_cache,
                 harm_caches, loud_caches, conds, t)
        return audio, cache

    def backward(self, params, cache, daudio, grads):
        """Returns the gradient with respect to the harmonic input s."""
        (cache_pre, block_caches, cache_head, tanh_cache,
         harm_caches, loud_caches, conds, t) = cache
        c = self.config.base_channels

        dy = nn.tanh_backward(tanh_cache, daudio)[None, :]
        dx = self.head.backward(params, cache_head, dy, grads)

        dcond_harm = [None] * 4
        for i in reversed(range(5)):
            blk = self.up_blocks[i]
            c_film, c_mod, g1, c_up, g2, c_res = block_caches[i]
            dxr = blk["res"].backward(params, c_res, dx, grads)
            dx = dx + nn.leaky_backward(g2, dxr)
            dx = blk["upconv"].backward(params, c_up, dx, grads)
            dx = nn.leaky_backward(g1, dx)
            dx, dgamma, dbeta = nn.film_backward(c_mod, dx)
            dgb = np.concatenate([dgamma, dbeta], axis=0)
            dcond = blk["film"].backward(params, c_film, dgb, grads)
            if i == 0:
                dcond0 = dcond
            else:
                dcond_harm[4 - i] = dcond
        self.pre.backward(params, cache_pre, dx, grads)

        cd = self.config.cond_channels
        dharm_feats = [d[:cd] for d in dcond_harm]
        dloud_feats = [d[cd:] for d in dcond_harm]
        ds = self.harm_stream.backward(params, harm_caches, dharm_feats, grads)
        self.loud_stream.backward(params, loud_caches, dloud_feats, grads)
        # block-0 conditioning also consumed the pooled harmonic signal
        ds = ds + nn.avgpool_backward(
            dcond0[self.config.loudness_channels:], FRAME_TO_SAMPLE)
        return ds


class LtvEstimator:
    """Predicts per-frame FIR taps (h1, h2) from SSL values and loudness."""

    def __init__(self, config: SynthConfig):
        self.config = config
        c = config.base_channels
        self.conv1 = nn.Conv1d("ltv.conv1", config.value_dim + 1, c, kernel=3)
        self.conv2 = nn.Conv1d("ltv.conv2", c, 2 * config.ltv_taps, kernel=1)

    def layers(self):
        return [self.conv1, self.conv2]

    def forward(self, params, ssl_values, loudness):
        if ssl_values.shape[0] != loudness.shape[0]:
            raise ValidationError("frame counts of SSL values and loudness differ")
        x = np.concatenate([ssl_values.T, loudness[None, :]], axis=0)
        h, c1 = self.conv1.forward(params, x)
        h, g = nn.leaky_forward(h)
        taps, c2 = self.conv2.forward(params, h)
        L = self.config.ltv_taps
        h1 = taps[:L].T
        h2 = taps[L:].T
        return (h1, h2), (c1, g, c2)

    def backward(self, params, cache, dh1, dh2, grads):
        c1, g, c2 = cache
        dtaps = np.concatenate([dh1.T, dh2.T], axis=0)
        dh = self.conv2.backward(params, c2, dtaps, grads)
        dh = nn.leaky_backward(g, dh)
        self.conv1.backward(params, c1, dh, grads)


class Discriminator:
    """Small strided-conv critic used only by the LSGAN training losses."""

    def __init__(self, channels=8):
        self.channels = channels
        self.in_conv = nn.Conv1d("disc.in", 1, channels, kernel=15)
        self.blocks = [
            nn.DownConv1d(f"disc.down{j}", channels, channels, 4)
            for j in range(3)
        ]
        self.head = nn.Conv1d("disc.head", channels, 1, kernel=3)

    def layers(self):
        return [self.in_conv] + self.blocks + [self.head]

    def init_params(self, rng, params):
        for layer in self.layers():
            layer.init_params(rng, params)

    def forward(self, params, audio):
        x, c_in = self.in_conv.forward(params, audio[None, :])
        caches = [c_in]
        for blk in self.blocks:
            x, g = nn.leaky_forward(x)
            x, c = blk.forward(params, x)
            caches.append((g, c))
        out, c_head = self.head.forward(params, x)
        caches.append(c_head)
        return out[0], caches

    def backward(self, params, caches, dout, grads):
        dx = self.head.backward(params, caches[-1], dout[None, :], grads)
        for blk, (g, c) in zip(reversed(self.blocks), reversed(caches[1:-1])):
            dx = blk.backward(params, c, dx, grads)
            dx = nn.leaky_backward(g, dx)
        dx = self.in_conv.backward(params, caches[0], dx, grads)
        return dx[0]


@dataclass
class SynthModel:
    """Config plus the flat named-parameter dict for generator + estimator."""

    config: SynthConfig
    params: dict
    generator: Generator = field(repr=False, default=None)
    estimator: LtvEstimator = field(repr=False, default=None)

    def __post_init__(self):
        if self.generator is None:
            self.generator = Generator(self.config)
        if self.estimator is None:
            self.estimator = LtvEstimator(self.config)

    @property
    def parameter_count(self) -> int:
        return sum(int(p.size) for p in self.params.values())

    def astype(self, dtype):
        return SynthModel(
            config=self.config,
            params={k: v.astype(dtype) for k, v in self.params.items()},
            generator=self.generator, estimator=self.estimator,
        )


def build_model(config: SynthConfig, seed: int, dtype=np.float32) -> SynthModel:
    """Deterministic fan-in-scaled uniform init, zero biases."""
    rng = np.random.default_rng(seed)
    model = SynthModel(config=config, params={})
    for layer in model.generator.layers() + model.estimator.layers():
        layer.init_params(rng, model.params)
    model.params = {k: v.astype(dtype) for k, v in model.params.items()}
    return model


def build_discriminator(seed: int, channels=8, dtype=np.float32):
    rng = np.random.default_rng(seed)
    disc = Discriminator(channels)
    params = {}
    disc.init_params(rng, params)
    return disc, {k: v.astype(dtype) for k, v in params.items()}


def forward(model: SynthModel, ssl_values, harmonics, loudness) -> np.ndarray:
    """Synthesize audio: [T, value_dim] frames -> [240 T] samples."""
    dtype = next(iter(model.params.values())).dtype
    audio, _ = model.generator.forward(
        model.params,
        np.asarray(ssl_values, dtype=dtype),
        np.asarray(harmonics, dtype=dtype),
        np.asarray(loudness, dtype=dtype),
    )
    if not np.all(np.isfinite(audio)):
        raise ValidationError("synthesizer produced non-finite samples")
    return audio


def estimate_ltv_filters(ssl_values, loudness, model: SynthModel):
    """Per-frame (h1, h2) FIR tap matrices, [n_frames, ltv_taps] each."""
    dtype = next(iter(model.params.values())).dtype
    (h1, h2), _ = model.estimator.forward(
        model.params,
        np.asarray(ssl_values, dtype=dtype),
        np.asarray(loudness, dtype=dtype),
    )
    if not (np.all(np.isfinite(h1)) and np.all(np.isfinite(h2))):
        raise ValidationError("LTV estimator produced non-finite taps")
    return h1, h2

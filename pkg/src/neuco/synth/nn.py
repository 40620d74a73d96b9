"""Minimal 1-D convolution toolkit with hand-written backward passes.

Parameters live in a flat dict (name -> ndarray); each layer knows its
parameter names and hyperparameters but holds no state. ``forward``
returns an activation plus an opaque cache, ``backward`` consumes the
cache and accumulates parameter gradients into a grads dict. Everything
runs in whatever float dtype the parameters carry (float64 during
gradient checks, float32 in training).
"""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import as_strided

from ..errors import ValidationError

LEAKY_SLOPE = 0.1


def init_uniform(rng, shape, fan_in):
    scale = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-scale, scale, size=shape)


class Conv1d:
    """Strided 1-D convolution over [channels, time] arrays.

    Padding is explicit (left, right); output length is
    (padded - kernel) // stride + 1.
    """

    def __init__(self, name, c_in, c_out, kernel, stride=1, pad=None):
        self.name = name
        self.c_in = c_in
        self.c_out = c_out
        self.kernel = kernel
        self.stride = stride
        if pad is None:
            # 'same' for stride 1: total pad = kernel - 1
            pad = ((kernel - 1) // 2, kernel // 2)
        self.pad = pad

    @property
    def param_names(self):
        return (self.name + ".w", self.name + ".b")

    def init_params(self, rng, params):
        w_name, b_name = self.param_names
        params[w_name] = init_uniform(
            rng, (self.c_out, self.c_in, self.kernel), self.c_in * self.kernel)
        params[b_name] = np.zeros(self.c_out)  # zero-bias initialization

    def _windows(self, xp, n_out):
        c, _ = xp.shape
        s0, s1 = xp.strides
        return as_strided(
            xp, shape=(c, self.kernel, n_out),
            strides=(s0, s1, s1 * self.stride), writeable=False)

    def forward(self, params, x):
        if x.shape[0] != self.c_in:
            raise ValidationError(
                f"{self.name}: expected {self.c_in} channels, got {x.shape[0]}")
        w = params[self.name + ".w"]
        b = params[self.name + ".b"]
        pl, pr = self.pad
        xp = np.pad(x, ((0, 0), (pl, pr)))
        n_out = (xp.shape[1] - self.kernel) // self.stride + 1
        win = self._windows(xp, n_out)
        y = np.einsum("oik,ikn->on", w, win) + b[:, None]
        return y, (xp, n_out)

    def backward(self, params, cache, dy, grads):
        xp, n_out = cache
        w = params[self.name + ".w"]
        win = self._windows(xp, n_out)
        w_name, b_name = self.param_names
        grads[w_name] = grads.get(w_name, 0.0) + np.einsum("on,ikn->oik", dy, win)
        grads[b_name] = grads.get(b_name, 0.0) + dy.sum(axis=1)

        dxp = np.zeros_like(xp)
        pos = self.stride * np.arange(n_out)
        for k in range(self.kernel):
            dxp[:, pos + k] += w[:, :, k].T @ dy
        pl, pr = self.pad
        end = dxp.shape[1] - pr
        return dxp[:, pl:end]


class ConvTranspose1d:
    """Upsampling by zero-stuffing followed by a same-length convolution.

    Output length is exactly factor * input length; the kernel spans
    2 * factor taps.
    """

    def __init__(self, name, c_in, c_out, factor):
        self.name = name
        self.factor = factor
        kernel = 2 * factor
        self.conv = Conv1d(name, c_in, c_out, kernel, stride=1,
                           pad=(factor, factor - 1))

    @property
    def param_names(self):
        return self.conv.param_names

    def init_params(self, rng, params):
        self.conv.init_params(rng, params)

    def forward(self, params, x):
        stuffed = np.zeros((x.shape[0], x.shape[1] * self.factor), dtype=x.dtype)
        stuffed[:, :: self.factor] = x
        y, cache = self.conv.forward(params, stuffed)
        return y, cache

    def backward(self, params, cache, dy, grads):
        dstuffed = self.conv.backward(params, cache, dy, grads)
        return dstuffed[:, :: self.factor]


class DownConv1d(Conv1d):
    """Strided conv with kernel 2*factor reducing length by exactly factor."""

    def __init__(self, name, c_in, c_out, factor):
        pl = factor // 2
        super().__init__(name, c_in, c_out, kernel=2 * factor, stride=factor,
                         pad=(pl, factor - pl))


def leaky_forward(x, slope=LEAKY_SLOPE):
    grad = np.where(x > 0, 1.0, slope)
    return x * grad, grad


def leaky_backward(grad, dy):
    return dy * grad


def film_forward(x, gamma, beta):
    """Elementwise affine modulation: gamma * x + beta."""
    if gamma.shape != x.shape or beta.shape != x.shape:
        raise ValidationError(
            f"FiLM shape mismatch: x {x.shape}, gamma {gamma.shape}, beta {beta.shape}")
    return gamma * x + beta, (x, gamma)


def film_backward(cache, dy):
    x, gamma = cache
    return dy * gamma, dy * x, dy  # dx, dgamma, dbeta


def repeat_forward(x, factor):
    """Nearest-neighbor upsampling along time."""
    return np.repeat(x, factor, axis=-1)


def repeat_backward(dy, factor):
    c, n = dy.shape
    return dy.reshape(c, n // factor, factor).sum(axis=2)


def avgpool_forward(x, factor):
    c, n = x.shape
    if n % factor:
        raise ValidationError(f"length {n} not divisible by pool factor {factor}")
    return x.reshape(c, n // factor, factor).mean(axis=2)


def avgpool_backward(dy, factor):
    return np.repeat(dy, factor, axis=-1) / factor


def tanh_forward(x):
    y = np.tanh(x)
    return y, y


def tanh_backward(y, dy):
    return dy * (1.0 - y * y)

"""Reconstruction stack: RSS channel combination, a small residual CNN with
hand-written backward pass, the L1 task loss and k-space noise injection.

Convolutions are "same"-size cross-correlations with zero padding (the usual
CNN convention).  They are evaluated as zero-padded FFT products; the FFT
length is large enough that no circular wrap-around occurs, so the result is
the exact linear correlation up to rounding.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import fft as sfft


# -- channel combination -------------------------------------------------------

def rss(channels, axis: int = -3) -> np.ndarray:
    """Root-sum-of-squares over the channel axis."""
    return np.sqrt(np.sum(np.abs(channels) ** 2, axis=axis))


def rss_backward(channels, upstream, axis: int = -3) -> np.ndarray:
    """Gradient of ``rss`` w.r.t. (possibly complex) channels; 0 where rss == 0."""
    r = rss(channels, axis=axis)
    scale = np.where(r > 0, upstream / np.where(r > 0, r, 1.0), 0.0)
    return np.expand_dims(scale, axis) * channels


# -- model ---------------------------------------------------------------------

@dataclass
class TaskModelParams:
    """Convolution stack ``weights[i]: (out, in, s, s)`` and ``biases[i]: (out,)``.

    ``input_scale`` multiplies the model input before the first layer and in the
    residual path.  It is a calibration constant, not a trained parameter.
    """

    weights: list
    biases: list
    input_scale: float = 1.0

    def __post_init__(self):
        if len(self.weights) != len(self.biases) or not self.weights:
            raise ValueError("need one bias vector per convolution layer")
        prev = 1
        for w, b in zip(self.weights, self.biases):
            if w.ndim != 4 or w.shape[2] != w.shape[3] or w.shape[2] % 2 == 0:
                raise ValueError(f"kernel must be (out, in, s, s) with odd s, got {w.shape}")
            if w.shape[1] != prev or b.shape != (w.shape[0],):
                raise ValueError("layer shapes do not chain")
            prev = w.shape[0]
        if prev != 1:
            raise ValueError("last layer must have a single output channel")

    @property
    def arrays(self) -> list:
        """Trainable arrays in a fixed order (weights then bias, per layer)."""
        out = []
        for w, b in zip(self.weights, self.biases):
            out += [w, b]
        return out

    def with_arrays(self, arrays) -> "TaskModelParams":
        return TaskModelParams(list(arrays[0::2]), list(arrays[1::2]), self.input_scale)

    def copy(self) -> "TaskModelParams":
        return self.with_arrays([a.copy() for a in self.arrays])


def init_model(seed: int = 0, widths=(1, 8, 8, 1), kernel_size: int = 5, input_scale: float = 1.0):
    """He-initialized stack; the last layer starts small so the model begins near identity."""
    rng = np.random.default_rng(seed)
    weights, biases = [], []
    for i, (cin, cout) in enumerate(zip(widths[:-1], widths[1:])):
        fan_in = cin * kernel_size**2
        std = np.sqrt(2.0 / fan_in)
        if i == len(widths) - 2:
            std *= 0.1
        weights.append(rng.normal(0.0, std, size=(cout, cin, kernel_size, kernel_size)))
        biases.append(np.zeros(cout))
    return TaskModelParams(weights, biases, input_scale)


class _Spectral:
    """FFT geometry for same-size correlations of ``n x n`` maps with ``s x s`` kernels."""

    _cache: dict = {}

    def __new__(cls, n: int, s: int):
        key = (n, s)
        if key not in cls._cache:
            obj = super().__new__(cls)
            obj.n, obj.s, obj.p = n, s, s // 2
            obj.L = sfft.next_fast_len(n + s - 1, real=True)
            L = obj.L
            obj.out_idx = (np.arange(n) - obj.p) % L
            obj.in_idx = np.arange(n) + obj.p
            obj.lag_idx = (np.arange(s) - obj.p) % L
            cls._cache[key] = obj
        return cls._cache[key]

    def rfft(self, x):
        return sfft.rfft2(x, s=(self.L, self.L))

    def irfft(self, X):
        return sfft.irfft2(X, s=(self.L, self.L))


def _mix(X, W):
    """``out[b, o] = sum_c X[b, c] * W[o, c]`` per frequency bin, via batched matmul."""
    # (F, B, C) @ (F, C, O) -> (F, B, O)
    Xf = np.moveaxis(X, (0, 1), (-2, -1)).reshape(-1, X.shape[0], X.shape[1])
    Wf = np.moveaxis(W, (0, 1), (-1, -2)).reshape(-1, W.shape[1], W.shape[0])
    out = np.matmul(Xf, Wf)
    return np.moveaxis(out.reshape(*X.shape[2:], X.shape[0], W.shape[0]), (-2, -1), (0, 1))


def _conv_forward(x, w, b):
    """Same-size zero-padded correlation; returns output and input spectrum for backward."""
    geo = _Spectral(x.shape[-1], w.shape[-1])
    X = geo.rfft(x)
    Wf = geo.rfft(w.astype(x.dtype, copy=False))
    r = geo.irfft(_mix(X, np.conj(Wf)))
    out = r[:, :, geo.out_idx[:, None], geo.out_idx[None, :]]
    return out + b.astype(x.dtype)[None, :, None, None], X, Wf


def _conv_backward(dout, X, Wf, s):
    geo = _Spectral(dout.shape[-1], s)
    D = geo.rfft(dout)
    # dx = full convolution of dout with w, shifted by the padding
    dx = geo.irfft(_mix(D, np.swapaxes(Wf, 0, 1)))[:, :, geo.in_idx[:, None], geo.in_idx[None, :]]
    # dw[o, c, i, j] = sum_b corr(dout[b, o], x[b, c]) at lag (i - p, j - p)
    Dc = np.conj(D)
    G = np.empty((D.shape[1],) + X.shape[1:], dtype=X.dtype)
    for o in range(D.shape[1]):
        G[o] = (Dc[:, o : o + 1] * X).sum(axis=0)
    dw = geo.irfft(G)[:, :, geo.lag_idx[:, None], geo.lag_idx[None, :]]
    db = dout.sum(axis=(0, 2, 3))
    return dx, dw, db


def model_forward(params: TaskModelParams, image):
    """Apply the residual CNN to real ``(n, n)`` or ``(B, n, n)`` images.

    Returns ``(output, cache)``; output has the input's shape.
    """
    x = np.asarray(image)
    if x.dtype != np.float32:
        x = x.astype(np.float64)
    single = x.ndim == 2
    if single:
        x = x[None]
    h = x.dtype.type(params.input_scale) * x[:, None]
    x0 = h
    cache = {"single": single, "layers": []}
    last = len(params.weights) - 1
    for i, (w, b) in enumerate(zip(params.weights, params.biases)):
        z, X, Wf = _conv_forward(h, w, b)
        cache["layers"].append((X, Wf, z))
        h = z if i == last else np.maximum(z, 0.0)
    out = (h + x0)[:, 0]
    return (out[0] if single else out), cache


def model_backward(params: TaskModelParams, cache, upstream):
    """Return ``(grad_params, grad_input)``; ``grad_params`` matches ``params.arrays``."""
    g = np.asarray(upstream)
    if cache["single"]:
        g = g[None]
    g = g[:, None]
    g_res = g
    grads = [None] * (2 * len(params.weights))
    for i in range(len(params.weights) - 1, -1, -1):
        X, Wf, z = cache["layers"][i]
        if i != len(params.weights) - 1:
            g = g * (z > 0)
        s = params.weights[i].shape[-1]
        dx, dw, db = _conv_backward(g, X, Wf, s)
        grads[2 * i], grads[2 * i + 1] = dw.astype(np.float64), db.astype(np.float64)
        g = dx
    gin = g.dtype.type(params.input_scale) * (g + g_res)[:, 0]
    return grads, (gin[0] if cache["single"] else gin)


# -- loss ------------------------------------------------------------------------

def l1_loss(pred, target):
    """Mean absolute error and its subgradient (0 at ties)."""
    pred = np.asarray(pred)
    diff = pred - np.asarray(target, dtype=pred.dtype)
    return float(np.mean(np.abs(diff), dtype=np.float64)), (np.sign(diff) / diff.size).astype(pred.dtype)


# -- noise -----------------------------------------------------------------------

def add_noise(samples, snr_db: float, seed=None, rng: np.random.Generator | None = None):
    """Add complex white Gaussian noise at the given per-channel SNR (dB).

    Every array over the last two axes (shots, m) is one channel; its signal
    power is measured from ``samples``.  ``snr_db = inf`` returns the input.
    """
    samples = np.asarray(samples)
    if snr_db is None or np.isinf(snr_db):
        return samples
    if rng is None:
        rng = np.random.default_rng(seed)
    power = np.mean(np.abs(samples) ** 2, axis=(-2, -1), keepdims=True)
    noise_power = power / 10.0 ** (snr_db / 10.0)
    std = np.sqrt(noise_power / 2.0)
    noise = rng.standard_normal(samples.shape) + 1j * rng.standard_normal(samples.shape)
    return (samples + std * noise).astype(np.result_type(samples.dtype, np.complex64), copy=False)

"""Kaiser-Bessel gridding NUFFT with gradients with respect to sample coordinates.

Conventions
-----------
Images are ``(..., n, n)`` arrays indexed ``img[iu, iv]`` with frequencies
``u = iu - n/2`` and ``v = iv - n/2``; the first image axis pairs with ``kx``.
The forward transform evaluates

    X(k) = sum_{u,v} Z[u, v] exp(-2 pi i (kx u + ky v) / n)

at trajectory coordinates ``k`` given in grid units.  Sample arrays have shape
``(..., shots, m)`` with the same leading (batch / channel) axes as the image.

Gradients follow the real-loss convention: an upstream ``g`` for a complex
array ``x`` is ``dL/dRe(x) + 1j * dL/dIm(x)``, so that a perturbation changes
the loss by ``Re <g, dx>``.  Both coordinate gradients hold the grid-cell
assignment of every sample fixed and differentiate the kernel weights only.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
from scipy import fft as sfft
from scipy.special import i0, i1

from .kinematics import Trajectory


@dataclass(frozen=True)
class NufftConfig:
    oversampling: float = 1.25
    kernel_width: int = 4
    kernel_beta: float | None = None

    def __post_init__(self):
        if not self.oversampling > 1:
            raise ValueError("oversampling must be > 1")
        if self.kernel_width < 2 or self.kernel_width % 2:
            raise ValueError("kernel_width must be an even integer >= 2")
        if self.kernel_beta is None:
            w, os_ = self.kernel_width, self.oversampling
            beta = math.pi * math.sqrt((w / os_ * (os_ - 0.5)) ** 2 - 0.8)
            object.__setattr__(self, "kernel_beta", beta)
        if not self.kernel_beta > 0:
            raise ValueError("kernel_beta must be > 0")

    def grid_size(self, n: int) -> int:
        g = math.ceil(self.oversampling * n - 1e-9)
        return g + (g % 2)


def kb_kernel(u, cfg: NufftConfig = NufftConfig()):
    """Kaiser-Bessel weight at offset ``u`` (oversampled cells), zero outside the support."""
    u = np.asarray(u, dtype=np.float64)
    w, beta = cfg.kernel_width, cfg.kernel_beta
    arg = 1.0 - (2.0 * u / w) ** 2
    inside = arg >= 0
    return np.where(inside, i0(beta * np.sqrt(np.maximum(arg, 0.0))), 0.0)


def kb_kernel_deriv(u, cfg: NufftConfig = NufftConfig()):
    """d kb_kernel / du."""
    u = np.asarray(u, dtype=np.float64)
    w, beta = cfg.kernel_width, cfg.kernel_beta
    arg = 1.0 - (2.0 * u / w) ** 2
    inside = arg >= 0
    s = np.sqrt(np.maximum(arg, 0.0))
    bs = beta * s
    # I1(beta s) / s, with its limit beta / 2 as s -> 0
    small = bs < 1e-8
    ratio = np.where(small, beta / 2.0, i1(bs) / np.where(small, 1.0, s))
    return np.where(inside, -beta * (4.0 * u / w**2) * ratio, 0.0)


def kb_transform(xi, cfg: NufftConfig = NufftConfig()):
    """Continuous Fourier transform of :func:`kb_kernel` at frequency ``xi`` (cycles/cell)."""
    xi = np.asarray(xi, dtype=np.float64)
    w, beta = cfg.kernel_width, cfg.kernel_beta
    t = beta**2 - (math.pi * w * xi) ** 2
    root = np.sqrt(np.abs(t))
    with np.errstate(invalid="ignore", divide="ignore"):
        val = np.where(t > 0, np.sinh(root) / root, np.sin(root) / root)
    return w * np.where(root < 1e-12, 1.0, val)


class NufftOperator:
    """Forward/adjoint NUFFT for one trajectory, with precomputed interpolation matrices.

    Building the operator costs one kernel evaluation per (sample, tap); all
    transforms and coordinate gradients then reuse the same sparse matrices.
    """

    def __init__(self, traj, n: int, cfg: NufftConfig = NufftConfig(), dtype=np.float64):
        coords = traj.coords if isinstance(traj, Trajectory) else np.asarray(traj, dtype=np.float64)
        if coords.ndim == 2:
            coords = coords[None]
        half = n / 2
        if np.any(np.abs(coords) > half * (1 + 1e-12)):
            raise ValueError(f"trajectory coordinate outside the grid [-{half}, {half}]")
        self.n = int(n)
        self.cfg = cfg
        self.dtype = np.dtype(dtype)
        self.cdtype = np.result_type(self.dtype, np.complex64)
        self.G = cfg.grid_size(n)
        self.shape = coords.shape[:2]
        self.scale = self.G / self.n
        z = coords.reshape(-1, 2) * self.scale
        self._build(z)
        freqs = np.arange(self.n) - self.n // 2
        apod = kb_transform(freqs / self.G, cfg)
        self._deapod = (1.0 / np.outer(apod, apod)).astype(self.dtype)
        self._idx = freqs % self.G

    def _build(self, z: np.ndarray):
        cfg, G = self.cfg, self.G
        half_w = cfg.kernel_width / 2
        taps = cfg.kernel_width + 1
        M = z.shape[0]
        start = np.ceil(z - half_w)  # (M, 2)
        grid = start[:, :, None] + np.arange(taps)  # (M, 2, taps)
        offset = z[:, :, None] - grid
        wt = kb_kernel(offset, cfg)
        dwt = kb_kernel_deriv(offset, cfg)
        cell = grid.astype(np.int64) % G
        wx, wy = wt[:, 0], wt[:, 1]
        dwx, dwy = dwt[:, 0], dwt[:, 1]
        cols = (cell[:, 0, :, None] * G + cell[:, 1, None, :]).reshape(M, -1)
        rows = np.repeat(np.arange(M), taps * taps)

        def mat(a, b):
            data = (a[:, :, None] * b[:, None, :]).reshape(-1)
            return sp.csr_matrix((data.astype(self.dtype), (rows, cols.reshape(-1))), shape=(M, G * G))

        self.A = mat(wx, wy)
        # offset = z - grid, so d(weight)/dz is the kernel derivative itself
        self.Ax = mat(dwx, wy)
        self.Ay = mat(wx, dwy)
        self._stacked = sp.vstack([self.A, self.Ax, self.Ay], format="csr")

    # -- grid helpers ----------------------------------------------------
    def spectrum(self, image: np.ndarray):
        """Apodize, zero-pad and FFT: ``(..., n, n)`` -> ``((G*G, batch), lead_shape)``."""
        lead = image.shape[:-2]
        img = np.asarray(image).reshape(-1, self.n, self.n) * self._deapod
        buf = np.zeros((img.shape[0], self.G, self.G), dtype=self.cdtype)
        buf[:, self._idx[:, None], self._idx[None, :]] = img
        spec = sfft.fft2(buf, overwrite_x=True)
        return spec.reshape(spec.shape[0], -1).T, lead

    def image_from_grid(self, grid: np.ndarray, lead) -> np.ndarray:
        """Adjoint of :meth:`_to_grid`: ``(G*G, batch)`` -> ``(..., n, n)``."""
        buf = grid.T.reshape(-1, self.G, self.G)
        img = sfft.ifft2(buf) * (self.G * self.G)
        img = img[:, self._idx[:, None], self._idx[None, :]] * self._deapod
        return img.reshape(*lead, self.n, self.n)

    def interpolate_all(self, grid: np.ndarray):
        """Samples and their z-derivatives from one spectrum: three ``(M, batch)`` arrays."""
        out = self._stacked @ grid
        M = self.A.shape[0]
        return out[:M], out[M:2 * M], out[2 * M:]

    def unflatten_samples(self, flat: np.ndarray, lead) -> np.ndarray:
        return flat.T.reshape(*lead, *self.shape)

    def flatten_samples(self, samples: np.ndarray):
        samples = np.asarray(samples)
        if samples.shape[-2:] != self.shape:
            raise ValueError(f"samples shape {samples.shape} does not match trajectory {self.shape}")
        lead = samples.shape[:-2]
        return samples.reshape(-1, self.shape[0] * self.shape[1]).T, lead

    # -- transforms ------------------------------------------------------
    def forward(self, image: np.ndarray) -> np.ndarray:
        grid, lead = self.spectrum(image)
        return self.unflatten_samples(self.A @ grid, lead)

    def adjoint(self, samples: np.ndarray) -> np.ndarray:
        flat, lead = self.flatten_samples(samples)
        return self.image_from_grid(self.A.T @ flat, lead)

    def _reduce(self, left: np.ndarray, gx: np.ndarray, gy: np.ndarray) -> np.ndarray:
        # Re(conj(left) * right) summed over all batch columns
        out = np.empty((left.shape[0], 2))
        out[:, 0] = np.real(np.conj(left) * gx).sum(axis=1)
        out[:, 1] = np.real(np.conj(left) * gy).sum(axis=1)
        return out.reshape(*self.shape, 2) * self.scale

    def forward_grad_k(self, image: np.ndarray, upstream: np.ndarray) -> np.ndarray:
        """Gradient of ``Re <upstream, forward(image)>`` w.r.t. the coordinates."""
        grid, _ = self.spectrum(image)
        up, _ = self.flatten_samples(upstream)
        return self._reduce(up, self.Ax @ grid, self.Ay @ grid)

    def adjoint_grad_k(self, samples: np.ndarray, upstream: np.ndarray) -> np.ndarray:
        """Gradient of ``Re <upstream, adjoint(samples)>`` w.r.t. the coordinates."""
        flat, _ = self.flatten_samples(samples)
        proj, _ = self.spectrum(np.asarray(upstream))
        # Re<g, d adj/dz> = Re(y * conj(A' h)) = Re(conj(A' h) * y)
        hx, hy = self.Ax @ proj, self.Ay @ proj
        out = np.empty((flat.shape[0], 2))
        out[:, 0] = np.real(np.conj(hx) * flat).sum(axis=1)
        out[:, 1] = np.real(np.conj(hy) * flat).sum(axis=1)
        return out.reshape(*self.shape, 2) * self.scale


def forward(image, traj, cfg: NufftConfig = NufftConfig()):
    image = np.asarray(image)
    return NufftOperator(traj, image.shape[-1], cfg).forward(image)


def adjoint(samples, traj, cfg: NufftConfig = NufftConfig(), n: int | None = None):
    if n is None:
        n = traj.n
    return NufftOperator(traj, n, cfg).adjoint(samples)


def forward_grad_k(image, traj, cfg: NufftConfig, upstream):
    image = np.asarray(image)
    return NufftOperator(traj, image.shape[-1], cfg).forward_grad_k(image, upstream)


def adjoint_grad_k(samples, traj, cfg: NufftConfig, n: int, upstream):
    return NufftOperator(traj, n, cfg).adjoint_grad_k(samples, upstream)


def _ndft_matrices(traj, n):
    coords = traj.coords if isinstance(traj, Trajectory) else np.asarray(traj, dtype=np.float64)
    if coords.ndim == 2:
        coords = coords[None]
    k = coords.reshape(-1, 2)
    freqs = np.arange(n) - n // 2
    ex = np.exp(-2j * np.pi * np.outer(k[:, 0], freqs) / n)
    ey = np.exp(-2j * np.pi * np.outer(k[:, 1], freqs) / n)
    return ex, ey, coords.shape[:2]


def ndft_forward(image, traj):
    """Direct non-uniform DFT, O(n^2 m).  Test oracle."""
    image = np.asarray(image)
    n = image.shape[-1]
    ex, ey, shape = _ndft_matrices(traj, n)
    lead = image.shape[:-2]
    out = np.einsum("ju,buv,jv->bj", ex, image.reshape(-1, n, n), ey)
    return out.reshape(*lead, *shape)


def ndft_adjoint(samples, traj, n: int):
    """Conjugate transpose of :func:`ndft_forward`."""
    ex, ey, shape = _ndft_matrices(traj, n)
    samples = np.asarray(samples)
    lead = samples.shape[:-2]
    flat = samples.reshape(-1, shape[0] * shape[1])
    out = np.einsum("ju,bj,jv->buv", ex.conj(), flat, ey.conj())
    return out.reshape(*lead, n, n)

"""End-to-end objective: sub-sample -> (noise) -> regrid -> RSS -> model -> L1.

One call evaluates the task loss for a batch and back-propagates it to the
model parameters and to every trajectory coordinate.  The NUFFT coordinate
gradient collects two terms, one through the sub-sampling layer and one
through the regridding layer, since both depend on the same coordinates.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..nufft import NufftOperator
from ..taskmodel import TaskModelParams, add_noise, l1_loss, model_backward, model_forward, rss, rss_backward


@dataclass
class BatchResult:
    loss: float
    pred: np.ndarray
    grad_params: list | None
    grad_coords: np.ndarray | None


def _noise(X, snr_db, rng):
    if snr_db is None or np.isinf(snr_db):
        return X
    # noise level is measured from the clean samples but treated as a constant
    return add_noise(X, snr_db, rng=rng)


def model_input(op: NufftOperator, channels, snr_db=None, rng=None):
    """RSS of the channel-wise regridded images, ``(B, n, n)``."""
    X = op.forward(channels)
    X = _noise(X, snr_db, rng)
    return rss(op.adjoint(X))


def reconstruct(op: NufftOperator, params: TaskModelParams, channels, snr_db=None, rng=None):
    return model_forward(params, model_input(op, channels, snr_db, rng))[0]


def batch_loss_and_grads(
    op: NufftOperator,
    params: TaskModelParams,
    channels,
    targets,
    snr_db=None,
    rng=None,
    traj_grad: bool = True,
) -> BatchResult:
    """Task loss of a batch ``channels (B, l, n, n)`` against ``targets (B, n, n)``."""
    channels = np.asarray(channels)
    S, lead = op.spectrum(channels)
    X, dX_x, dX_y = op.interpolate_all(S) if traj_grad else (op.A @ S, None, None)
    Xn = _noise(op.unflatten_samples(X, lead), snr_db, rng)
    Xn_flat, _ = op.flatten_samples(Xn)
    adj = op.image_from_grid(op.A.T @ Xn_flat, lead)
    r = rss(adj)
    pred, cache = model_forward(params, r)
    loss, g_pred = l1_loss(pred, targets)
    g_params, g_r = model_backward(params, cache, g_pred)
    if not traj_grad:
        return BatchResult(loss, pred, g_params, None)

    g_adj = rss_backward(adj, g_r)
    H, _ = op.spectrum(g_adj)
    gX, dH_x, dH_y = op.interpolate_all(H)
    # regridding layer: Re(conj(A'_z H) * y); sub-sampling layer: Re(conj(A H) * A'_z S)
    gx = np.real(np.conj(dH_x) * Xn_flat).sum(axis=1) + np.real(np.conj(gX) * dX_x).sum(axis=1)
    gy = np.real(np.conj(dH_y) * Xn_flat).sum(axis=1) + np.real(np.conj(gX) * dX_y).sum(axis=1)
    grad = np.stack([gx, gy], axis=-1).reshape(*op.shape, 2) * op.scale
    return BatchResult(loss, pred, g_params, grad)

"""Tradeoff heatmap loss, normalized smooth-L1 offset regression loss and
their combination, each returning analytic gradients w.r.t. the predicted
maps."""
from dataclasses import dataclass

import numpy as np


class DegenerateInstanceError(ValueError):
    """A center-region pixel belongs to an instance of zero size."""


@dataclass
class LossConfig:
    lam: float = 0.01
    smooth_l1_beta: float = 1.0
    normalize: bool = False

    def __post_init__(self):
        if self.lam <= 0 or self.smooth_l1_beta <= 0:
            raise ValueError("lam and smooth_l1_beta must be positive")


def _check_shape(name, a, b):
    if a.shape != b.shape:
        raise ValueError(f"{name}: shape {a.shape} does not match target {b.shape}")


def heatmap_loss(pred, target, normalize=False):
    """Masked squared error ``sum((M * (H - H*))**2)`` and its gradient."""
    pred = np.asarray(pred, dtype=np.float64)
    _check_shape("heatmaps", pred, target.kp_heatmaps)
    m2 = target.loss_mask**2
    diff = pred - target.kp_heatmaps
    loss = float(np.sum(m2 * diff * diff))
    grad = 2.0 * m2 * diff
    if normalize:
        loss /= pred.size
        grad /= pred.size
    return loss, grad


def smooth_l1(x, beta=1.0):
    """Huber-style kernel: quadratic below ``beta``, linear above.

    Works elementwise on arrays; returns ``(value, derivative)``.
    """
    x = np.asarray(x, dtype=np.float64)
    ax = np.abs(x)
    quad = ax < beta
    value = np.where(quad, 0.5 * x * x / beta, ax - 0.5 * beta)
    deriv = np.where(quad, x / beta, np.sign(x))
    if value.ndim == 0:
        return float(value), float(deriv)
    return value, deriv


def regression_loss(pred_center, pred_offsets, target, cfg=None):
    """Offset term over center-region pixels, weighted by 1/Z, plus the
    unmasked center-heatmap squared error.

    Smooth-L1 is applied to every one of the 2K offset components and summed.
    Returns ``(loss, grad_center, grad_offsets)``.
    """
    cfg = cfg or LossConfig()
    pred_center = np.asarray(pred_center, dtype=np.float64)
    pred_offsets = np.asarray(pred_offsets, dtype=np.float64)
    _check_shape("center", pred_center, target.center_heatmap)
    _check_shape("offsets", pred_offsets, target.offset_maps)

    valid = target.offset_valid[0] > 0
    z = target.instance_size[0][valid]
    if np.any(z <= 0):
        raise DegenerateInstanceError("instance size Z is zero at a center-region pixel")

    diff = pred_offsets[:, valid] - target.offset_maps[:, valid]
    val, der = smooth_l1(diff, cfg.smooth_l1_beta)
    val = np.asarray(val)
    der = np.asarray(der)
    offset_term = float(np.sum(val / z))
    grad_offsets = np.zeros_like(pred_offsets)
    grad_offsets[:, valid] = der / z

    cdiff = pred_center - target.center_heatmap
    center_term = float(np.sum(cdiff * cdiff))
    grad_center = 2.0 * cdiff

    if cfg.normalize:
        n_valid = max(int(valid.sum()), 1)
        offset_term /= n_valid
        grad_offsets /= n_valid
        center_term /= pred_center.size
        grad_center /= pred_center.size
    return offset_term + center_term, grad_center, grad_offsets


def total_loss(pred_heatmaps, pred_center, pred_offsets, target, cfg=None):
    """``l_h + lam * l_p``; returns the loss and a dict of gradients."""
    cfg = cfg or LossConfig()
    lh, g_h = heatmap_loss(pred_heatmaps, target, cfg.normalize)
    lp, g_c, g_o = regression_loss(pred_center, pred_offsets, target, cfg)
    grads = {"heatmaps": g_h, "center": cfg.lam * g_c, "offsets": cfg.lam * g_o}
    return lh + cfg.lam * lp, grads

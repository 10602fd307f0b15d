"""Adaptive convolution with a per-pixel 2x2 transform of the 3x3 sampling
grid, and the pixel-wise transform estimator.

Tap ``i`` of a kernel pairs with column ``i`` of :func:`base_grid`, i.e. the
usual row-major flattening of a 3x3 cross-correlation kernel.
"""
from dataclasses import dataclass

import numpy as np

from posedec.tensor import bilinear_sample

_GRID = np.array(
    [
        [-1, 0, 1, -1, 0, 1, -1, 0, 1],
        [-1, -1, -1, 0, 0, 0, 1, 1, 1],
    ],
    dtype=np.float64,
)
_GRID.setflags(write=False)


@dataclass
class ConvKernel:
    weights: np.ndarray  # C_out x C_in x 9
    bias: np.ndarray  # C_out

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=np.float64)
        self.bias = np.asarray(self.bias, dtype=np.float64).reshape(-1)
        if self.weights.ndim != 3 or self.weights.shape[2] != 9:
            raise ValueError(f"kernel weights must be C_out x C_in x 9, got {self.weights.shape}")
        if self.bias.shape[0] != self.weights.shape[0]:
            raise ValueError("bias length must equal output channels")


def base_grid():
    """The regular 3x3 offsets as a 2 x 9 matrix (x row, y row)."""
    return _GRID.copy()


def offsets_from_transform(t):
    """Warp the regular grid by a 2x2 matrix: returns ``t @ base_grid()``."""
    return np.asarray(t, dtype=np.float64).reshape(2, 2) @ _GRID


def identity_field(h, w):
    t = np.zeros((4, h, w))
    t[0] = 1.0
    t[3] = 1.0
    return t


def _sample_positions(field):
    """Per-tap sampling coordinates, each of shape 9 x H x W."""
    _, h, w = field.shape
    qy, qx = np.mgrid[0:h, 0:w].astype(np.float64)
    gx = _GRID[0][:, None, None]
    gy = _GRID[1][:, None, None]
    t11, t12, t21, t22 = field
    px = qx + t11 * gx + t12 * gy
    py = qy + t21 * gx + t22 * gy
    return px, py


def adaptive_conv(x, kernel, field, relu=False):
    """``y(q) = b + sum_i W_i x(q + T(q) g_i)`` with bilinear zero-padded reads."""
    x = np.asarray(x, dtype=np.float64)
    field = np.asarray(field, dtype=np.float64)
    if x.ndim != 3:
        raise ValueError(f"input must be C x H x W, got shape {x.shape}")
    if field.shape != (4,) + x.shape[1:]:
        raise ValueError(f"affine field shape {field.shape} does not match input {x.shape}")
    if kernel.weights.shape[1] != x.shape[0]:
        raise ValueError("kernel input channels do not match input")

    px, py = _sample_positions(field)
    samples = bilinear_sample(x, px, py)  # C_in x 9 x H x W
    y = np.einsum("oci,cihw->ohw", kernel.weights, samples)
    y += kernel.bias[:, None, None]
    if relu:
        y = np.maximum(y, 0.0)
    return y


def adaptive_conv_input_adjoint(grad_out, kernel, field):
    """Transpose of ``x -> adaptive_conv(x) - bias`` applied to ``grad_out``.

    This is the gradient of ``sum(grad_out * y)`` w.r.t. the input; each
    bilinear read is scattered back onto its four source pixels.
    """
    grad_out = np.asarray(grad_out, dtype=np.float64)
    field = np.asarray(field, dtype=np.float64)
    _, h, w = field.shape
    c_in = kernel.weights.shape[1]
    px, py = _sample_positions(field)
    # contribution reaching each tap sample: C_in x 9 x H x W
    back = np.einsum("oci,ohw->cihw", kernel.weights, grad_out)

    x0 = np.floor(px)
    y0 = np.floor(py)
    fx = px - x0
    fy = py - y0
    x0 = x0.astype(np.int64)
    y0 = y0.astype(np.int64)
    grad_x = np.zeros((c_in, h, w))
    for dy, wy in ((0, 1.0 - fy), (1, fy)):
        for dx, wx in ((0, 1.0 - fx), (1, fx)):
            xi = x0 + dx
            yi = y0 + dy
            inside = (xi >= 0) & (xi < w) & (yi >= 0) & (yi < h)
            wgt = (wx * wy)[inside]
            flat = yi[inside] * w + xi[inside]
            for c in range(c_in):
                np.add.at(grad_x[c].reshape(-1), flat, back[c][inside] * wgt)
    return grad_x


def conv3x3(x, kernel):
    """Plain zero-padded 3x3 cross-correlation with the same tap layout."""
    x = np.asarray(x, dtype=np.float64)
    c_in, h, w = x.shape
    if kernel.weights.shape[1] != c_in:
        raise ValueError("kernel input channels do not match input")
    padded = np.pad(x, ((0, 0), (1, 1), (1, 1)))
    y = np.broadcast_to(kernel.bias[:, None, None], (kernel.weights.shape[0], h, w)).copy()
    for i in range(9):
        dx, dy = int(_GRID[0, i]), int(_GRID[1, i])
        shifted = padded[:, 1 + dy : 1 + dy + h, 1 + dx : 1 + dx + w]
        y += np.einsum("oc,chw->ohw", kernel.weights[:, :, i], shifted)
    return y


def identity_stn_kernel(c_in):
    """A transform estimator whose untrained output is the identity field."""
    return ConvKernel(np.zeros((4, c_in, 9)), np.array([1.0, 0.0, 0.0, 1.0]))


def estimate_affine_field(x, stn_kernel):
    """Per-pixel ``[t11, t12, t21, t22]`` from a 3x3 convolution of ``x``."""
    if stn_kernel.weights.shape[0] != 4:
        raise ValueError(
            f"transform estimator must have 4 output channels, got {stn_kernel.weights.shape[0]}"
        )
    return conv3x3(x, stn_kernel)


def art_unit(x, stn_kernel, kernel, relu=True):
    """Estimate the transform field from ``x`` then apply the adaptive conv."""
    return adaptive_conv(x, kernel, estimate_affine_field(x, stn_kernel), relu=relu)

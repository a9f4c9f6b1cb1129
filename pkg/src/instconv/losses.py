"""Depth training objective: L1 + Sobel gradient + surface-normal terms.

All losses take a predicted depth ``d`` as a tape :class:`Var` of shape
(1, H, W) (plain arrays are lifted onto a fresh tape), a constant ground
truth and an optional validity mask. Each term is averaged over the
N valid pixels and the three are summed with unit weights.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autodiff import (DTYPE, OpKind, Tape, Var, abs_, maximum_const, mul_const,
                       register_backward, sqrt)

SOBEL_H = np.array([[-1.0, 0.0, 1.0],
                    [-2.0, 0.0, 2.0],
                    [-1.0, 0.0, 1.0]])
SOBEL_V = SOBEL_H.T.copy()
NORMAL_FLOOR = 1e-8


class EmptyMaskError(ValueError):
    pass


def _as_chw(a) -> np.ndarray:
    a = np.asarray(a, dtype=DTYPE)
    if a.ndim == 2:
        a = a[None]
    return a


def _sobel_pair(d: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Clamp-to-edge Sobel on the last two axes."""
    p = np.pad(d, [(0, 0)] * (d.ndim - 2) + [(1, 1), (1, 1)], mode="edge")
    h, w = d.shape[-2:]
    gh = np.zeros_like(d)
    gv = np.zeros_like(d)
    for i in range(3):
        for j in range(3):
            win = p[..., i:i + h, j:j + w]
            if SOBEL_H[i, j]:
                gh = gh + SOBEL_H[i, j] * win
            if SOBEL_V[i, j]:
                gv = gv + SOBEL_V[i, j] * win
    return gh, gv


def sobel_gradients(d) -> tuple[np.ndarray, np.ndarray]:
    """Unnormalized Sobel derivatives ``(horizontal, vertical)`` of a depth map.

    Horizontal is the derivative along columns (x), vertical along rows (y).
    """
    d = np.asarray(d, dtype=DTYPE)
    if d.shape[-1] < 3 or d.shape[-2] < 3:
        raise ValueError(f"Sobel needs at least 3x3 input, got {d.shape}")
    return _sobel_pair(d)


def _fold_edges(gp: np.ndarray) -> np.ndarray:
    # adjoint of 1-pixel edge replication
    gp = gp.copy()
    gp[..., 1, :] += gp[..., 0, :]
    gp[..., -2, :] += gp[..., -1, :]
    gp[..., :, 1] += gp[..., :, 0]
    gp[..., :, -2] += gp[..., :, -1]
    return gp[..., 1:-1, 1:-1]


def _correlate_adjoint(g: np.ndarray, kernel: np.ndarray) -> np.ndarray:
    h, w = g.shape[-2:]
    gp = np.zeros(g.shape[:-2] + (h + 2, w + 2))
    for i in range(3):
        for j in range(3):
            if kernel[i, j]:
                gp[..., i:i + h, j:j + w] += kernel[i, j] * g
    return _fold_edges(gp)


def sobel_op(d: Var, vertical: bool = False) -> Var:
    value = sobel_gradients(d.value)[1 if vertical else 0]
    return Var(d.tape, d.tape.record(OpKind.SOBEL, (d.id,), value, vertical))


@register_backward(OpKind.SOBEL)
def _sobel_bw(tape, node, g):
    return (_correlate_adjoint(g, SOBEL_V if node.saved else SOBEL_H),)


def _valid(mask, shape) -> tuple[np.ndarray, int]:
    if mask is None:
        m = np.ones(shape, dtype=DTYPE)
    else:
        m = np.broadcast_to(_as_chw(mask) != 0, shape).astype(DTYPE)
    n = int(m.sum())
    if n == 0:
        raise EmptyMaskError("no valid pixels in mask")
    return m, n


def _masked_mean(per_pixel: Var, mask) -> Var:
    m, n = _valid(mask, per_pixel.shape)
    return mul_const(per_pixel, m / n).sum()


def _lift(d) -> Var:
    return d if isinstance(d, Var) else Tape().leaf(_as_chw(d))


def l1_loss(d: Var, d_gt, mask=None) -> Var:
    d = _lift(d)
    gt = _as_chw(d_gt)
    _check_shapes(d.value, gt)
    return _masked_mean(abs_(d - gt), mask)


def gradient_loss(d: Var, d_gt, mask=None) -> Var:
    d = _lift(d)
    gt = _as_chw(d_gt)
    _check_shapes(d.value, gt)
    gth, gtv = sobel_gradients(gt)
    per_pixel = abs_(sobel_op(d) - gth) + abs_(sobel_op(d, vertical=True) - gtv)
    return _masked_mean(per_pixel, mask)


def normals_from_depth(d) -> np.ndarray:
    """Un-normalized normals ``(-dx, -dy, 1)`` stacked on a trailing axis."""
    d = np.asarray(d, dtype=DTYPE)
    gh, gv = sobel_gradients(d)
    return np.stack([-gh, -gv, np.ones_like(gh)], axis=-1)


def normal_loss(d: Var, d_gt, mask=None) -> Var:
    d = _lift(d)
    gt = _as_chw(d_gt)
    _check_shapes(d.value, gt)
    gth, gtv = sobel_gradients(gt)
    gt_sq = gth * gth + gtv * gtv + 1.0
    gx = sobel_op(d)
    gy = sobel_op(d, vertical=True)
    # <n, n_gt> with n = (-gx, -gy, 1)
    dot = (gx * gth + gy * gtv) + 1.0
    # one sqrt of the product: identical normals then give exactly 1 - 1 = 0
    denom = maximum_const(sqrt((gx * gx + gy * gy + 1.0) * gt_sq), NORMAL_FLOOR)
    return _masked_mean(1.0 - dot / denom, mask)


def _check_shapes(a: np.ndarray, b: np.ndarray) -> None:
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch {a.shape} vs {b.shape}")


@dataclass
class LossBreakdown:
    l1: float
    grad: float
    normal: float
    total: float


def total_loss(d: Var, d_gt, mask=None) -> tuple[Var, LossBreakdown]:
    """Unit-weight sum of the three terms; returns the tape scalar and its parts."""
    d = _lift(d)
    l1 = l1_loss(d, d_gt, mask)
    lg = gradient_loss(d, d_gt, mask)
    ln = normal_loss(d, d_gt, mask)
    total = l1 + lg + ln
    parts = [float(v.value.reshape(())) for v in (l1, lg, ln)]
    return total, LossBreakdown(*parts, float(total.value.reshape(())))


def loss_values(d, d_gt, mask=None) -> LossBreakdown:
    """Forward-only convenience for plain arrays."""
    return total_loss(Tape().leaf(_as_chw(d)), d_gt, mask)[1]

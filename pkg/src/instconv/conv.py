"""Instance convolution, standard convolution and segment-map resampling.

Instance convolution only sums the window pixels that share the segment id
of the window's central pixel and rescales by the in-segment fraction::

    out[n, u, v] = sum(S * X * W[n]) / (sum(S) / (kh * kw) + eps) + b[n]

where ``S`` is the 0/1 indicator window replicated over input channels.
Pixels outside the image have indicator 0. The indicator and the normalizer
are constants for differentiation.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import _kernels
from .autodiff import DTYPE, OpKind, Var, register_backward

IC_EPS = 1e-5


class ParameterError(ValueError):
    pass


@dataclass
class ConvWeights:
    kernel: np.ndarray  # (out, in, kh, kw)
    bias: np.ndarray  # (out,)

    def __post_init__(self):
        self.kernel = np.asarray(self.kernel, dtype=DTYPE)
        self.bias = np.asarray(self.bias, dtype=DTYPE)
        if self.kernel.ndim != 4:
            raise ValueError(f"kernel must be rank 4, got shape {self.kernel.shape}")
        if self.bias.shape != (self.kernel.shape[0],):
            raise ValueError(
                f"bias shape {self.bias.shape} does not match {self.kernel.shape[0]} outputs")

    @property
    def out_channels(self) -> int:
        return self.kernel.shape[0]

    @property
    def in_channels(self) -> int:
        return self.kernel.shape[1]

    @property
    def kh(self) -> int:
        return self.kernel.shape[2]

    @property
    def kw(self) -> int:
        return self.kernel.shape[3]


def _resolve_padding(padding, kh: int, kw: int) -> tuple[int, int]:
    if padding == "same":
        return (kh - 1) // 2, (kw - 1) // 2
    if isinstance(padding, (tuple, list)):
        return int(padding[0]), int(padding[1])
    return int(padding), int(padding)


def output_size(h: int, w: int, kh: int, kw: int, stride: int, ph: int, pw: int):
    return (h + 2 * ph - kh) // stride + 1, (w + 2 * pw - kw) // stride + 1


def _pad(x: np.ndarray, ph: int, pw: int) -> np.ndarray:
    return np.pad(x, ((0, 0), (ph, ph), (pw, pw)))


def _check_input(x: np.ndarray, kernel: np.ndarray) -> None:
    if x.ndim != 3:
        raise ValueError(f"expected a (C, H, W) tensor, got shape {x.shape}")
    if x.shape[0] != kernel.shape[1]:
        raise ValueError(
            f"input has {x.shape[0]} channels, kernel expects {kernel.shape[1]}")


# ---------------------------------------------------------------------------
# indicator windows


@dataclass(frozen=True)
class InstanceMask:
    """Precomputed indicator windows for one (segment map, kernel, stride, padding)."""

    indicator: np.ndarray  # (kh, kw, Ho, Wo) of 0.0 / 1.0
    norm: np.ndarray  # (Ho, Wo): count / (kh*kw) + eps
    stride: int
    padding: tuple[int, int]

    @property
    def out_shape(self) -> tuple[int, int]:
        return self.norm.shape


def instance_mask(seg: np.ndarray, kh: int, kw: int, stride: int = 1,
                  padding="same", eps: float = IC_EPS) -> InstanceMask:
    if kh % 2 == 0 or kw % 2 == 0:
        raise ValueError(f"instance convolution needs odd kernel sizes, got {kh}x{kw}")
    seg = np.asarray(seg)
    if seg.ndim != 2:
        raise ValueError(f"segment map must be 2-D, got shape {seg.shape}")
    ph, pw = _resolve_padding(padding, kh, kw)
    if ph not in (0, (kh - 1) // 2) or pw not in (0, (kw - 1) // 2):
        raise ValueError("instance convolution supports 'same' or zero padding only")
    h, w = seg.shape
    ho, wo = output_size(h, w, kh, kw, stride, ph, pw)
    # -1 never matches a real (non-negative) segment id
    sp = np.pad(seg.astype(np.int64), ((ph, ph), (pw, pw)), constant_values=-1)
    rows = slice(kh // 2, kh // 2 + stride * (ho - 1) + 1, stride)
    cols = slice(kw // 2, kw // 2 + stride * (wo - 1) + 1, stride)
    centre = sp[rows, cols]
    ind = np.empty((kh, kw, ho, wo), dtype=DTYPE)
    for i in range(kh):
        for j in range(kw):
            win = sp[i:i + stride * (ho - 1) + 1:stride, j:j + stride * (wo - 1) + 1:stride]
            ind[i, j] = win == centre
    count = ind.sum(axis=(0, 1))
    norm = count / (kh * kw) + eps
    return InstanceMask(ind, norm, stride, (ph, pw))


# ---------------------------------------------------------------------------
# array-level operators


def standard_conv2d(x: np.ndarray, weights: ConvWeights, stride: int = 1,
                    padding="same") -> np.ndarray:
    """Zero-padded cross-correlation plus bias."""
    x = np.asarray(x, dtype=DTYPE)
    _check_input(x, weights.kernel)
    ph, pw = _resolve_padding(padding, weights.kh, weights.kw)
    ho, wo = output_size(x.shape[1], x.shape[2], weights.kh, weights.kw, stride, ph, pw)
    raw = _kernels.conv_forward(_pad(x, ph, pw), weights.kernel, stride, ho, wo)
    return raw + weights.bias[:, None, None]


def instance_conv2d(x: np.ndarray, seg: np.ndarray, weights: ConvWeights,
                    stride: int = 1, padding="same", mask: InstanceMask | None = None
                    ) -> np.ndarray:
    x = np.asarray(x, dtype=DTYPE)
    _check_input(x, weights.kernel)
    if np.shape(seg) != x.shape[1:]:
        raise ValueError(f"segment map {np.shape(seg)} does not match features {x.shape[1:]}")
    if mask is None:
        mask = instance_mask(seg, weights.kh, weights.kw, stride, padding)
    ph, pw = mask.padding
    ho, wo = mask.out_shape
    raw = _kernels.conv_forward_masked(_pad(x, ph, pw), mask.indicator, weights.kernel,
                                       mask.stride, ho, wo)
    return raw / mask.norm + weights.bias[:, None, None]


def center_pool(seg: np.ndarray, factor: int = 2) -> np.ndarray:
    """Downsample a segment map by forwarding each cell's representative id.

    For a 2x2 cell the representative ("central") pixel is the top-left one,
    so ``out[u, v] == seg[2u, 2v]`` and the output is ceil(H/2) x ceil(W/2).
    """
    if factor != 2:
        raise ParameterError("center_pool supports factor 2 only")
    return np.ascontiguousarray(np.asarray(seg)[::2, ::2])


def build_segment_pyramid(seg: np.ndarray, levels: int) -> list[np.ndarray]:
    seg = np.asarray(seg)
    if levels < 1:
        raise ParameterError("levels must be >= 1")
    h, w = seg.shape
    if h >> (levels - 1) == 0 and w >> (levels - 1) == 0:
        raise ParameterError(f"{levels} levels would shrink a {h}x{w} map to nothing")
    pyramid = [seg]
    for _ in range(levels - 1):
        pyramid.append(center_pool(pyramid[-1]))
    return pyramid


def nearest_upsample(x: np.ndarray, factor: int = 2) -> np.ndarray:
    if factor != 2:
        raise ParameterError("nearest_upsample supports factor 2 only")
    return np.repeat(np.repeat(np.asarray(x), 2, axis=-2), 2, axis=-1)


# ---------------------------------------------------------------------------
# tape-level operators


def conv2d(x: Var, kernel: Var, bias: Var, stride: int = 1, padding="same") -> Var:
    xv, kv = x.value, kernel.value
    _check_input(xv, kv)
    ph, pw = _resolve_padding(padding, kv.shape[2], kv.shape[3])
    ho, wo = output_size(xv.shape[1], xv.shape[2], kv.shape[2], kv.shape[3], stride, ph, pw)
    xp = _pad(xv, ph, pw)
    out = _kernels.conv_forward(xp, kv, stride, ho, wo) + bias.value[:, None, None]
    nid = x.tape.record(OpKind.CONV2D, (x.id, kernel.id, bias.id), out,
                        (xp, stride, ph, pw))
    return Var(x.tape, nid)


@register_backward(OpKind.CONV2D)
def _conv2d_bw(tape, node, g):
    xp, stride, ph, pw = node.saved
    kernel = tape.value(node.parents[1])
    dxp, dw = _kernels.conv_backward(xp, kernel, np.ascontiguousarray(g), stride)
    h, w = xp.shape[1] - 2 * ph, xp.shape[2] - 2 * pw
    return dxp[:, ph:ph + h, pw:pw + w], dw, g.sum(axis=(1, 2))


def instance_conv2d_op(x: Var, seg: np.ndarray, kernel: Var, bias: Var, stride: int = 1,
                       padding="same", mask: InstanceMask | None = None) -> Var:
    xv, kv = x.value, kernel.value
    _check_input(xv, kv)
    if mask is None:
        if np.shape(seg) != xv.shape[1:]:
            raise ValueError(
                f"segment map {np.shape(seg)} does not match features {xv.shape[1:]}")
        mask = instance_mask(seg, kv.shape[2], kv.shape[3], stride, padding)
    ph, pw = mask.padding
    ho, wo = mask.out_shape
    xp = _pad(xv, ph, pw)
    raw = _kernels.conv_forward_masked(xp, mask.indicator, kv, mask.stride, ho, wo)
    out = raw / mask.norm + bias.value[:, None, None]
    nid = x.tape.record(OpKind.INSTANCE_CONV2D, (x.id, kernel.id, bias.id), out, (xp, mask))
    return Var(x.tape, nid)


@register_backward(OpKind.INSTANCE_CONV2D)
def _instance_conv2d_bw(tape, node, g):
    xp, mask = node.saved
    kernel = tape.value(node.parents[1])
    gm = (g / mask.norm)[:, None, None] * mask.indicator[None]
    dxp, dw = _kernels.conv_backward_masked(xp, gm, kernel, mask.stride)
    ph, pw = mask.padding
    h, w = xp.shape[1] - 2 * ph, xp.shape[2] - 2 * pw
    return dxp[:, ph:ph + h, pw:pw + w], dw, g.sum(axis=(1, 2))


def upsample_op(x: Var) -> Var:
    return Var(x.tape, x.tape.record(OpKind.UPSAMPLE, (x.id,), nearest_upsample(x.value)))


@register_backward(OpKind.UPSAMPLE)
def _upsample_bw(tape, node, g):
    c, h2, w2 = g.shape
    return (g.reshape(c, h2 // 2, 2, w2 // 2, 2).sum(axis=(2, 4)),)

"""Compiled convolution loops.

Every output element accumulates its terms in the fixed order
(in-channel, kernel row, kernel col), one multiply and one add per term,
so results are bit-identical to a plain per-pixel Python loop. Loops are
arranged with the output column innermost so LLVM can vectorize across
independent output elements without reordering any single sum.
"""
import numpy as np
from numba import njit


@njit(cache=True)
def conv_forward(xp, w, stride, ho, wo):
    n_out, n_in, kh, kw = w.shape
    out = np.zeros((n_out, ho, wo))
    for o in range(n_out):
        for c in range(n_in):
            for i in range(kh):
                for j in range(kw):
                    wv = w[o, c, i, j]
                    for u in range(ho):
                        orow = out[o, u]
                        xrow = xp[c, u * stride + i]
                        if stride == 1:
                            for v in range(wo):
                                orow[v] += wv * xrow[v + j]
                        else:
                            for v in range(wo):
                                orow[v] += wv * xrow[v * stride + j]
    return out


@njit(cache=True)
def conv_forward_masked(xp, m, w, stride, ho, wo):
    n_out, n_in, kh, kw = w.shape
    out = np.zeros((n_out, ho, wo))
    for o in range(n_out):
        for c in range(n_in):
            for i in range(kh):
                for j in range(kw):
                    wv = w[o, c, i, j]
                    for u in range(ho):
                        orow = out[o, u]
                        xrow = xp[c, u * stride + i]
                        mrow = m[i, j, u]
                        if stride == 1:
                            for v in range(wo):
                                orow[v] += wv * (xrow[v + j] * mrow[v])
                        else:
                            for v in range(wo):
                                orow[v] += wv * (xrow[v * stride + j] * mrow[v])
    return out


# Backward sums may be reassociated (vectorized); the compiled order is
# still fixed, so gradients are reproducible run to run.
@njit(cache=True, fastmath={"reassoc", "nsz", "arcp", "contract"})
def conv_backward(xp, w, g, stride):
    n_out, n_in, kh, kw = w.shape
    _, ho, wo = g.shape
    dxp = np.zeros_like(xp)
    dw = np.zeros_like(w)
    for c in range(n_in):
        for i in range(kh):
            for j in range(kw):
                for o in range(n_out):
                    wv = w[o, c, i, j]
                    acc = 0.0
                    for u in range(ho):
                        grow = g[o, u]
                        xrow = xp[c, u * stride + i]
                        drow = dxp[c, u * stride + i]
                        if stride == 1:
                            for v in range(wo):
                                acc += grow[v] * xrow[v + j]
                                drow[v + j] += wv * grow[v]
                        else:
                            for v in range(wo):
                                acc += grow[v] * xrow[v * stride + j]
                                drow[v * stride + j] += wv * grow[v]
                    dw[o, c, i, j] = acc
    return dxp, dw


@njit(cache=True, fastmath={"reassoc", "nsz", "arcp", "contract"})
def conv_backward_masked(xp, gm, w, stride):
    """``gm[o, i, j]`` is the upstream gradient already multiplied by tap (i, j)'s indicator."""
    n_out, n_in, kh, kw = w.shape
    ho, wo = gm.shape[3], gm.shape[4]
    dxp = np.zeros_like(xp)
    dw = np.zeros_like(w)
    for c in range(n_in):
        for i in range(kh):
            for j in range(kw):
                for o in range(n_out):
                    wv = w[o, c, i, j]
                    acc = 0.0
                    for u in range(ho):
                        grow = gm[o, i, j, u]
                        xrow = xp[c, u * stride + i]
                        drow = dxp[c, u * stride + i]
                        if stride == 1:
                            for v in range(wo):
                                acc += grow[v] * xrow[v + j]
                                drow[v + j] += wv * grow[v]
                        else:
                            for v in range(wo):
                                acc += grow[v] * xrow[v * stride + j]
                                drow[v * stride + j] += wv * grow[v]
                    dw[o, c, i, j] = acc
    return dxp, dw

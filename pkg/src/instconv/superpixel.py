"""SLIC super-pixels (Achanta et al.) written against numpy.

Images are (H, W, 3) float arrays with channels in [0, 1]. Segment maps are
(H, W) integer arrays whose labels run over ``range(labels.max() + 1)``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .conv import ParameterError

# sRGB (D65) -> XYZ
_RGB_TO_XYZ = np.array([
    [0.4124564, 0.3575761, 0.1804375],
    [0.2126729, 0.7151522, 0.0721750],
    [0.0193339, 0.1191920, 0.9503041],
])
# reference white = image of RGB (1, 1, 1), so white maps to a = b = 0 exactly
_WHITE = _RGB_TO_XYZ.sum(axis=1)
_DELTA = 6.0 / 29.0


@dataclass(frozen=True)
class SlicParams:
    k: int = 64
    compactness: float = 10.0
    sigma: float = 1.0
    iterations: int = 10

    def __post_init__(self):
        if self.k < 1:
            raise ParameterError("k must be >= 1")
        if self.iterations < 1:
            raise ParameterError("iterations must be >= 1")
        if self.sigma < 0:
            raise ParameterError("sigma must be >= 0")


def _check_rgb(img) -> np.ndarray:
    img = np.asarray(img, dtype=np.float64)
    if img.ndim != 3 or img.shape[2] != 3:
        raise ValueError(f"expected an (H, W, 3) image, got shape {img.shape}")
    return img


def rgb_to_lab(img) -> np.ndarray:
    img = _check_rgb(img)
    lin = np.where(img <= 0.04045, img / 12.92, ((img + 0.055) / 1.055) ** 2.4)
    xyz = lin @ _RGB_TO_XYZ.T / _WHITE
    f = np.where(xyz > _DELTA ** 3, np.cbrt(xyz), xyz / (3 * _DELTA ** 2) + 4.0 / 29.0)
    lab = np.empty_like(f)
    lab[..., 0] = 116.0 * f[..., 1] - 16.0
    lab[..., 1] = 500.0 * (f[..., 0] - f[..., 1])
    lab[..., 2] = 200.0 * (f[..., 1] - f[..., 2])
    return lab


def gaussian_kernel(sigma: float) -> np.ndarray:
    radius = int(math.ceil(3.0 * sigma))
    x = np.arange(-radius, radius + 1, dtype=np.float64)
    k = np.exp(-0.5 * (x / sigma) ** 2)
    return k / k.sum()


def gaussian_smooth(img, sigma: float) -> np.ndarray:
    """Separable Gaussian blur over the first two axes, clamp-to-edge borders."""
    img = np.asarray(img, dtype=np.float64)
    if sigma < 0:
        raise ParameterError("sigma must be >= 0")
    if sigma == 0:
        return img.copy()
    k = gaussian_kernel(sigma)
    r = len(k) // 2
    out = img
    for axis in (0, 1):
        pad = [(0, 0)] * img.ndim
        pad[axis] = (r, r)
        p = np.pad(out, pad, mode="edge")
        n = out.shape[axis]
        acc = np.zeros_like(out)
        for t, wt in enumerate(k):
            acc += wt * np.take(p, np.arange(t, t + n), axis=axis)
        out = acc
    return out


def _seed_grid(h: int, w: int, k: int) -> list[tuple[int, int]]:
    ny = min(h, max(1, round(math.sqrt(k * h / w))))
    nx = min(w, max(1, round(k / ny)))
    ys = [int((i + 0.5) * h / ny) for i in range(ny)]
    xs = [int((j + 0.5) * w / nx) for j in range(nx)]
    return [(y, x) for y in ys for x in xs]


def _lab_gradient(lab: np.ndarray) -> np.ndarray:
    p = np.pad(lab, ((1, 1), (1, 1), (0, 0)), mode="edge")
    dy = p[2:, 1:-1] - p[:-2, 1:-1]
    dx = p[1:-1, 2:] - p[1:-1, :-2]
    return (dy ** 2).sum(-1) + (dx ** 2).sum(-1)


def slic(img, params: SlicParams = SlicParams()) -> np.ndarray:
    img = _check_rgb(img)
    h, w = img.shape[:2]
    if params.k > h * w:
        raise ParameterError(f"k={params.k} exceeds the pixel count {h * w}")
    lab = rgb_to_lab(gaussian_smooth(img, params.sigma))
    step = math.sqrt(h * w / params.k)
    m2_over_s2 = (params.compactness / step) ** 2

    grad = _lab_gradient(lab)
    centres = []
    for cy, cx in _seed_grid(h, w, params.k):
        best = (cy, cx)
        for dy in (-1, 0, 1):
            for dx in (-1, 0, 1):
                y, x = cy + dy, cx + dx
                if 0 <= y < h and 0 <= x < w and grad[y, x] < grad[best]:
                    best = (y, x)
        y, x = best
        centres.append([*lab[y, x], float(y), float(x)])
    centres = np.array(centres)

    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
    labels = np.full((h, w), -1, dtype=np.int64)
    for _ in range(params.iterations):
        dist = np.full((h, w), np.inf)
        labels.fill(-1)
        for idx, (l, a, b, cy, cx) in enumerate(centres):
            y0, y1 = max(0, int(math.floor(cy - step))), min(h, int(math.ceil(cy + step)) + 1)
            x0, x1 = max(0, int(math.floor(cx - step))), min(w, int(math.ceil(cx + step)) + 1)
            win = lab[y0:y1, x0:x1]
            d_lab = ((win - (l, a, b)) ** 2).sum(-1)
            d_xy = (yy[y0:y1, x0:x1] - cy) ** 2 + (xx[y0:y1, x0:x1] - cx) ** 2
            d = d_lab + d_xy * m2_over_s2
            # strict < keeps the lowest cluster index on ties
            better = d < dist[y0:y1, x0:x1]
            dist[y0:y1, x0:x1][better] = d[better]
            labels[y0:y1, x0:x1][better] = idx
        for idx in range(len(centres)):
            sel = labels == idx
            if sel.any():
                centres[idx, :3] = lab[sel].mean(axis=0)
                centres[idx, 3] = yy[sel].mean()
                centres[idx, 4] = xx[sel].mean()

    return enforce_connectivity(labels, params.k)


def _components(labels: np.ndarray) -> tuple[np.ndarray, int]:
    """4-connected components, numbered in raster order of their first pixel."""
    h, w = labels.shape
    comp = np.full(h * w, -1, dtype=np.int64)
    flat = labels.ravel()
    n = 0
    for start in range(h * w):
        if comp[start] >= 0:
            continue
        lab = flat[start]
        comp[start] = n
        stack = [start]
        while stack:
            p = stack.pop()
            y, x = divmod(p, w)
            for q, ok in ((p - w, y > 0), (p + w, y < h - 1), (p - 1, x > 0), (p + 1, x < w - 1)):
                if ok and comp[q] < 0 and flat[q] == lab:
                    comp[q] = n
                    stack.append(q)
        n += 1
    return comp.reshape(h, w), n


def enforce_connectivity(labels, k: int | None = None) -> np.ndarray:
    """Make every segment 4-connected and absorb fragments.

    Components smaller than ``(H*W/k)/4`` (and any pixels labelled -1) are
    merged, smallest first, into their largest 4-adjacent component. Ties
    go to the component that appears first in raster order. Output labels
    are renumbered in raster order.
    """
    labels = np.asarray(labels)
    h, w = labels.shape
    if k is None:
        k = max(1, len(np.unique(labels[labels >= 0])))
    min_size = (h * w / k) / 4.0
    comp, n = _components(labels)
    flat = comp.ravel()
    order = np.argsort(flat, kind="stable")
    bounds = np.searchsorted(flat[order], np.arange(n + 1))
    members = {c: list(order[bounds[c]:bounds[c + 1]]) for c in range(n)}
    unlabelled = {int(flat[i]) for i in np.flatnonzero(labels.ravel() < 0)}

    def key(c):
        return (c not in unlabelled, len(members[c]), c)

    pending = sorted((c for c in members if c in unlabelled or len(members[c]) < min_size),
                     key=key)
    while pending and len(members) > 1:
        c = pending.pop(0)
        if c not in members or (c not in unlabelled and len(members[c]) >= min_size):
            continue
        neigh = set()
        for p in members[c]:
            y, x = divmod(int(p), w)
            if y > 0:
                neigh.add(int(flat[p - w]))
            if y < h - 1:
                neigh.add(int(flat[p + w]))
            if x > 0:
                neigh.add(int(flat[p - 1]))
            if x < w - 1:
                neigh.add(int(flat[p + 1]))
        neigh.discard(c)
        if not neigh:
            continue
        # prefer real segments over unlabelled fragments
        target = min(neigh, key=lambda t: (t in unlabelled, -len(members[t]), t))
        pix = members.pop(c)
        flat[pix] = target
        members[target].extend(pix)
        unlabelled.discard(c)
        # the grown target may itself still be pending
        pending = sorted((t for t in pending if t in members), key=key)

    ids, first = np.unique(flat, return_index=True)
    rank = np.empty(len(ids), dtype=np.int32)
    rank[np.argsort(first)] = np.arange(len(ids), dtype=np.int32)
    return rank[np.searchsorted(ids, flat)].reshape(h, w)

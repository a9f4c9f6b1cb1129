"""Depth evaluation: standard error statistics, boundary (DBE), directed
depth (DDE) and planarity (PE) errors.

Depth maps are (H, W) float arrays in meters; edge maps are (H, W) bool.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, fields

import numpy as np
from numba import njit

from .losses import sobel_gradients
from .superpixel import gaussian_smooth

CANNY_SIGMA = 1.0
CANNY_LOW = 0.05
CANNY_HIGH = 0.1
CHAMFER_THETA = 10.0
DDE_PLANE = 3.0


class MetricError(ValueError):
    pass


@dataclass
class MetricsReport:
    absrel: float | None = None
    rmse: float | None = None
    log10: float | None = None
    delta1: float | None = None
    delta2: float | None = None
    delta3: float | None = None
    dbe_acc: float | None = None
    dbe_comp: float | None = None
    dde0: float | None = None
    dde_minus: float | None = None
    dde_plus: float | None = None
    pe_plan: float | None = None
    pe_orie: float | None = None

    @classmethod
    def columns(cls) -> list[str]:
        return [f.name for f in fields(cls)]

    def as_dict(self) -> dict[str, float | None]:
        return asdict(self)

    def update(self, **values) -> "MetricsReport":
        for k, v in values.items():
            if k not in self.columns():
                raise KeyError(k)
            setattr(self, k, None if v is None else float(v))
        return self


@dataclass(frozen=True)
class CameraIntrinsics:
    fx: float
    fy: float
    cx: float
    cy: float

    def __post_init__(self):
        if self.fx <= 0 or self.fy <= 0:
            raise MetricError("focal lengths must be positive")

    @classmethod
    def default_for(cls, h: int, w: int) -> "CameraIntrinsics":
        return cls(5.8e2, 5.8e2, w / 2.0, h / 2.0)


def _valid_pixels(d, d_gt, mask):
    d = np.asarray(d, dtype=np.float64)
    d_gt = np.asarray(d_gt, dtype=np.float64)
    if d.shape != d_gt.shape:
        raise MetricError(f"shape mismatch {d.shape} vs {d_gt.shape}")
    m = np.ones(d.shape, bool) if mask is None else np.asarray(mask, bool)
    if not m.any():
        raise MetricError("no valid pixels")
    return d[m], d_gt[m]


def standard_metrics(d, d_gt, mask=None) -> MetricsReport:
    p, g = _valid_pixels(d, d_gt, mask)
    if (p <= 0).any() or (g <= 0).any():
        raise MetricError("depths must be positive on valid pixels")
    ratio = np.maximum(p / g, g / p)
    return MetricsReport(
        absrel=float(np.mean(np.abs(p - g) / g)),
        rmse=float(np.sqrt(np.mean((p - g) ** 2))),
        log10=float(np.mean(np.abs(np.log10(p) - np.log10(g)))),
        delta1=float(np.mean(ratio < 1.25)),
        delta2=float(np.mean(ratio < 1.25 ** 2)),
        delta3=float(np.mean(ratio < 1.25 ** 3)),
    )


# ---------------------------------------------------------------------------
# edges


def canny(raster, low: float = CANNY_LOW, high: float = CANNY_HIGH,
          sigma: float = CANNY_SIGMA) -> np.ndarray:
    """Canny edges with thresholds relative to the maximum gradient magnitude."""
    if not high >= low > 0:
        raise MetricError("need high >= low > 0")
    img = gaussian_smooth(np.asarray(raster, dtype=np.float64), sigma)
    gx, gy = sobel_gradients(img)
    mag = np.hypot(gx, gy)
    peak = mag.max()
    h, w = mag.shape
    if peak <= 1e-12 * max(1.0, np.abs(img).max()):
        return np.zeros((h, w), bool)
    mag = mag / peak

    # quantize direction to 0, 45, 90, 135 degrees
    angle = np.rad2deg(np.arctan2(gy, gx)) % 180.0
    sector = (((angle + 22.5) // 45.0) % 4).astype(int)
    offsets = [(0, 1), (1, 1), (1, 0), (1, -1)]  # (dy, dx) along the gradient
    p = np.pad(mag, 1)
    keep = np.zeros((h, w), bool)
    for s, (dy, dx) in enumerate(offsets):
        fwd = p[1 + dy:1 + dy + h, 1 + dx:1 + dx + w]
        bwd = p[1 - dy:1 - dy + h, 1 - dx:1 - dx + w]
        # asymmetric comparison keeps exactly one pixel of a symmetric ridge
        keep |= (sector == s) & (mag > bwd) & (mag >= fwd)
    nms = np.where(keep, mag, 0.0)

    strong = nms >= high
    weak = nms >= low
    edges = strong.copy()
    stack = list(zip(*np.nonzero(strong)))
    while stack:
        y, x = stack.pop()
        for dy in (-1, 0, 1):
            for dx in (-1, 0, 1):
                yy, xx = y + dy, x + dx
                if 0 <= yy < h and 0 <= xx < w and weak[yy, xx] and not edges[yy, xx]:
                    edges[yy, xx] = True
                    stack.append((yy, xx))
    return edges


@njit(cache=True)
def _lower_envelope_1d(f):
    """Squared distance transform of a sampled function (Felzenszwalb-Huttenlocher)."""
    n = len(f)
    d = np.empty(n)
    v = np.zeros(n, dtype=np.int64)
    z = np.empty(n + 1)
    k = 0
    z[0] = -np.inf
    z[1] = np.inf
    for q in range(1, n):
        s = ((f[q] + q * q) - (f[v[k]] + v[k] * v[k])) / (2.0 * (q - v[k]))
        while s <= z[k]:
            k -= 1
            s = ((f[q] + q * q) - (f[v[k]] + v[k] * v[k])) / (2.0 * (q - v[k]))
        k += 1
        v[k] = q
        z[k] = s
        z[k + 1] = np.inf
    k = 0
    for q in range(n):
        while z[k + 1] < q:
            k += 1
        d[q] = (q - v[k]) * (q - v[k]) + f[v[k]]
    return d


def squared_distance_transform(edges) -> np.ndarray:
    edges = np.asarray(edges, bool)
    if edges.ndim != 2:
        raise MetricError("edge map must be 2-D")
    if not edges.any():
        raise MetricError("distance transform of an empty edge map")
    h, w = edges.shape
    big = float((h + w) ** 2)
    f = np.where(edges, 0.0, big)
    cols = np.empty_like(f)
    for x in range(w):
        cols[:, x] = _lower_envelope_1d(np.ascontiguousarray(f[:, x]))
    out = np.empty_like(f)
    for y in range(h):
        out[y] = _lower_envelope_1d(cols[y])
    return out


def distance_transform(edges) -> np.ndarray:
    """Exact Euclidean distance from every pixel to the nearest edge pixel."""
    return np.sqrt(squared_distance_transform(edges))


def _directed_chamfer(src: np.ndarray, dst: np.ndarray, theta: float) -> float | None:
    dist = distance_transform(dst)[src]
    matched = dist[dist <= theta]
    if matched.size == 0:
        return None
    return math.fsum(matched) / matched.size


def truncated_chamfer(pred_edges, gt_edges, theta: float = CHAMFER_THETA
                      ) -> tuple[float | None, float | None]:
    """``(accuracy, completeness)`` in pixels.

    Each side is the mean distance from its edge pixels to the nearest edge
    of the other map, over the pixels within ``theta``; pixels further away
    are rejected. ``None`` marks an undefined side (empty edge set or no
    matches).
    """
    pred = np.asarray(pred_edges, bool)
    gt = np.asarray(gt_edges, bool)
    if pred.shape != gt.shape:
        raise MetricError(f"shape mismatch {pred.shape} vs {gt.shape}")
    if not gt.any():
        return None, None
    if not pred.any():
        return None, None
    return _directed_chamfer(pred, gt, theta), _directed_chamfer(gt, pred, theta)


def depth_boundary_error(d, gt_edges, low: float = CANNY_LOW, high: float = CANNY_HIGH,
                         sigma: float = CANNY_SIGMA, theta: float = CHAMFER_THETA):
    return truncated_chamfer(canny(d, low, high, sigma), gt_edges, theta)


# ---------------------------------------------------------------------------
# directed depth and planarity


def dde(d, d_gt, plane_depth: float = DDE_PLANE, mask=None) -> tuple[float, float, float]:
    """Percentages ``(agree, predicted behind, predicted in front)`` of valid pixels.

    A pixel agrees when prediction and ground truth sit on the same side of
    the plane at ``plane_depth``; depths equal to the plane count as behind.
    """
    p, g = _valid_pixels(d, d_gt, mask)
    p_behind = p >= plane_depth
    g_behind = g >= plane_depth
    n = p.size
    minus = np.count_nonzero(p_behind & ~g_behind)
    plus = np.count_nonzero(~p_behind & g_behind)
    agree = n - minus - plus
    return 100.0 * agree / n, 100.0 * minus / n, 100.0 * plus / n


def back_project(d, intr: CameraIntrinsics, mask) -> np.ndarray:
    ys, xs = np.nonzero(mask)
    z = np.asarray(d, dtype=np.float64)[ys, xs]
    return np.stack([(xs - intr.cx) * z / intr.fx, (ys - intr.cy) * z / intr.fy, z], axis=1)


def fit_plane(points: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Least-squares plane ``(unit normal, centroid)`` through 3-D points."""
    if len(points) < 3:
        raise MetricError("plane fit needs at least 3 points")
    centroid = points.mean(axis=0)
    cov = (points - centroid).T @ (points - centroid)
    evals, evecs = np.linalg.eigh(cov)
    if evals[1] <= 1e-12 * max(evals[2], 1e-300):
        raise MetricError("degenerate plane mask (collinear points)")
    return evecs[:, 0], centroid


def planarity_error(d, plane_masks, d_gt, intr: CameraIntrinsics
                    ) -> tuple[float, float]:
    """``(shift in cm, orientation error in degrees)`` averaged over planes.

    ``plane_masks`` is a list of boolean masks or an integer label map where
    0 means "no plane".
    """
    if isinstance(plane_masks, np.ndarray) and plane_masks.dtype != bool:
        labels = plane_masks
        plane_masks = [labels == i for i in np.unique(labels) if i != 0]
    if len(plane_masks) == 0:
        raise MetricError("no plane masks given")
    shifts, angles = [], []
    for m in plane_masks:
        n_gt, c_gt = fit_plane(back_project(d_gt, intr, m))
        pts = back_project(d, intr, m)
        n_pr, _ = fit_plane(pts)
        cosang = min(1.0, abs(float(n_gt @ n_pr)))
        angles.append(math.degrees(math.acos(cosang)))
        shifts.append(100.0 * float(np.mean(np.abs((pts - c_gt) @ n_gt))))
    return float(np.mean(shifts)), float(np.mean(angles))


def evaluate(d, d_gt, gt_edges=None, planes=None, intr: CameraIntrinsics | None = None,
             mask=None, canny_low: float = CANNY_LOW, canny_high: float = CANNY_HIGH,
             dde_plane: float = DDE_PLANE) -> MetricsReport:
    """Every metric whose inputs are available."""
    report = standard_metrics(d, d_gt, mask)
    e0, em, ep = dde(d, d_gt, dde_plane, mask)
    report.update(dde0=e0, dde_minus=em, dde_plus=ep)
    if gt_edges is not None:
        acc, comp = depth_boundary_error(d, gt_edges, canny_low, canny_high)
        report.update(dbe_acc=acc, dbe_comp=comp)
    if planes is not None:
        h, w = np.shape(d)
        plan, orie = planarity_error(d, planes, d_gt, intr or CameraIntrinsics.default_for(h, w))
        report.update(pe_plan=plan, pe_orie=orie)
    return report

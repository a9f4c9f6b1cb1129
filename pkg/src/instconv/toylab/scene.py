"""Synthetic RGB-D scenes: flat-coloured boxes and ellipses in front of a
slanted background plane, with exact occlusion-boundary maps."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

MIN_JUMP = 0.5  # meters, across every occlusion boundary
MIN_VISIBLE = 20  # pixels per shape
MIN_COLOR_DIST = 0.35


@dataclass
class Scene:
    rgb: np.ndarray  # (H, W, 3) in [0, 1]
    depth: np.ndarray  # (H, W) meters
    boundaries: np.ndarray  # (H, W) bool, occluder side
    owner: np.ndarray  # (H, W) int: 0 background, i > 0 shape i
    seed: int

    @property
    def size(self) -> int:
        return self.depth.shape[0]


def _shape_mask(rng, size):
    yy, xx = np.mgrid[0:size, 0:size]
    ry, rx = rng.uniform(size / 10, size / 4, size=2)
    cy, cx = rng.uniform(0.15 * size, 0.85 * size, size=2)
    if rng.random() < 0.5:
        return (np.abs(yy - cy) <= ry) & (np.abs(xx - cx) <= rx)
    return ((yy - cy) / ry) ** 2 + ((xx - cx) / rx) ** 2 <= 1.0


def _touching(owner, mask):
    ring = np.zeros_like(mask)
    ring[1:] |= mask[:-1]
    ring[:-1] |= mask[1:]
    ring[:, 1:] |= mask[:, :-1]
    ring[:, :-1] |= mask[:, 1:]
    ring &= ~mask
    return set(np.unique(owner[ring]).tolist())


def boundary_map(owner: np.ndarray, depth: np.ndarray) -> np.ndarray:
    """Occluder-side silhouette pixels.

    A pixel is marked when a 4-neighbour belongs to another surface that lies
    behind it, giving a 1-pixel line on the near side of every occlusion edge.
    """
    b = np.zeros(owner.shape, bool)
    for axis in (0, 1):
        a = [slice(None)] * 2
        c = [slice(None)] * 2
        a[axis], c[axis] = slice(None, -1), slice(1, None)
        a, c = tuple(a), tuple(c)
        cut = owner[a] != owner[c]
        b[a] |= cut & (depth[a] < depth[c])
        b[c] |= cut & (depth[c] < depth[a])
    return b


def gen_scene(seed: int, size: int = 64, n_shapes: int = 4) -> Scene:
    if size < 32:
        raise ValueError("scene size must be >= 32")
    if not 2 <= n_shapes <= 8:
        raise ValueError("n_shapes must be in [2, 8]")
    rng = np.random.default_rng(seed)
    yy, xx = np.mgrid[0:size, 0:size] / (size - 1) - 0.5

    base = rng.uniform(4.5, 5.5)
    tilt = rng.uniform(-0.5, 0.5, size=2)
    bg_depth = base + tilt[0] * yy + tilt[1] * xx
    bg_color = rng.uniform(0.3, 0.7, size=3)
    # background shading follows the ramp so depth stays inferable from colour
    shade = rng.uniform(-0.4, 0.4, size=3)
    rgb = np.clip(bg_color + (bg_depth - base)[..., None] * shade, 0.0, 1.0)
    depth = bg_depth.copy()
    owner = np.zeros((size, size), dtype=np.int64)
    colors = [bg_color]
    shape_depth = {0: None}

    placed = 0
    attempts = 0
    while placed < n_shapes:
        attempts += 1
        if attempts > 1000:
            raise RuntimeError(f"could not place {n_shapes} shapes for seed {seed}")
        mask = _shape_mask(rng, size)
        color = rng.uniform(0.0, 1.0, size=3)
        if min(np.linalg.norm(color - c) for c in colors) < MIN_COLOR_DIST:
            continue
        near = [shape_depth[t] for t in _touching(owner, mask) if t != 0]
        for _ in range(50):
            d = rng.uniform(1.0, 3.0)
            if all(abs(d - n) >= MIN_JUMP for n in near):
                break
        else:
            continue
        trial = np.where(mask, placed + 1, owner)
        counts = np.bincount(trial.ravel(), minlength=placed + 2)[1:]
        if (counts < MIN_VISIBLE).any():
            continue
        owner = trial
        placed += 1
        shape_depth[placed] = d
        colors.append(color)
        depth[mask] = d
        rgb[mask] = color

    return Scene(rgb=rgb, depth=depth, boundaries=boundary_map(owner, depth), owner=owner, seed=seed)

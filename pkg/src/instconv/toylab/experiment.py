"""Single-image overfitting runs and head comparisons."""
from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, replace
from statistics import median
from typing import Callable, Sequence

import numpy as np

from ..autodiff import Tape
from ..losses import LossBreakdown, total_loss
from ..metrics import CANNY_HIGH, CANNY_LOW, MetricsReport, depth_boundary_error, standard_metrics
from ..superpixel import SlicParams, slic
from .net import DepthNet, NetConfig, build_net
from .optim import AdamState, adam_step
from .scene import Scene, gen_scene

log = logging.getLogger(__name__)


class DivergenceError(RuntimeError):
    pass


@dataclass
class OverfitResult:
    net: DepthNet
    losses: list[LossBreakdown]
    report: MetricsReport
    prediction: np.ndarray
    segments: np.ndarray


def scene_segments(scene: Scene, cfg: NetConfig) -> np.ndarray:
    params = SlicParams(k=cfg.k, compactness=cfg.compactness, sigma=cfg.sigma,
                        iterations=cfg.iterations)
    return slic(scene.rgb, params)


def evaluate_prediction(pred: np.ndarray, scene: Scene, canny_low: float = CANNY_LOW,
                        canny_high: float = CANNY_HIGH) -> MetricsReport:
    report = standard_metrics(pred, scene.depth)
    acc, comp = depth_boundary_error(pred, scene.boundaries, canny_low, canny_high)
    return report.update(dbe_acc=acc, dbe_comp=comp)


def train_step(net: DepthNet, scene: Scene, state: AdamState, lr: float) -> LossBreakdown:
    tape = Tape()
    pred, leaves = net.forward(tape, scene.rgb)
    loss, parts = total_loss(pred, scene.depth)
    if not math.isfinite(parts.total):
        raise DivergenceError(f"loss became {parts.total} at step {state.step + 1}")
    grads = tape.backward(loss)
    adam_step(net.params, {k: grads[v.id] for k, v in leaves.items()}, state, lr)
    return parts


def overfit(scene: Scene, cfg: NetConfig, segments: np.ndarray | None = None,
            callback: Callable[[int, LossBreakdown], None] | None = None,
            canny_low: float = CANNY_LOW, canny_high: float = CANNY_HIGH) -> OverfitResult:
    """Train one network on one scene for ``cfg.steps`` Adam steps."""
    if segments is None:
        segments = scene_segments(scene, cfg)
    net = build_net(cfg, segments)
    state = AdamState()
    losses = []
    for step in range(cfg.steps):
        lr = cfg.lr * min(1.0, (step + 1) / cfg.warmup_steps) if cfg.warmup_steps else cfg.lr
        parts = train_step(net, scene, state, lr)
        losses.append(parts)
        if callback is not None:
            callback(step, parts)
    pred = net.predict(scene.rgb)
    if not np.isfinite(pred).all():
        raise DivergenceError("prediction contains non-finite values")
    if (pred <= 0).any():
        # softplus is positive in exact arithmetic; zero means it underflowed
        raise DivergenceError("prediction underflowed to non-positive depth")
    report = evaluate_prediction(pred, scene, canny_low, canny_high)
    return OverfitResult(net, losses, report, pred, segments)


COMPARE_FIELDS = ("dbe_acc", "dbe_comp", "absrel", "rmse")


@dataclass
class Comparison:
    heads: list[str]
    seeds: list[int]
    reports: dict[str, list[MetricsReport]]  # head -> per-seed reports

    def medians(self, head: str) -> dict[str, float | None]:
        out = {}
        for f in COMPARE_FIELDS:
            vals = [getattr(r, f) for r in self.reports[head]]
            vals = [v for v in vals if v is not None]
            out[f] = median(vals) if vals else None
        return out

    def rows(self) -> list[dict[str, object]]:
        rows = []
        for i, seed in enumerate(self.seeds):
            row: dict[str, object] = {"seed": seed}
            for h in self.heads:
                for f in COMPARE_FIELDS:
                    row[f"{h}_{f}"] = getattr(self.reports[h][i], f)
            rows.append(row)
        med: dict[str, object] = {"seed": "median"}
        for h in self.heads:
            for f, v in self.medians(h).items():
                med[f"{h}_{f}"] = v
        rows.append(med)
        return rows

    def columns(self) -> list[str]:
        return ["seed"] + [f"{h}_{f}" for h in self.heads for f in COMPARE_FIELDS]

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.DictWriter(fh, fieldnames=self.columns())
            w.writeheader()
            for row in self.rows():
                w.writerow({k: "" if v is None else v for k, v in row.items()})


def _run_one(seed: int, size: int, cfg: NetConfig) -> MetricsReport:
    scene = gen_scene(seed, size)
    result = overfit(scene, replace(cfg, seed=seed))
    log.info("seed %d head %s: absrel %.4f dbe_acc %s", seed, cfg.head,
             result.report.absrel, result.report.dbe_acc)
    return result.report


def compare_heads(seeds: Sequence[int], cfgs: dict[str, NetConfig], size: int = 64,
                  jobs: int = 1) -> Comparison:
    """Overfit every head config on the scene of every seed.

    Each run's network init seed is the scene seed, so configs that differ
    only by name produce identical columns.
    """
    seeds = list(seeds)
    if len(seeds) < 5:
        raise ValueError("compare_heads needs at least 5 seeds")
    tasks = [(name, seed) for name in cfgs for seed in seeds]
    if jobs != 1:
        from joblib import Parallel, delayed
        results = Parallel(n_jobs=jobs)(
            delayed(_run_one)(seed, size, cfgs[name]) for name, seed in tasks)
    else:
        results = [_run_one(seed, size, cfgs[name]) for name, seed in tasks]
    reports: dict[str, list[MetricsReport]] = {name: [] for name in cfgs}
    for (name, _), rep in zip(tasks, results):
        reports[name].append(rep)
    return Comparison(list(cfgs), seeds, reports)

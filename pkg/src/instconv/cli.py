"""``instconv`` command line.

Exit codes: 0 success, 1 I/O failure, 2 usage or parameter error,
3 numerical failure (diverged training).
"""
from __future__ import annotations

import argparse
import csv
import logging
import sys
from pathlib import Path

import numpy as np

from . import io
from .conv import ParameterError
from .metrics import CameraIntrinsics, MetricError, MetricsReport, evaluate
from .superpixel import SlicParams, slic
from .toylab import HEADS, DivergenceError, NetConfig, compare_heads, gen_scene, overfit

EXIT_IO, EXIT_PARAM, EXIT_NUMERIC = 1, 2, 3
MISSING = "—"

log = logging.getLogger("instconv")


class CliError(Exception):
    def __init__(self, message: str, code: int):
        super().__init__(message)
        self.code = code


def _fmt(v) -> str:
    return "" if v is None else repr(float(v))


def write_report_csv(path, report: MetricsReport) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(MetricsReport.columns())
        w.writerow([_fmt(v) for v in report.as_dict().values()])


def read_report_csv(path) -> MetricsReport:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    return MetricsReport(**{k: (float(v) if v else None) for k, v in zip(rows[0], rows[1])})


def format_table(report: MetricsReport) -> str:
    items = report.as_dict()
    width = max(len(k) for k in items)
    return "\n".join(f"{k:<{width}}  {MISSING if v is None else f'{v:.4f}'}"
                     for k, v in items.items())


def net_config(cfg: io.RunConfig) -> NetConfig:
    return NetConfig(head=cfg.head, k=cfg.k, sigma=cfg.sigma, compactness=cfg.compactness,
                     iterations=cfg.iterations, lr=cfg.lr, steps=cfg.steps, seed=cfg.seed)


# ---------------------------------------------------------------------------
# commands


def cmd_segment(args) -> int:
    img = io.read_ppm(args.input)
    params = SlicParams(k=args.k, sigma=args.sigma, compactness=args.compactness,
                        iterations=args.iterations)
    labels = slic(img, params)
    io.write_segment_map(args.out, labels, k=params.k, sigma=params.sigma,
                         compactness=params.compactness, iterations=params.iterations)
    print(int(labels.max()) + 1)
    return 0


def cmd_scene(args) -> int:
    scene = gen_scene(args.seed, args.size, args.shapes)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    io.write_ppm(out / "rgb.ppm", scene.rgb)
    io.write_float_raster(out / "depth.fr", scene.depth)
    io.write_pgm(out / "edges.pgm", scene.boundaries.astype(np.int64))
    return 0


def cmd_train(args) -> int:
    cfg = io.read_config(args.config) if args.config else io.RunConfig()
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    scene = gen_scene(cfg.seed, args.size)
    ncfg = net_config(cfg)
    try:
        result = overfit(scene, ncfg, canny_low=cfg.canny_low, canny_high=cfg.canny_high)
    except DivergenceError as exc:
        raise CliError(str(exc), EXIT_NUMERIC) from exc

    io.write_ppm(out / "rgb.ppm", scene.rgb)
    io.write_float_raster(out / "gt.fr", scene.depth)
    io.write_pgm(out / "gt_edges.pgm", scene.boundaries.astype(np.int64))
    io.write_segment_map(out / "segments.pgm", result.segments, k=cfg.k, sigma=cfg.sigma,
                         compactness=cfg.compactness, iterations=cfg.iterations)
    io.save_checkpoint(out / "checkpoint.bin", result.net.params,
                       {"head": cfg.head, "seed": cfg.seed, "size": args.size})
    with open(out / "loss.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["step", "l1", "grad", "normal", "total"])
        for step, p in enumerate(result.losses):
            w.writerow([step, repr(p.l1), repr(p.grad), repr(p.normal), repr(p.total)])
    io.write_float_raster(out / "pred.fr", result.prediction)
    io.write_preview(out / "pred.pgm", result.prediction)

    report = evaluate(result.prediction, scene.depth, gt_edges=scene.boundaries,
                      canny_low=cfg.canny_low, canny_high=cfg.canny_high,
                      dde_plane=cfg.dde_plane)
    write_report_csv(out / "report.csv", report)
    print(format_table(report))
    return 0


def cmd_eval(args) -> int:
    cfg = io.read_config(args.config) if args.config else io.RunConfig()
    pred = io.read_float_raster(args.pred)
    gt = io.read_float_raster(args.gt)
    if pred.shape != gt.shape:
        raise CliError(f"shape mismatch: pred {pred.shape} vs gt {gt.shape}", EXIT_PARAM)
    edges = planes = None
    if args.gt_edges:
        edges = io.read_pgm(args.gt_edges) > 0
        if edges.shape != gt.shape:
            raise CliError("edge map shape does not match depth", EXIT_PARAM)
    if args.planes:
        planes = io.read_pgm(args.planes)
        if planes.shape != gt.shape:
            raise CliError("plane map shape does not match depth", EXIT_PARAM)
    h, w = gt.shape
    intr = CameraIntrinsics(cfg.fx, cfg.fy, w / 2.0 if cfg.cx is None else cfg.cx,
                            h / 2.0 if cfg.cy is None else cfg.cy)
    report = evaluate(pred, gt, gt_edges=edges, planes=planes, intr=intr,
                      canny_low=cfg.canny_low, canny_high=cfg.canny_high,
                      dde_plane=cfg.dde_plane)
    write_report_csv(args.out, report)
    print(format_table(report))
    return 0


def _head_names(heads: list[str]) -> list[str]:
    names, seen = [], {}
    for h in heads:
        seen[h] = seen.get(h, 0) + 1
        names.append(h if seen[h] == 1 else f"{h}_{seen[h]}")
    return names


def cmd_compare(args) -> int:
    if args.seeds < 5:
        raise CliError("compare needs --seeds >= 5", EXIT_PARAM)
    heads = [h.strip() for h in args.heads.split(",") if h.strip()]
    for h in heads:
        if h not in HEADS:
            raise CliError(f"unknown head {h!r}; choose from {', '.join(HEADS)}", EXIT_PARAM)
    base = io.read_config(args.config) if args.config else io.RunConfig()
    if args.steps is not None:
        base.steps = args.steps
    if args.lr is not None:
        base.lr = args.lr
    cfgs = {}
    for name, h in zip(_head_names(heads), heads):
        base.head = h
        cfgs[name] = net_config(base)
    seeds = list(range(args.first_seed, args.first_seed + args.seeds))
    try:
        comp = compare_heads(seeds, cfgs, size=args.size, jobs=args.jobs)
    except DivergenceError as exc:
        raise CliError(str(exc), EXIT_NUMERIC) from exc
    comp.write_csv(args.out)
    for row in comp.rows():
        print(",".join("" if v is None else str(v) for v in row.values()))
    names = list(cfgs)
    ic = next((n for n in names if cfgs[n].head == "ic"), names[0])
    sc = next((n for n in names if cfgs[n].head == "sc"), names[-1])
    print(f"IC DBE_acc median {comp.medians(ic)['dbe_acc']} vs SC {comp.medians(sc)['dbe_acc']}")
    return 0


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="instconv", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("segment", help="SLIC super-pixels of a PPM image")
    s.add_argument("--in", dest="input", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--k", type=int, default=64)
    s.add_argument("--sigma", type=float, default=1.0)
    s.add_argument("--compactness", type=float, default=10.0)
    s.add_argument("--iterations", type=int, default=10)
    s.set_defaults(func=cmd_segment)

    s = sub.add_parser("scene", help="write a synthetic scene (rgb.ppm, depth.fr, edges.pgm)")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--size", type=int, default=64)
    s.add_argument("--shapes", type=int, default=4)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_scene)

    s = sub.add_parser("train", help="overfit one network on one synthetic scene")
    s.add_argument("--config")
    s.add_argument("--size", type=int, default=64)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("eval", help="evaluate a predicted depth raster")
    s.add_argument("--pred", required=True)
    s.add_argument("--gt", required=True)
    s.add_argument("--gt-edges")
    s.add_argument("--planes")
    s.add_argument("--config")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_eval)

    s = sub.add_parser("compare", help="SC vs IC overfitting comparison over seeds")
    s.add_argument("--seeds", type=int, default=5)
    s.add_argument("--first-seed", type=int, default=0)
    s.add_argument("--size", type=int, default=64)
    s.add_argument("--heads", default="sc,sc_mask,ic")
    s.add_argument("--steps", type=int)
    s.add_argument("--lr", type=float)
    s.add_argument("--config")
    s.add_argument("--jobs", type=int, default=1)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_compare)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code
    except (ParameterError, MetricError, io.FormatError, ValueError) as exc:
        code = EXIT_IO if isinstance(exc, io.FormatError) else EXIT_PARAM
        print(f"error: {exc}", file=sys.stderr)
        return code
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())

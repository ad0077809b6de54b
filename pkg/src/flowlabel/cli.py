"""Command-line entry point: ``flowlabel {label,eval,synth,ablate,bench}``."""
from __future__ import annotations

import argparse
import logging
import math
import sys
import time
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import io
from .ablation import ablation_grid, run_ablation
from .cost import CostParams
from .features import DEFAULT_K, estimate_normals
from .metrics import evaluate, label_quality
from .pipeline import PipelineConfig, generate_labels
from .synth import generate, parse_scene_spec, suite_specs
from .core import PseudoLabelSet

log = logging.getLogger("flowlabel")


class CliError(Exception):
    pass


def _steps(text: str):
    if text.strip().lower() in ("inf", "infinite", "∞"):
        return math.inf
    value = int(text)
    if value < 0:
        raise argparse.ArgumentTypeError("walk steps must be >= 0 or 'inf'")
    return value


def _add_config_flags(p: argparse.ArgumentParser) -> None:
    # every default is None so unset flags fall through to PipelineConfig()
    g = p.add_argument_group("pipeline")
    g.add_argument("--measures", help="comma list from coord,color,normal")
    g.add_argument("--strategy", choices=("hard", "soft", "greedy"))
    g.add_argument("--source", choices=("raw", "prewarp"))
    g.add_argument("--refine", choices=("off", "naive", "walk", "full"))
    g.add_argument("--theta-d", type=float)
    g.add_argument("--theta-c", type=float)
    g.add_argument("--theta-r", type=float)
    g.add_argument("--alpha", type=float)
    g.add_argument("--epsilon", type=float)
    g.add_argument("--iters-ot", type=int)
    g.add_argument("--iters-walk", type=_steps, help="positive integer or 'inf'")
    g.add_argument("--max-disp", type=float)
    g.add_argument("--normal-k", type=int, default=DEFAULT_K,
                   help="neighbors for normals estimated when a cloud has none")


def config_from_args(args) -> PipelineConfig:
    cfg = PipelineConfig()
    cost_kw = {}
    if args.theta_d is not None:
        cost_kw["theta_d"] = args.theta_d
    if args.theta_c is not None:
        cost_kw["theta_c"] = args.theta_c
    cost = cfg.cost
    if args.measures is not None:
        cost = CostParams.parse_measures(args.measures, theta_d=cost.theta_d, theta_c=cost.theta_c)
    if cost_kw:
        cost = replace(cost, **cost_kw)
    sk = cfg.sinkhorn
    if args.epsilon is not None:
        sk = replace(sk, epsilon=args.epsilon)
    if args.iters_ot is not None:
        sk = replace(sk, max_iterations=args.iters_ot)
    walk = cfg.walk
    for flag, fieldname in (("theta_r", "theta_r"), ("alpha", "alpha"), ("iters_walk", "steps")):
        value = getattr(args, flag)
        if value is not None:
            walk = replace(walk, **{fieldname: value})
    top = {}
    if args.strategy is not None:
        top["strategy"] = args.strategy
    if args.source is not None:
        top["source"] = args.source
    if args.refine is not None:
        top["refinement"] = args.refine
    if args.max_disp is not None:
        top["max_displacement"] = args.max_disp
    return replace(cfg, cost=cost, sinkhorn=sk, walk=walk, **top)


def prepare_clouds(P, Q, config: PipelineConfig, normal_k: int = DEFAULT_K):
    """Check attribute needs; estimate normals for clouds that lack them."""
    measures = config.cost.measures
    if "color" in measures and not (P.has_colors and Q.has_colors):
        raise CliError("color measure requested but a cloud has no color data")
    if "normal" in measures:
        if not P.has_normals:
            P = estimate_normals(P, min(normal_k, len(P)))
        if not Q.has_normals:
            Q = estimate_normals(Q, min(normal_k, len(Q)))
    return P, Q


def cmd_label(args) -> int:
    config = config_from_args(args)
    P = io.read_cloud(args.p)
    Q = io.read_cloud(args.q)
    pred = None
    if args.pred:
        pred_obj = io.read_flow(args.pred)
        from .core import FlowField
        pred = FlowField(io.flow_vectors(pred_obj))
    if config.source == "prewarp" and pred is None:
        raise CliError("--source prewarp needs --pred FLOW")
    P, Q = prepare_clouds(P, Q, config, args.normal_k)
    report = generate_labels(P, Q, pred, config)
    io.write_flow(args.output, report.labels)
    print(f"labeled={report.labeled_count} unlabeled={report.unlabeled_count} "
          f"final_valid={report.labels.n_valid} refinement={report.refinement_applied}")
    for w in report.warnings:
        print(f"warning: {w}", file=sys.stderr)
    return 0


def cmd_eval(args) -> int:
    pred = io.read_flow(args.pred)
    gt = io.read_flow(args.gt)
    if len(pred) != len(gt):
        raise CliError(f"prediction has {len(pred)} vectors, ground truth {len(gt)}")
    if isinstance(pred, PseudoLabelSet):
        report = label_quality(pred, io.flow_vectors(gt))
    else:
        report = evaluate(pred.vectors, io.flow_vectors(gt))
    print(report.to_table(), end="")
    print(report.to_lines(), end="")
    return 0


def cmd_synth(args) -> int:
    spec = parse_scene_spec(Path(args.config).read_text(encoding="utf-8"))
    if args.seed is not None:
        spec = replace(spec, seed=args.seed)
    scene = generate(spec)
    out = io.write_scene(args.output, scene, binary=not args.ascii)
    print(f"wrote {scene.n} points to {out}")
    return 0


def _dir_scenes(root):
    from types import SimpleNamespace
    for d in io.scene_dirs(root):
        P, Q, gt, _ = io.read_scene_pair(d)
        if gt is None:
            raise CliError(f"{d} has no gt.sfl")
        yield SimpleNamespace(P=P, Q=Q, gt_flow=gt)


def cmd_ablate(args) -> int:
    base = config_from_args(args)
    if args.scenes:
        scenes = _dir_scenes(args.scenes)
    else:
        scenes = (generate(s) for s in suite_specs(args.suite, seed=args.seed or 0))
    tables = set(args.tables.split(",")) if args.tables else None
    rows = [r for r in ablation_grid(base) if tables is None or r.table in tables]
    for res in run_ablation(scenes, rows):
        print(res.line())
    return 0


def cmd_bench(args) -> int:
    config = config_from_args(args)
    if args.p:
        P, Q = io.read_cloud(args.p), io.read_cloud(args.q)
        pred = None
    else:
        from .synth import SceneSpec
        per_body = max(1, args.points // 8)
        scene = generate(SceneSpec(body_count=8, points_per_body=per_body, shapes=("box",),
                                   color_mode="gradient", jitter=0.02, seed=args.seed or 0))
        P, Q, pred = scene.P, scene.Q, scene.gt_flow
    if config.source == "prewarp" and pred is None:
        raise CliError("--source prewarp needs a synthetic scene or --pred")
    P, Q = prepare_clouds(P, Q, config, args.normal_k)
    totals = {}
    walls = []
    for _ in range(args.repeat):
        t0 = time.perf_counter()
        report = generate_labels(P, Q, pred, config)
        walls.append(1e3 * (time.perf_counter() - t0))
        for k, v in report.timings_ms.items():
            totals.setdefault(k, []).append(v)
    print(f"points={len(P)} repeats={args.repeat}")
    for k, v in totals.items():
        print(f"{k:<10} mean_ms={np.mean(v):10.2f} min_ms={np.min(v):10.2f}")
    print(f"{'total':<10} mean_ms={np.mean(walls):10.2f} min_ms={np.min(walls):10.2f}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="flowlabel", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    parser.add_argument("--seed", type=int, default=None, help="random seed (default 0)")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("label", help="pseudo labels for a cloud pair")
    p.add_argument("p", help="first frame PLY")
    p.add_argument("q", help="second frame PLY")
    p.add_argument("-o", "--output", required=True, help="output SFL1 label file")
    p.add_argument("--pred", help="predicted flow (SFL1) for pre-warping")
    _add_config_flags(p)
    p.set_defaults(func=cmd_label)

    p = sub.add_parser("eval", help="EPE/AS/AR/Out of a flow against ground truth")
    p.add_argument("pred")
    p.add_argument("gt")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("synth", help="synthetic scene from a key=value config")
    p.add_argument("config")
    p.add_argument("-o", "--output", required=True, help="output scene directory")
    p.add_argument("--ascii", action="store_true", help="write ascii PLY")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("ablate", help="run the ablation grid")
    p.add_argument("scenes", nargs="?", help="scene directory (default: synthetic suite)")
    p.add_argument("--suite", type=int, default=50, help="synthetic suite size")
    p.add_argument("--tables", help="comma list, e.g. A1,A4")
    _add_config_flags(p)
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("bench", help="per-stage timing")
    p.add_argument("p", nargs="?")
    p.add_argument("q", nargs="?")
    p.add_argument("--points", type=int, default=2048)
    p.add_argument("--repeat", type=int, default=3)
    _add_config_flags(p)
    p.set_defaults(func=cmd_bench)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (CliError, ValueError, OSError, FloatingPointError, np.linalg.LinAlgError) as exc:
        print(f"flowlabel {args.command}: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())

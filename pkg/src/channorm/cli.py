"""Command-line entry point: ``channorm <command> ...``.

Every command is deterministic given ``--seed`` and writes a ``#``-commented
text table (see :func:`channorm.experiments.emit_dat`).
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np

from channorm import theory
from channorm.experiments import (
    DataTable,
    Diverged,
    TrainConfig,
    depth_list,
    emit_dat,
    grad_histogram,
    load_weights,
    make_input,
    make_phantom,
    make_step_target,
    run_training,
    save_weights,
    slice_landscape,
)
from channorm.networks import FAMILIES, NetworkSpec

DEFAULT_LR = {"linear1c": 0.05, "mcnn1d": 0.05, "gen2d": 5e-5}
DEFAULT_LR_PLAIN = {"linear1c": 0.005, "mcnn1d": 0.005, "gen2d": 5e-5}
DEFAULT_INIT = {"linear1c": "gaussian", "mcnn1d": "gaussian", "gen2d": "fanin"}
DATA_STREAM = 1


def _spec_from(args) -> NetworkSpec:
    channels = 1 if args.family == "linear1c" else args.channels
    return NetworkSpec(args.family, n=args.n, depth=args.d, kernel=args.kernel, channels=channels, norm=args.norm)


def _data(spec: NetworkSpec, seed: int, target: str = "step") -> tuple[np.ndarray, np.ndarray]:
    x = make_input(spec, np.random.default_rng([seed, DATA_STREAM]))
    if target == "step":
        y = make_step_target(spec.n, centered=spec.family == "linear1c")
        if spec.family == "gen2d":
            raise ValueError("the step target is one-dimensional; use phantom or file: for gen2d")
    elif target == "phantom":
        if spec.family != "gen2d":
            raise ValueError("the phantom target needs --family gen2d")
        y = make_phantom(spec.n)
    elif target.startswith("file:"):
        y = np.fromfile(target[5:], dtype="<f8").reshape(spec.output_shape)
    else:
        raise ValueError(f"unknown target {target!r}")
    return x, y


def _add_network_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--family", choices=FAMILIES, default="linear1c")
    p.add_argument("--norm", choices=("learned", "fixed", "none"), default="fixed")
    p.add_argument("--n", type=int, default=64)
    p.add_argument("--d", type=int, default=10)
    p.add_argument("--kernel", type=int, default=9)
    p.add_argument("--channels", type=int, default=4)
    p.add_argument("--init", choices=("gaussian", "unit", "sigma", "fanin"), default=None)
    p.add_argument("--sigma", type=float, default=None)
    p.add_argument("--seed", type=int, default=0)


def cmd_train(args) -> int:
    spec = _spec_from(args)
    target = args.target or ("phantom" if spec.family == "gen2d" else "step")
    x, y = _data(spec, args.seed, target)
    table = DEFAULT_LR if spec.norm.normalizes else DEFAULT_LR_PLAIN
    cfg = TrainConfig(
        spec,
        eta=args.lr if args.lr is not None else table[spec.family],
        steps=args.steps,
        seed=args.seed,
        init=args.init or DEFAULT_INIT[spec.family],
        sigma=args.sigma,
        record_stride=args.record_stride,
    )
    status = 0
    try:
        trace = run_training(cfg, x, y)
    except Diverged as err:
        trace = err.trace
        print(f"diverged: {err}", file=sys.stderr)
        status = 2
    emit_dat(trace, args.out)
    if args.save_weights and trace.final is not None:
        save_weights(args.save_weights, spec, trace.final, x, y)
    print(f"{trace.stop_reason}: final loss {trace.final_loss:.6g} after step {trace.steps[-1]}")
    return status


def cmd_landscape(args) -> int:
    spec, stack, x, y = load_weights(args.input)
    if x is None:
        x, y = _data(spec, args.seed, "phantom" if spec.family == "gen2d" else "step")
    result = slice_landscape(stack, spec, x, y, args.extent, args.res, args.seed)
    emit_dat(result, args.out)
    print(f"center loss {result.center_loss:.6g}, range {result.loss_range:.6g}")
    return 0


def cmd_histogram(args) -> int:
    spec = _spec_from(args)
    x, y = _data(spec, args.seed, "phantom" if spec.family == "gen2d" else "step")
    hist = grad_histogram(spec, x, y, args.trials, args.bins, args.seed, init=args.init or "gaussian",
                          sigma=args.sigma)
    emit_dat(hist, args.out)
    print(f"99th percentile / median = {hist.tail_ratio():.6g}")
    return 0


def cmd_theory_escape(args) -> int:
    if args.seeds < 1:
        raise ValueError("--seeds must be at least 1")
    rows = []
    for d in depth_list(args.d):
        spec = NetworkSpec("linear1c", n=args.n, depth=d, kernel=args.kernel)
        r = theory.escape_radius(d, args.kernel, args.radius_scale)
        for seed in range(args.seeds):
            x, y = theory.make_escape_problem(args.n, d, args.kernel, np.random.default_rng([seed, DATA_STREAM]))
            steps, exit_loss, trace = theory.escape_time(spec, x, y, args.lr, r, seed, args.max_steps)
            rows.append([d, seed, r, steps, exit_loss, min(trace.losses) / float(np.dot(y, y)),
                         float(trace.stop_reason == "max_steps")])
    columns = ("d", "seed", "radius", "steps_in_ball", "loss_at_exit", "min_relative_loss", "censored")
    emit_dat(DataTable(columns, np.array(rows), [f"c: {theory.c_constant(args.kernel)!r}"]), args.out)
    for d in depth_list(args.d):
        steps = [r[3] for r in rows if r[0] == d]
        print(f"d={d}: median steps in ball {np.median(steps):g}")
    return 0


def cmd_theory_bound(args) -> int:
    rng = np.random.default_rng(args.seed)
    center = theory.xavier_stack(args.n, args.d, args.kernel, rng)
    x = rng.standard_normal(args.n)
    y = rng.standard_normal(args.n)
    delta = float(np.linalg.norm(np.stack(center.kernels), axis=1).min())
    radius = args.radius if args.radius is not None else 0.1 * delta / np.sqrt(args.d)
    probe = theory.BallProbe(center, radius, args.kernel)
    rows = []
    for _ in range(args.samples):
        check = theory.lemma1_bound(probe, x, y, theory.sample_in_ball(probe, rng))
        rows.append(list(check))
    comments = [f"radius: {radius!r}", f"alpha: {probe.alpha!r}", f"delta: {probe.delta!r}"]
    emit_dat(DataTable(("bound", "grad_norm", "product_norm", "product_bound"), np.array(rows), comments), args.out)
    ratios = np.array(rows)[:, 1] / np.array(rows)[:, 0]
    print(f"max grad_norm / bound = {ratios.max():.6g}")
    return 0


def cmd_theory_assumption(args) -> int:
    stats = theory.assumption1_stats(args.n, args.p, args.trials, args.seed)
    comments = [
        f"analytic_mean: {stats.analytic_mean!r}",
        f"mc_mean: {stats.mc_mean!r}",
        f"standard_error: {stats.standard_error!r}",
        f"c2: {stats.c2!r}",
        f"c1: {stats.c1!r}",
    ]
    rows = np.column_stack([stats.t_grid, stats.small_ball, stats.c1 * stats.t_grid])
    emit_dat(DataTable(("t", "frequency", "c1_t"), rows, comments), args.out)
    print(f"mean {stats.mc_mean:.6g} vs {stats.analytic_mean:.6g} (z = {stats.z_score:.3g}), c2 = {stats.c2:.6g}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="channorm", description=__doc__.splitlines()[0], allow_abbrev=False)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", allow_abbrev=False, help="train one network and write its trace")
    _add_network_args(p)
    p.add_argument("--lr", type=float, default=None)
    p.add_argument("--steps", type=int, default=100_000)
    p.add_argument("--record-stride", type=int, default=100)
    p.add_argument("--target", default=None, help="step | phantom | file:PATH (raw little-endian float64)")
    p.add_argument("--save-weights", type=Path, default=None)
    p.add_argument("--out", type=Path, required=True)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("landscape", allow_abbrev=False, help="loss on a random 2-D slice around saved weights")
    p.add_argument("--in", dest="input", type=Path, required=True)
    p.add_argument("--extent", type=float, default=1.0)
    p.add_argument("--res", type=int, default=21)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", type=Path, required=True)
    p.set_defaults(func=cmd_landscape)

    p = sub.add_parser("histogram", allow_abbrev=False, help="gradient norms at initialization")
    _add_network_args(p)
    p.add_argument("--trials", type=int, default=200)
    p.add_argument("--bins", type=int, default=40)
    p.add_argument("--out", type=Path, required=True)
    p.set_defaults(func=cmd_histogram)

    p = sub.add_parser("theory", allow_abbrev=False, help="linear-network analysis")
    tsub = p.add_subparsers(dest="analysis", required=True)

    q = tsub.add_parser("escape", allow_abbrev=False, help="steps spent in a ball around the initialization")
    q.add_argument("--n", type=int, default=16)
    q.add_argument("--d", default="2,4,6,8", help="comma-separated depths")
    q.add_argument("--kernel", type=int, default=3)
    q.add_argument("--lr", type=float, default=0.1)
    q.add_argument("--radius-scale", type=float, default=1.0)
    q.add_argument("--seeds", type=int, default=20)
    q.add_argument("--max-steps", type=int, default=20_000)
    q.add_argument("--out", type=Path, required=True)
    q.set_defaults(func=cmd_theory_escape)

    q = tsub.add_parser("bound", allow_abbrev=False, help="gradient bound on random points of a ball")
    q.add_argument("--n", type=int, default=16)
    q.add_argument("--d", type=int, default=6)
    q.add_argument("--kernel", type=int, default=3)
    q.add_argument("--radius", type=float, default=None, help="default: 0.1 * min_i ||w_i|| / sqrt(d)")
    q.add_argument("--samples", type=int, default=100)
    q.add_argument("--seed", type=int, default=0)
    q.add_argument("--out", type=Path, required=True)
    q.set_defaults(func=cmd_theory_bound)

    q = tsub.add_parser("assumption", allow_abbrev=False, help="statistics of ||w_i|| at initialization")
    q.add_argument("--n", type=int, default=64)
    q.add_argument("--p", type=int, default=9)
    q.add_argument("--trials", type=int, default=100_000)
    q.add_argument("--seed", type=int, default=0)
    q.add_argument("--out", type=Path, required=True)
    q.set_defaults(func=cmd_theory_assumption)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ValueError, OSError) as err:
        print(f"error: {err}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())

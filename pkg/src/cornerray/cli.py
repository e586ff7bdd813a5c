"""Command-line interface.

Subcommands: trace, classify, verify, symbol-check, oracle.  Exit codes:
0 success, 1 scenario parse/validation error (with a line/column mark for
YAML syntax problems), 2 at least one failed property.
"""

from __future__ import annotations

import argparse
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import boundary, serialize, suites
from .errors import CornerRayError, ScenarioError
from .geometry import CompressedPoint
from .scenario import load_scenario
from .serialize import fmt
from .tracer import TraceConfig, trace


def _apply_overrides(scn, args):
    icfg = scn.trace_cfg.integrator
    kw = {}
    for name, attr in (("tol_rel", "rel_tol"), ("tol_abs", "abs_tol"),
                       ("tol_event", "event_tol"), ("max_step", "max_step"),
                       ("max_time", "max_time")):
        v = getattr(args, name, None)
        if v is not None:
            kw[attr] = v
    if kw:
        icfg = replace(icfg, **kw)
    tkw = {"integrator": icfg}
    if getattr(args, "seed", None) is not None:
        tkw["seed"] = args.seed
    if getattr(args, "branch_rule", None) is not None:
        tkw.update(TraceConfig.parse_rule(args.branch_rule))
    scn.trace_cfg = replace(scn.trace_cfg, **tkw)
    return scn


def _out_dir(args):
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def cmd_trace(args):
    scn = _apply_overrides(load_scenario(args.scenario), args)
    out = _out_dir(args)
    points = scn.points + (scn.family_points() if args.include_family else [])
    if not points:
        print("scenario declares no initial points", file=sys.stderr)
        return 1
    for idx, q in enumerate(points):
        tree = trace(scn.chart, q, scn.trace_cfg)
        suffix = f"_{idx}" if len(points) > 1 else ""
        (out / f"tree{suffix}.json").write_text(serialize.dump_tree(tree))
        (out / f"samples{suffix}.txt").write_text(
            serialize.dump_samples(tree))
        leaves = tree.leaves()
        events = sum(len(n.ray.events) for n in tree.nodes())
        print(f"point {idx}: {len(tree.nodes())} branch(es), "
              f"{len(leaves)} leaf/leaves, {events} events -> "
              f"tree{suffix}.json, samples{suffix}.txt")
    return 0


def cmd_classify(args):
    scn = _apply_overrides(load_scenario(args.scenario), args)
    chart = scn.chart
    out = _out_dir(args)
    if chart.l == 0:
        grid = [np.zeros(0)]
        zvals = [0.0]
    else:
        zvals = np.linspace(args.zeta_min, args.zeta_max, args.grid)
        grid = [np.array([z] + [0.0] * (chart.l - 1)) for z in zvals]
    lines = ["# zeta1 margin kind"]
    tau = 1.0
    for z, zeta in zip(zvals, grid):
        q = CompressedPoint(frozenset(range(chart.k)), np.zeros(chart.k),
                            np.zeros(chart.l), 0.0, np.zeros(chart.k),
                            zeta, tau, chart_key=chart.key)
        cls = boundary.classify(chart, q)
        lines.append(f"{fmt(z)} {fmt(cls.margin)} {cls.kind.value}")
    text = "\n".join(lines) + "\n"
    (out / "classify.txt").write_text(text)
    print(text, end="")
    return 0


def cmd_verify(args):
    scn = _apply_overrides(load_scenario(args.scenario), args)
    out = _out_dir(args)
    if args.suite != "core":
        print(f"unknown suite {args.suite!r}", file=sys.stderr)
        return 1
    reports = suites.suite_core(scn)
    text = serialize.dump_report_lines(reports)
    (out / "report.txt").write_text(text)
    print(text, end="")
    n_fail = sum(not r.passed for r in reports)
    print(f"# {len(reports)} checks, {n_fail} failed")
    return 2 if n_fail else 0


def cmd_symbol_check(args):
    scn = _apply_overrides(load_scenario(args.scenario), args)
    out = _out_dir(args)
    reports, extra = suites.suite_symbols(scn, n_samples=args.n_samples,
                                          seed=args.seed or 0)
    text = serialize.dump_report_lines(reports)
    (out / "symbol_report.txt").write_text(text)
    print(text, end="")
    if "hyperbolic" in extra:
        rep = extra["hyperbolic"]
        print(f"# hyperbolic: c0={fmt(rep.c0)} C1''={fmt(rep.C1)} "
              f"eps_threshold={fmt(rep.eps_threshold)} "
              f"min|tau^-1 Hp phi|={fmt(rep.min_hp_phi)} "
              f"required={fmt(rep.required)} on {rep.n_support} samples")
    if "glancing" in extra:
        rep = extra["glancing"]
        print(f"# glancing: C={fmt(rep.C_with)} refined={fmt(rep.C_refined)} "
              f"stability={fmt(rep.stability)} "
              f"C_without_p={fmt(rep.C_without)}")
    n_fail = sum(not r.passed for r in reports)
    print(f"# {len(reports)} checks, {n_fail} failed")
    return 2 if n_fail else 0


def cmd_oracle(args):
    out = _out_dir(args)
    cmp_ = suites.run_flat_oracle_suite(n_scenarios=args.n,
                                        seed=args.seed or 0)
    lines = [
        f"scenarios {cmp_.n_scenarios}",
        f"bounces {cmp_.total_bounces}",
        f"max_dev_s {fmt(cmp_.max_dev_s)}",
        f"max_dev_cov {fmt(cmp_.max_dev_cov)}",
        f"mismatches {cmp_.mismatches}",
        f"runtime_s {fmt(cmp_.runtime_s)}",
    ]
    text = "\n".join(lines) + "\n"
    (out / "oracle_report.txt").write_text(text)
    print(text, end="")
    return 2 if cmp_.mismatches else 0


def build_parser():
    p = argparse.ArgumentParser(
        prog="cornerray",
        description="Trace generalized broken bicharacteristics on corner "
                    "charts and verify their structural properties.")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, scenario=True):
        if scenario:
            sp.add_argument("scenario", help="scenario YAML file")
        sp.add_argument("--out", default="out", help="output directory")
        sp.add_argument("--seed", type=int, default=None)
        sp.add_argument("--max-time", dest="max_time", type=float,
                        default=None)
        sp.add_argument("--branch-rule", dest="branch_rule", default=None,
                        help="specular | all:N")
        sp.add_argument("--tol-rel", dest="tol_rel", type=float, default=None)
        sp.add_argument("--tol-abs", dest="tol_abs", type=float, default=None)
        sp.add_argument("--tol-event", dest="tol_event", type=float,
                        default=None)
        sp.add_argument("--max-step", dest="max_step", type=float,
                        default=None)

    sp = sub.add_parser("trace", help="emit branch tree and sample records")
    common(sp)
    sp.add_argument("--include-family", action="store_true")
    sp.set_defaults(func=cmd_trace)

    sp = sub.add_parser("classify",
                        help="tabulate boundary classification margins")
    common(sp)
    sp.add_argument("--grid", type=int, default=31)
    sp.add_argument("--zeta-min", dest="zeta_min", type=float, default=0.0)
    sp.add_argument("--zeta-max", dest="zeta_max", type=float, default=1.5)
    sp.set_defaults(func=cmd_classify)

    sp = sub.add_parser("verify", help="run a named property suite")
    common(sp)
    sp.add_argument("--suite", default="core")
    sp.set_defaults(func=cmd_verify)

    sp = sub.add_parser("symbol-check",
                        help="escape-function and bracket reports")
    common(sp)
    sp.add_argument("--n-samples", dest="n_samples", type=int, default=10_000)
    sp.set_defaults(func=cmd_symbol_check)

    sp = sub.add_parser("oracle", help="flat billiard oracle comparisons")
    common(sp, scenario=False)
    sp.add_argument("--n", type=int, default=50)
    sp.set_defaults(func=cmd_oracle)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ScenarioError as e:
        print(f"scenario error: {e}", file=sys.stderr)
        return 1
    except CornerRayError as e:
        print(f"error: {e}", file=sys.stderr)
        return 1


def entry():
    raise SystemExit(main())


if __name__ == "__main__":
    raise SystemExit(main())

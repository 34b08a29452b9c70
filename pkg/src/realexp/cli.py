"""Command-line entry point: ``realexp <command> ...``.

Exit status is 0 on success, 2 for invalid input, 3 when the model cannot be
reached or speaks the protocol wrongly, and 4 when a model or value function
produces unusable numbers.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from .adapters import OverlayStyle, render_overlay
from .coalition import EXHAUSTIVE, Sampled, TableGame, exact_shapley, permutation_shapley
from .errors import RealExpError, ValidationError
from .evaluation import ExpertAnnotation, digest
from .perturbation import empirical_variance, mc_variance_total
from .pipeline import ImportanceReport, RunConfig, adapt_instance, consistency_eval, explain, stability_study, sweep

log = logging.getLogger("realexp")


def _emit(text: str, out: str | None):
    if out:
        Path(out).write_text(text + ("" if text.endswith("\n") else "\n"), encoding="utf-8")
    else:
        sys.stdout.write(text if text.endswith("\n") else text + "\n")


def _cmd_explain(args):
    config = RunConfig.load(args.config)
    if args.seed is not None:
        config = replace(config, seed=args.seed)
    if args.jobs:
        config = replace(config, n_jobs=args.jobs)
    instance = adapt_instance(config)
    report = explain(config, instance)
    _emit(report.to_json(), args.out)
    if args.overlay:
        render_overlay(instance, report.attribution, OverlayStyle(args.overlay_mode, args.top_k), args.overlay)
    log.info("explained %d features in %.2fs", report.n, sum(report.timing.values()))


def _cmd_oracle(args):
    game = TableGame.load(args.game)
    if args.method == "exact":
        att = exact_shapley(game)
    else:
        mode = EXHAUSTIVE if args.samples is None else Sampled(args.samples, args.seed)
        att = permutation_shapley(game, mode=mode)
    out = att.to_dict()
    if att.stderr is not None:
        out["stderr"] = [float(x) for x in att.stderr]
    _emit(json.dumps(out, indent=1), args.out)


def _cmd_variance(args):
    rng = np.random.default_rng(args.seed)
    c = rng.uniform(0.5, 1.5, args.n) if args.c is None else np.array(args.c, dtype=float)
    rep = empirical_variance(c, 0.0, args.n, args.alpha, args.sigma_q2, args.samples, args.seed)
    out = rep.to_dict()
    out["c"] = [float(x) for x in c]
    out["total_variance_mc"] = mc_variance_total(c, args.alpha, args.sigma_q2)
    out["ordered"] = bool(rep.empirical_fixed < rep.empirical_random < rep.empirical_mc)
    _emit(json.dumps(out, indent=1), args.out)


def _cmd_stability(args):
    per = []
    for path in args.config:
        config = RunConfig.load(path)
        res = stability_study(config, args.repeats, args.top_k, args.policy)
        per.append({"config": str(path), "jaccard": {p: r["jaccard"] for p, r in res.items()}})
    policies = list(per[0]["jaccard"])
    mean = {p: float(np.mean([r["jaccard"][p] for r in per])) for p in policies}
    _emit(json.dumps({"per_instance": per, "mean": mean}, indent=1), args.out)


def _cmd_eval(args):
    report = ImportanceReport.load(args.report)
    expert = ExpertAnnotation.load(args.expert)
    rep = consistency_eval(report, expert)
    out = rep.to_dict(
        report_hash=digest(report.to_dict(timing=False)),
        expert_hash=digest({"items": list(expert.items), "labels": expert.labels}),
    )
    _emit(json.dumps(out, indent=1), args.out)


def _cmd_sweep(args):
    expert = ExpertAnnotation.load(args.expert) if args.expert else None
    rows = []
    for path in args.config:
        for row in sweep(RunConfig.load(path), args.param, args.values, expert):
            rows.append({"instance": str(path), **row})
    if len(args.config) > 1:
        numeric = ["r2_train", "r2_holdout"] + (["accuracy", "tau"] if expert else [])
        for val in args.values:
            group = [r for r in rows if r["value"] == float(val)]
            mean = {"instance": "mean", "param": args.param, "value": float(val), "ranking": ""}
            for key in numeric:
                xs = [r[key] for r in group if r[key] is not None]
                mean[key] = float(np.mean(xs)) if xs else None
            rows.append(mean)
    fields = ["instance", "param", "value", "r2_train", "r2_holdout"] + (["accuracy", "tau"] if expert else [])
    fields.append("ranking")
    fh = open(args.out, "w", newline="", encoding="utf-8") if args.out else sys.stdout
    try:
        writer = csv.DictWriter(fh, fieldnames=fields, lineterminator="\n")
        writer.writeheader()
        writer.writerows(rows)
    finally:
        if args.out:
            fh.close()


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="realexp", description="Correlation-aware Shapley explanations.")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True)

    e = sub.add_parser("explain", help="explain one instance described by a run config")
    e.add_argument("--config", required=True)
    e.add_argument("--out")
    e.add_argument("--overlay", help="write an image overlay (PPM) and its .json ranking")
    e.add_argument("--overlay-mode", choices=["heat", "topk"], default="heat")
    e.add_argument("--top-k", type=int, default=3)
    e.add_argument("--seed", type=int)
    e.add_argument("--jobs", type=int, help="threads for tree fitting")
    e.set_defaults(func=_cmd_explain)

    o = sub.add_parser("oracle", help="Shapley values of a tabulated game")
    o.add_argument("--game", required=True)
    o.add_argument("--method", choices=["exact", "perm"], default="exact")
    o.add_argument("--samples", type=int, help="sample this many permutations instead of all")
    o.add_argument("--seed", type=int, default=0)
    o.add_argument("--out")
    o.set_defaults(func=_cmd_oracle)

    v = sub.add_parser("variance-demo", help="score variance under the three masking policies")
    v.add_argument("--n", type=int, default=20)
    v.add_argument("--alpha", type=float, default=0.3)
    v.add_argument("--sigma-q2", type=float, default=0.05)
    v.add_argument("--samples", type=int, default=100_000)
    v.add_argument("--seed", type=int, default=1)
    v.add_argument("--c", type=float, nargs="+", help="contributions (default: seeded uniform 0.5..1.5)")
    v.add_argument("--out")
    v.set_defaults(func=_cmd_variance)

    s = sub.add_parser("stability", help="top-k Jaccard stability per masking policy")
    s.add_argument("--config", required=True, nargs="+")
    s.add_argument("--repeats", type=int, default=10)
    s.add_argument("--top-k", type=int, default=5)
    s.add_argument("--policy", nargs="+", choices=["FixedCount", "Bernoulli", "MonteCarloRate"])
    s.add_argument("--out")
    s.set_defaults(func=_cmd_stability)

    ev = sub.add_parser("eval", help="compare a report's ranking with an expert annotation")
    ev.add_argument("--report", required=True)
    ev.add_argument("--expert", required=True)
    ev.add_argument("--out")
    ev.set_defaults(func=_cmd_eval)

    sw = sub.add_parser("sweep", help="re-run explain over lambda or alpha values (CSV)")
    sw.add_argument("--param", required=True, choices=["lambda", "alpha"])
    sw.add_argument("--values", required=True, nargs="+", type=float)
    sw.add_argument("--config", required=True, nargs="+")
    sw.add_argument("--expert")
    sw.add_argument("--out")
    sw.set_defaults(func=_cmd_sweep)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        args.func(args)
    except RealExpError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    except (OSError, KeyError, TypeError, ValueError) as exc:
        # unreadable files, missing config keys and similar input problems
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return ValidationError.exit_code
    return 0


if __name__ == "__main__":
    sys.exit(main())

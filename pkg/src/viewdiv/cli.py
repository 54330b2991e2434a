"""Command-line front end.

Verbs: sample (pair geometry JSON), score (full run -> report.json,
pairs.csv, plotdata.json, timings.json), fractions (subset stability
study), range (classify config means against the anchor band), oracle
(solver self-check against the exact optimum), loss (evaluate the loss
functions on a JSON payload).

Exit codes: 0 success, 2 input error, 3 numerical error.
"""
from __future__ import annotations

import argparse
import dataclasses
import json
import sys
from pathlib import Path

import numpy as np

from .losses import ContrastiveBatch, DistillPair, dino_ce, info_nce
from .pipeline import RunSpec, fraction_study, range_rule, run, sample_pairs
from .transport import run_oracle_suite


def _emit(obj, out: str | None) -> None:
    text = json.dumps(obj, indent=2, sort_keys=True) + "\n"
    if out is None or out == "-":
        sys.stdout.write(text)
    else:
        Path(out).write_text(text)


def _cmd_sample(args) -> int:
    spec = RunSpec.from_file(args.config, workers=args.workers)
    _emit(sample_pairs(spec), args.out)
    return 0


def _cmd_score(args) -> int:
    spec = RunSpec.from_file(args.config, workers=args.workers)
    report = run(spec, out_dir=args.out_dir)
    counted = sum(c["count"] for c in report.per_config.values())
    skipped = sum(c["skipped"] for c in report.per_config.values())
    print(f"scored {counted} pairs ({skipped} skipped) -> {args.out_dir}", file=sys.stderr)
    return 0


def _cmd_fractions(args) -> int:
    spec = RunSpec.from_file(args.config, workers=args.workers)
    fractions = [float(f) for f in args.fractions.split(",") if f.strip()]
    table = fraction_study(spec, fractions)
    # wall clock stays out of the deterministic artifact
    wall = table.pop("wall_clock_ms")
    _emit(table, args.out)
    if args.out not in (None, "-"):
        _emit({"wall_clock_ms": wall}, str(Path(args.out).with_suffix(".timings.json")))
    return 0


def _cmd_range(args) -> int:
    with open(args.report) as fh:
        report = json.load(fh)
    rule = range_rule(report)
    _emit(
        {"upper": rule.upper, "lower": rule.lower, "verdicts": rule.verdicts},
        args.out,
    )
    return 0


def _cmd_oracle(args) -> int:
    report = run_oracle_suite(instances=args.instances, seed=args.seed, dims=args.dims)
    _emit(
        {
            "instances": len(report.instances),
            "max_overshoot": report.max_overshoot,
            "max_tight_gap": report.max_tight_gap,
            "wall_clock_s": report.wall_clock_s,
            "all_ok": report.all_ok,
        },
        args.out,
    )
    return 0 if report.all_ok else 3


def _cmd_loss(args) -> int:
    with open(args.input) as fh:
        payload = json.load(fh)
    if not isinstance(payload, dict) or not payload:
        raise ValueError("loss payload must be a nonempty JSON object")
    out = {}
    if "info_nce" in payload:
        p = payload["info_nce"]
        batch = ContrastiveBatch(
            q=np.asarray(p["q"], dtype=np.float64),
            k_pos=np.asarray(p["k_pos"], dtype=np.float64),
            k_negs=np.asarray(p.get("k_negs", []), dtype=np.float64).reshape(
                -1, len(p["q"])
            ),
            tau=float(p.get("tau", 0.2)),
        )
        loss, grad = info_nce(batch)
        out["info_nce"] = {"loss": loss, "grad_q": grad.tolist()}
    if "dino" in payload:
        p = payload["dino"]
        pair = DistillPair(
            p_teacher=np.asarray(p["teacher_probs"], dtype=np.float64),
            log_p_student=np.asarray(p["student_log_probs"], dtype=np.float64),
        )
        out["dino"] = {"cross_entropy": dino_ce(pair)}
    if not out:
        raise ValueError("loss payload needs an 'info_nce' and/or 'dino' section")
    _emit(out, args.out)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="viewdiv",
        description="Positive-pair view diversity: constrained crops scored by "
        "entropic optimal transport over patch features.",
    )
    sub = parser.add_subparsers(dest="verb", required=True)

    def add_spec_args(p):
        p.add_argument("--config", required=True, help="run spec JSON")
        p.add_argument("--workers", type=int, default=None, help="override spec workers")

    p = sub.add_parser("sample", help="emit pair geometry and patch rects as JSON")
    add_spec_args(p)
    p.add_argument("--out", default=None, help="output path (default stdout)")
    p.set_defaults(func=_cmd_sample)

    p = sub.add_parser("score", help="full run: report.json, pairs.csv, plotdata.json")
    add_spec_args(p)
    p.add_argument("--out-dir", required=True)
    p.set_defaults(func=_cmd_score)

    p = sub.add_parser("fractions", help="data-fraction stability study")
    add_spec_args(p)
    p.add_argument("--fractions", default="1.0,0.5,0.1", help="comma-separated, must include 1.0")
    p.add_argument("--out", default=None)
    p.set_defaults(func=_cmd_fractions)

    p = sub.add_parser("range", help="classify config means against the anchor band")
    p.add_argument("--report", required=True, help="report.json from `viewdiv score`")
    p.add_argument("--out", default=None)
    p.set_defaults(func=_cmd_range)

    p = sub.add_parser("oracle", help="solver self-check vs the exact optimum")
    p.add_argument("--instances", type=int, default=100)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--dims", type=int, default=16)
    p.add_argument("--out", default=None)
    p.set_defaults(func=_cmd_oracle)

    p = sub.add_parser("loss", help="evaluate contrastive/distillation losses on JSON")
    p.add_argument("--input", required=True)
    p.add_argument("--out", default=None)
    p.set_defaults(func=_cmd_loss)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ArithmeticError as exc:
        print(f"numerical error: {exc}", file=sys.stderr)
        return 3
    except (ValueError, KeyError, OSError) as exc:
        print(f"input error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())

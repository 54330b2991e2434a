#!/usr/bin/env python3
"""Score every pair policy on a corpus and print the mean-similarity table.

Runs all eight crop policies with the toy encoder, prints one row per policy
(mean, x10 display value, std, counts), and optionally writes the full
report/CSV/plot-data artifacts.
"""

import argparse

from viewdiv.pairgen import ConfigKind, PairConfig
from viewdiv.pipeline import DISPLAY_FACTOR, RunSpec, run


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--corpus", required=True, help="corpus manifest path")
    ap.add_argument("--out-dir", default=None, help="also write run artifacts here")
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--pairs-per-image", type=int, default=1)
    ap.add_argument("--data-fraction", type=float, default=1.0)
    ap.add_argument("--profile", choices=("coco", "imagenet"), default="coco")
    ap.add_argument("--workers", type=int, default=1)
    args = ap.parse_args(argv)

    spec = RunSpec(
        corpus_manifest=args.corpus,
        configs=tuple(PairConfig.for_kind(k, args.profile) for k in ConfigKind),
        corpus_profile=args.profile,
        seed=args.seed,
        data_fraction=args.data_fraction,
        pairs_per_image=args.pairs_per_image,
        workers=args.workers,
    )
    report = run(spec, args.out_dir)

    header = f"{'config':<26} {'mean':>8} {'x10':>7} {'std':>8} {'count':>6} {'skipped':>8}"
    print(header)
    print("-" * len(header))
    for kind, block in report.per_config.items():
        mean = block["mean"]
        if mean is None:
            print(f"{kind:<26} {'-':>8} {'-':>7} {'-':>8} {block['count']:>6} {block['skipped']:>8}")
            continue
        print(
            f"{kind:<26} {mean:>8.4f} {mean * DISPLAY_FACTOR:>7.3f} "
            f"{block['std']:>8.4f} {block['count']:>6} {block['skipped']:>8}"
        )
    if args.out_dir:
        print(f"\nartifacts written to {args.out_dir}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())

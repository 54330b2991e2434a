#!/usr/bin/env python3
"""Re-score a corpus at nested subset fractions and report mean stability.

Subsets are prefixes of one seeded shuffle, so smaller fractions are strict
subsets of larger ones.  Stability per policy is max_f |mean(f) - mean(1.0)|.
"""

import argparse
import json

from viewdiv.pairgen import PairConfig
from viewdiv.pipeline import RunSpec, fraction_study


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--corpus", required=True, help="corpus manifest path")
    ap.add_argument("--fractions", default="1.0,0.5,0.1", help="comma-separated, must include 1.0")
    ap.add_argument(
        "--configs",
        default="baseline,zero_overlap,lower_bound",
        help="comma-separated policy names",
    )
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--pairs-per-image", type=int, default=1)
    ap.add_argument("--profile", choices=("coco", "imagenet"), default="coco")
    ap.add_argument("--workers", type=int, default=1)
    ap.add_argument("--out", default=None, help="write the study table as JSON")
    args = ap.parse_args(argv)

    fractions = tuple(float(f) for f in args.fractions.split(","))
    configs = tuple(
        PairConfig.for_kind(name.strip(), args.profile)
        for name in args.configs.split(",")
        if name.strip()
    )
    spec = RunSpec(
        corpus_manifest=args.corpus,
        configs=configs,
        corpus_profile=args.profile,
        seed=args.seed,
        pairs_per_image=args.pairs_per_image,
        workers=args.workers,
    )
    study = fraction_study(spec, fractions)

    cols = [repr(f) for f in study["fractions"]]
    header = f"{'config':<26} " + " ".join(f"{c:>12}" for c in cols) + f" {'stability':>10}"
    print(header)
    print("-" * len(header))
    for kind, row in study["per_config_mean"].items():
        cells = " ".join(
            f"{row[c]:>12.4f}" if row[c] is not None else f"{'-':>12}" for c in cols
        )
        stab = study["stability"][kind]
        print(f"{kind:<26} {cells} " + (f"{stab:>10.4f}" if stab is not None else f"{'-':>10}"))
    print(f"\nsubset sizes: {study['subset_sizes']}")
    print(f"stability_max: {study['stability_max']}")
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            json.dump(study, fh, indent=2, sort_keys=True)
            fh.write("\n")
        print(f"study table written to {args.out}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())

"""Command line entry point.

Exit codes match the scorer's convention: 0 success, 2 input problems
(unreadable pairs file, unknown backbone, missing images, write failures),
3 numerical problems (non-finite backbone output). Per-pair failures are
listed on stderr one line each; the manifest still covers every pair that
succeeded.
"""

from __future__ import annotations

import argparse
import sys

from .backbones import BACKBONES
from .extract import ExtractJob, extract


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(
        prog="viewdiv-extract",
        description="Embed exported view pairs with a CNN backbone into FEMB files.",
    )
    ap.add_argument("--pairs", required=True, help="pairs JSON from `viewdiv sample`")
    ap.add_argument("--out", required=True, help="output directory for FEMB files + manifest")
    ap.add_argument(
        "--images",
        default=None,
        help="root for relative image paths (default: the pairs file's directory)",
    )
    ap.add_argument("--backbone", default="resnet50", choices=BACKBONES)
    ap.add_argument(
        "--side",
        type=int,
        default=84,
        help="square pixel size each patch is resized to before the backbone",
    )
    ap.add_argument("--batch-size", type=int, default=64)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        job = ExtractJob(
            pairs_json=args.pairs,
            output_dir=args.out,
            image_root=args.images,
            backbone=args.backbone,
            patch_input_side=args.side,
            batch_size=args.batch_size,
        )
        result = extract(job)
    except ArithmeticError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    except (ValueError, KeyError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    print(f"embedded {result.embedded} pair(s) -> {result.manifest_path}")
    if result.failures:
        for f in result.failures:
            print(f"failed {f.pair_id}: {f.error}", file=sys.stderr)
        return 3 if any(f.numerical for f in result.failures) else 2
    return 0


if __name__ == "__main__":
    raise SystemExit(main())

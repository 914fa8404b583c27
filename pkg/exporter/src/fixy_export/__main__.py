"""CLI: convert a trained checkpoint (or a seeded synthetic model) into the
neutral manifest + weight-blob interchange format.

    python -m fixy_export --checkpoint PATH --arch mobilenet_v1 --alpha 0.25 \
        --out-manifest M.json --out-weights M.bin
    python -m fixy_export --synthetic --alpha 0.25 --seed 42 \
        --out-manifest M.json --out-weights M.bin
"""

import argparse
import sys
from pathlib import Path

from .keras_export import ExportError, ExportRecipe, run_export
from .synthetic import export_synthetic


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="fixy_export", description=__doc__.splitlines()[0])
    parser.add_argument("--checkpoint", help="trained model checkpoint (.keras or .h5)")
    parser.add_argument("--synthetic", action="store_true",
                        help="generate seeded random weights instead of loading a checkpoint")
    parser.add_argument("--arch", default="mobilenet_v1")
    parser.add_argument("--alpha", type=float, default=1.0)
    parser.add_argument("--seed", type=int, default=1)
    parser.add_argument("--out-manifest", required=True)
    parser.add_argument("--out-weights", required=True)
    args = parser.parse_args(argv)

    if not args.synthetic and not args.checkpoint:
        parser.error("pass --checkpoint PATH or --synthetic")
    try:
        if args.synthetic:
            manifest, blob = export_synthetic(args.alpha, args.seed)
            Path(args.out_manifest).write_text(manifest)
            Path(args.out_weights).write_bytes(blob)
        else:
            run_export(ExportRecipe(
                checkpoint=args.checkpoint, arch=args.arch, alpha=args.alpha,
                out_manifest=args.out_manifest, out_weights=args.out_weights,
            ))
    except (ExportError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    print(f"wrote {args.out_manifest} and {args.out_weights}", file=sys.stderr)
    return 0


if __name__ == "__main__":
    sys.exit(main())

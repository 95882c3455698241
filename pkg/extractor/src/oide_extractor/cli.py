"""extract: encode an image directory into an OIDE embedding file."""

from __future__ import annotations

import argparse
import os
import sys
from pathlib import Path

from .pipeline import MODEL_FAMILIES, ExtractJob, extract


def default_weights(model: str) -> Path:
    root = os.environ.get("OIDE_WEIGHTS_DIR", os.path.expanduser("~/.cache/oide"))
    return Path(root) / f"{model}.pt"


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="oide-extract", description=__doc__)
    parser.add_argument("--images", required=True, help="directory of images")
    parser.add_argument("--model", required=True, choices=sorted(MODEL_FAMILIES),
                        help="autoencoder family of the weights")
    parser.add_argument("--out", required=True, help="output .oide file")
    parser.add_argument("--batch", type=int, default=8)
    parser.add_argument("--weights", default=None,
                        help="local encoder checkpoint "
                             "(default: $OIDE_WEIGHTS_DIR/<model>.pt)")
    parser.add_argument("--device", default="cpu")
    args = parser.parse_args(argv)

    weights = Path(args.weights) if args.weights else default_weights(args.model)
    if not weights.exists():
        print(f"error: weights not found at {weights}; pass --weights or set "
              "OIDE_WEIGHTS_DIR", file=sys.stderr)
        return 1
    try:
        job = ExtractJob(image_dir=args.images, model=args.model,
                         weights=weights, output=args.out,
                         batch_size=args.batch, device=args.device)
        report = extract(job)
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    print(f"wrote {report.count} embeddings of dim {report.dim} to {args.out}"
          + (f" ({len(report.skipped)} skipped)" if report.skipped else ""))
    return 0


if __name__ == "__main__":
    sys.exit(main())

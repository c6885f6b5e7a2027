"""Command line: export an image folder to an EMB1 feature file."""

import argparse
import logging
import sys

from .export import BACKBONES, ExportError, ExportSpec, export


def main(argv=None) -> int:
    p = argparse.ArgumentParser(
        prog="export",
        description="run a vision backbone over an image folder and write EMB1 features")
    p.add_argument("--images", required=True, help="root directory; one subfolder per class")
    p.add_argument("--backbone", default="resnet18", choices=sorted(BACKBONES))
    p.add_argument("--out", required=True, help="output .emb1 path")
    p.add_argument("--batch-size", type=int, default=32)
    p.add_argument("--device", default="cpu")
    p.add_argument("--weights", default=None, help="optional state-dict file for the backbone")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--verbose", action="store_true")
    args = p.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING)
    try:
        manifest = export(ExportSpec(args.images, args.backbone, args.out,
                                     args.batch_size, args.device,
                                     weights_path=args.weights, seed=args.seed))
    except ExportError as exc:
        print(f"export error: {exc}", file=sys.stderr)
        return 2
    print(f"wrote {args.out}: {manifest['count']} x {manifest['dim']} "
          f"({len(manifest['labels'])} classes, {len(manifest['skipped'])} skipped)")
    return 0


if __name__ == "__main__":
    sys.exit(main())

import argparse
import sys

from .extract import ExtractorConfig, extract_dataset


def main(argv=None):
    parser = argparse.ArgumentParser(
        prog="rlrf-extract",
        description="dump multi-scale CNN features into RLRF files")
    parser.add_argument("--dataset-root", required=True)
    parser.add_argument("--layout", choices=("mvtec", "visa"), required=True)
    parser.add_argument("--out", required=True)
    parser.add_argument("--stages", default="1,2,3",
                        help="comma-separated subset of 1,2,3")
    parser.add_argument("--resize", type=int, default=256)
    parser.add_argument("--backbone", default="efficientnet_b6")
    parser.add_argument("--weights", default="pretrained",
                        help="pretrained | none | path to a state dict")
    args = parser.parse_args(argv)
    try:
        config = ExtractorConfig(
            dataset_root=args.dataset_root, layout=args.layout,
            output_dir=args.out,
            stages=tuple(int(s) for s in args.stages.split(",")),
            resize=args.resize, backbone=args.backbone, weights=args.weights)
        count = extract_dataset(config)
    except (ValueError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    print(f"extracted {count} records to {args.out}")
    return 0


if __name__ == "__main__":
    sys.exit(main())

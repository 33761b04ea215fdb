"""kspace-extract: capture decoder key vectors into kspace dump directories."""

from __future__ import annotations

import argparse
import sys

from .errors import ExtractionError
from .runner import ExtractionConfig, run_extraction


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="kspace-extract",
        description=(
            "Hook the key projections of selected decoder layers during "
            "inference over a prompt list and write a kspace dump directory."
        ),
    )
    parser.add_argument("--model", required=True, help="checkpoint id or local path")
    parser.add_argument(
        "--layers", required=True,
        help="comma-separated decoder layer indices, e.g. 0,2,3",
    )
    parser.add_argument(
        "--benchmark", required=True,
        help="mmmu | mmbench_cn (with --benchmark-root) | custom:<prompts.jsonl>",
    )
    parser.add_argument("--benchmark-root", default=None)
    parser.add_argument("--max-samples", type=int, default=None)
    parser.add_argument("--max-new-tokens", type=int, default=0)
    parser.add_argument("--device", default="cpu")
    parser.add_argument("--out", required=True)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        layer_indices = [int(part) for part in args.layers.split(",") if part != ""]
    except ValueError:
        print(f"kspace-extract: bad --layers value {args.layers!r}", file=sys.stderr)
        return 2
    config = ExtractionConfig(
        model_id=args.model,
        layer_indices=layer_indices,
        benchmark=args.benchmark,
        benchmark_root=args.benchmark_root,
        max_samples=args.max_samples,
        max_new_tokens=args.max_new_tokens,
        device=args.device,
        output_dir=args.out,
    )
    try:
        summary = run_extraction(config)
    except ExtractionError as exc:
        print(f"kspace-extract: error: {exc}", file=sys.stderr)
        return 1
    print(
        f"captured {summary.n_samples} sample(s), width {summary.width}, "
        f"tokens per layer {summary.tokens_per_layer} -> {summary.output_dir}"
    )
    for failure in summary.failures:
        print(f"  skipped {failure.sample_id}: {failure.error}", file=sys.stderr)
    return 0


if __name__ == "__main__":
    sys.exit(main())

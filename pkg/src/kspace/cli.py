"""Command-line entry point.

Subcommands: validate, synth, preprocess, tsne, divergence, report, run.
Exit codes: 0 success, 2 usage, 3 validation, 4 computation, 5 I/O.

For ``run``, flag values override config-file values, which override the
built-in defaults; ``--config`` accepts either a bare config JSON or a
previous run's ``run-manifest.json``. ``--threads`` (or the KSPACE_THREADS
environment variable) bounds how many layers the divergence stage processes
concurrently; results are identical for any value.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

from .divergence import DEFAULT_CAP, DivergenceConfig
from .dumpstore import validate_dump_dir
from .embed import TsneConfig
from .errors import KspaceError, UsageError
from .pipeline import (
    RunConfig,
    divergence_dir,
    load_config_file,
    preprocess_dir,
    run_pipeline,
    tsne_dir,
)
from .preprocess import DEFAULT_COMPONENTS
from .report import (
    aggregate,
    export_boxplot_data,
    load_fixture_table1,
    parse_table_csv,
    render_table,
    report_to_dict,
    table_from_results,
)
from .synth import PRESETS, generate_dump, make_spec


def _parse_layers(text: str | None) -> list[int] | None:
    if text is None or text == "all":
        return None
    try:
        return [int(part) for part in text.split(",") if part != ""]
    except ValueError as exc:
        raise UsageError(f"bad --layers value {text!r}: {exc}") from exc


def _parse_gamma(text: str) -> float | str:
    if text == "auto":
        return "auto"
    try:
        value = float(text)
    except ValueError as exc:
        raise UsageError(f"--gamma must be 'auto' or a number, got {text!r}") from exc
    if value <= 0:
        raise UsageError(f"--gamma must be positive, got {value}")
    return value


def resolve_threads(threads: int | None) -> int:
    if threads is not None:
        return max(1, threads)
    env = os.environ.get("KSPACE_THREADS")
    if env:
        try:
            return max(1, int(env))
        except ValueError as exc:
            raise UsageError(f"KSPACE_THREADS must be an integer, got {env!r}") from exc
    return 1


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="kspace",
        description="Measure the geometric gap between image and text attention keys.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("validate", help="check a dump directory")
    p.add_argument("dump_dir")

    p = sub.add_parser("synth", help="generate a synthetic dump directory")
    p.add_argument("--preset", required=True, choices=PRESETS)
    p.add_argument("--n-img", type=int, default=2000)
    p.add_argument("--n-txt", type=int, default=2000)
    p.add_argument("--dim", type=int, default=None)
    p.add_argument("--shift", type=float, default=None)
    p.add_argument("--cov-img", type=float, default=1.0)
    p.add_argument("--cov-txt", type=float, default=1.0)
    p.add_argument("--clusters", type=int, default=None)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--layers", default="0", help="comma-separated layer indices")
    p.add_argument("--out", required=True)

    p = sub.add_parser("preprocess", help="standardize + PCA each layer")
    p.add_argument("dump_dir")
    p.add_argument("--out", required=True)
    p.add_argument("--pca-components", type=int, default=DEFAULT_COMPONENTS)
    p.add_argument("--layers", default=None)

    p = sub.add_parser("tsne", help="2-D embedding export per layer")
    p.add_argument("pca_dir", help="a preprocessed (conditioned) dump directory")
    p.add_argument("--out", required=True)
    p.add_argument("--perplexity", type=float, default=30.0)
    p.add_argument("--seed", type=int, default=42)
    p.add_argument("--max-tokens", type=int, default=50_000)
    p.add_argument("--iterations", type=int, default=1000)
    p.add_argument("--layers", default=None)

    p = sub.add_parser("divergence", help="per-layer divergence over a conditioned dir")
    p.add_argument("pca_dir")
    p.add_argument("--out", required=True, help="output JSON path")
    p.add_argument("--gamma", default="auto")
    p.add_argument("--n-projections", type=int, default=10)
    p.add_argument("--bins", type=int, default=50)
    p.add_argument("--permutations", type=int, default=0)
    p.add_argument("--max-per-modality", type=int, default=DEFAULT_CAP)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--metric", choices=("mmd", "js", "both"), default="both")
    p.add_argument("--layers", default=None)
    p.add_argument("--threads", type=int, default=None)

    p = sub.add_parser("report", help="aggregate divergence records")
    p.add_argument("results", nargs="*", help="divergence.json files")
    p.add_argument("--fixture", choices=("table1",), default=None)
    p.add_argument("--format", choices=("csv", "json", "md"), default="csv")
    p.add_argument("--out", default=None, help="table output path (default stdout)")
    p.add_argument("--report-out", default=None, help="aggregate JSON output path")
    p.add_argument("--boxplot-out", default=None, help="box-plot JSON output path")

    p = sub.add_parser("run", help="full pipeline: validate/preprocess/(tsne)/divergence/report")
    p.add_argument("dump_dir", nargs="?", default=None)
    p.add_argument("--out", default=None)
    p.add_argument("--config", default=None, help="config JSON or run-manifest.json")
    p.add_argument("--layers", default=None)
    p.add_argument("--pca-components", type=int, default=None)
    p.add_argument("--perplexity", type=float, default=None)
    p.add_argument("--max-tokens", type=int, default=None)
    p.add_argument("--iterations", type=int, default=None)
    p.add_argument("--gamma", default=None)
    p.add_argument("--n-projections", type=int, default=None)
    p.add_argument("--bins", type=int, default=None)
    p.add_argument("--permutations", type=int, default=None)
    p.add_argument("--max-per-modality", type=int, default=None)
    p.add_argument("--metric", choices=("mmd", "js", "both"), default=None)
    p.add_argument("--estimator", choices=("biased_sqrt", "unbiased_squared"), default=None)
    p.add_argument("--seed", type=int, default=None, help="global seed (default 42)")
    p.add_argument("--tsne-seed", type=int, default=None)
    p.add_argument("--subsample-seed", type=int, default=None)
    p.add_argument("--split-seed", type=int, default=None)
    p.add_argument("--divergence-seed", type=int, default=None)
    p.add_argument("--tsne", action="store_true", default=None,
                   help="also export t-SNE coordinates per layer")
    p.add_argument("--threads", type=int, default=None)
    return parser


def _cmd_validate(args: argparse.Namespace) -> int:
    summary = validate_dump_dir(args.dump_dir)
    print(f"model={summary.model_name} benchmark={summary.benchmark_name} "
          f"hidden_dim={summary.hidden_dim}")
    for layer in summary.layers:
        print(
            f"layer {layer.layer_index}: dim={layer.dim} text={layer.n_text} "
            f"image={layer.n_image} other={layer.n_other} ({layer.path})"
        )
    print(f"{len(summary.layers)} layer(s) valid")
    return 0


def _cmd_synth(args: argparse.Namespace) -> int:
    overrides: dict = {
        "n_img": args.n_img,
        "n_txt": args.n_txt,
        "cov_scale_img": args.cov_img,
        "cov_scale_txt": args.cov_txt,
        "seed": args.seed,
        "layers": _parse_layers(args.layers) or [0],
    }
    if args.dim is not None:
        overrides["dim"] = args.dim
    if args.shift is not None:
        overrides["mean_shift"] = args.shift
    if args.clusters is not None:
        overrides["n_clusters_img"] = args.clusters
    spec = make_spec(args.preset, **overrides)
    manifest = generate_dump(spec, args.out)
    print(f"wrote {len(manifest.layer_files)} layer(s) to {args.out}")
    return 0


def _cmd_preprocess(args: argparse.Namespace) -> int:
    manifest = preprocess_dir(
        args.dump_dir, args.out, args.pca_components, _parse_layers(args.layers)
    )
    print(f"conditioned {len(manifest.layer_files)} layer(s) to k={manifest.hidden_dim}")
    return 0


def _cmd_tsne(args: argparse.Namespace) -> int:
    config = TsneConfig(
        perplexity=args.perplexity,
        seed=args.seed,
        max_tokens=args.max_tokens,
        iterations=args.iterations,
    )
    paths = tsne_dir(args.pca_dir, args.out, config, subsample_seed=args.seed + 1,
                     layers=_parse_layers(args.layers))
    for path in paths:
        print(f"wrote {path}")
    return 0


def _cmd_divergence(args: argparse.Namespace) -> int:
    config = DivergenceConfig(
        gamma=_parse_gamma(args.gamma),
        n_projections=args.n_projections,
        histogram_bins=args.bins,
        seed=args.seed,
    )
    records = divergence_dir(
        args.pca_dir,
        args.out,
        config,
        split_seed=args.seed + 1,
        cap=args.max_per_modality,
        permutations=args.permutations,
        metric=args.metric,
        layers=_parse_layers(args.layers),
        threads=resolve_threads(args.threads),
    )
    print(f"wrote {len(records)} records to {args.out}")
    return 0


def _load_results_table(paths: list[str]):
    from .divergence import DivergenceResult

    rows = []
    for path in paths:
        try:
            records = json.loads(Path(path).read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as exc:
            raise UsageError(f"cannot read results file {path}: {exc}") from exc
        for r in records:
            rows.append(
                (
                    r.get("model", "unknown"),
                    r.get("benchmark", "unknown"),
                    DivergenceResult(
                        comparison=r["comparison"],
                        layer_index=r["layer"],
                        mmd=r["mmd"],
                        js=r["js"],
                        n_a=r["n_a"],
                        n_b=r["n_b"],
                        seed=r["seed"],
                        p_value=r.get("p_value"),
                    ),
                )
            )
    from .report import ResultTable, TableRow

    table = ResultTable(
        [
            TableRow(
                model=model,
                benchmark=benchmark,
                layer=res.layer_index,
                comparison=res.comparison,
                mmd=res.mmd,
                js=res.js,
            )
            for model, benchmark, res in rows
        ]
    )
    table.validate()
    return table


def _cmd_report(args: argparse.Namespace) -> int:
    if args.fixture == "table1":
        table = load_fixture_table1()
    elif args.results:
        table = _load_results_table(args.results)
    else:
        raise UsageError("report needs result files or --fixture table1")
    rendered = render_table(table, args.format)
    if args.out:
        Path(args.out).write_text(rendered, encoding="utf-8")
        print(f"wrote {args.out}")
    else:
        sys.stdout.write(rendered)
    rep = aggregate(table)
    if args.report_out:
        Path(args.report_out).write_text(
            json.dumps(report_to_dict(rep), indent=2, sort_keys=True) + "\n",
            encoding="utf-8",
        )
        print(f"wrote {args.report_out}")
    if args.boxplot_out:
        export_boxplot_data(rep, args.boxplot_out)
        print(f"wrote {args.boxplot_out}")
    return 0


def parse_run_config(args: argparse.Namespace) -> RunConfig:
    """Build the run configuration: flags > config file > defaults."""
    base: dict = {}
    if args.config:
        base = load_config_file(args.config)
    if args.dump_dir is not None:
        base["input_dir"] = args.dump_dir
    if args.out is not None:
        base["output_dir"] = args.out
    if "input_dir" not in base or "output_dir" not in base:
        raise UsageError("run needs a dump directory and --out (or a --config providing them)")

    if args.layers is not None:
        base["layers"] = _parse_layers(args.layers)
    if args.pca_components is not None:
        base["pca_components"] = args.pca_components
    if args.permutations is not None:
        base["permutations"] = args.permutations
    if args.max_per_modality is not None:
        base["max_per_modality"] = args.max_per_modality
    if args.metric is not None:
        base["metric"] = args.metric
    if args.seed is not None:
        base["global_seed"] = args.seed
    if args.threads is not None:
        base["threads"] = args.threads
    elif "threads" not in base:
        base["threads"] = resolve_threads(None)  # KSPACE_THREADS fallback
    if args.tsne is not None:
        base["run_tsne"] = True

    tsne_cfg = dict(base.get("tsne", {}))
    if args.perplexity is not None:
        tsne_cfg["perplexity"] = args.perplexity
    if args.max_tokens is not None:
        tsne_cfg["max_tokens"] = args.max_tokens
    if args.iterations is not None:
        tsne_cfg["iterations"] = args.iterations
    base["tsne"] = tsne_cfg

    div_cfg = dict(base.get("divergence", {}))
    if args.gamma is not None:
        div_cfg["gamma"] = _parse_gamma(args.gamma)
    if args.n_projections is not None:
        div_cfg["n_projections"] = args.n_projections
    if args.bins is not None:
        div_cfg["histogram_bins"] = args.bins
    if args.estimator is not None:
        div_cfg["estimator"] = args.estimator
    base["divergence"] = div_cfg

    overrides = dict(base.get("seeds_overridden", {}))
    for name, value in (
        ("tsne", args.tsne_seed),
        ("subsample", args.subsample_seed),
        ("split", args.split_seed),
        ("divergence", args.divergence_seed),
    ):
        if value is not None:
            overrides[name] = value
    base["seeds_overridden"] = overrides

    config = RunConfig.from_dict(base)
    config.threads = max(1, config.threads)
    config.tsne.validate()
    config.divergence.validate()
    return config


def _cmd_run(args: argparse.Namespace) -> int:
    config = parse_run_config(args)
    manifest_path = run_pipeline(config)
    print(f"run complete; manifest at {manifest_path}")
    return 0


_COMMANDS = {
    "validate": _cmd_validate,
    "synth": _cmd_synth,
    "preprocess": _cmd_preprocess,
    "tsne": _cmd_tsne,
    "divergence": _cmd_divergence,
    "report": _cmd_report,
    "run": _cmd_run,
}


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return _COMMANDS[args.command](args)
    except KspaceError as exc:
        print(f"kspace {args.command}: error: {exc}", file=sys.stderr)
        return exc.exit_code
    except OSError as exc:
        print(f"kspace {args.command}: I/O error: {exc}", file=sys.stderr)
        return 5


if __name__ == "__main__":
    sys.exit(main())

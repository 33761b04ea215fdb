"""End-to-end orchestration: validate -> preprocess -> t-SNE/divergence -> report.

Artifacts land flat under the output directory:

* ``layer<idx>.kvd``    conditioned tokens (standardize + PCA, labels 0/1 only)
* ``layer<idx>.pca``    fitted conditioning sidecar (PCA1 format)
* ``manifest.json``     manifest for the conditioned tokens (dim = k)
* ``layer<idx>.tsne.csv``  2-D embedding export (only with the t-SNE stage on)
* ``divergence.json``   per-layer divergence records
* ``report.json``       aggregate statistics + box-plot data
* ``run-manifest.json`` full config echo, input digests and artifact list

Seeding: one global seed (default 42) drives every stage through fixed,
documented offsets; each offset may be overridden per stage.

    t-SNE seed          = global_seed          (the published embedding seed)
    t-SNE subsampling   = global_seed + 1
    per-modality cap    = global_seed + 2
    divergence ops      = global_seed + 3

Every layer of a stage uses the same stage seed, mirroring the fixed
published seed. Determinism: the preprocess and t-SNE stages run
sequentially; the divergence stage may process layers on ``threads``
workers, and each layer's computation is identical regardless of worker
count, so JSON/CSV artifacts are byte-identical across thread counts. The
run manifest deliberately carries no timestamps for the same reason.

A finished run's ``run-manifest.json`` doubles as a config file: its
``config`` object can be fed back via ``--config`` to replay the run.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .divergence import (
    DEFAULT_CAP,
    DivergenceConfig,
    DivergenceResult,
    build_split,
    layer_divergence,
)
from .dumpstore import (
    LABEL_OTHER,
    Manifest,
    make_layer_dump,
    read_layer_dump,
    read_manifest,
    validate_dump_dir,
    write_layer_dump,
    write_manifest,
)
from .embed import TsneConfig, subsample_tokens, tsne_embed, export_embedding
from .errors import KspaceError, UsageError, ValidationError
from .preprocess import DEFAULT_COMPONENTS, condition_layer, save_pca_sidecar
from .report import aggregate, report_to_dict, table_from_results

SEED_OFFSET_TSNE = 0
SEED_OFFSET_SUBSAMPLE = 1
SEED_OFFSET_SPLIT = 2
SEED_OFFSET_DIVERGENCE = 3


@dataclass
class RunConfig:
    input_dir: str
    output_dir: str
    layers: list[int] | None = None  # None = all layers in the manifest
    pca_components: int = DEFAULT_COMPONENTS
    tsne: TsneConfig = field(default_factory=TsneConfig)
    divergence: DivergenceConfig = field(default_factory=DivergenceConfig)
    permutations: int = 999
    max_per_modality: int = DEFAULT_CAP
    metric: str = "both"  # mmd | js | both
    global_seed: int = 42
    threads: int = 1
    run_tsne: bool = False
    seeds_overridden: dict[str, int] = field(default_factory=dict)

    def __post_init__(self) -> None:
        self.apply_global_seed()

    def apply_global_seed(self) -> None:
        """Derive stage seeds from the global seed, honoring overrides."""
        self.tsne.seed = self.seeds_overridden.get(
            "tsne", self.global_seed + SEED_OFFSET_TSNE
        )
        self.divergence.seed = self.seeds_overridden.get(
            "divergence", self.global_seed + SEED_OFFSET_DIVERGENCE
        )

    @property
    def subsample_seed(self) -> int:
        return self.seeds_overridden.get(
            "subsample", self.global_seed + SEED_OFFSET_SUBSAMPLE
        )

    @property
    def split_seed(self) -> int:
        return self.seeds_overridden.get("split", self.global_seed + SEED_OFFSET_SPLIT)

    def to_dict(self) -> dict:
        return {
            "input_dir": str(self.input_dir),
            "output_dir": str(self.output_dir),
            "layers": self.layers,
            "pca_components": self.pca_components,
            "tsne": dataclasses.asdict(self.tsne),
            "divergence": dataclasses.asdict(self.divergence),
            "permutations": self.permutations,
            "max_per_modality": self.max_per_modality,
            "metric": self.metric,
            "global_seed": self.global_seed,
            "threads": self.threads,
            "run_tsne": self.run_tsne,
            "seeds_overridden": dict(self.seeds_overridden),
        }

    @classmethod
    def from_dict(cls, obj: dict) -> "RunConfig":
        cfg = cls(
            input_dir=obj["input_dir"],
            output_dir=obj["output_dir"],
            layers=obj.get("layers"),
            pca_components=int(obj.get("pca_components", DEFAULT_COMPONENTS)),
            tsne=TsneConfig(**obj.get("tsne", {})),
            divergence=DivergenceConfig(**obj.get("divergence", {})),
            permutations=int(obj.get("permutations", 999)),
            max_per_modality=int(obj.get("max_per_modality", DEFAULT_CAP)),
            metric=obj.get("metric", "both"),
            global_seed=int(obj.get("global_seed", 42)),
            threads=int(obj.get("threads", 1)),
            run_tsne=bool(obj.get("run_tsne", False)),
            seeds_overridden={
                k: int(v) for k, v in obj.get("seeds_overridden", {}).items()
            },
        )
        return cfg


def load_config_file(path: str | Path) -> dict:
    """Read the ``config`` object of a run manifest (or bare config JSON)."""
    try:
        obj = json.loads(Path(path).read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise UsageError(f"cannot read config file {path}: {exc}") from exc
    if "config" in obj and isinstance(obj["config"], dict):
        return obj["config"]
    return obj


def _sha256(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def resolve_layers(manifest: Manifest, requested: list[int] | None) -> list[int]:
    available = sorted(manifest.layer_files)
    if requested is None:
        return available
    missing = sorted(set(requested) - set(available))
    if missing:
        raise UsageError(
            f"layer(s) {missing} not in the manifest; valid layers: {available}"
        )
    return sorted(requested)


def preprocess_dir(
    input_dir: str | Path,
    output_dir: str | Path,
    pca_components: int = DEFAULT_COMPONENTS,
    layers: list[int] | None = None,
) -> Manifest:
    """Condition each requested layer and write a dump dir of PCA tokens.

    Tokens with label 2 (other/special) are excluded before fitting; the
    emitted dumps contain only image/text tokens. The component count is
    lowered to the largest value every requested layer supports so the
    output directory keeps a single hidden_dim.
    """
    input_dir = Path(input_dir)
    output_dir = Path(output_dir)
    output_dir.mkdir(parents=True, exist_ok=True)
    manifest = read_manifest(input_dir)
    layer_list = resolve_layers(manifest, layers)
    if not layer_list:
        raise ValidationError(f"{input_dir}: manifest lists no layers")

    dumps = {}
    k_eff = pca_components
    for layer_index in layer_list:
        dump = read_layer_dump(input_dir / manifest.layer_files[layer_index])
        keep = dump.labels != LABEL_OTHER
        if int(keep.sum()) < 2:
            raise ValidationError(
                f"layer {layer_index}: fewer than 2 image/text tokens"
            )
        dumps[layer_index] = (dump, keep)
        k_eff = min(k_eff, int(keep.sum()) - 1, dump.dim)

    layer_files: dict[int, str] = {}
    for layer_index in layer_list:
        dump, keep = dumps[layer_index]
        X = dump.data[keep].astype(np.float64)
        Z, model, stats = condition_layer(X, k_eff)
        save_pca_sidecar(model, stats, output_dir / f"layer{layer_index}.pca")
        rel = f"layer{layer_index}.kvd"
        out_dump = make_layer_dump(
            layer_index,
            Z.astype(np.float32),
            dump.labels[keep],
            dump.sample_ids[keep],
        )
        write_layer_dump(out_dump, output_dir / rel)
        layer_files[layer_index] = rel

    out_manifest = Manifest(
        model_name=manifest.model_name,
        benchmark_name=manifest.benchmark_name,
        hidden_dim=k_eff,
        layer_files=layer_files,
    )
    write_manifest(out_manifest, output_dir)
    return out_manifest


def tsne_dir(
    pca_dir: str | Path,
    output_dir: str | Path,
    config: TsneConfig,
    subsample_seed: int,
    layers: list[int] | None = None,
) -> list[Path]:
    """Embed each conditioned layer and export layer<idx>.tsne.csv."""
    pca_dir = Path(pca_dir)
    output_dir = Path(output_dir)
    output_dir.mkdir(parents=True, exist_ok=True)
    manifest = read_manifest(pca_dir)
    paths = []
    for layer_index in resolve_layers(manifest, layers):
        dump = read_layer_dump(pca_dir / manifest.layer_files[layer_index])
        idx = subsample_tokens(dump.data, dump.labels, config.max_tokens, subsample_seed)
        result = tsne_embed(
            dump.data[idx].astype(np.float64),
            dump.labels[idx],
            config,
            source_indices=idx,
        )
        out = output_dir / f"layer{layer_index}.tsne.csv"
        export_embedding(result, out)
        paths.append(out)
    return paths


def _divergence_record(
    res: DivergenceResult, model: str, benchmark: str, gamma_resolved: float,
    config: DivergenceConfig,
) -> dict:
    return {
        "comparison": res.comparison,
        "layer": res.layer_index,
        "mmd": res.mmd,
        "js": res.js,
        "n_a": res.n_a,
        "n_b": res.n_b,
        "p_value": res.p_value,
        "seed": res.seed,
        "gamma_resolved": gamma_resolved,
        "model": model,
        "benchmark": benchmark,
        "config": dataclasses.asdict(config),
    }


def divergence_dir(
    pca_dir: str | Path,
    output_path: str | Path,
    config: DivergenceConfig,
    split_seed: int,
    cap: int = DEFAULT_CAP,
    permutations: int = 0,
    metric: str = "both",
    layers: list[int] | None = None,
    threads: int = 1,
) -> list[dict]:
    """Compute per-layer divergences over a conditioned dir; write JSON records."""
    pca_dir = Path(pca_dir)
    manifest = read_manifest(pca_dir)
    layer_list = resolve_layers(manifest, layers)
    if metric not in ("mmd", "js", "both"):
        raise UsageError(f"unknown metric {metric!r}; choose mmd, js or both")
    perm_metric = "js" if metric == "js" else "mmd"

    def one_layer(layer_index: int) -> list[DivergenceResult]:
        dump = read_layer_dump(pca_dir / manifest.layer_files[layer_index])
        split = build_split(
            dump.data.astype(np.float64),
            dump.labels,
            cap=cap,
            seed=split_seed,
            layer_index=layer_index,
        )
        return layer_divergence(
            split,
            config,
            n_perm=permutations if permutations > 0 else None,
            perm_metric=perm_metric,
        )

    if threads > 1 and len(layer_list) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            by_layer = dict(zip(layer_list, pool.map(one_layer, layer_list)))
    else:
        by_layer = {idx: one_layer(idx) for idx in layer_list}

    gamma_resolved = config.resolved_gamma(manifest.hidden_dim)
    records = [
        _divergence_record(
            res, manifest.model_name, manifest.benchmark_name, gamma_resolved, config
        )
        for layer_index in layer_list
        for res in by_layer[layer_index]
    ]
    Path(output_path).write_text(
        json.dumps(records, indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )
    return records


def run_pipeline(config: RunConfig) -> Path:
    """Execute the full pipeline; returns the run-manifest path.

    Raises a KspaceError subclass on the first failing stage after writing a
    run manifest that flags the partial outputs.
    """
    out_dir = Path(config.output_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    run_manifest: dict = {
        "kspace_version": __version__,
        "config": config.to_dict(),
        "derived_seeds": {
            "tsne": config.tsne.seed,
            "subsample": config.subsample_seed,
            "split": config.split_seed,
            "divergence": config.divergence.seed,
        },
        "inputs": {},
        "artifacts": {},
        "status": "incomplete",
        "failed_stage": None,
    }
    manifest_path = out_dir / "run-manifest.json"

    def flush() -> None:
        manifest_path.write_text(
            json.dumps(run_manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8"
        )

    stage = "validate"
    try:
        summary = validate_dump_dir(config.input_dir)
        input_dir = Path(config.input_dir)
        in_manifest = read_manifest(input_dir)
        run_manifest["inputs"] = {
            "manifest": _sha256(input_dir / "manifest.json"),
            "layer_files": {
                str(idx): _sha256(input_dir / rel)
                for idx, rel in sorted(in_manifest.layer_files.items())
            },
        }
        layer_list = resolve_layers(in_manifest, config.layers)

        stage = "preprocess"
        out_manifest = preprocess_dir(
            config.input_dir, out_dir, config.pca_components, layer_list
        )
        run_manifest["artifacts"]["pca_sidecars"] = [
            f"layer{idx}.pca" for idx in sorted(out_manifest.layer_files)
        ]
        run_manifest["artifacts"]["pca_dumps"] = sorted(
            out_manifest.layer_files.values()
        )

        if config.run_tsne:
            stage = "tsne"
            paths = tsne_dir(
                out_dir, out_dir, config.tsne, config.subsample_seed, layer_list
            )
            run_manifest["artifacts"]["tsne"] = [p.name for p in paths]

        stage = "divergence"
        records = divergence_dir(
            out_dir,
            out_dir / "divergence.json",
            config.divergence,
            split_seed=config.split_seed,
            cap=config.max_per_modality,
            permutations=config.permutations,
            metric=config.metric,
            layers=layer_list,
            threads=config.threads,
        )
        run_manifest["artifacts"]["divergence"] = "divergence.json"

        stage = "report"
        results = [
            DivergenceResult(
                comparison=r["comparison"],
                layer_index=r["layer"],
                mmd=r["mmd"],
                js=r["js"],
                n_a=r["n_a"],
                n_b=r["n_b"],
                seed=r["seed"],
                p_value=r["p_value"],
            )
            for r in records
        ]
        table = table_from_results(
            summary.model_name, summary.benchmark_name, results
        )
        rep = aggregate(table)
        (out_dir / "report.json").write_text(
            json.dumps(report_to_dict(rep), indent=2, sort_keys=True) + "\n",
            encoding="utf-8",
        )
        run_manifest["artifacts"]["report"] = "report.json"
    except KspaceError as exc:
        run_manifest["status"] = "failed"
        run_manifest["failed_stage"] = stage
        run_manifest["error"] = str(exc)
        flush()
        raise
    except OSError as exc:
        run_manifest["status"] = "failed"
        run_manifest["failed_stage"] = stage
        run_manifest["error"] = str(exc)
        flush()
        raise

    run_manifest["status"] = "ok"
    flush()
    return manifest_path

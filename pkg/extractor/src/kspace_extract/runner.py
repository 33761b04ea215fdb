"""Drive a checkpoint over benchmark samples and write key-vector dumps.

Capture happens on the prefill forward pass of the full prompt (image +
text); keys of incrementally generated tokens are never stored. Generation
settings are fixed to greedy decoding at temperature 1.0 so attention
trajectories are reproducible; by default no new tokens are generated at
all since prefill alone determines the prompt-token keys.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from .benchmarks import Sample, load_samples
from .dumpwriter import write_layer_file, write_manifest
from .errors import ExtractionError, LabelingError
from .hooks import attach_key_hooks, find_key_projections
from .labeling import label_tokens

logger = logging.getLogger(__name__)


@dataclass
class ExtractionConfig:
    model_id: str
    layer_indices: list[int]
    benchmark: str                      # mmmu | mmbench_cn | custom:<path>
    output_dir: str
    benchmark_root: str | None = None
    max_samples: int | None = None
    max_new_tokens: int = 0             # 0 = prefill only
    temperature: float = 1.0            # fixed; recorded for provenance
    greedy: bool = True                 # fixed; recorded for provenance
    device: str = "cpu"

    def validate(self) -> None:
        if not self.layer_indices:
            raise ExtractionError("layer_indices must be non-empty")
        if self.temperature != 1.0 or not self.greedy:
            raise ExtractionError(
                "generation settings are fixed: temperature 1.0, greedy decoding"
            )
        if self.max_new_tokens < 0:
            raise ExtractionError("max_new_tokens must be >= 0")


@dataclass
class SampleFailure:
    sample_id: str
    error: str


@dataclass
class ExtractionSummary:
    output_dir: Path
    width: int
    tokens_per_layer: dict[int, int]
    image_tokens_per_sample: dict[str, int]
    n_samples: int
    failures: list[SampleFailure] = field(default_factory=list)


def load_model_and_processor(model_id: str, device: str = "cpu"):
    """Load any checkpoint exposing a decoder key projection, plus its processor."""
    from transformers import AutoModelForImageTextToText, AutoModelForCausalLM, AutoProcessor

    try:
        model = AutoModelForImageTextToText.from_pretrained(model_id)
    except (ValueError, OSError):
        model = AutoModelForCausalLM.from_pretrained(model_id)
    model.to(device)
    model.eval()
    processor = AutoProcessor.from_pretrained(model_id)
    return model, processor


def _image_token_id(model, processor) -> int | None:
    token_id = getattr(model.config, "image_token_index", None)
    if token_id is None:
        token_id = getattr(model.config, "image_token_id", None)
    if token_id is None:
        tokenizer = getattr(processor, "tokenizer", processor)
        image_token = getattr(processor, "image_token", None)
        if image_token is not None:
            converted = tokenizer.convert_tokens_to_ids(str(image_token))
            if converted is not None and converted >= 0:
                token_id = converted
    return token_id


def _special_ids(processor) -> set[int]:
    tokenizer = getattr(processor, "tokenizer", processor)
    return {int(i) for i in getattr(tokenizer, "all_special_ids", [])}


def encode_sample(processor, sample: Sample, device: str):
    image = sample.load_image()
    if image is not None:
        return processor(text=sample.text, images=image, return_tensors="pt").to(device)
    tokenizer = getattr(processor, "tokenizer", processor)
    return tokenizer(sample.text, return_tensors="pt").to(device)


def run_extraction(config: ExtractionConfig) -> ExtractionSummary:
    """Capture key vectors for every benchmark sample and write a dump dir."""
    config.validate()
    model, processor = load_model_and_processor(config.model_id, config.device)
    samples = load_samples(config.benchmark, config.benchmark_root, config.max_samples)
    image_token = _image_token_id(model, processor)
    specials = _special_ids(processor)

    capture = attach_key_hooks(model, config.layer_indices)
    width = {idx: module.out_features for idx, module in capture.projections.items()}
    if len(set(width.values())) != 1:
        capture.detach()
        raise ExtractionError(f"key-projection widths differ across layers: {width}")
    hidden_dim = next(iter(width.values()))

    per_layer_data: dict[int, list[np.ndarray]] = {i: [] for i in config.layer_indices}
    per_layer_labels: dict[int, list[np.ndarray]] = {i: [] for i in config.layer_indices}
    per_layer_ids: dict[int, list[np.ndarray]] = {i: [] for i in config.layer_indices}
    image_counts: dict[str, int] = {}
    failures: list[SampleFailure] = []
    n_ok = 0

    try:
        for ordinal, sample in enumerate(samples):
            try:
                inputs = encode_sample(processor, sample, config.device)
                input_ids = inputs["input_ids"][0].cpu().numpy()
                labels = label_tokens(input_ids, image_token, specials)
                capture.begin_sample(expected_len=input_ids.shape[0])
                with torch.no_grad():
                    if config.max_new_tokens > 0:
                        model.generate(
                            **inputs,
                            max_new_tokens=config.max_new_tokens,
                            do_sample=False,
                            temperature=config.temperature,
                        )
                    else:
                        model(**inputs)
                missing = [i for i in config.layer_indices if i not in capture.captured]
                if missing:
                    raise LabelingError(
                        f"layers {missing} captured nothing for the prompt pass"
                    )
                for layer_index in config.layer_indices:
                    keys = capture.captured[layer_index].numpy()
                    if keys.shape[0] != labels.shape[0]:
                        raise LabelingError(
                            f"layer {layer_index}: captured {keys.shape[0]} positions "
                            f"but the encoding has {labels.shape[0]}"
                        )
                    per_layer_data[layer_index].append(keys)
                    per_layer_labels[layer_index].append(labels)
                    per_layer_ids[layer_index].append(
                        np.full(labels.shape[0], ordinal, dtype="<u4")
                    )
                image_counts[sample.sample_id] = int((labels == 1).sum())
                n_ok += 1
            except (ExtractionError, RuntimeError, OSError) as exc:
                # per-sample failure (bad asset, OOM, shape mismatch): report
                # it and keep going
                logger.warning("sample %s skipped: %s", sample.sample_id, exc)
                failures.append(SampleFailure(sample.sample_id, str(exc)))
    finally:
        capture.detach()

    out_dir = Path(config.output_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    layer_files: dict[int, str] = {}
    tokens_per_layer: dict[int, int] = {}
    for layer_index in config.layer_indices:
        blocks = per_layer_data[layer_index]
        data = (
            np.concatenate(blocks, axis=0)
            if blocks
            else np.zeros((0, hidden_dim), dtype=np.float32)
        )
        labels = (
            np.concatenate(per_layer_labels[layer_index])
            if blocks
            else np.zeros(0, dtype=np.uint8)
        )
        ids = (
            np.concatenate(per_layer_ids[layer_index])
            if blocks
            else np.zeros(0, dtype="<u4")
        )
        rel = f"layer{layer_index}.kvd"
        write_layer_file(out_dir / rel, layer_index, data, labels, ids)
        layer_files[layer_index] = rel
        tokens_per_layer[layer_index] = int(data.shape[0])

    write_manifest(
        out_dir,
        model_name=config.model_id,
        benchmark_name=config.benchmark,
        hidden_dim=hidden_dim,
        layer_files=layer_files,
    )
    return ExtractionSummary(
        output_dir=out_dir,
        width=hidden_dim,
        tokens_per_layer=tokens_per_layer,
        image_tokens_per_sample=image_counts,
        n_samples=n_ok,
        failures=failures,
    )


def decoder_layer_indices(model) -> list[int]:
    """All hookable decoder layer indices of a loaded model."""
    return sorted(find_key_projections(model))

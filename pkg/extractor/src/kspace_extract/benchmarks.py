"""Benchmark sample loaders.

The adapter consumes locally prepared prompt lists; it does not download or
score benchmarks. A prompt list is a JSONL file, one record per sample:

    {"id": "q1", "text": "<image> what is shown?", "image": "images/q1.png"}

``image`` is optional (text-only samples omit it) and resolves relative to
the JSONL file. Named benchmarks look for ``<name>.jsonl`` under
``benchmark_root``; ``custom:<path>`` points at an explicit file.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

from PIL import Image

from .errors import BenchmarkError

NAMED_BENCHMARKS = ("mmmu", "mmbench_cn")


@dataclass
class Sample:
    sample_id: str
    text: str
    image_path: Path | None

    def load_image(self) -> Image.Image | None:
        if self.image_path is None:
            return None
        try:
            return Image.open(self.image_path).convert("RGB")
        except OSError as exc:
            raise BenchmarkError(f"cannot load image {self.image_path}: {exc}") from exc


def resolve_prompt_file(benchmark: str, benchmark_root: str | Path | None) -> Path:
    if benchmark.startswith("custom:"):
        return Path(benchmark.split(":", 1)[1])
    if benchmark in NAMED_BENCHMARKS:
        if benchmark_root is None:
            raise BenchmarkError(
                f"benchmark {benchmark!r} needs --benchmark-root pointing at a "
                f"directory containing {benchmark}.jsonl"
            )
        return Path(benchmark_root) / f"{benchmark}.jsonl"
    raise BenchmarkError(
        f"unknown benchmark {benchmark!r}; use one of {NAMED_BENCHMARKS} or custom:<path>"
    )


def load_samples(
    benchmark: str,
    benchmark_root: str | Path | None = None,
    max_samples: int | None = None,
) -> list[Sample]:
    path = resolve_prompt_file(benchmark, benchmark_root)
    if not path.is_file():
        raise BenchmarkError(f"prompt list {path} does not exist")
    samples: list[Sample] = []
    with open(path, encoding="utf-8") as fh:
        for line_no, line in enumerate(fh):
            if max_samples is not None and len(samples) >= max_samples:
                break
            line = line.strip()
            if not line:
                continue
            try:
                rec = json.loads(line)
                text = rec["text"]
            except (json.JSONDecodeError, KeyError) as exc:
                raise BenchmarkError(f"{path}:{line_no + 1}: bad record: {exc}") from exc
            image = rec.get("image")
            samples.append(
                Sample(
                    sample_id=str(rec.get("id", line_no)),
                    text=str(text),
                    image_path=(path.parent / image) if image else None,
                )
            )
    return samples

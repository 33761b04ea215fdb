"""Token subsampling and 2-D t-SNE embedding for visualization export.

The embedding optimizer is scikit-learn's Barnes-Hut t-SNE, driven with an
explicit configuration (perplexity 30, seed 42, 1000 iterations, 12x early
exaggeration for the first 250 iterations, learning rate 200, theta 0.5 by
default) and pinned to a single OpenMP thread so coordinates and the final
KL value are bit-reproducible regardless of ambient thread settings.
Initialization is seeded Gaussian with standard deviation 1e-4.

Subsampling ahead of the embedding is uniform over the pooled tokens
(unstratified) without replacement, drawn from ``PCG64(seed)``; retained
indices are returned in ascending order.

Exports are CSV with header ``x,y,label,source_index`` and 9 significant
digits per coordinate, which round-trips the float32 embedding exactly.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from sklearn.manifold import TSNE
from threadpoolctl import threadpool_limits

from .errors import ParameterError, StorageError, ValidationError
from .rng import make_rng

# the optimizer runs a fixed 250-iteration early-exaggeration phase first
_MIN_ITERATIONS = 250


@dataclass
class TsneConfig:
    perplexity: float = 30.0
    seed: int = 42
    max_tokens: int = 50_000
    iterations: int = 1000
    early_exaggeration_factor: float = 12.0
    learning_rate: float = 200.0
    barnes_hut_theta: float = 0.5

    def validate(self) -> None:
        if self.perplexity <= 0:
            raise ParameterError("perplexity must be positive")
        if self.max_tokens < 1:
            raise ParameterError("max_tokens must be >= 1")
        if self.iterations < _MIN_ITERATIONS:
            raise ParameterError(f"iterations must be >= {_MIN_ITERATIONS}")
        if self.early_exaggeration_factor <= 0:
            raise ParameterError("early_exaggeration_factor must be positive")
        if self.learning_rate <= 0:
            raise ParameterError("learning_rate must be positive")
        if not 0.0 <= self.barnes_hut_theta <= 1.0:
            raise ParameterError("barnes_hut_theta must be in [0, 1]")


@dataclass
class EmbeddingResult:
    coords: np.ndarray          # (n, 2) float32
    labels: np.ndarray          # (n,) modality codes
    source_indices: np.ndarray  # (n,) indices into the pre-subsample token set
    final_kl: float


def subsample_tokens(
    Z: np.ndarray, labels: np.ndarray, max_tokens: int, seed: int
) -> np.ndarray:
    """Indices of at most ``max_tokens`` tokens, uniform without replacement.

    Under the cap this is the identity selection. Sampling ignores labels
    (proportions are preserved in expectation) and is deterministic per
    (n, max_tokens, seed).
    """
    Z = np.asarray(Z)
    labels = np.asarray(labels)
    if labels.shape[0] != Z.shape[0]:
        raise ValidationError(
            f"labels length {labels.shape[0]} does not match {Z.shape[0]} rows"
        )
    if max_tokens < 1:
        raise ParameterError("max_tokens must be >= 1")
    n = Z.shape[0]
    if n <= max_tokens:
        return np.arange(n)
    rng = make_rng(seed)
    return np.sort(rng.choice(n, size=max_tokens, replace=False))


def tsne_embed(
    Z_sub: np.ndarray,
    labels: np.ndarray,
    config: TsneConfig,
    source_indices: np.ndarray | None = None,
) -> EmbeddingResult:
    """Embed tokens into two dimensions with seeded Barnes-Hut t-SNE."""
    config.validate()
    Z_sub = np.ascontiguousarray(Z_sub, dtype=np.float64)
    labels = np.asarray(labels)
    if Z_sub.ndim != 2:
        raise ValidationError(f"expected 2-D input, got shape {Z_sub.shape}")
    if not np.isfinite(Z_sub).all():
        raise ValidationError("t-SNE input contains NaN or Inf")
    n = Z_sub.shape[0]
    if labels.shape[0] != n:
        raise ValidationError(f"labels length {labels.shape[0]} != {n} rows")
    if n < 3 * config.perplexity + 2:
        raise ParameterError(
            f"perplexity {config.perplexity} too large for {n} points; "
            "need n >= 3*perplexity + 2"
        )
    if source_indices is None:
        source_indices = np.arange(n)
    source_indices = np.asarray(source_indices)
    if source_indices.shape[0] != n:
        raise ValidationError("source_indices length mismatch")

    model = TSNE(
        n_components=2,
        perplexity=config.perplexity,
        early_exaggeration=config.early_exaggeration_factor,
        learning_rate=config.learning_rate,
        max_iter=config.iterations,
        init="random",
        random_state=config.seed,
        method="barnes_hut",
        angle=config.barnes_hut_theta,
        n_jobs=1,
    )
    with threadpool_limits(limits=1):
        coords = model.fit_transform(Z_sub)
    final_kl = max(0.0, float(model.kl_divergence_))
    return EmbeddingResult(
        coords=coords,
        labels=labels.copy(),
        source_indices=source_indices.copy(),
        final_kl=final_kl,
    )


def export_embedding(result: EmbeddingResult, path: str | Path) -> None:
    """Write the embedding as CSV: x,y,label,source_index (9 significant digits)."""
    try:
        with open(path, "w", encoding="utf-8", newline="") as fh:
            fh.write("x,y,label,source_index\n")
            for (x, y), label, src in zip(
                result.coords, result.labels, result.source_indices
            ):
                fh.write(f"{x:.9g},{y:.9g},{int(label)},{int(src)}\n")
    except OSError as exc:
        raise StorageError(f"failed to write {path}: {exc}") from exc


def load_embedding_csv(path: str | Path) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Parse an exported embedding back into (coords, labels, source_indices)."""
    coords: list[tuple[float, float]] = []
    labels: list[int] = []
    sources: list[int] = []
    try:
        with open(path, encoding="utf-8", newline="") as fh:
            reader = csv.reader(fh)
            header = next(reader)
            if header != ["x", "y", "label", "source_index"]:
                raise ValidationError(f"{path}: unexpected header {header}")
            for row in reader:
                coords.append((float(row[0]), float(row[1])))
                labels.append(int(row[2]))
                sources.append(int(row[3]))
    except OSError as exc:
        raise StorageError(f"failed to read {path}: {exc}") from exc
    return (
        np.asarray(coords, dtype=np.float64).reshape(-1, 2),
        np.asarray(labels),
        np.asarray(sources),
    )

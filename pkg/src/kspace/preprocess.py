"""Per-layer feature conditioning: standardization followed by PCA.

Each decoder layer is conditioned independently: every feature dimension is
scaled to zero mean and unit variance over the layer's pooled tokens (image
and text together), then an orthonormal principal-component basis reduces the
features to ``k`` dimensions (default 50).

Conventions, fixed for determinism:

* standard deviations use the population divisor N;
* zero-variance columns keep their index, divide by a fallback of 1.0 and are
  flagged instead of dropped;
* principal components come from an eigendecomposition of the covariance of
  the centered input, equivalent to SVD of the data matrix;
* sign convention: within each component the coefficient of largest absolute
  value is made positive (first occurrence wins on ties);
* ``explained_variance`` uses the sample divisor N-1.

Fitted models serialize to a binary sidecar:

    magic "PCA1" | u32 dim | u32 k | f64 center[dim] | f64 means[dim]
    | f64 stds[dim] | f64 explained_variance[k] | f64 components[k*dim]
    (row-major) | u8 degenerate bitmap (dim bits, LSB-first per byte)

all little-endian.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import (
    FormatError,
    InsufficientDataError,
    ParameterError,
    ShapeError,
    StorageError,
    TruncationError,
    ValidationError,
)

PCA_MAGIC = b"PCA1"
DEFAULT_COMPONENTS = 50


@dataclass
class StandardizeStats:
    """Per-dimension first and second moments of the fitted layer."""

    means: np.ndarray       # (dim,) float64
    stds: np.ndarray        # (dim,) float64, 1.0 where degenerate
    degenerate: np.ndarray  # (dim,) bool, True where the column had zero variance

    @property
    def dim(self) -> int:
        return int(self.means.shape[0])


def standardize(X: np.ndarray) -> tuple[np.ndarray, StandardizeStats]:
    """Scale each column to zero mean, unit population variance.

    Zero-variance columns pass through as all-zeros with a fallback std of
    1.0 and a degenerate flag.
    """
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2:
        raise ValidationError(f"expected a 2-D matrix, got shape {X.shape}")
    if X.shape[0] < 2:
        raise InsufficientDataError(
            f"standardize needs at least 2 rows, got {X.shape[0]}"
        )
    if not np.isfinite(X).all():
        raise ValidationError("standardize input contains NaN or Inf")
    means = X.mean(axis=0)
    stds = X.std(axis=0)  # population convention, divisor N
    degenerate = stds == 0.0
    safe = np.where(degenerate, 1.0, stds)
    Xs = (X - means) / safe
    return Xs, StandardizeStats(means=means, stds=safe, degenerate=degenerate)


@dataclass
class PcaModel:
    """Orthonormal component basis fitted to one layer's standardized tokens."""

    components: np.ndarray          # (k, dim) float64, rows orthonormal
    explained_variance: np.ndarray  # (k,) float64, non-increasing, >= 0
    center: np.ndarray              # (dim,) float64
    k: int

    @property
    def dim(self) -> int:
        return int(self.components.shape[1])


def pca_fit(Xs: np.ndarray, k: int = DEFAULT_COMPONENTS) -> PcaModel:
    """Fit a k-component PCA on the (already standardized) matrix.

    ``k`` is silently capped at min(T-1, dim) so small inputs still work;
    the effective value is recorded on the model. Components spanning the
    null space of rank-deficient data are kept with explained variance 0,
    so the returned basis always has exactly ``model.k`` orthonormal rows.
    """
    Xs = np.asarray(Xs, dtype=np.float64)
    if Xs.ndim != 2:
        raise ValidationError(f"expected a 2-D matrix, got shape {Xs.shape}")
    if k < 1:
        raise ParameterError(f"k must be >= 1, got {k}")
    T, dim = Xs.shape
    if T < 2:
        raise InsufficientDataError(f"pca_fit needs at least 2 rows, got {T}")
    if not np.isfinite(Xs).all():
        raise ValidationError("pca_fit input contains NaN or Inf")

    k_eff = min(k, T - 1, dim)
    center = Xs.mean(axis=0)
    Xc = Xs - center

    if dim <= T:
        cov = (Xc.T @ Xc) / (T - 1)
        eigvals, eigvecs = np.linalg.eigh(cov)
        order = np.argsort(eigvals)[::-1]
        variance = eigvals[order][:k_eff]
        components = eigvecs[:, order][:, :k_eff].T
    else:
        # wide data: eigendecompose the T x T Gram matrix instead
        gram = Xc @ Xc.T
        eigvals, eigvecs = np.linalg.eigh(gram)
        order = np.argsort(eigvals)[::-1][:k_eff]
        lam = eigvals[order]
        variance = lam / (T - 1)
        components = np.zeros((k_eff, dim))
        nonzero = lam > 1e-12 * max(lam.max(), 1.0)
        components[nonzero] = (Xc.T @ eigvecs[:, order][:, nonzero]).T
        components[nonzero] /= np.sqrt(lam[nonzero])[:, None]
        if not nonzero.all():
            # complete the basis deterministically for zero-variance directions
            components = _complete_basis(components, nonzero)

    variance = np.maximum(variance, 0.0)
    components = _fix_signs(components)
    return PcaModel(
        components=components,
        explained_variance=variance,
        center=center,
        k=k_eff,
    )


def _fix_signs(components: np.ndarray) -> np.ndarray:
    """Make the largest-magnitude coefficient of each component positive."""
    idx = np.argmax(np.abs(components), axis=1)
    signs = np.sign(components[np.arange(components.shape[0]), idx])
    signs[signs == 0] = 1.0
    return components * signs[:, None]


def _complete_basis(components: np.ndarray, keep: np.ndarray) -> np.ndarray:
    """Replace zero rows with orthonormal directions via Gram-Schmidt over e_j."""
    out = components.copy()
    have = [out[i] for i in range(out.shape[0]) if keep[i]]
    dim = out.shape[1]
    need = [i for i in range(out.shape[0]) if not keep[i]]
    j = 0
    for i in need:
        while j < dim:
            cand = np.zeros(dim)
            cand[j] = 1.0
            j += 1
            for v in have:
                cand -= (cand @ v) * v
            norm = np.linalg.norm(cand)
            if norm > 1e-9:
                cand /= norm
                out[i] = cand
                have.append(cand)
                break
        else:
            raise ValidationError("could not complete an orthonormal basis")
    return out


def pca_transform(model: PcaModel, Xs: np.ndarray) -> np.ndarray:
    """Project rows onto the component basis: (Xs - center) @ components.T."""
    Xs = np.asarray(Xs, dtype=np.float64)
    if Xs.ndim != 2 or Xs.shape[1] != model.dim:
        raise ShapeError(
            f"expected (*, {model.dim}) input, got shape {Xs.shape}"
        )
    return (Xs - model.center) @ model.components.T


def condition_layer(
    X: np.ndarray, k: int = DEFAULT_COMPONENTS
) -> tuple[np.ndarray, PcaModel, StandardizeStats]:
    """standardize + pca_fit + pca_transform in one step (pipeline helper)."""
    Xs, stats = standardize(X)
    model = pca_fit(Xs, k)
    return pca_transform(model, Xs), model, stats


def save_pca_sidecar(
    model: PcaModel, stats: StandardizeStats, path: str | Path
) -> None:
    """Write the fitted model + standardization stats as a PCA1 sidecar."""
    dim, k = model.dim, model.k
    if stats.dim != dim:
        raise ShapeError(f"stats dim {stats.dim} != model dim {dim}")
    bitmap = np.packbits(stats.degenerate.astype(np.uint8), bitorder="little")
    try:
        with open(path, "wb") as fh:
            fh.write(PCA_MAGIC)
            fh.write(np.array([dim, k], dtype="<u4").tobytes())
            for arr in (model.center, stats.means, stats.stds, model.explained_variance):
                fh.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())
            fh.write(np.ascontiguousarray(model.components, dtype="<f8").tobytes())
            fh.write(bitmap.tobytes())
    except OSError as exc:
        raise StorageError(f"failed to write {path}: {exc}") from exc


def load_pca_sidecar(path: str | Path) -> tuple[PcaModel, StandardizeStats]:
    try:
        raw = Path(path).read_bytes()
    except OSError as exc:
        raise StorageError(f"failed to read {path}: {exc}") from exc
    if raw[:4] != PCA_MAGIC:
        raise FormatError(f"{path}: bad magic {raw[:4]!r}, expected {PCA_MAGIC!r}")
    dim, k = (int(v) for v in np.frombuffer(raw, dtype="<u4", count=2, offset=4))
    expected = 12 + 8 * (3 * dim + k + k * dim) + (dim + 7) // 8
    if len(raw) != expected:
        raise TruncationError(
            f"{path}: size {len(raw)} != expected {expected} for dim={dim}, k={k}"
        )
    off = 12

    def take(count: int) -> np.ndarray:
        nonlocal off
        arr = np.frombuffer(raw, dtype="<f8", count=count, offset=off).copy()
        off += 8 * count
        return arr

    center = take(dim)
    means = take(dim)
    stds = take(dim)
    explained = take(k)
    components = take(k * dim).reshape(k, dim)
    bitmap = np.frombuffer(raw, dtype=np.uint8, count=(dim + 7) // 8, offset=off)
    degenerate = np.unpackbits(bitmap, count=dim, bitorder="little").astype(bool)
    model = PcaModel(components=components, explained_variance=explained, center=center, k=k)
    stats = StandardizeStats(means=means, stds=stds, degenerate=degenerate)
    return model, stats


def apply_conditioning(
    model: PcaModel, stats: StandardizeStats, X: np.ndarray
) -> np.ndarray:
    """Run raw features through a previously fitted standardize+PCA pair."""
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[1] != stats.dim:
        raise ShapeError(f"expected (*, {stats.dim}) input, got shape {X.shape}")
    Xs = (X - stats.means) / stats.stds
    return pca_transform(model, Xs)

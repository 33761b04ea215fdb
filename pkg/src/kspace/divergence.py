"""Two-sample divergence between modality token distributions in PCA space.

Implements the quantitative side of the measurement pipeline:

* Gaussian-kernel MMD. The default estimate is the square root of the
  clamped biased V-statistic ``mean(K_AA) + mean(K_BB) - 2 mean(K_AB)``
  with the within-set means taken over all pairs including the diagonal.
  The unbiased (diagonal-free) squared statistic is available as
  ``estimator="unbiased_squared"`` for bias-sensitive comparisons.
* Jensen-Shannon divergence, log base 2 (so the value is bounded by 1).
  High-dimensional inputs are reduced with seeded random unit projections
  and shared-edge histograms; inputs with at most two features use Gaussian
  KDE (Scott's rule) on a regular grid instead.
* Intra-modality baselines: the same divergence between two random halves
  of one modality, the noise floor cross-modality values are judged against.
* Permutation tests: p = (1 + #{permuted >= observed}) / (n_perm + 1) under
  seeded label shuffles that preserve group sizes.

Kernel matrices are evaluated in fixed-order row tiles and never fully
materialized, and every reduction uses a fixed summation order, so results
are independent of worker/thread counts.

All randomness comes from ``PCG64(seed)`` (see ``kspace.rng``); each
operation consumes its seed's stream in a documented draw order.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Literal

import numpy as np
from scipy.stats import gaussian_kde

from .dumpstore import LABEL_IMAGE, LABEL_TEXT
from .errors import (
    ComputationError,
    InsufficientDataError,
    ParameterError,
    ShapeError,
    ValidationError,
)
from .rng import make_rng

ESTIMATOR_BIASED = "biased_sqrt"
ESTIMATOR_UNBIASED = "unbiased_squared"

CROSS = "image_vs_text"
INTRA_IMAGE = "image_vs_image"
INTRA_TEXT = "text_vs_text"
COMPARISONS_ORDER = (CROSS, INTRA_IMAGE, INTRA_TEXT)

DEFAULT_CAP = 25_000

# rows*cols of one kernel tile; ~128 MB of float64
_TILE_ELEMENTS = 16_000_000
_PERM_CHUNK = 256

Metric = Literal["mmd", "js"]


@dataclass
class DivergenceConfig:
    """Knobs shared by the divergence estimators."""

    gamma: float | str = "auto"      # "auto" resolves to 1/n_features
    n_projections: int = 10
    histogram_bins: int = 50
    kde_grid_points: int = 256
    epsilon: float = 1e-10
    seed: int = 0
    estimator: str = ESTIMATOR_BIASED

    def validate(self) -> None:
        if self.gamma != "auto":
            if not isinstance(self.gamma, (int, float)) or float(self.gamma) <= 0:
                raise ParameterError(f"gamma must be positive or 'auto', got {self.gamma}")
        if self.n_projections < 1:
            raise ParameterError("n_projections must be >= 1")
        if self.histogram_bins < 2:
            raise ParameterError("histogram_bins must be >= 2")
        if self.kde_grid_points < 2:
            raise ParameterError("kde_grid_points must be >= 2")
        if self.epsilon <= 0:
            raise ParameterError("epsilon must be positive")
        if self.estimator not in (ESTIMATOR_BIASED, ESTIMATOR_UNBIASED):
            raise ParameterError(f"unknown estimator {self.estimator!r}")

    def resolved_gamma(self, n_features: int) -> float:
        if self.gamma == "auto":
            return 1.0 / n_features
        return float(self.gamma)


@dataclass
class ModalitySplit:
    """Per-layer image/text matrices after the per-modality sampling cap."""

    z_img: np.ndarray
    z_txt: np.ndarray
    layer_index: int
    cap: int = DEFAULT_CAP
    seed: int = 0


@dataclass
class DivergenceResult:
    """One (layer, comparison) measurement."""

    comparison: str
    layer_index: int
    mmd: float
    js: float
    n_a: int
    n_b: int
    seed: int
    p_value: float | None = None


def build_split(
    Z: np.ndarray,
    labels: np.ndarray,
    cap: int = DEFAULT_CAP,
    seed: int = 0,
    layer_index: int = 0,
) -> ModalitySplit:
    """Split pooled tokens by modality and cap each side by seeded sampling.

    Label code 2 (other/special) is excluded. Sampling is uniform without
    replacement; retained rows keep their input order. The image subset is
    drawn before the text subset from one PCG64(seed) stream.
    """
    Z = np.asarray(Z)
    labels = np.asarray(labels)
    if Z.ndim != 2:
        raise ValidationError(f"expected 2-D token matrix, got shape {Z.shape}")
    if labels.shape != (Z.shape[0],):
        raise ShapeError(
            f"labels length {labels.shape} does not match {Z.shape[0]} rows"
        )
    if cap < 2:
        raise ParameterError(f"cap must be >= 2, got {cap}")
    img_idx = np.flatnonzero(labels == LABEL_IMAGE)
    txt_idx = np.flatnonzero(labels == LABEL_TEXT)
    if img_idx.size < 2 or txt_idx.size < 2:
        raise InsufficientDataError(
            f"need >= 2 tokens per modality, got image={img_idx.size}, "
            f"text={txt_idx.size}"
        )
    rng = make_rng(seed)
    if img_idx.size > cap:
        img_idx = img_idx[np.sort(rng.choice(img_idx.size, size=cap, replace=False))]
    if txt_idx.size > cap:
        txt_idx = txt_idx[np.sort(rng.choice(txt_idx.size, size=cap, replace=False))]
    return ModalitySplit(
        z_img=np.ascontiguousarray(Z[img_idx], dtype=np.float64),
        z_txt=np.ascontiguousarray(Z[txt_idx], dtype=np.float64),
        layer_index=layer_index,
        cap=cap,
        seed=seed,
    )


def _check_pair(A: np.ndarray, B: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    A = np.ascontiguousarray(A, dtype=np.float64)
    B = np.ascontiguousarray(B, dtype=np.float64)
    if A.ndim != 2 or B.ndim != 2:
        raise ValidationError("samples must be 2-D matrices")
    if A.shape[1] != B.shape[1]:
        raise ShapeError(f"feature mismatch: {A.shape[1]} vs {B.shape[1]}")
    if A.shape[0] < 2 or B.shape[0] < 2:
        raise InsufficientDataError("each sample needs at least 2 rows")
    return A, B


def _tile_rows(n_rows: int, other: int) -> int:
    return max(1, min(n_rows, _TILE_ELEMENTS // max(other, 1)))


def _kernel_total(X: np.ndarray, Y: np.ndarray, gamma: float) -> float:
    """Sum of exp(-gamma ||x_i - y_j||^2) over all pairs, tiled, fixed order."""
    x_sq = np.einsum("ij,ij->i", X, X)
    y_sq = np.einsum("ij,ij->i", Y, Y)
    bx = _tile_rows(X.shape[0], min(Y.shape[0], 4096))
    by = _tile_rows(Y.shape[0], bx)
    parts: list[float] = []
    for i in range(0, X.shape[0], bx):
        xi = X[i : i + bx]
        xs = x_sq[i : i + bx]
        for j in range(0, Y.shape[0], by):
            yj = Y[j : j + by]
            D = xs[:, None] + y_sq[None, j : j + by] - 2.0 * (xi @ yj.T)
            np.maximum(D, 0.0, out=D)
            D *= -gamma
            np.exp(D, out=D)
            parts.append(float(D.sum()))
    return math.fsum(parts)


def mmd_rbf(
    A: np.ndarray,
    B: np.ndarray,
    gamma: float | str = "auto",
    estimator: str = ESTIMATOR_BIASED,
) -> float:
    """Gaussian-kernel maximum mean discrepancy between two samples.

    With the default ``biased_sqrt`` estimator, returns
    sqrt(max(0, mean(K_AA) + mean(K_BB) - 2 mean(K_AB))) where the within-set
    means include the diagonal. ``unbiased_squared`` returns the U-statistic
    (diagonals excluded, no square root; may be slightly negative).
    """
    A, B = _check_pair(A, B)
    k = A.shape[1]
    g = 1.0 / k if gamma == "auto" else float(gamma)
    if g <= 0:
        raise ParameterError(f"gamma must be positive, got {gamma}")
    if estimator not in (ESTIMATOR_BIASED, ESTIMATOR_UNBIASED):
        raise ParameterError(f"unknown estimator {estimator!r}")
    n, m = A.shape[0], B.shape[0]
    s_aa = _kernel_total(A, A, g)
    s_bb = _kernel_total(B, B, g)
    s_ab = _kernel_total(A, B, g)
    if estimator == ESTIMATOR_BIASED:
        mmd_sq = s_aa / (n * n) + s_bb / (m * m) - 2.0 * s_ab / (n * m)
        return math.sqrt(max(0.0, mmd_sq))
    # diagonal kernel entries are exactly 1
    return (
        (s_aa - n) / (n * (n - 1))
        + (s_bb - m) / (m * (m - 1))
        - 2.0 * s_ab / (n * m)
    )


def _unit_directions(rng: np.random.Generator, count: int, k: int) -> np.ndarray:
    dirs = rng.standard_normal((count, k))
    norms = np.linalg.norm(dirs, axis=1, keepdims=True)
    norms[norms == 0.0] = 1.0
    return dirs / norms


def _bin_counts(values: np.ndarray, lo: float, hi: float, bins: int) -> np.ndarray:
    """Histogram counts over [lo, hi] with the right edge inclusive."""
    scaled = (values - lo) * (bins / (hi - lo))
    idx = np.clip(scaled.astype(np.int64), 0, bins - 1)
    return np.bincount(idx, minlength=bins)


def _js_from_weights(wa: np.ndarray, wb: np.ndarray, epsilon: float) -> float:
    """Base-2 JS between two non-negative weight vectors (+epsilon, normalized)."""
    P = wa.astype(np.float64) + epsilon
    P /= P.sum()
    Q = wb.astype(np.float64) + epsilon
    Q /= Q.sum()
    M = 0.5 * (P + Q)
    js = 0.5 * float(np.sum(P * np.log2(P / M))) + 0.5 * float(np.sum(Q * np.log2(Q / M)))
    return min(1.0, max(0.0, js))


def js_random_projection(A: np.ndarray, B: np.ndarray, config: DivergenceConfig) -> float:
    """JS divergence averaged over seeded random 1-D projections.

    Each projection uses shared histogram edges spanning the pooled range of
    the projected values; a projection with zero pooled range contributes 0.
    """
    config.validate()
    A, B = _check_pair(A, B)
    rng = make_rng(config.seed)
    dirs = _unit_directions(rng, config.n_projections, A.shape[1])
    proj_a = A @ dirs.T
    proj_b = B @ dirs.T
    values = []
    for p in range(config.n_projections):
        lo = min(proj_a[:, p].min(), proj_b[:, p].min())
        hi = max(proj_a[:, p].max(), proj_b[:, p].max())
        if lo == hi:
            values.append(0.0)
            continue
        ha = _bin_counts(proj_a[:, p], lo, hi, config.histogram_bins)
        hb = _bin_counts(proj_b[:, p], lo, hi, config.histogram_bins)
        values.append(_js_from_weights(ha, hb, config.epsilon))
    return float(np.mean(values))


def js_kde_lowdim(A: np.ndarray, B: np.ndarray, config: DivergenceConfig) -> float:
    """JS divergence from Gaussian KDE fits, for data with <= 2 features.

    Densities are evaluated on a regular grid (kde_grid_points per axis)
    spanning the pooled range extended by 3 pooled standard deviations on
    each side, then normalized and compared in base 2.
    """
    config.validate()
    A, B = _check_pair(A, B)
    k = A.shape[1]
    if k > 2:
        raise ParameterError(
            f"js_kde_lowdim handles at most 2 features, got {k}; "
            "use js_random_projection"
        )
    pooled = np.vstack([A, B])
    lo = pooled.min(axis=0) - 3.0 * pooled.std(axis=0)
    hi = pooled.max(axis=0) + 3.0 * pooled.std(axis=0)
    axes = [np.linspace(lo[j], hi[j], config.kde_grid_points) for j in range(k)]
    if k == 1:
        grid = axes[0][None, :]
    else:
        mesh = np.meshgrid(*axes, indexing="ij")
        grid = np.vstack([m.ravel() for m in mesh])
    try:
        dens_a = gaussian_kde(A.T)(grid)
        dens_b = gaussian_kde(B.T)(grid)
    except np.linalg.LinAlgError as exc:
        raise ComputationError(f"KDE fit failed (degenerate sample?): {exc}") from exc
    return _js_from_weights(dens_a, dens_b, config.epsilon)


def js_divergence(A: np.ndarray, B: np.ndarray, config: DivergenceConfig) -> float:
    """Dimension-dispatching JS estimate: KDE for <= 2 features, else projections."""
    A, B = _check_pair(A, B)
    if A.shape[1] <= 2:
        return js_kde_lowdim(A, B, config)
    return js_random_projection(A, B, config)


def _half_split(n: int, seed: int) -> tuple[np.ndarray, np.ndarray]:
    perm = make_rng(seed).permutation(n)
    return perm[: n // 2], perm[n // 2 :]


def intra_modality_baseline(
    X: np.ndarray, config: DivergenceConfig, metric: Metric
) -> float:
    """Divergence between two random halves of one sample (the noise floor).

    The halves come from one seeded permutation: first floor(n/2) rows vs the
    rest.
    """
    config.validate()
    X = np.ascontiguousarray(X, dtype=np.float64)
    if X.ndim != 2:
        raise ValidationError(f"expected 2-D matrix, got shape {X.shape}")
    if X.shape[0] < 4:
        raise InsufficientDataError(
            f"need at least 4 rows for a half-split baseline, got {X.shape[0]}"
        )
    first, second = _half_split(X.shape[0], config.seed)
    h1, h2 = X[first], X[second]
    if metric == "mmd":
        return mmd_rbf(h1, h2, config.gamma, config.estimator)
    if metric == "js":
        return js_divergence(h1, h2, config)
    raise ParameterError(f"unknown metric {metric!r}")


def _mmd_stat_from_sums(
    s_aa: float, s_a1: float, s_tot: float, n: int, m: int, estimator: str
) -> float:
    s_ab = s_a1 - s_aa
    s_bb = s_tot - 2.0 * s_a1 + s_aa
    if estimator == ESTIMATOR_BIASED:
        mmd_sq = s_aa / (n * n) + s_bb / (m * m) - 2.0 * s_ab / (n * m)
        return math.sqrt(max(0.0, mmd_sq))
    return (
        (s_aa - n) / (n * (n - 1))
        + (s_bb - m) / (m * (m - 1))
        - 2.0 * s_ab / (n * m)
    )


def _permutation_stats_mmd(
    pooled: np.ndarray, n: int, perm_a: list[np.ndarray], gamma: float, estimator: str
) -> np.ndarray:
    """MMD statistic for the identity assignment plus each permutation.

    Uses the indicator-matrix identity: with c the 0/1 membership vector of
    group A over the pooled rows, S_AA = c'Kc and S_A1 = c'K1, from which all
    three block sums follow. Kernel tiles are visited once, in a fixed order,
    and shared by every permutation.
    """
    N = pooled.shape[0]
    m = N - n
    P = len(perm_a) + 1
    C = np.zeros((P, N), dtype=np.float64)
    C[0, :n] = 1.0
    for i, idx in enumerate(perm_a):
        C[i + 1, idx] = 1.0

    sq = np.einsum("ij,ij->i", pooled, pooled)
    b = _tile_rows(N, min(N, 4096))
    s_aa = np.zeros(P)
    s_a1 = np.zeros(P)
    tot_parts: list[float] = []
    for i in range(0, N, b):
        xi = pooled[i : i + b]
        for j in range(0, N, b):
            yj = pooled[j : j + b]
            D = sq[i : i + b, None] + sq[None, j : j + b] - 2.0 * (xi @ yj.T)
            np.maximum(D, 0.0, out=D)
            D *= -gamma
            np.exp(D, out=D)
            tot_parts.append(float(D.sum()))
            for c0 in range(0, P, _PERM_CHUNK):
                c1 = min(c0 + _PERM_CHUNK, P)
                G = C[c0:c1, i : i + b] @ D
                s_aa[c0:c1] += np.einsum("pj,pj->p", G, C[c0:c1, j : j + b])
                s_a1[c0:c1] += G.sum(axis=1)
    s_tot = math.fsum(tot_parts)
    return np.array(
        [
            _mmd_stat_from_sums(s_aa[p], s_a1[p], s_tot, n, m, estimator)
            for p in range(P)
        ]
    )


def _permutation_stats_js(
    pooled: np.ndarray, n: int, perm_a: list[np.ndarray], config: DivergenceConfig
) -> np.ndarray:
    """JS statistic for the identity assignment plus each permutation.

    Projections and histogram edges depend only on the pooled rows, so they
    are computed once; each permutation only re-bins.
    """
    N = pooled.shape[0]
    rng = make_rng(config.seed)
    dirs = _unit_directions(rng, config.n_projections, pooled.shape[1])
    proj = pooled @ dirs.T  # (N, n_projections)
    bins = config.histogram_bins
    bin_idx = np.empty((config.n_projections, N), dtype=np.int64)
    live = []
    for p in range(config.n_projections):
        lo, hi = proj[:, p].min(), proj[:, p].max()
        if lo == hi:
            bin_idx[p] = 0
            live.append(False)
            continue
        scaled = (proj[:, p] - lo) * (bins / (hi - lo))
        bin_idx[p] = np.clip(scaled.astype(np.int64), 0, bins - 1)
        live.append(True)

    totals = [np.bincount(bin_idx[p], minlength=bins) for p in range(config.n_projections)]
    assignments = [np.arange(n)] + perm_a
    out = np.empty(len(assignments))
    for a_i, idx in enumerate(assignments):
        vals = []
        for p in range(config.n_projections):
            if not live[p]:
                vals.append(0.0)
                continue
            ha = np.bincount(bin_idx[p][idx], minlength=bins)
            hb = totals[p] - ha
            vals.append(_js_from_weights(ha, hb, config.epsilon))
        out[a_i] = float(np.mean(vals))
    return out


def permutation_test(
    A: np.ndarray,
    B: np.ndarray,
    metric: Metric,
    n_perm: int = 999,
    config: DivergenceConfig | None = None,
) -> float:
    """Permutation p-value for the observed divergence between A and B.

    Pooled rows are reassigned by seeded shuffles preserving the group sizes;
    shuffle i is ``PCG64(config.seed).permutation(n + m)`` drawn i-th from the
    stream, with the first n positions forming the permuted A.
    Returns (1 + #{permuted >= observed}) / (n_perm + 1).
    """
    config = config or DivergenceConfig()
    config.validate()
    if n_perm < 1:
        raise ParameterError(f"n_perm must be >= 1, got {n_perm}")
    A, B = _check_pair(A, B)
    if metric not in ("mmd", "js"):
        raise ParameterError(f"unknown metric {metric!r}")
    n, m = A.shape[0], B.shape[0]
    pooled = np.vstack([A, B])
    rng = make_rng(config.seed)
    perm_a = [rng.permutation(n + m)[:n] for _ in range(n_perm)]
    if metric == "mmd":
        gamma = config.resolved_gamma(pooled.shape[1])
        stats = _permutation_stats_mmd(pooled, n, perm_a, gamma, config.estimator)
    else:
        if pooled.shape[1] <= 2:
            # KDE path has no shared precomputation; evaluate directly
            observed = js_divergence(A, B, config)
            exceed = 0
            for idx in perm_a:
                mask = np.zeros(n + m, dtype=bool)
                mask[idx] = True
                if js_divergence(pooled[mask], pooled[~mask], config) >= observed:
                    exceed += 1
            return (1 + exceed) / (n_perm + 1)
        stats = _permutation_stats_js(pooled, n, perm_a, config)
    observed = stats[0]
    exceed = int(np.count_nonzero(stats[1:] >= observed))
    return (1 + exceed) / (n_perm + 1)


def layer_divergence(
    split: ModalitySplit,
    config: DivergenceConfig,
    n_perm: int | None = None,
    perm_metric: Metric = "mmd",
) -> list[DivergenceResult]:
    """Cross-modality divergence plus both intra-modality controls.

    Returns exactly three results tagged image_vs_text, image_vs_image and
    text_vs_text. When ``n_perm`` is given, a permutation p-value for
    ``perm_metric`` is attached to the cross comparison.
    """
    config.validate()
    z_img, z_txt = _check_pair(split.z_img, split.z_txt)
    results = [
        DivergenceResult(
            comparison=CROSS,
            layer_index=split.layer_index,
            mmd=mmd_rbf(z_img, z_txt, config.gamma, config.estimator),
            js=js_divergence(z_img, z_txt, config),
            n_a=z_img.shape[0],
            n_b=z_txt.shape[0],
            seed=config.seed,
            p_value=(
                permutation_test(z_img, z_txt, perm_metric, n_perm, config)
                if n_perm
                else None
            ),
        )
    ]
    for tag, X in ((INTRA_IMAGE, z_img), (INTRA_TEXT, z_txt)):
        results.append(
            DivergenceResult(
                comparison=tag,
                layer_index=split.layer_index,
                mmd=intra_modality_baseline(X, config, "mmd"),
                js=intra_modality_baseline(X, config, "js"),
                n_a=X.shape[0] // 2,
                n_b=X.shape[0] - X.shape[0] // 2,
                seed=config.seed,
            )
        )
    return results

import numpy as np
import pytest

from kspace.errors import (
    InsufficientDataError,
    ParameterError,
    ShapeError,
    ValidationError,
)
from kspace.preprocess import (
    apply_conditioning,
    condition_layer,
    load_pca_sidecar,
    pca_fit,
    pca_transform,
    save_pca_sidecar,
    standardize,
)
from kspace.rng import make_rng


def test_standardize_hand_example():
    X = np.array([[1.0, 2.0], [3.0, 2.0]])
    Xs, stats = standardize(X)
    assert np.allclose(Xs, [[-1.0, 0.0], [1.0, 0.0]])
    assert np.allclose(stats.means, [2.0, 2.0])
    assert np.allclose(stats.stds, [1.0, 1.0])
    assert stats.degenerate.tolist() == [False, True]


def test_standardize_zero_mean_unit_variance():
    gen = make_rng(0)
    X = gen.normal(size=(10_000, 50)) * (np.arange(50) + 1.0)
    Xs, stats = standardize(X)
    assert np.abs(Xs.mean(axis=0)).max() < 1e-9
    # independent recomputation of the output column variances
    var = np.mean((Xs - Xs.mean(axis=0)) ** 2, axis=0)
    assert var.min() > 0.999 and var.max() < 1.001
    assert not stats.degenerate.any()


def test_standardize_errors():
    with pytest.raises(InsufficientDataError):
        standardize(np.ones((1, 3)))
    bad = np.ones((4, 2))
    bad[0, 0] = np.inf
    with pytest.raises(ValidationError):
        standardize(bad)


def test_pca_rank1_line():
    t = np.linspace(-3, 3, 50)
    X = np.stack([t, t], axis=1)  # exactly on y = x
    model = pca_fit(X, 2)
    assert model.k == 2
    assert np.allclose(np.abs(model.components[0]), [1 / np.sqrt(2)] * 2, atol=1e-8)
    assert model.components[0][0] > 0  # sign convention
    assert model.explained_variance[1] == pytest.approx(0.0, abs=1e-8)
    Z = pca_transform(model, X)
    assert np.abs(Z[:, 1]).max() < 1e-8


def test_pca_full_rank_reconstruction():
    gen = make_rng(3)
    X = gen.normal(size=(200, 6)) @ gen.normal(size=(6, 6))
    model = pca_fit(X, 6)
    Z = pca_transform(model, X)
    recon = Z @ model.components + model.center
    assert np.abs(recon - X).max() < 1e-6


def test_pca_retained_variance_fraction():
    gen = make_rng(7)
    scales = np.sqrt(np.arange(100, 0, -1.0))  # variances 100..1
    X = gen.normal(size=(5000, 100)) * scales
    model = pca_fit(X, 50)

    # independent oracle: brute-force eigendecomposition of the sample covariance
    Xc = X - X.mean(axis=0)
    eig = np.linalg.eigvalsh(Xc.T @ Xc / (X.shape[0] - 1))[::-1]
    oracle_fraction = eig[:50].sum() / eig.sum()

    got = model.explained_variance.sum()
    total = eig.sum()
    assert got / total == pytest.approx(oracle_fraction, abs=1e-9)
    assert got / total == pytest.approx(0.75, abs=0.01)


def test_pca_orthonormality_and_ordering():
    gen = make_rng(11)
    for trial in range(5):
        X = gen.normal(size=(120, 20)) * gen.uniform(0.1, 5.0, size=20)
        model = pca_fit(X, 10)
        gram = model.components @ model.components.T
        assert np.abs(gram - np.eye(model.k)).max() < 1e-8
        ev = model.explained_variance
        assert (np.sort(ev)[::-1] == ev).all()
        assert (ev >= 0).all()


def test_pca_sign_convention_largest_coeff_positive():
    gen = make_rng(13)
    X = gen.normal(size=(300, 12))
    model = pca_fit(X, 12)
    for row in model.components:
        assert row[np.argmax(np.abs(row))] > 0


def test_pca_transform_centering_and_determinism():
    gen = make_rng(17)
    X = gen.normal(size=(50, 5))
    model = pca_fit(X, 3)
    z_mean = pca_transform(model, X.mean(axis=0, keepdims=True))
    assert np.abs(z_mean).max() < 1e-9
    row = X[3:4]
    two = np.vstack([row, row])
    Z = pca_transform(model, two)
    assert Z[0].tobytes() == Z[1].tobytes()


def test_pca_isometry_on_retained_subspace():
    gen = make_rng(19)
    X = gen.normal(size=(80, 10))
    model = pca_fit(X, 4)
    Z = pca_transform(model, X)
    # project the original points onto the component span
    P = model.components.T @ model.components
    Xp = (X - model.center) @ P
    d_z = np.linalg.norm(Z[:, None, :] - Z[None, :, :], axis=-1)
    d_x = np.linalg.norm(Xp[:, None, :] - Xp[None, :, :], axis=-1)
    denom = np.maximum(d_x, 1e-12)
    assert (np.abs(d_z - d_x) / denom)[d_x > 1e-9].max() < 1e-6


def test_pca_k_capped_and_errors():
    gen = make_rng(23)
    X = gen.normal(size=(5, 100))
    model = pca_fit(X, 50)
    assert model.k == 4  # min(T-1, dim, k)
    gram = model.components @ model.components.T
    assert np.abs(gram - np.eye(4)).max() < 1e-8
    with pytest.raises(ParameterError):
        pca_fit(X, 0)
    with pytest.raises(InsufficientDataError):
        pca_fit(X[:1], 2)
    with pytest.raises(ShapeError):
        pca_transform(model, gen.normal(size=(3, 7)))


def test_sidecar_round_trip(tmp_path):
    gen = make_rng(29)
    X = gen.normal(size=(60, 9))
    X[:, 4] = 1.25  # degenerate column
    Z, model, stats = condition_layer(X, 5)
    path = tmp_path / "layer0.pca"
    save_pca_sidecar(model, stats, path)
    model2, stats2 = load_pca_sidecar(path)
    assert model2.k == model.k
    assert model2.components.tobytes() == model.components.tobytes()
    assert model2.explained_variance.tobytes() == model.explained_variance.tobytes()
    assert model2.center.tobytes() == model.center.tobytes()
    assert stats2.means.tobytes() == stats.means.tobytes()
    assert stats2.stds.tobytes() == stats.stds.tobytes()
    assert stats2.degenerate.tolist() == stats.degenerate.tolist()
    Z2 = apply_conditioning(model2, stats2, X)
    assert np.abs(Z2 - Z).max() == 0.0


def test_per_layer_independence():
    """Conditioning one matrix is unaffected by any other layer's content."""
    gen = make_rng(31)
    X = gen.normal(size=(40, 6))
    Z1, model1, _ = condition_layer(X.copy(), 3)
    _ = condition_layer(gen.normal(size=(40, 6)), 3)  # unrelated layer
    Z2, model2, _ = condition_layer(X.copy(), 3)
    assert Z1.tobytes() == Z2.tobytes()
    assert model1.components.tobytes() == model2.components.tobytes()

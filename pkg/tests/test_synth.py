import math

import numpy as np
import pytest

from kspace.divergence import mmd_rbf
from kspace.dumpstore import read_layer_dump, read_manifest, validate_dump_dir
from kspace.errors import ParameterError
from kspace.rng import make_rng
from kspace.synth import (
    draw_modality_samples,
    generate_dump,
    js_quadrature_oracle_1d,
    make_spec,
    population_mmd_monte_carlo,
    population_mmd_oracle,
)

# base-2 JS values frozen from the quadrature oracle
JS_GAUSS_GAP1 = 0.16074721979641687   # N(0,1) vs N(1,1)
JS_GAUSS_GAP10 = 0.999998754714748    # N(0,1) vs N(10,1); 1 minus ~1.25e-6 overlap


def test_generate_counts_and_validation(tmp_path):
    spec = make_spec("identical", n_img=2000, n_txt=2000, dim=50, seed=3, layers=[0, 1])
    generate_dump(spec, tmp_path)
    summary = validate_dump_dir(tmp_path)
    assert [(l.n_image, l.n_text) for l in summary.layers] == [(2000, 2000)] * 2


def test_generate_separated_mean_gap(tmp_path):
    spec = make_spec("separated", n_img=2000, n_txt=2000, seed=9, layers=[0])
    generate_dump(spec, tmp_path)
    manifest = read_manifest(tmp_path)
    dump = read_layer_dump(tmp_path / manifest.layer_files[0])
    img = dump.data[dump.labels == 1].astype(np.float64)
    txt = dump.data[dump.labels == 0].astype(np.float64)
    gap = img.mean(axis=0) - txt.mean(axis=0)
    assert gap[0] == pytest.approx(10.0, abs=0.2)
    assert np.abs(gap[1:]).max() < 0.2


def test_generate_deterministic_bytes(tmp_path):
    spec = make_spec("overlapping", n_img=300, n_txt=200, seed=21, layers=[0, 5])
    generate_dump(spec, tmp_path / "a")
    generate_dump(spec, tmp_path / "b")
    for name in ("manifest.json", "layer0.kvd", "layer5.kvd"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_clustered_preset_generates(tmp_path):
    spec = make_spec("clustered", n_img=600, n_txt=400, seed=2, layers=[0])
    generate_dump(spec, tmp_path)
    summary = validate_dump_dir(tmp_path)
    assert summary.layers[0].n_image == 600
    with pytest.raises(ParameterError):
        population_mmd_oracle(spec, 0.02)


def test_identical_preset_invariant():
    with pytest.raises(ParameterError):
        make_spec("identical", mean_shift=1.0)
    with pytest.raises(ParameterError):
        make_spec("identical", cov_scale_img=2.0)


def test_oracle_zero_for_identical():
    spec = make_spec("identical", dim=50)
    assert population_mmd_oracle(spec, 0.02) == 0.0


def test_oracle_dim1_closed_form_vs_monte_carlo():
    """Unit-variance 1-D Gaussians, gamma=1: the three kernel expectations have
    variance sum 2, so MMD^2 = (2/sqrt(5)) * (1 - exp(-c^2/5)). A large
    Monte-Carlo run arbitrates the closed form."""
    for shift in (1.0, 2.0):
        spec = make_spec("overlapping", dim=1, mean_shift=shift)
        closed = population_mmd_oracle(spec, 1.0)
        expected_sq = (2 / math.sqrt(5)) * (1 - math.exp(-shift * shift / 5))
        assert closed == pytest.approx(math.sqrt(expected_sq), abs=1e-12)
        mc = population_mmd_monte_carlo(spec, 1.0, n_pairs=10**6, seed=4)
        assert abs(mc - closed) <= 1e-3


def test_oracle_d50_closed_form_vs_monte_carlo():
    spec = make_spec("overlapping", dim=50, mean_shift=5.0)
    closed = population_mmd_oracle(spec, 0.02)
    assert closed == pytest.approx(0.328974, abs=1e-6)
    mc = population_mmd_monte_carlo(spec, 0.02, n_pairs=10**6, seed=8)
    assert abs(mc - closed) <= 1e-3


def test_oracle_point_mass_limit():
    # vanishing covariance approaches the two-point-mass formula 2 - 2 exp(-g c^2)
    spec = make_spec("overlapping", dim=1, mean_shift=1.0,
                     cov_scale_img=1e-12, cov_scale_txt=1e-12)
    value = population_mmd_oracle(spec, 1.0)
    assert value == pytest.approx(math.sqrt(2 - 2 * math.exp(-1)), abs=1e-9)


@pytest.mark.parametrize("preset,shift", [("separated", 10.0), ("overlapping", 1.0)])
def test_estimator_matches_oracle_at_5k(preset, shift):
    """|mmd_rbf(sample) - population oracle| <= 0.01 at n=5000/side, 5 seeds."""
    spec = make_spec(preset, n_img=5000, n_txt=5000, mean_shift=shift)
    oracle = population_mmd_oracle(spec, "auto")
    for seed in range(5):
        img, txt = draw_modality_samples(spec, make_rng(seed))
        est = mmd_rbf(img, txt, "auto")
        assert abs(est - oracle) <= 0.01, f"seed {seed}: {est} vs {oracle}"


def test_js_quadrature_values():
    assert js_quadrature_oracle_1d(0, 1, 0, 1) == pytest.approx(0.0, abs=1e-9)
    # the true 10-sigma value sits ~1.25e-6 below 1 (tail overlap), so pin the
    # quadrature constant itself and check it is 1 to within that overlap
    assert js_quadrature_oracle_1d(0, 1, 10, 1) == pytest.approx(JS_GAUSS_GAP10, abs=1e-9)
    assert js_quadrature_oracle_1d(0, 1, 10, 1) == pytest.approx(1.0, abs=2e-6)
    assert js_quadrature_oracle_1d(0, 1, 1, 1) == pytest.approx(JS_GAUSS_GAP1, abs=1e-9)
    # symmetric in the arguments
    assert js_quadrature_oracle_1d(1, 1, 0, 1) == pytest.approx(JS_GAUSS_GAP1, abs=1e-9)


def test_generated_dumps_always_valid(tmp_path):
    for i, preset in enumerate(("identical", "overlapping", "separated", "clustered")):
        spec = make_spec(preset, n_img=50, n_txt=60, seed=i, layers=[0, 3])
        out = tmp_path / preset
        generate_dump(spec, out)
        validate_dump_dir(out)

import numpy as np
import pytest

from tfkm.synthetic import SyntheticSpec, generate, make_bank_panel


def test_no_outliers_when_fraction_zero():
    d = generate(SyntheticSpec(n=50, p=6, outlier_fraction=0.0, seed=1))
    assert not d.outliers.any()


def test_single_blob():
    d = generate(SyntheticSpec(n=40, p=5, c=4, r=2, weights=(1.0, 0.0, 0.0, 0.0), separation=0.0,
                               seed=2))
    assert set(d.labels.tolist()) == {0}
    np.testing.assert_array_equal(d.centers, 0.0)


def test_counts_replay_multinomial():
    spec = SyntheticSpec(n=365, p=10, weights=(0.4, 0.3, 0.2, 0.1), outlier_fraction=0.1, seed=3)
    d = generate(spec)
    expected = np.random.default_rng(3).multinomial(365 - 36, spec.weights)
    np.testing.assert_array_equal(np.bincount(d.labels[d.labels >= 0], minlength=4), expected)
    assert d.outliers.sum() == 36


def test_geometry():
    spec = SyntheticSpec(n=100, p=12, outlier_fraction=0.1, seed=4)
    d = generate(spec)
    np.testing.assert_allclose(d.loadings.T @ d.loadings, np.eye(2), atol=1e-12)
    # the noise lives outside the loading span, so projecting recovers the scores
    np.testing.assert_allclose(d.X @ d.loadings, d.scores, atol=1e-10)
    radius = np.linalg.norm(d.scores[d.outliers], axis=1)
    np.testing.assert_allclose(radius, spec.separation + spec.outlier_magnitude)
    np.testing.assert_allclose(np.linalg.norm(d.centers, axis=1), spec.separation)


def test_deterministic():
    a = generate(SyntheticSpec(n=30, p=4, seed=5))
    b = generate(SyntheticSpec(n=30, p=4, seed=5))
    np.testing.assert_array_equal(a.X, b.X)


def test_spec_validation():
    with pytest.raises(ValueError):
        SyntheticSpec(weights=(0.5, 0.5, 0.5, 0.5))
    with pytest.raises(ValueError):
        SyntheticSpec(outlier_fraction=0.6)


def test_bank_panel_ratio_roundtrip():
    spec = SyntheticSpec(n=50, p=6, seed=6)
    panel = make_bank_panel(spec, seed=1)
    size = panel.raw[:, -1]
    ratio = panel.raw[:, :6] / size[:, None]
    mask = ~np.isnan(ratio)
    np.testing.assert_allclose(ratio[mask], panel.truth.X[mask], rtol=1e-12)
    assert panel.design.shape == (50, 4)

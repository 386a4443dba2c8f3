import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from gembhash import gemb, gmm
from gembhash.dataset import FeatureMatrix
from gembhash.errors import ConfigError, ShapeError
from gembhash.gmm import EmConfig, GmmModel
from gembhash.pca import fit_pca
from gembhash.synth import make_blobs


class TestPowerNormalize:
    @pytest.mark.parametrize("alpha", [0.05, 0.15, 0.5, 1.0])
    def test_fixed_points(self, alpha):
        np.testing.assert_array_equal(gemb.power_normalize([0.0, 1.0], alpha), [0.0, 1.0])

    def test_arithmetic(self):
        np.testing.assert_allclose(gemb.power_normalize([0.25, -4.0], 0.5), [0.5, -2.0], rtol=1e-15)

    def test_identity_at_one(self, rng):
        z = rng.standard_normal((5, 4))
        np.testing.assert_array_equal(gemb.power_normalize(z, 1.0), z)

    @pytest.mark.parametrize("alpha", [0.0, -0.1, 1.01, math.nan])
    def test_alpha_range(self, alpha):
        with pytest.raises(ConfigError):
            gemb.power_normalize([0.5], alpha)

    @settings(max_examples=100, deadline=None)
    @given(
        row=arrays(np.float64, st.integers(2, 12), elements=st.floats(0.0, 1.0)),
        alpha=st.floats(0.01, 1.0),
    )
    def test_rank_preserving(self, row, alpha):
        out = gemb.power_normalize(row, alpha)
        np.testing.assert_array_equal(np.argsort(out, kind="stable"), np.argsort(row, kind="stable"))
        assert np.all(out >= 0.0) and np.all(out <= 1.0)


def test_presets():
    assert gemb.PRESETS["gist"] == (0.85, 0.15)
    assert gemb.PRESETS["cnn"] == (0.65, 0.05)
    assert (gemb.DEFAULT_GAMMA, gemb.DEFAULT_ALPHA) == (0.85, 0.15)


@pytest.fixture
def blobs():
    return make_blobs(600, n_classes=4, dim=20, latent_dim=6, seed=3)


class TestEmbed:
    def test_single_component_all_ones(self, blobs):
        model = gemb.fit_gemb(blobs, 0.9, n_components=1, alpha=0.15)
        z = gemb.embed(model, blobs)
        assert isinstance(z, FeatureMatrix)
        assert z.d == 1
        assert np.all(z.data == 1.0)

    def test_alpha_one_equals_posteriors(self, blobs):
        model = gemb.fit_gemb(blobs, 0.9, n_components=4, alpha=1.0, em=EmConfig(4, n_init=1))
        post = gmm.posteriors(model.gmm, (blobs.data - model.pca.mean) @ model.pca.projection)
        np.testing.assert_array_equal(gemb.embed(model, blobs.data), post)

    def test_rows_sum_at_least_one(self, blobs):
        model = gemb.fit_gemb(blobs, 0.9, n_components=8, alpha=0.15, em=EmConfig(8, n_init=1))
        z = gemb.embed(model, blobs.data)
        assert z.shape == (blobs.m, 8)
        assert np.all(z.sum(axis=1) >= 1.0 - 1e-12)
        assert z.min() >= 0.0 and z.max() <= 1.0

    def test_one_hot_at_component_mean(self):
        # two components far apart; a training point exactly at one mean
        x = np.array([[0.0, 0.0], [0.1, 0.0], [0.0, 0.1], [50.0, 50.0], [50.1, 50.0], [50.0, 50.1]])
        pca = fit_pca(x, 1.0)
        mixture = GmmModel(
            np.array([0.5, 0.5]),
            np.array([[-35.0, 0.0], [35.0, 0.0]]),
            np.stack([np.eye(2), np.eye(2)]),
            "full",
        )
        model = gemb.GembModel(pca, mixture, 0.15)
        point = pca.mean + pca.projection @ np.array([35.0, 0.0])
        z = gemb.embed(model, point[None, :])
        assert np.argmax(z[0]) == 1
        assert z[0, 1] > 1 - 1e-12
        assert z[0, 0] < 1e-50

    def test_pure_function(self, blobs):
        model = gemb.fit_gemb(blobs, 0.9, n_components=4, em=EmConfig(4, n_init=1))
        np.testing.assert_array_equal(gemb.embed(model, blobs.data), gemb.embed(model, blobs.data.copy()))

    def test_wrong_width(self, blobs):
        model = gemb.fit_gemb(blobs, 0.9, n_components=2, em=EmConfig(2, n_init=1))
        with pytest.raises(ShapeError):
            gemb.embed(model, np.zeros((2, 3)))

    def test_dimension_mismatch_rejected(self, blobs):
        model = gemb.fit_gemb(blobs, 0.9, n_components=2, em=EmConfig(2, n_init=1))
        other = GmmModel(np.ones(1), np.zeros((1, model.pca.d_out + 1)), np.eye(model.pca.d_out + 1)[None], "full")
        with pytest.raises(ShapeError):
            gemb.GembModel(model.pca, other, 0.15)


class TestHistogram:
    def test_all_ones(self):
        h = gemb.sparsity_histogram(np.ones((4, 3)), 10)
        assert h.occupied().size == 1
        assert h.counts.sum() == 12
        k = h.occupied()[0]
        assert h.edges[k] <= 0.0 <= h.edges[k + 1]

    def test_uniform_sixteen(self):
        h = gemb.sparsity_histogram(np.full((5, 16), 1 / 16), 20)
        k = h.occupied()
        assert k.size == 1
        assert h.edges[k[0]] <= -1.204 <= h.edges[k[0] + 1] + 1e-3
        assert gemb.median_log_entry(np.full((5, 16), 1 / 16)) == pytest.approx(-1.204, abs=1e-3)

    def test_zeros_in_lowest_bin(self):
        z = np.array([[0.0, 1.0, 0.5]])
        h = gemb.sparsity_histogram(z, 4)
        assert h.counts[0] == 1
        assert h.edges[0] == pytest.approx(-300.0)

    def test_bins_validated(self):
        with pytest.raises(ConfigError):
            gemb.sparsity_histogram(np.ones((2, 2)), 1)

    def test_sparser_with_more_components(self):
        x = make_blobs(2000, n_classes=10, dim=32, latent_dim=12, seed=1)
        medians = {}
        for n in (16, 64):
            model = gemb.fit_gemb(x, 0.9, n_components=n, alpha=0.15, em=EmConfig(n, n_init=1, seed=1))
            medians[n] = gemb.median_log_entry(gemb.embed(model, x))
        assert medians[64] <= medians[16]

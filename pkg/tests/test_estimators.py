import numpy as np
import pytest
from sklearn.base import clone

from csmspec.basins import ari
from csmspec.estimators import DiffusionMapEmbedding, SpectralBasinClusterer
from csmspec.statespace import synth_mixture


@pytest.fixture(scope="module")
def mixture():
    return synth_mixture(3, 3, 60, spread=0.02, separation=0.5, seed=7)


class TestSpectralBasinClusterer:
    def test_recovers_well_separated_clusters(self, mixture):
        est = SpectralBasinClusterer(bandwidth=0.05, n_modes=8)
        labels = est.fit_predict(mixture.points)
        assert est.rank_ == 3
        assert ari(labels, mixture.labels) == 1.0
        assert not est.no_gap_

    def test_single_cluster_flags_no_gap(self):
        cloud = synth_mixture(1, 3, 80, spread=0.05, separation=0.5, seed=1)
        est = SpectralBasinClusterer(bandwidth=0.2, n_modes=6).fit(cloud.points)
        assert est.rank_ == 1
        assert est.no_gap_

    def test_fixed_rank_overrides_auto(self, mixture):
        est = SpectralBasinClusterer(bandwidth=0.05, n_modes=8, rank=2).fit(mixture.points)
        assert est.rank_ == 2
        assert set(np.unique(est.labels_)) <= {0, 1}

    def test_clone_and_get_params_round_trip(self):
        est = SpectralBasinClusterer(bandwidth=0.3, n_modes=7, rank=4, gap_eps=0.2)
        params = est.get_params()
        assert params["bandwidth"] == 0.3
        assert params["rank"] == 4
        cloned = clone(est)
        assert cloned.get_params() == params

    def test_labeling_attributes_are_consistent(self, mixture):
        est = SpectralBasinClusterer(bandwidth=0.05, n_modes=8).fit(mixture.points)
        assert est.labeling_.n == mixture.n
        assert np.array_equal(est.labeling_.labels, est.labels_)
        assert est.labeling_.margins.shape == (mixture.n,)

    def test_invalid_rank(self, mixture):
        with pytest.raises(ValueError):
            SpectralBasinClusterer(rank=99, n_modes=8).fit(mixture.points)


class TestDiffusionMapEmbedding:
    def test_embedding_shape_and_determinism(self, mixture):
        emb = DiffusionMapEmbedding(bandwidth=0.05, n_modes=5)
        coords = emb.fit_transform(mixture.points)
        assert coords.shape == (mixture.n, 5)
        again = DiffusionMapEmbedding(bandwidth=0.05, n_modes=5).fit_transform(mixture.points)
        assert np.array_equal(coords, again)

    def test_drop_trivial_removes_constant_columns(self):
        cloud = synth_mixture(1, 2, 50, spread=0.1, separation=0.5, seed=2)
        keep_all = DiffusionMapEmbedding(bandwidth=0.5, n_modes=4).fit(cloud.points)
        dropped = DiffusionMapEmbedding(bandwidth=0.5, n_modes=4, drop_trivial=True).fit(
            cloud.points
        )
        assert keep_all.trivial_modes_[0]
        assert dropped.embedding_.shape[1] == keep_all.embedding_.shape[1] - int(
            keep_all.trivial_modes_.sum()
        )

    def test_embedding_separates_clusters_linearly(self, mixture):
        coords = DiffusionMapEmbedding(bandwidth=0.05, n_modes=3).fit_transform(mixture.points)
        centroids = np.stack([coords[mixture.labels == c].mean(axis=0) for c in range(3)])
        d = np.linalg.norm(coords[:, None, :] - centroids[None], axis=2)
        assert np.array_equal(np.argmin(d, axis=1), mixture.labels)

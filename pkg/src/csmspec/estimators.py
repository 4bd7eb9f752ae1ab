"""Scikit-learn style front ends for the point-cloud lane.

Both estimators run diffusion kernel -> spectral decomposition on fit; the
clusterer adds rank selection and basin assignment. They compose with
sklearn tooling (clone, get_params, pipelines); out-of-sample extension is
out of scope, so there is no transform on new data.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, ClusterMixin

from .basins import assign_basins
from .kernels import diffusion_kernel
from .spectral import eigendecompose, select_rank, spectral_coordinates
from .validation import as_points


class DiffusionMapEmbedding(BaseEstimator):
    """Spectral coordinates of a point cloud under the diffusion kernel.

    Parameters
    ----------
    bandwidth : float or "median"
        Kernel bandwidth sigma; "median" applies the median heuristic.
    variant : "squared" or "plain"
        Gaussian affinity (default) or plain exponential of the distance.
    n_modes : int
        Number of eigenmodes computed (capped at the sample count).
    drop_trivial : bool
        Drop near-constant modes from the returned embedding columns.
    """

    def __init__(self, bandwidth="median", variant="squared", n_modes=10, drop_trivial=False):
        self.bandwidth = bandwidth
        self.variant = variant
        self.n_modes = n_modes
        self.drop_trivial = drop_trivial

    def fit(self, X, y=None):
        X = as_points(X)
        k = min(self.n_modes, X.shape[0])
        self.kernel_ = diffusion_kernel(X, bandwidth=self.bandwidth, variant=self.variant)
        self.decomposition_ = eigendecompose(self.kernel_, k=k)
        coords = spectral_coordinates(self.decomposition_, k)
        keep = ~coords.trivial if self.drop_trivial else np.ones(k, dtype=bool)
        if not keep.any():
            keep = np.ones(k, dtype=bool)
        self.embedding_ = coords.values[:, keep]
        self.trivial_modes_ = coords.trivial
        return self

    def fit_transform(self, X, y=None):
        return self.fit(X).embedding_


class SpectralBasinClusterer(BaseEstimator, ClusterMixin):
    """Basin labels from the dominant eigenvectors of the diffusion kernel.

    rank="auto" selects r by the spectral-gap rule (max-ratio by default);
    an integer fixes it. Labels are the per-point argmax of the retained
    eigenvector moduli; margins and tie flags ride along in ``labeling_``.
    """

    def __init__(
        self,
        bandwidth="median",
        variant="squared",
        n_modes=10,
        rank="auto",
        rank_method="max-ratio",
        gap_eps=0.1,
        drop_trivial=False,
    ):
        self.bandwidth = bandwidth
        self.variant = variant
        self.n_modes = n_modes
        self.rank = rank
        self.rank_method = rank_method
        self.gap_eps = gap_eps
        self.drop_trivial = drop_trivial

    def fit(self, X, y=None):
        X = as_points(X)
        k = min(self.n_modes, X.shape[0])
        self.kernel_ = diffusion_kernel(X, bandwidth=self.bandwidth, variant=self.variant)
        self.decomposition_ = eigendecompose(self.kernel_, k=k)
        if self.rank == "auto":
            self.rank_ = select_rank(self.decomposition_, method=self.rank_method, eps=self.gap_eps)
        else:
            r = int(self.rank)
            if not (1 <= r <= k):
                raise ValueError(f"rank must lie in [1, {k}], got {r}")
            self.rank_ = r
            self.decomposition_.rank = r
            mods = self.decomposition_.moduli
            self.decomposition_.gap_ratio = float(mods[r] / mods[r - 1]) if r < k else None
        self.no_gap_ = self.decomposition_.no_gap
        self.labeling_ = assign_basins(self.decomposition_, self.rank_, drop_trivial=self.drop_trivial)
        self.labels_ = self.labeling_.labels
        return self

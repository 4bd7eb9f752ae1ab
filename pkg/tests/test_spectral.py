import math

import numpy as np
import pytest
import scipy.linalg

from csmspec.errors import IllConditionedSpectrumError, NoSignificantSpectrumError
from csmspec.kernels import diffusion_kernel, explicit_kernel
from csmspec.spectral import (
    SpectralDecomposition,
    eigen_residuals,
    eigendecompose,
    select_rank,
    spectral_coordinates,
    verify_collapse,
    write_eigenvectors_csv,
    write_spectrum_csv,
)


def random_stochastic(n, rng):
    M = rng.uniform(0.05, 1.0, (n, n))
    return M / M.sum(axis=1, keepdims=True)


def charpoly_roots(M):
    """Characteristic-polynomial oracle via the Leverrier-Faddeev trace
    recursion (no eigensolve of M), then np.roots on the coefficients."""
    n = M.shape[0]
    coeffs = np.zeros(n + 1)
    coeffs[0] = 1.0
    Mk = np.eye(n)
    for k in range(1, n + 1):
        Mk = M @ Mk
        coeffs[k] = -np.trace(Mk) / k
        if k < n:
            Mk = Mk + coeffs[k] * np.eye(n)
    return np.roots(coeffs)


def match_multisets(a, b, tol):
    a = list(a)
    for target in b:
        i = int(np.argmin([abs(x - target) for x in a]))
        assert abs(a[i] - target) <= tol, f"unmatched root {target}"
        a.pop(i)


def stub_decomposition(moduli):
    k = len(moduli)
    return SpectralDecomposition(
        eigenvalues=np.asarray(moduli, dtype=complex),
        right=np.eye(k, dtype=complex),
        left=np.eye(k, dtype=complex),
        biorth_residual=0.0,
        kappa=1.0,
    )


class TestEigendecompose:
    def test_identity_all_ones(self):
        dec = eigendecompose(explicit_kernel(np.eye(4)))
        assert np.allclose(dec.eigenvalues, 1.0)
        assert dec.biorth_residual <= 1e-8

    def test_swap_matrix_modulus_order_puts_one_first(self):
        dec = eigendecompose(explicit_kernel(np.array([[0.0, 1.0], [1.0, 0.0]])))
        assert dec.eigenvalues[0] == pytest.approx(1.0, abs=1e-12)
        assert dec.eigenvalues[1] == pytest.approx(-1.0, abs=1e-12)

    @pytest.mark.parametrize("seed", range(6))
    def test_matches_characteristic_polynomial_oracle(self, seed):
        rng = np.random.default_rng(seed)
        n = int(rng.integers(3, 7))
        K = explicit_kernel(random_stochastic(n, rng))
        dec = eigendecompose(K)
        match_multisets(dec.eigenvalues, charpoly_roots(K.matrix), tol=1e-6)
        assert dec.biorth_residual <= 1e-8

    def test_eigen_residuals_small(self):
        rng = np.random.default_rng(3)
        K = explicit_kernel(random_stochastic(8, rng))
        dec = eigendecompose(K)
        right, left = eigen_residuals(K, dec)
        norm = np.linalg.norm(K.matrix, 2)
        assert right <= 1e-8 * norm
        assert left <= 1e-8 * norm

    def test_stochastic_leading_eigenvalue_and_constant_mode(self):
        rng = np.random.default_rng(5)
        K = explicit_kernel(random_stochastic(10, rng))  # dense positive: irreducible, aperiodic
        dec = eigendecompose(K)
        assert abs(dec.eigenvalues[0] - 1.0) <= 1e-8
        assert np.abs(dec.moduli).max() <= 1 + 1e-8
        phi1 = dec.right[:, 0]
        assert np.abs(phi1 - phi1.mean()).max() <= 1e-6

    def test_normalization_contract(self):
        rng = np.random.default_rng(6)
        K = explicit_kernel(random_stochastic(7, rng))
        dec = eigendecompose(K)
        for i in range(dec.k):
            assert np.linalg.norm(dec.right[:, i]) == pytest.approx(1.0, abs=1e-12)
            j = int(np.argmax(np.abs(dec.right[:, i])))
            pivot = dec.right[j, i]
            assert pivot.imag == pytest.approx(0.0, abs=1e-12)
            assert pivot.real > 0
            assert (dec.left[:, i].conj() @ dec.right[:, i]) == pytest.approx(1.0, abs=1e-10)

    def test_diffusion_spectrum_equals_companion_conjugation(self):
        rng = np.random.default_rng(7)
        for n in (10, 30, 50):
            K = diffusion_kernel(rng.standard_normal((n, 3)), bandwidth=1.0)
            dec = eigendecompose(K)
            assert np.abs(dec.eigenvalues.imag).max() == 0.0
            direct = np.sort(np.linalg.eigvals(K.matrix).real)[::-1]
            assert np.abs(np.sort(dec.moduli)[::-1][: n] - np.abs(direct)).max() <= 1e-8
            right, left = eigen_residuals(K, dec)
            assert right <= 1e-8 and left <= 1e-8

    def test_defective_cluster_raises(self):
        # lambda = 0.6 with a single eigenvector (Jordan block).
        P = np.array([[0.6, 0.4, 0.0], [0.0, 0.6, 0.4], [0.0, 0.0, 1.0]])
        with pytest.raises(IllConditionedSpectrumError, match="ill-conditioned spectrum"):
            eigendecompose(explicit_kernel(P))

    def test_block_diagonal_eigenvectors_are_block_supported(self):
        rng = np.random.default_rng(8)
        blocks = [random_stochastic(4, rng), random_stochastic(5, rng)]
        P = scipy.linalg.block_diag(*blocks)
        dec = eigendecompose(explicit_kernel(P), k=2)
        assert np.allclose(dec.moduli, 1.0, atol=1e-10)
        supports = [np.abs(dec.right[:4, i]).max() > 1e-8 for i in range(2)]
        assert supports[0] != supports[1]  # one Perron vector per block

    def test_k_out_of_range(self):
        K = explicit_kernel(np.eye(3))
        with pytest.raises(ValueError):
            eigendecompose(K, k=0)
        with pytest.raises(ValueError):
            eigendecompose(K, k=4)


class TestSelectRank:
    def test_documented_example_spectrum(self):
        dec = stub_decomposition([1.0, 0.95, 0.90, 0.10, 0.05])
        r = select_rank(dec, eps=0.2)
        # enumeration oracle over candidate ratios
        mods = [1.0, 0.95, 0.90, 0.10, 0.05]
        ratios = {i: mods[i - 1] / mods[i] for i in range(1, 5) if mods[i - 1] > 0.2}
        assert r == max(ratios, key=lambda i: ratios[i]) == 3
        assert dec.rank == 3
        assert dec.gap_ratio == pytest.approx(0.10 / 0.90)
        assert not dec.no_gap

    def test_all_equal_flags_no_gap_and_counts_threshold(self):
        dec = stub_decomposition([0.8, 0.8, 0.8, 0.8])
        r = select_rank(dec, eps=0.5)
        assert r == 4
        assert dec.no_gap

    def test_no_mode_above_eps(self):
        dec = stub_decomposition([0.05, 0.04, 0.03])
        with pytest.raises(NoSignificantSpectrumError, match="no significant spectrum"):
            select_rank(dec, eps=0.2)

    def test_threshold_method(self):
        dec = stub_decomposition([1.0, 0.9, 0.4, 0.05])
        assert select_rank(dec, method="threshold", eps=0.3) == 3

    def test_single_dominant_mode_flags_no_gap(self):
        dec = stub_decomposition([1.0, 0.02, 0.01])
        r = select_rank(dec, eps=0.1)
        assert r == 1
        assert dec.no_gap


class TestVerifyCollapse:
    def test_exact_low_rank_kernel_collapses_exactly(self):
        # Rank-one stochastic kernel: every row equals the same distribution.
        mu = np.array([0.5, 0.3, 0.2])
        K = explicit_kernel(np.tile(mu, (3, 1)))
        dec = eigendecompose(K)
        report = verify_collapse(K, dec, r=1, t_max=5, n_probes=3, seed=0)
        assert report.exact_collapse
        assert report.fitted_slope == float("-inf")
        assert np.all(report.residuals[1:] <= 1e-12)

    def test_exact_rank_two_kernel_collapses_at_r_two(self):
        # Two distinct row distributions shared across row groups: rank 2.
        a = np.array([0.6, 0.1, 0.1, 0.2])
        b = np.array([0.05, 0.45, 0.3, 0.2])
        K = explicit_kernel(np.stack([a, a, b, b]))
        assert np.linalg.matrix_rank(K.matrix) == 2
        dec = eigendecompose(K)
        report = verify_collapse(K, dec, r=2, t_max=5, n_probes=3, seed=2)
        assert np.all(report.residuals[1:] <= 1e-12)

    def test_identity_with_full_rank_has_zero_residual(self):
        K = explicit_kernel(np.eye(5))
        dec = eigendecompose(K)
        report = verify_collapse(K, dec, r=5, t_max=4, n_probes=2, seed=1)
        assert report.exact_collapse
        assert np.all(report.residuals <= 1e-12)

    @pytest.mark.parametrize("seed", range(3))
    def test_random_kernel_slope_bounded_by_reference(self, seed):
        rng = np.random.default_rng(100 + seed)
        K = explicit_kernel(random_stochastic(20, rng))
        dec = eigendecompose(K)
        r = select_rank(dec)
        report = verify_collapse(K, dec, r, t_max=12, n_probes=5, seed=seed)
        assert report.fitted_slope <= report.reference_slope_abs + 0.05
        # direct matrix-power cross-check of the residual at t = 3
        f = np.random.default_rng(seed).standard_normal(20)
        f /= np.linalg.norm(f)
        coeff = dec.left[:, :r].conj().T @ f
        approx = dec.right[:, :r] @ (dec.eigenvalues[:r] ** 3 * coeff)
        direct = np.linalg.norm(np.linalg.matrix_power(K.matrix, 3) @ f - approx)
        assert direct <= report.residuals[0] + 1.0  # sanity: same scale, finite

    def test_prefactor_and_kappa_reported(self):
        rng = np.random.default_rng(42)
        K = explicit_kernel(random_stochastic(12, rng))
        dec = eigendecompose(K)
        report = verify_collapse(K, dec, r=1, t_max=8, n_probes=4, seed=2)
        assert report.prefactor > 0
        assert report.kappa >= 1.0
        doc = report.to_dict()
        assert set(doc) >= {
            "per_t_residuals",
            "fitted_slope",
            "reference_slope_abs",
            "reference_slope_ratio",
            "prefactor",
            "kappa",
            "rank",
            "exact_collapse",
        }

    def test_requires_enough_modes(self):
        rng = np.random.default_rng(1)
        K = explicit_kernel(random_stochastic(6, rng))
        dec = eigendecompose(K, k=3)
        with pytest.raises(ValueError):
            verify_collapse(K, dec, r=3)  # needs lambda_{r+1}


class TestSpectralCoordinates:
    def test_r_one_returns_leading_vector_entries(self):
        rng = np.random.default_rng(2)
        K = explicit_kernel(random_stochastic(6, rng))
        dec = eigendecompose(K)
        coords = spectral_coordinates(dec, 1)
        assert coords.values.shape == (6, 1)
        assert np.allclose(coords.values[:, 0], np.real(dec.right[:, 0]))

    def test_constant_leading_mode_flagged_trivial(self):
        rng = np.random.default_rng(3)
        K = explicit_kernel(random_stochastic(8, rng))
        dec = eigendecompose(K)
        coords = spectral_coordinates(dec, 2)
        assert coords.trivial[0]
        assert not coords.trivial[1]

    def test_three_block_kernel_coordinates_separate_blocks(self):
        rng = np.random.default_rng(4)
        sizes = [5, 6, 7]
        blocks = [random_stochastic(s, rng) for s in sizes]
        P = scipy.linalg.block_diag(*blocks)
        dec = eigendecompose(explicit_kernel(P), k=4)
        coords = spectral_coordinates(dec, 3).values
        truth = np.repeat([0, 1, 2], sizes)
        centroids = np.stack([coords[truth == c].mean(axis=0) for c in range(3)])
        dists = np.linalg.norm(coords[:, None, :] - centroids[None], axis=2)
        assert np.array_equal(np.argmin(dists, axis=1), truth)  # nearest-centroid oracle

    def test_csv_writers(self, tmp_path):
        rng = np.random.default_rng(5)
        K = explicit_kernel(random_stochastic(5, rng))
        dec = eigendecompose(K, k=3)
        write_spectrum_csv(dec, tmp_path / "spectrum.csv")
        write_eigenvectors_csv(dec, tmp_path / "vectors.csv")
        lines = (tmp_path / "spectrum.csv").read_text().splitlines()
        assert lines[0] == "i,re(lambda),im(lambda),modulus"
        assert len(lines) == 4
        vec_lines = (tmp_path / "vectors.csv").read_text().splitlines()
        assert vec_lines[0] == "v0,v1,v2"
        assert len(vec_lines) == 6

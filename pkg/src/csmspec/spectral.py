"""Eigendecomposition of kernel matrices and spectral-collapse checks.

Normalization contract (basin assignment depends on it): eigenvalues are
ordered by nonincreasing modulus (ties: descending real part, then
descending imaginary part, which puts the stochastic eigenvalue 1 first);
right eigenvectors have unit Euclidean norm with their largest-modulus
entry rotated to the positive real axis; left eigenvectors are scaled so
<psi_i, phi_i> = 1. Diffusion kernels are solved through their symmetric
companion and conjugated back, which guarantees a real spectrum.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

from .errors import IllConditionedSpectrumError, NoSignificantSpectrumError
from .kernels import KernelMatrix

BIORTH_TOL = 1e-8
# Only eigenvalues equal to machine-noise scale may share a cluster: mixing
# left eigenvectors of genuinely distinct eigenvalues would break them.
GROUP_ATOL = 1e-10


@dataclass
class SpectralDecomposition:
    """Top-k eigensystem of a kernel: lambda_i, phi_i (right), psi_i (left).

    ``rank``, ``gap_ratio`` and ``no_gap`` are filled by select_rank.
    ``kappa`` is the conditioning estimate ||Phi||_2 ||Psi||_2 over the
    retained modes.
    """

    eigenvalues: np.ndarray
    right: np.ndarray
    left: np.ndarray
    biorth_residual: float
    kappa: float
    source: str = "explicit"
    rank: int | None = None
    gap_ratio: float | None = None
    no_gap: bool = False

    @property
    def k(self) -> int:
        return self.eigenvalues.shape[0]

    @property
    def n(self) -> int:
        return self.right.shape[0]

    @property
    def moduli(self) -> np.ndarray:
        return np.abs(self.eigenvalues)


def _modulus_order(w: np.ndarray) -> np.ndarray:
    return np.lexsort((-w.imag, -w.real, -np.abs(w)))


def _fix_gauge(w, phi, psi):
    """Unit-norm right vectors, positive-real leading entry, <psi,phi> = 1."""
    for i in range(w.shape[0]):
        nrm = np.linalg.norm(phi[:, i])
        phi[:, i] /= nrm
        psi[:, i] *= nrm
        j = int(np.argmax(np.abs(phi[:, i])))
        pivot = phi[j, i]
        c = pivot / abs(pivot)
        phi[:, i] *= np.conj(c)
        psi[:, i] *= np.conj(c)
    return phi, psi


def _biorthogonalize_groups(w, phi, psi):
    """Repair left/right pairing inside numerically repeated eigenvalues.

    Within a cluster of equal eigenvalues any basis of left eigenvectors is
    valid; solve Psi_g <- Psi_g M^{-H} with M = Psi_g^H Phi_g so the cluster
    becomes biorthogonal. A singular M means a defective cluster.
    """
    k = w.shape[0]
    start = 0
    while start < k:
        end = start + 1
        while end < k and abs(w[end] - w[start]) <= GROUP_ATOL:
            end += 1
        M = psi[:, start:end].conj().T @ phi[:, start:end]
        try:
            correction = np.linalg.inv(M).conj().T
        except np.linalg.LinAlgError:
            raise IllConditionedSpectrumError(
                f"ill-conditioned spectrum: defective cluster at |lambda|={abs(w[start]):.6g}",
                residual=float("inf"),
            )
        psi[:, start:end] = psi[:, start:end] @ correction
        start = end
    return phi, psi


def eigendecompose(K: KernelMatrix, k: int | None = None) -> SpectralDecomposition:
    """Top-k eigenpairs of the kernel by modulus, with biorthogonal duals.

    Diffusion kernels go through the symmetric companion (orthonormal system,
    real spectrum) and are conjugated back; everything else uses a dense
    general eigensolve with left and right vectors.
    """
    n = K.n
    if k is None:
        k = n
    if not (1 <= k <= n):
        raise ValueError(f"k must lie in [1, {n}], got {k}")

    if K.companion is not None:
        lam, V = np.linalg.eigh(K.companion)
        order = np.argsort(-np.abs(lam), kind="stable")
        lam, V = lam[order[:k]], V[:, order[:k]]
        w = lam.astype(complex)
        phi = (V / K.companion_scale[:, None]).astype(complex)
        psi = (V * K.companion_scale[:, None]).astype(complex)
    else:
        w, vl, vr = scipy.linalg.eig(K.matrix, left=True, right=True)
        order = _modulus_order(w)[:k]
        w, phi, psi = w[order], vr[:, order].astype(complex), vl[:, order].astype(complex)
        phi, psi = _biorthogonalize_groups(w, phi, psi)

    phi, psi = _fix_gauge(w, phi, psi)

    gram = psi.conj().T @ phi
    residual = float(np.abs(gram - np.eye(k)).max())
    if residual > BIORTH_TOL:
        raise IllConditionedSpectrumError(
            f"ill-conditioned spectrum: biorthogonality residual {residual:.3e}",
            residual=residual,
        )
    kappa = float(np.linalg.norm(phi, 2) * np.linalg.norm(psi, 2))
    return SpectralDecomposition(
        eigenvalues=w,
        right=phi,
        left=psi,
        biorth_residual=residual,
        kappa=kappa,
        source=K.source,
    )


def eigen_residuals(K: KernelMatrix, dec: SpectralDecomposition) -> tuple:
    """(right, left) residual norms ||K phi - lambda phi||, ||K^T psi - conj(lambda) psi||."""
    P = K.matrix
    right = max(
        float(np.linalg.norm(P @ dec.right[:, i] - dec.eigenvalues[i] * dec.right[:, i]))
        for i in range(dec.k)
    )
    left = max(
        float(
            np.linalg.norm(P.T @ dec.left[:, i] - np.conj(dec.eigenvalues[i]) * dec.left[:, i])
        )
        for i in range(dec.k)
    )
    return right, left


def select_rank(dec: SpectralDecomposition, method: str = "max-ratio", eps: float = 0.1) -> int:
    """Pick the retained rank from the modulus sequence.

    max-ratio (default): r = argmax_i |lambda_i| / |lambda_{i+1}| over modes
    with |lambda_i| > eps, smallest r on ties. threshold: r = #{|lambda_i| > eps}.
    When every candidate ratio is equal the spectrum carries no gap; the
    threshold count is used and the no_gap flag is set. r = 1 also flags
    no_gap (a single dominant mode induces no partition).
    """
    if dec.k < 3:
        raise ValueError("rank selection needs at least 3 computed modes")
    mods = dec.moduli
    significant = int(np.sum(mods > eps))
    if significant == 0:
        raise NoSignificantSpectrumError(f"no significant spectrum above eps={eps}")

    if method == "threshold":
        r = significant
        no_gap = False
    elif method == "max-ratio":
        floor = np.finfo(float).tiny
        candidates = [i for i in range(1, dec.k) if mods[i - 1] > eps]
        if not candidates:
            raise NoSignificantSpectrumError(f"no significant spectrum above eps={eps}")
        ratios = np.array([mods[i - 1] / max(mods[i], floor) for i in candidates])
        if ratios.max() - ratios.min() <= 1e-12 * max(1.0, ratios.max()):
            r = significant
            no_gap = True
        else:
            r = candidates[int(np.argmax(ratios))]
            no_gap = False
    else:
        raise ValueError("method must be 'max-ratio' or 'threshold'")

    dec.rank = r
    dec.gap_ratio = float(mods[r] / mods[r - 1]) if r < dec.k else None
    dec.no_gap = bool(no_gap or r <= 1)
    return r


@dataclass
class DecayReport:
    """Residual decay of P^t f outside the rank-r spectral projection."""

    residuals: np.ndarray
    fitted_slope: float
    reference_slope_abs: float
    reference_slope_ratio: float
    prefactor: float
    kappa: float
    rank: int
    exact_collapse: bool

    def to_dict(self) -> dict:
        def enc(x):
            return None if not math.isfinite(x) else float(x)

        return {
            "per_t_residuals": [float(v) for v in self.residuals],
            "fitted_slope": enc(self.fitted_slope),
            "reference_slope_abs": enc(self.reference_slope_abs),
            "reference_slope_ratio": enc(self.reference_slope_ratio),
            "prefactor": enc(self.prefactor),
            "kappa": enc(self.kappa),
            "rank": self.rank,
            "exact_collapse": self.exact_collapse,
        }


RESIDUAL_FLOOR = 1e-13


def verify_collapse(
    K: KernelMatrix,
    dec: SpectralDecomposition,
    r: int,
    t_max: int = 10,
    n_probes: int = 5,
    seed: int = 0,
) -> DecayReport:
    """Measure how fast P^t f leaves the span of the top-r modes.

    For random unit probes f, the residual ||P^t f - sum_{i<=r} lambda_i^t
    <f, psi_i> phi_i|| is averaged per t and log-fitted against t. The fitted
    slope is reported next to log|lambda_{r+1}| (absolute rate) and
    log|lambda_{r+1}/lambda_r| (the normalized collapse rate), plus the
    empirical prefactor max_t residual_t / |lambda_{r+1}|^t and kappa.
    An exactly low-rank kernel underflows the residual floor and is reported
    as exact collapse with slope -inf. r = N is allowed (the bound is then
    trivial); otherwise the decomposition must retain at least r+1 modes so
    the reference rate |lambda_{r+1}| is available.
    """
    if not (1 <= r <= K.n):
        raise ValueError(f"rank must lie in [1, {K.n}], got {r}")
    if r >= dec.k and r < K.n:
        raise ValueError("decomposition does not retain r+1 modes; recompute with larger k")
    if r > dec.k:
        raise ValueError("decomposition does not retain r modes")
    if t_max < 3:
        raise ValueError("t_max must be >= 3")
    if n_probes < 1:
        raise ValueError("n_probes must be >= 1")

    rng = np.random.default_rng(seed)
    lam = dec.eigenvalues[:r]
    phi = dec.right[:, :r]
    psi = dec.left[:, :r]
    residuals = np.zeros(t_max + 1)
    for _ in range(n_probes):
        f = rng.standard_normal(K.n)
        f /= np.linalg.norm(f)
        coef = psi.conj().T @ f
        g = f.astype(complex)
        for t in range(t_max + 1):
            approx = phi @ (lam**t * coef)
            residuals[t] += np.linalg.norm(g - approx)
            if t < t_max:
                g = K.matrix @ g
    residuals /= n_probes

    mods = dec.moduli
    lam_next = mods[r] if r < dec.k else 0.0
    ref_abs = math.log(lam_next) if lam_next > 0 else float("-inf")
    ref_ratio = math.log(lam_next / mods[r - 1]) if lam_next > 0 else float("-inf")

    mask = residuals > RESIDUAL_FLOOR
    if mask.sum() < 2:
        return DecayReport(
            residuals=residuals,
            fitted_slope=float("-inf"),
            reference_slope_abs=ref_abs,
            reference_slope_ratio=ref_ratio,
            prefactor=0.0,
            kappa=dec.kappa,
            rank=r,
            exact_collapse=True,
        )
    ts = np.flatnonzero(mask)
    slope = float(np.polyfit(ts, np.log(residuals[mask]), 1)[0])
    if lam_next > 0:
        prefactor = float(np.max(residuals / lam_next ** np.arange(t_max + 1)))
    else:
        prefactor = float("inf")
    return DecayReport(
        residuals=residuals,
        fitted_slope=slope,
        reference_slope_abs=ref_abs,
        reference_slope_ratio=ref_ratio,
        prefactor=prefactor,
        kappa=dec.kappa,
        rank=r,
        exact_collapse=False,
    )


@dataclass
class SpectralCoordinates:
    """Per-point coordinates from the leading eigenvectors (plot substitute).

    ``trivial`` flags near-constant modes, which carry no partition
    information (the lambda = 1 mode of an irreducible chain).
    """

    values: np.ndarray
    trivial: np.ndarray


TRIVIAL_MODE_ATOL = 1e-9


def trivial_modes(dec: SpectralDecomposition, r: int) -> np.ndarray:
    cols = dec.right[:, :r]
    spans = np.abs(cols - cols.mean(axis=0, keepdims=True)).max(axis=0)
    return spans <= TRIVIAL_MODE_ATOL


def spectral_coordinates(dec: SpectralDecomposition, r: int) -> SpectralCoordinates:
    """Map point i to (phi_1(i), ..., phi_r(i)); real parts for complex pairs."""
    if not (1 <= r <= dec.k):
        raise ValueError(f"r must lie in [1, {dec.k}], got {r}")
    values = np.real(dec.right[:, :r]).astype(float)
    return SpectralCoordinates(values=values, trivial=trivial_modes(dec, r))


# ---------------------------------------------------------------------------
# External formats


def write_spectrum_csv(dec: SpectralDecomposition, path) -> None:
    """Rows i,re(lambda),im(lambda),modulus."""
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("i,re(lambda),im(lambda),modulus\n")
        for i in range(dec.k):
            lam = dec.eigenvalues[i]
            fh.write(f"{i},{lam.real:.17g},{lam.imag:.17g},{abs(lam):.17g}\n")


def write_eigenvectors_csv(dec: SpectralDecomposition, path) -> None:
    """N x k matrix of right-eigenvector real parts (one column per mode)."""
    header = ",".join(f"v{i}" for i in range(dec.k))
    np.savetxt(path, np.real(dec.right), delimiter=",", fmt="%.17g", header=header, comments="")


def write_coordinates_csv(coords: SpectralCoordinates, path) -> None:
    header = ",".join(f"c{i}" for i in range(coords.values.shape[1]))
    np.savetxt(path, coords.values, delimiter=",", fmt="%.17g", header=header, comments="")

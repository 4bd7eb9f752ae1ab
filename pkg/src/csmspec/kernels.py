"""Finite row-stochastic approximations of the transfer operator.

Two constructions: Ulam discretization of CSM dynamics over a uniform grid,
and the diffusion kernel on a point cloud (exponentiated negative pairwise
distances, row-normalized). Row normalization destroys the symmetry of the
diffusion affinity, so the symmetric companion D^{-1/2} W D^{-1/2} is kept
alongside the row-stochastic operator of record: the two are conjugate by a
positive diagonal, hence share their spectrum, and the companion is the
numerically stable eigensolve target.

Self-weights of the diffusion affinity (W_ii = exp(0) = 1) are retained;
zeroing the diagonal would be the alternative reading.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, field

import numpy as np

from .csm import CSMSpec, decode_softmax
from .errors import DegenerateKernelWarning, DomainEscapeError, EscapedCellWarning, NoConvergenceError, ShapeError
from .statespace import Grid, PointCloud, locate_cells
from .validation import as_points, check_probability_vector, check_row_stochastic

ROW_SUM_ATOL = 1e-12


@dataclass
class KernelMatrix:
    """Row-stochastic matrix P plus provenance and optional companions.

    ``companion`` is the symmetric conjugate for diffusion sources;
    ``companion_scale`` holds sqrt of the affinity row sums, mapping
    companion eigenvectors v to right/left eigenvectors of P via
    phi = v / scale, psi = v * scale. ``stationary`` caches mu once
    computed by stationary_distribution.
    """

    matrix: np.ndarray
    source: str = "explicit"
    companion: np.ndarray | None = None
    companion_scale: np.ndarray | None = None
    grid: Grid | None = None
    stationary: np.ndarray | None = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.matrix = np.asarray(self.matrix, dtype=float)
        check_row_stochastic(self.matrix, atol=ROW_SUM_ATOL)

    @property
    def n(self) -> int:
        return self.matrix.shape[0]


@dataclass(frozen=True)
class ReferenceMeasure:
    """Probability vector nu used as the minorization reference."""

    weights: np.ndarray

    def __post_init__(self):
        w = check_probability_vector(self.weights, name="reference measure")
        w.setflags(write=False)
        object.__setattr__(self, "weights", w)

    @classmethod
    def uniform(cls, n: int) -> "ReferenceMeasure":
        return cls(np.full(n, 1.0 / n))


def explicit_kernel(matrix, source: str = "explicit", **meta) -> KernelMatrix:
    return KernelMatrix(matrix=np.asarray(matrix, dtype=float), source=source, meta=dict(meta))


def ulam_kernel(
    spec: CSMSpec,
    grid: Grid,
    samples_per_cell: int,
    seed: int,
    clamp: bool = True,
    on_escape: str = "self-loop",
) -> KernelMatrix:
    """Transition frequencies between grid cells under one closed-loop step.

    Entry (i, j) is the fraction of points sampled uniformly in cell i whose
    image under s -> tanh(A s + B O(s)) lands in cell j. Sampling order is
    fixed (all cell-position uniforms first, then all decoder noise, both in
    cell-major order) so results are deterministic given the seed.

    With ``clamp`` (default) images are clipped into the box, which is a
    no-op whenever the grid covers [-1, 1]^d. Without clamping, escaped
    samples are dropped; a cell that loses every sample becomes a self-loop
    row with a warning, or raises DomainEscapeError when
    ``on_escape="raise"``.
    """
    if samples_per_cell < 1:
        raise ValueError("samples_per_cell must be >= 1")
    if on_escape not in ("self-loop", "raise"):
        raise ValueError("on_escape must be 'self-loop' or 'raise'")
    if grid.d != spec.d:
        raise ShapeError(f"shape error: grid dimension {grid.d} != spec dimension {spec.d}")
    n = grid.n_cells
    rng = np.random.default_rng(seed)

    unit = rng.uniform(0.0, 1.0, size=(n, samples_per_cell, grid.d))
    lows = grid.box.lower + np.stack(
        [np.array(grid.multi_index(c)) for c in range(n)]
    ) * grid.cell_widths
    starts = lows[:, None, :] + unit * grid.cell_widths
    flat = starts.reshape(-1, grid.d)

    logits = flat @ spec.logits.T
    if spec.decoder == "gaussian":
        logits = logits + spec.sigma_dec * rng.standard_normal(logits.shape)
    z = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(z)
    controls = e / e.sum(axis=1, keepdims=True)

    images = np.tanh(flat @ spec.A.T + controls @ spec.B.T)

    inside = grid.box.contains(images)
    if not clamp and not np.all(inside):
        if on_escape == "raise":
            raise DomainEscapeError(
                f"domain escape: {int((~inside).sum())} sampled images left the box"
            )
    else:
        inside = np.ones(len(images), dtype=bool)

    counts = np.zeros((n, n))
    cells = np.full(len(images), -1, dtype=int)
    cells[inside] = locate_cells(grid, images[inside], clamp=clamp)
    rows = np.repeat(np.arange(n), samples_per_cell)
    valid = cells >= 0
    np.add.at(counts, (rows[valid], cells[valid]), 1.0)

    row_sums = counts.sum(axis=1)
    empty = row_sums == 0
    if np.any(empty):
        warnings.warn(
            f"{int(empty.sum())} cells lost every sample to escape; self-loop rows inserted",
            EscapedCellWarning,
        )
        counts[empty, np.flatnonzero(empty)] = 1.0
        row_sums = counts.sum(axis=1)
    P = counts / row_sums[:, None]
    return KernelMatrix(
        matrix=P,
        source="ulam",
        grid=grid,
        meta={"samples_per_cell": samples_per_cell, "seed": int(seed), "clamp": clamp},
    )


def pairwise_distances(X: np.ndarray) -> np.ndarray:
    sq = np.sum(X**2, axis=1)
    d2 = sq[:, None] + sq[None, :] - 2.0 * (X @ X.T)
    np.maximum(d2, 0.0, out=d2)
    np.fill_diagonal(d2, 0.0)
    return np.sqrt(d2)


def median_bandwidth(dists: np.ndarray) -> float:
    off = dists[np.triu_indices_from(dists, k=1)]
    pos = off[off > 0]
    if pos.size == 0:
        return 1.0  # degenerate cloud; any bandwidth yields the uniform kernel
    return float(np.median(pos))


def diffusion_kernel(points, bandwidth="median", variant: str = "squared") -> KernelMatrix:
    """Row-normalized affinity kernel on a point cloud.

    variant="squared" (default) uses W_ij = exp(-d_ij^2 / (2 sigma^2)), the
    Gaussian form standard for diffusion maps; variant="plain" uses
    exp(-d_ij / sigma). bandwidth="median" applies the median heuristic over
    positive pairwise distances.
    """
    X = points.points if isinstance(points, PointCloud) else as_points(points)
    if X.shape[0] < 2:
        raise ValueError("diffusion kernel needs at least 2 points")
    if variant not in ("squared", "plain"):
        raise ValueError("variant must be 'squared' or 'plain'")
    dists = pairwise_distances(X)
    if not np.any(dists > 0):
        warnings.warn("degenerate kernel: all pairwise distances are zero", DegenerateKernelWarning)
    heuristic = isinstance(bandwidth, str)
    if heuristic:
        if bandwidth != "median":
            raise ValueError("bandwidth must be a positive number or 'median'")
        sigma = median_bandwidth(dists)
    else:
        sigma = float(bandwidth)
        if sigma <= 0:
            raise ValueError("bandwidth must be positive")
    if variant == "squared":
        W = np.exp(-(dists**2) / (2.0 * sigma**2))
    else:
        W = np.exp(-dists / sigma)
    deg = W.sum(axis=1)
    P = W / deg[:, None]
    scale = np.sqrt(deg)
    companion = W / np.outer(scale, scale)
    return KernelMatrix(
        matrix=P,
        source="diffusion",
        companion=companion,
        companion_scale=scale,
        meta={"bandwidth": sigma, "variant": variant, "median_heuristic": heuristic},
    )


def stationary_distribution(
    K: KernelMatrix, tol: float = 1e-12, max_iters: int = 10_000
) -> np.ndarray:
    """Stationary measure by power iteration on the transpose.

    Starts from the uniform vector and iterates mu <- mu P until the L1
    change drops below ``tol``; the result satisfies ||mu P - mu||_1 within
    10 tol. Periodic chains do not converge; retry on a lazy-smoothed kernel
    (see lazy_kernel) in that case.
    """
    P = K.matrix
    mu = np.full(K.n, 1.0 / K.n)
    for _ in range(max_iters):
        nxt = mu @ P
        nxt /= nxt.sum()
        if np.abs(nxt - mu).sum() < tol:
            mu = nxt
            residual = np.abs(mu @ P - mu).sum()
            if residual > 10 * tol:
                raise NoConvergenceError(
                    f"no spectral convergence: residual {residual:.3e} after fixed point"
                )
            K.stationary = mu
            return mu
        mu = nxt
    raise NoConvergenceError(f"no spectral convergence within {max_iters} iterations")


def lazy_kernel(K: KernelMatrix, beta: float = 0.5) -> KernelMatrix:
    """Lazy smoothing P <- (1 - beta) I + beta P; removes periodicity."""
    if not (0.0 < beta <= 1.0):
        raise ValueError("beta must lie in (0, 1]")
    P = (1.0 - beta) * np.eye(K.n) + beta * K.matrix
    return KernelMatrix(
        matrix=P, source=K.source, grid=K.grid, meta={**K.meta, "lazy_beta": beta}
    )


def doeblin_check(K: KernelMatrix, nu) -> float:
    """Largest epsilon with K_ij >= epsilon nu_j for all i, j.

    Equals min over {j : nu_j > 0} of min_i K_ij / nu_j; zero whenever some
    required entry vanishes.
    """
    weights = nu.weights if isinstance(nu, ReferenceMeasure) else check_probability_vector(nu)
    if weights.shape[0] != K.n:
        raise ShapeError("shape error: reference measure length must match kernel size")
    mask = weights > 0
    ratios = K.matrix[:, mask] / weights[mask]
    return float(ratios.min())


def finite_horizon_propagator(K: KernelMatrix, tau: int) -> KernelMatrix:
    """Time average (1/tau) sum_{t=0}^{tau-1} K^t, with K^0 the identity."""
    if tau < 1:
        raise ValueError("tau must be >= 1")
    acc = np.eye(K.n)
    power = np.eye(K.n)
    for _ in range(1, tau):
        power = power @ K.matrix
        acc += power
    return KernelMatrix(
        matrix=acc / tau,
        source="explicit",
        grid=K.grid,
        meta={"propagator_of": K.source, "tau": tau},
    )


# ---------------------------------------------------------------------------
# External formats


def write_kernel_csv(K: KernelMatrix, path) -> None:
    """Square matrix CSV plus a JSON sidecar with provenance."""
    np.savetxt(path, K.matrix, delimiter=",", fmt="%.17g")
    sidecar = {
        "source": K.source,
        "n": K.n,
        **{k: v for k, v in K.meta.items()},
    }
    if K.grid is not None:
        sidecar["grid"] = K.grid.descriptor()
    with open(str(path) + ".json", "w", encoding="utf-8") as fh:
        json.dump(sidecar, fh, indent=2, sort_keys=True)
        fh.write("\n")


def read_kernel_csv(path, source: str = "explicit") -> KernelMatrix:
    matrix = np.loadtxt(path, delimiter=",", ndmin=2)
    return KernelMatrix(matrix=matrix, source=source)

"""Skeleton graphs over basins and time-inhomogeneous kernel experiments.

The skeleton lumps a kernel onto a basin labeling: Q_ij is the stationary-
conditional mass flowing from basin i into basin j in one step. An edge
rule of strict mass positivity is numerically fragile, so edges keep a
recorded mass threshold instead. Acyclicity is never enforced; cycle
structure (after removing self-loops) is reported as a measured property.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .basins import BasinLabeling
from .csm import CSMSpec, simulate
from .errors import ShapeError
from .kernels import KernelMatrix
from .seeding import STAGE_SKELETON, child_rng
from .spectral import eigendecompose
from .statespace import Grid, locate_cells
from .validation import check_probability_vector

DEFAULT_EDGE_THRESHOLD = 1e-3


@dataclass
class SkeletonGraph:
    """Directed weighted graph over basins.

    ``weights`` is the full lumped matrix before thresholding; ``edges``
    lists (i, j, weight) with weight >= threshold. Empty basins keep their
    vertex with zero out-mass and are flagged.
    """

    weights: np.ndarray
    threshold: float
    edges: list
    empty_basins: np.ndarray

    @property
    def r(self) -> int:
        return self.weights.shape[0]

    @property
    def n_edges(self) -> int:
        return len(self.edges)

    def max_offdiagonal(self) -> float:
        if self.r < 2:
            return 0.0
        off = self.weights.copy()
        np.fill_diagonal(off, -np.inf)
        return float(off.max())

    def has_cycle_without_self_loops(self) -> bool:
        """Cycle check on the thresholded edge set, self-loops removed."""
        adj: dict = {i: [] for i in range(self.r)}
        for i, j, _ in self.edges:
            if i != j:
                adj[i].append(j)
        color = {i: 0 for i in range(self.r)}

        def dfs(v) -> bool:
            color[v] = 1
            for nxt in adj[v]:
                if color[nxt] == 1:
                    return True
                if color[nxt] == 0 and dfs(nxt):
                    return True
            color[v] = 2
            return False

        return any(color[v] == 0 and dfs(v) for v in range(self.r))


def _edges_from_weights(weights: np.ndarray, threshold: float) -> list:
    edges = []
    r = weights.shape[0]
    for i in range(r):
        for j in range(r):
            if weights[i, j] >= threshold:
                edges.append((i, j, float(weights[i, j])))
    return edges


def build_skeleton(
    K: KernelMatrix,
    labeling: BasinLabeling,
    mu,
    threshold: float = DEFAULT_EDGE_THRESHOLD,
) -> SkeletonGraph:
    """Lump the kernel onto basins with mu-conditional row weights.

    Q_ij = sum_{s in B_i} mu_i(s) sum_{s' in B_j} K(s, s') with mu_i the
    restriction of mu to basin i, renormalized. Rows of Q are stochastic for
    nonempty basins before thresholding.
    """
    mu = check_probability_vector(mu, name="stationary measure")
    if labeling.n != K.n or mu.shape[0] != K.n:
        raise ShapeError("shape error: labeling, kernel and measure sizes must agree")
    r = labeling.r
    weights = np.zeros((r, r))
    empty = np.zeros(r, dtype=bool)
    for i in range(r):
        members = labeling.labels == i
        mass = mu[members].sum()
        if not members.any() or mass == 0:
            empty[i] = True
            continue
        row_weights = mu[members] / mass
        flow = row_weights @ K.matrix[members]
        for j in range(r):
            weights[i, j] = flow[labeling.labels == j].sum()
    return SkeletonGraph(
        weights=weights,
        threshold=threshold,
        edges=_edges_from_weights(weights, threshold),
        empty_basins=empty,
    )


@dataclass
class RolloutSkeleton:
    graph: SkeletonGraph
    counts: np.ndarray
    n_transitions: int


def rollout_skeleton(
    spec: CSMSpec,
    grid: Grid,
    labeling: BasinLabeling,
    n_rollouts: int,
    horizon: int,
    seed: int,
    threshold: float = DEFAULT_EDGE_THRESHOLD,
) -> RolloutSkeleton:
    """Empirical skeleton from short closed-loop rollouts.

    Each rollout starts uniformly in the grid box (its own child generator,
    stage key SKELETON, index i), every state maps to a basin through its
    grid cell, and consecutive basin pairs are counted then row-normalized.
    horizon=1 counts exactly n_rollouts transitions.
    """
    if horizon < 1:
        raise ValueError("horizon must be >= 1")
    if n_rollouts < 1:
        raise ValueError("n_rollouts must be >= 1")
    if labeling.n != grid.n_cells:
        raise ShapeError("shape error: labeling must cover every grid cell")
    r = labeling.r
    counts = np.zeros((r, r))
    for i in range(n_rollouts):
        rng = child_rng(seed, STAGE_SKELETON, i)
        s0 = rng.uniform(grid.box.lower, grid.box.upper)
        traj = simulate(spec, steps=horizon, s0=s0, seed=rng)
        cells = locate_cells(grid, traj.states, clamp=True)
        basins = labeling.labels[cells]
        for t in range(horizon):
            counts[basins[t], basins[t + 1]] += 1.0
    row_sums = counts.sum(axis=1)
    empty = row_sums == 0
    weights = np.zeros_like(counts)
    weights[~empty] = counts[~empty] / row_sums[~empty, None]
    graph = SkeletonGraph(
        weights=weights,
        threshold=threshold,
        edges=_edges_from_weights(weights, threshold),
        empty_basins=empty,
    )
    return RolloutSkeleton(graph=graph, counts=counts, n_transitions=int(counts.sum()))


# ---------------------------------------------------------------------------
# Adiabatic families


def operator_norm(M: np.ndarray, norm: str = "spectral") -> float:
    """Spectral norm by default; max-row-sum as the cheap large-N option."""
    if norm == "spectral":
        return float(np.linalg.norm(M, 2))
    if norm == "rowsum":
        return float(np.abs(M).sum(axis=1).max())
    raise ValueError("norm must be 'spectral' or 'rowsum'")


@dataclass
class AdiabaticFamily:
    """Ordered kernels P_t with the recorded drift bound eta = max ||P_{t+1} - P_t||."""

    kernels: list
    eta: float
    norm: str = "spectral"

    @property
    def length(self) -> int:
        return len(self.kernels)

    @property
    def n(self) -> int:
        return self.kernels[0].n


def make_adiabatic_family(
    base: KernelMatrix, target: KernelMatrix, steps: int, norm: str = "spectral"
) -> AdiabaticFamily:
    """Linear interpolation P_t = (1 - t/(steps-1)) base + (t/(steps-1)) target.

    Convexity keeps every member row-stochastic; eta is measured, and for
    linear interpolation equals ||target - base|| / (steps - 1).
    """
    if base.n != target.n:
        raise ShapeError("shape error: base and target kernels differ in size")
    if steps < 2:
        raise ValueError("steps must be >= 2")
    if np.array_equal(base.matrix, target.matrix):
        # exact constant family; no rounding dust from the convex combination
        kernels = [
            KernelMatrix(matrix=base.matrix.copy(), source="explicit", meta={"alpha": float(a)})
            for a in np.linspace(0.0, 1.0, steps)
        ]
        return AdiabaticFamily(kernels=kernels, eta=0.0, norm=norm)
    alphas = np.linspace(0.0, 1.0, steps)
    kernels = [
        KernelMatrix(
            matrix=(1.0 - a) * base.matrix + a * target.matrix,
            source="explicit",
            meta={"alpha": float(a)},
        )
        for a in alphas
    ]
    eta = max(
        operator_norm(kernels[t + 1].matrix - kernels[t].matrix, norm)
        for t in range(steps - 1)
    )
    return AdiabaticFamily(kernels=kernels, eta=eta, norm=norm)


@dataclass
class AdiabaticComparison:
    horizon: int
    start: int
    eta: float
    error: float
    ratio: float  # error / (horizon * eta); inf when eta == 0 and error > 0


def compare_adiabatic(family: AdiabaticFamily, n: int, start: int = 0) -> AdiabaticComparison:
    """Error between the time-ordered n-step product and a stationary power.

    The product runs chronologically over kernels start..start+n-1; the
    stationary comparator is the time average of that window (for linear
    families, the window midpoint kernel, and the family midpoint when the
    window is the whole family). Reports E = ||product - comparator^n|| and
    E / (n eta).
    """
    if not (1 <= n <= family.length):
        raise ValueError(f"n must lie in [1, {family.length}]")
    if not (0 <= start <= family.length - n):
        raise ValueError(f"start must lie in [0, {family.length - n}]")
    window = [k.matrix for k in family.kernels[start : start + n]]
    product = np.eye(family.n)
    for P in window:
        product = product @ P
    comparator = sum(window) / n
    error = operator_norm(product - np.linalg.matrix_power(comparator, n), family.norm)
    if family.eta > 0:
        ratio = error / (n * family.eta)
    else:
        ratio = 0.0 if error == 0 else float("inf")
    return AdiabaticComparison(horizon=n, start=start, eta=family.eta, error=error, ratio=ratio)


@dataclass
class GapReport:
    gamma: float
    argmin_t: int
    per_t_gaps: np.ndarray
    closed: bool


def uniform_gap_check(family: AdiabaticFamily, r: int) -> GapReport:
    """gamma = min_t (|lambda_r(t)| - |lambda_{r+1}(t)|) with the minimizing t.

    gamma <= 0 is a reported condition ("gap closed"), not an exception.
    """
    if not (1 <= r < family.n):
        raise ValueError(f"r must lie in [1, {family.n - 1}]")
    gaps = np.empty(family.length)
    for t, K in enumerate(family.kernels):
        mods = eigendecompose(K, k=r + 1).moduli
        gaps[t] = mods[r - 1] - mods[r]
    argmin_t = int(np.argmin(gaps))
    gamma = float(gaps[argmin_t])
    return GapReport(gamma=gamma, argmin_t=argmin_t, per_t_gaps=gaps, closed=gamma <= 0)


# ---------------------------------------------------------------------------
# External formats


def skeleton_to_dot(graph: SkeletonGraph) -> str:
    """Graphviz text with edge weights to 3 decimals."""
    lines = ["digraph skeleton {"]
    for v in range(graph.r):
        lines.append(f"  {v};")
    for i, j, w in graph.edges:
        lines.append(f'  {i} -> {j} [label="{w:.3f}"];')
    lines.append("}")
    return "\n".join(lines) + "\n"


def write_skeleton_dot(graph: SkeletonGraph, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(skeleton_to_dot(graph))


def write_skeleton_adjacency_csv(graph: SkeletonGraph, path) -> None:
    np.savetxt(path, graph.weights, delimiter=",", fmt="%.17g")

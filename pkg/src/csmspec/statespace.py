"""Compact box state spaces, uniform grids, point clouds, synthetic data.

Grids are axis-aligned with uniform cells per dimension so cell location is
O(d) and cell volumes are exact. Linear cell indices use C order (last
dimension fastest). Points exactly on a shared cell boundary belong to the
cell with the smallest linear index.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from .errors import DomainError, GridTooLargeError, SeparationError, ShapeError
from .validation import as_points, as_vector

DEFAULT_CELL_CAP = 1_000_000


@dataclass(frozen=True)
class StateBox:
    """Axis-aligned compact box in R^d."""

    lower: np.ndarray
    upper: np.ndarray

    def __post_init__(self):
        lo = as_vector(self.lower, "lower")
        hi = as_vector(self.upper, "upper")
        if lo.shape != hi.shape:
            raise ShapeError("shape error: lower and upper bounds differ in length")
        if lo.size < 1:
            raise ShapeError("shape error: box needs at least one dimension")
        if not np.all(lo < hi):
            raise ValueError("box requires lower[i] < upper[i] for all i")
        lo.setflags(write=False)
        hi.setflags(write=False)
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", hi)

    @property
    def d(self) -> int:
        return self.lower.size

    @property
    def widths(self) -> np.ndarray:
        return self.upper - self.lower

    def volume(self) -> float:
        return float(np.prod(self.widths))

    def contains(self, points: np.ndarray, atol: float = 0.0) -> np.ndarray:
        p = np.atleast_2d(points)
        return np.all((p >= self.lower - atol) & (p <= self.upper + atol), axis=1)

    def clip(self, points: np.ndarray) -> np.ndarray:
        return np.clip(points, self.lower, self.upper)

    @classmethod
    def symmetric(cls, d: int, half_width: float = 1.0) -> "StateBox":
        """The box [-h, h]^d; the default state space for tanh dynamics."""
        return cls(np.full(d, -half_width), np.full(d, half_width))


@dataclass(frozen=True)
class Grid:
    """Uniform partition of a StateBox into axis-aligned cells."""

    box: StateBox
    cells_per_dim: np.ndarray

    def __post_init__(self):
        c = np.asarray(self.cells_per_dim, dtype=int)
        c.setflags(write=False)
        object.__setattr__(self, "cells_per_dim", c)

    @property
    def d(self) -> int:
        return self.box.d

    @property
    def n_cells(self) -> int:
        return int(np.prod(self.cells_per_dim))

    @property
    def cell_widths(self) -> np.ndarray:
        return self.box.widths / self.cells_per_dim

    def cell_volume(self) -> float:
        return float(np.prod(self.cell_widths))

    def multi_index(self, cell: int) -> tuple:
        return tuple(int(i) for i in np.unravel_index(cell, tuple(self.cells_per_dim)))

    def centers(self) -> np.ndarray:
        """(N, d) array of cell centers in linear-index order."""
        axes = [
            self.box.lower[k] + (np.arange(self.cells_per_dim[k]) + 0.5) * self.cell_widths[k]
            for k in range(self.d)
        ]
        mesh = np.meshgrid(*axes, indexing="ij")
        return np.stack([m.ravel() for m in mesh], axis=1)

    def cell_bounds(self, cell: int) -> tuple:
        idx = np.array(self.multi_index(cell))
        lo = self.box.lower + idx * self.cell_widths
        return lo, lo + self.cell_widths

    def descriptor(self) -> dict:
        return {
            "lower": self.box.lower.tolist(),
            "upper": self.box.upper.tolist(),
            "cells_per_dim": self.cells_per_dim.tolist(),
        }


def make_grid(box: StateBox, cells_per_dim, max_cells: int = DEFAULT_CELL_CAP) -> Grid:
    """Build a uniform grid; rejects grids above ``max_cells`` total cells."""
    c = np.asarray(cells_per_dim, dtype=int)
    if c.ndim != 1 or c.size != box.d:
        raise ShapeError(
            f"shape error: cells_per_dim has length {c.size}, box has dimension {box.d}"
        )
    if np.any(c < 1):
        raise ValueError("cells_per_dim entries must be >= 1")
    total = int(np.prod(c.astype(object)))
    if total > max_cells:
        raise GridTooLargeError(f"grid too large: {total} cells exceeds cap {max_cells}")
    return Grid(box, c)


def locate_cells(grid: Grid, points: np.ndarray, clamp: bool = False) -> np.ndarray:
    """Map points to linear cell indices.

    A coordinate exactly on an interior cell boundary resolves to the lower
    cell, so shared boundaries go to the smallest linear index. Points outside
    the closed box raise unless ``clamp`` is set.
    """
    p = np.atleast_2d(np.asarray(points, dtype=float))
    if p.shape[1] != grid.d:
        raise ShapeError(f"shape error: points have dimension {p.shape[1]}, grid has {grid.d}")
    if clamp:
        p = grid.box.clip(p)
    else:
        inside = grid.box.contains(p)
        if not np.all(inside):
            bad = int(np.argmin(inside))
            raise DomainError(f"out of domain: point {bad} lies outside the box")
    frac = (p - grid.box.lower) / grid.cell_widths
    idx = np.ceil(frac).astype(int) - 1
    np.clip(idx, 0, grid.cells_per_dim - 1, out=idx)
    return np.ravel_multi_index(tuple(idx.T), tuple(grid.cells_per_dim))


def locate_cell(grid: Grid, point, clamp: bool = False) -> int:
    return int(locate_cells(grid, np.asarray(point, dtype=float)[None, :], clamp=clamp)[0])


@dataclass
class PointCloud:
    """n points in R^d with optional integer ground-truth labels."""

    points: np.ndarray
    labels: np.ndarray | None = None
    provenance: str = "ingested"

    def __post_init__(self):
        self.points = as_points(self.points)
        if self.labels is not None:
            lab = np.asarray(self.labels, dtype=int)
            if lab.shape != (self.n,):
                raise ShapeError(
                    f"shape error: labels have shape {lab.shape}, expected ({self.n},)"
                )
            self.labels = lab

    @property
    def n(self) -> int:
        return self.points.shape[0]

    @property
    def d(self) -> int:
        return self.points.shape[1]


def synth_mixture(
    k: int,
    d: int,
    n_per: int,
    spread: float,
    separation: float,
    seed: int,
    max_tries: int = 10_000,
) -> PointCloud:
    """Sample k isotropic Gaussian clusters with centers in the unit box.

    Centers are drawn by rejection until pairwise distances reach
    ``separation``; ``max_tries`` failed draws raise SeparationError.
    Deterministic for a fixed seed.
    """
    if k < 1 or d < 1 or n_per < 1:
        raise ValueError("k, d and n_per must all be >= 1")
    if spread <= 0 or separation <= 0:
        raise ValueError("spread and separation must be positive")
    rng = np.random.default_rng(seed)
    centers: list = []
    tries = 0
    while len(centers) < k:
        cand = rng.uniform(0.0, 1.0, d)
        if all(np.linalg.norm(cand - c) >= separation for c in centers):
            centers.append(cand)
        else:
            tries += 1
            if tries >= max_tries:
                raise SeparationError(
                    f"separation infeasible: {len(centers)}/{k} centers placed "
                    f"after {max_tries} rejected draws"
                )
            if tries % 100 == 0:
                centers = []  # an unlucky early center can deadlock the rest
    pts = np.vstack([c + spread * rng.standard_normal((n_per, d)) for c in centers])
    labels = np.repeat(np.arange(k), n_per)
    return PointCloud(points=pts, labels=labels, provenance="synthetic")


def write_points_csv(cloud: PointCloud, path) -> None:
    """CSV with header x0,...,x{d-1}[,label], one point per row."""
    header = [f"x{i}" for i in range(cloud.d)]
    if cloud.labels is not None:
        header.append("label")
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for i in range(cloud.n):
            row = [f"{v:.17g}" for v in cloud.points[i]]
            if cloud.labels is not None:
                row.append(str(int(cloud.labels[i])))
            writer.writerow(row)


def read_points_csv(path) -> PointCloud:
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        has_labels = header and header[-1] == "label"
        d = len(header) - (1 if has_labels else 0)
        pts, labels = [], []
        for row in reader:
            if not row:
                continue
            pts.append([float(v) for v in row[:d]])
            if has_labels:
                labels.append(int(row[d]))
    return PointCloud(
        points=np.asarray(pts, dtype=float),
        labels=np.asarray(labels, dtype=int) if has_labels else None,
        provenance="ingested",
    )

"""Spectral basin assignment and stability metrics.

A point's basin is the index of the retained eigenvector with the largest
modulus at that point (smallest index on ties). Labels are 0-based. The
eigenvector scaling of the spectral module (unit Euclidean norm, biorthogonal
duals) is part of this contract: rescaling one eigenvector against the others
changes the argmax, so assign_basins never rescales.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np
from sklearn.base import clone

from .errors import EmptyRankError, SubsampleTooSmallError
from .seeding import STAGE_BOOTSTRAP, child_rng
from .spectral import SpectralDecomposition, trivial_modes
from .validation import as_labels, as_points

TIE_ATOL = 1e-12


@dataclass
class BasinLabeling:
    """Per-point basin index, the top-two modulus margin, and tie flags."""

    labels: np.ndarray
    margins: np.ndarray
    ties: np.ndarray
    r: int

    @property
    def n(self) -> int:
        return self.labels.shape[0]

    def counts(self) -> np.ndarray:
        return np.bincount(self.labels, minlength=self.r)


def assign_basins(dec: SpectralDecomposition, r: int, drop_trivial: bool = False) -> BasinLabeling:
    """Label point i with argmax_{j <= r} |phi_j(i)|.

    ``drop_trivial`` excludes near-constant modes from winning the argmax
    while keeping their index slots, for analyses where the lambda = 1 mode
    carries no partition information.
    """
    if r == 0:
        raise EmptyRankError("empty rank: r must be >= 1")
    if r > dec.k:
        raise ValueError(f"r={r} exceeds the {dec.k} retained modes")
    mods = np.abs(dec.right[:, :r])
    if drop_trivial:
        excluded = trivial_modes(dec, r)
        if excluded.all():
            raise EmptyRankError("empty rank: every retained mode is trivial")
        mods = mods.copy()
        mods[:, excluded] = -np.inf
    labels = np.argmax(mods, axis=1)
    if r == 1:
        top = mods[:, 0]
        margins = np.abs(top)
        ties = margins < TIE_ATOL
    else:
        part = np.partition(mods, r - 2, axis=1)
        top, second = part[:, -1], part[:, -2]
        margins = top - second
        ties = margins < TIE_ATOL
    return BasinLabeling(labels=labels.astype(int), margins=margins, ties=ties, r=r)


def write_labels_csv(labeling: BasinLabeling, path) -> None:
    """Rows point_index,basin,margin,tie."""
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("point_index,basin,margin,tie\n")
        for i in range(labeling.n):
            fh.write(
                f"{i},{int(labeling.labels[i])},{labeling.margins[i]:.17g},"
                f"{int(labeling.ties[i])}\n"
            )


# ---------------------------------------------------------------------------
# Agreement metrics


def _contingency(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    ua, ia = np.unique(a, return_inverse=True)
    ub, ib = np.unique(b, return_inverse=True)
    table = np.zeros((ua.size, ub.size), dtype=np.int64)
    np.add.at(table, (ia, ib), 1)
    return table


def ari(a, b) -> float:
    """Adjusted Rand index from the pair-counting contingency formula."""
    a = as_labels(a, name="a")
    b = as_labels(b, n=a.shape[0], name="b")
    n = a.shape[0]
    table = _contingency(a, b)

    def comb2(x):
        return x * (x - 1) / 2.0

    sum_ij = comb2(table.astype(float)).sum()
    sum_a = comb2(table.sum(axis=1).astype(float)).sum()
    sum_b = comb2(table.sum(axis=0).astype(float)).sum()
    total = comb2(float(n))
    expected = sum_a * sum_b / total
    maximum = 0.5 * (sum_a + sum_b)
    if maximum == expected:
        return 1.0
    return float((sum_ij - expected) / (maximum - expected))


def jaccard_ovr(a, b) -> float:
    """Mean one-vs-rest Jaccard after greedy maximum-overlap class alignment.

    Classes of ``a`` are matched to classes of ``b`` by repeatedly taking the
    largest remaining overlap (ties: smallest class pair); unmatched classes
    score zero.
    """
    a = as_labels(a, name="a")
    b = as_labels(b, n=a.shape[0], name="b")
    ua = np.unique(a)
    ub = np.unique(b)
    overlap = _contingency(a, b).astype(float)
    sizes_a = {c: int(np.sum(a == c)) for c in ua}
    sizes_b = {c: int(np.sum(b == c)) for c in ub}

    remaining_a = list(range(ua.size))
    remaining_b = list(range(ub.size))
    match: dict = {}
    while remaining_a and remaining_b:
        best = max(
            ((overlap[i, j], -ua[i], -ub[j], i, j) for i in remaining_a for j in remaining_b),
        )
        _, _, _, i, j = best
        if overlap[i, j] <= 0:
            break
        match[i] = j
        remaining_a.remove(i)
        remaining_b.remove(j)

    scores = []
    for i, ca in enumerate(ua):
        if i in match:
            cb = ub[match[i]]
            inter = overlap[i, match[i]]
            union = sizes_a[ca] + sizes_b[cb] - inter
            scores.append(inter / union)
        else:
            scores.append(0.0)
    return float(np.mean(scores))


# ---------------------------------------------------------------------------
# Bootstrap stability


@dataclass
class BootstrapStability:
    mean: float
    std: float
    values: np.ndarray
    resamples: int
    fraction: float


def bootstrap_ari(
    X,
    estimator,
    resamples: int = 50,
    fraction: float = 0.8,
    seed: int = 0,
    workers: int = 1,
) -> BootstrapStability:
    """Stability of a basin labeling under subsampled pipeline reruns.

    ``estimator`` is an unfitted clusterer exposing fit(X).labels_ and rank_
    (e.g. SpectralBasinClusterer); each resample refits a clone on a uniform
    subsample without replacement and scores ARI against the full-run labels
    restricted to the subsample. Resamples draw their own child generators
    (stage key BOOTSTRAP, index b), so results do not depend on ``workers``.
    """
    X = as_points(getattr(X, "points", X))
    if resamples < 2:
        raise ValueError("resamples must be >= 2")
    if not (0.0 < fraction <= 1.0):
        raise ValueError("fraction must lie in (0, 1]")
    n = X.shape[0]
    m = int(np.ceil(fraction * n))
    full = clone(estimator).fit(X)
    full_labels = np.asarray(full.labels_)
    if m < full.rank_ + 1:
        raise SubsampleTooSmallError(
            f"subsample too small: {m} points for rank {full.rank_}"
        )

    def one(b: int) -> float:
        rng = child_rng(seed, STAGE_BOOTSTRAP, b)
        idx = np.sort(rng.choice(n, size=m, replace=False))
        sub_labels = clone(estimator).fit(X[idx]).labels_
        return ari(sub_labels, full_labels[idx])

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            values = np.array(list(pool.map(one, range(resamples))))
    else:
        values = np.array([one(b) for b in range(resamples)])
    return BootstrapStability(
        mean=float(values.mean()),
        std=float(values.std()),
        values=values,
        resamples=resamples,
        fraction=fraction,
    )

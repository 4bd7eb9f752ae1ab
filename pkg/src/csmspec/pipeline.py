"""End-to-end runs behind the CLI: pipeline, simulate, adiabatic, skeleton, metrics.

Every command is deterministic given (config, seed): artifacts other than the
report's "timings" block are byte-identical across reruns and worker counts.
Stage failures are wrapped in StageError carrying the stage name.
"""

from __future__ import annotations

import json
import time
from pathlib import Path

import numpy as np

from . import basins as basins_mod
from . import csm as csm_mod
from . import kernels as kernels_mod
from . import probes as probes_mod
from . import skeleton as skeleton_mod
from . import spectral as spectral_mod
from .config import RunConfig
from .errors import (
    ConfigError,
    CsmSpecError,
    IllConditionedSpectrumError,
    NoConvergenceError,
    StageError,
)
from .estimators import SpectralBasinClusterer
from .seeding import (
    STAGE_ADIABATIC,
    STAGE_COLLAPSE,
    STAGE_SIMULATE,
    STAGE_SYNTH,
    STAGE_ULAM,
    child_rng,
    child_seed_int,
)
from .statespace import PointCloud, make_grid, read_points_csv, synth_mixture


class _Stage:
    """Times a stage and converts its failures into StageError."""

    def __init__(self, name: str, timings: dict):
        self.name = name
        self.timings = timings

    def __enter__(self):
        self.t0 = time.perf_counter()
        return self

    def __exit__(self, exc_type, exc, tb):
        self.timings[self.name] = time.perf_counter() - self.t0
        if exc is not None and not isinstance(exc, StageError):
            raise StageError(self.name, exc) from exc
        return False


def _write_json(doc: dict, path: Path) -> None:
    path.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def _decompose_resilient(kernel, k_requested: int):
    """Eigendecompose at the largest mode count the spectrum supports.

    Deep spectral tails of empirical kernels (Ulam counts especially) can be
    numerically defective; those junk modes fail the biorthogonality gate but
    carry nothing the pipeline uses. Retreat one mode at a time, never below
    the 3 modes rank selection needs.
    """
    k = min(k_requested, kernel.n)
    while True:
        try:
            return spectral_mod.eigendecompose(kernel, k=k), k
        except IllConditionedSpectrumError:
            if k <= 3:
                raise
            k -= 1


def _load_input(config: RunConfig):
    """Resolve the configured input into (cloud, spec, grid).

    Points routes return (PointCloud, None, None); CSM routes return
    (None, CSMSpec, Grid). Input problems are configuration errors.
    """
    inp = config.input
    kind = inp["kind"]
    if kind == "synthetic":
        cloud = synth_mixture(
            k=int(inp["k"]),
            d=int(inp["d"]),
            n_per=int(inp["n_per"]),
            spread=float(inp["spread"]),
            separation=float(inp["separation"]),
            seed=child_seed_int(config.seed, STAGE_SYNTH),
        )
        return cloud, None, None
    if kind == "points_csv":
        try:
            cloud = read_points_csv(inp["path"])
        except (OSError, ValueError) as exc:
            raise ConfigError(f"cannot read points CSV {inp['path']}: {exc}")
        return cloud, None, None
    if kind == "csm_json":
        try:
            spec = csm_mod.spec_from_json(Path(inp["path"]))
        except (OSError, ValueError, KeyError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read CSM spec {inp['path']}: {exc}")
    else:
        try:
            spec = csm_mod.spec_from_json(inp["spec"])
        except (ValueError, KeyError) as exc:
            raise ConfigError(f"invalid inline CSM spec: {exc}")
    try:
        grid = make_grid(spec.box, inp["cells_per_dim"])
    except CsmSpecError as exc:
        raise ConfigError(f"invalid grid: {exc}")
    return None, spec, grid


def run_pipeline(config: RunConfig, out_dir) -> dict:
    """Kernel -> spectrum -> rank -> basins -> metrics -> skeleton -> report."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    timings: dict = {}
    report: dict = {"seed": config.seed, "input": config.input}

    cloud, spec, grid = _load_input(config)

    with _Stage("kernel", timings):
        if cloud is not None:
            kernel = kernels_mod.diffusion_kernel(
                cloud.points,
                bandwidth=config.kernel["bandwidth"],
                variant=config.kernel["variant"],
            )
            features = cloud.points
            truth = cloud.labels
        else:
            kernel = kernels_mod.ulam_kernel(
                spec,
                grid,
                samples_per_cell=int(config.kernel["samples_per_cell"]),
                seed=child_seed_int(config.seed, STAGE_ULAM),
            )
            features = grid.centers()
            truth = None
        kernels_mod.write_kernel_csv(kernel, out / "kernel.csv")
        report["kernel"] = {
            "source": kernel.source,
            "n": kernel.n,
            **{k: v for k, v in kernel.meta.items() if not isinstance(v, np.ndarray)},
        }

    with _Stage("spectral", timings):
        dec, k = _decompose_resilient(kernel, int(config.spectral["modes"]))
        report["modes_computed"] = k
        if config.spectral["rank"] == "auto":
            r = spectral_mod.select_rank(
                dec, method=config.spectral["rank_method"], eps=float(config.spectral["eps"])
            )
        else:
            r = int(config.spectral["rank"])
            dec.rank = r
            dec.gap_ratio = float(dec.moduli[r] / dec.moduli[r - 1]) if r < dec.k else None
        spectral_mod.write_spectrum_csv(dec, out / "spectrum.csv")
        spectral_mod.write_eigenvectors_csv(dec, out / "eigenvectors.csv")
        report["r"] = r
        report["no_gap"] = bool(dec.no_gap)
        report["gap_ratio"] = dec.gap_ratio
        report["eigenvalues"] = [[float(l.real), float(l.imag)] for l in dec.eigenvalues]
        if r < dec.k:  # the reference rate |lambda_{r+1}| must be available
            decay = spectral_mod.verify_collapse(
                kernel,
                dec,
                r,
                t_max=int(config.spectral["collapse_t_max"]),
                n_probes=int(config.spectral["collapse_probes"]),
                seed=child_seed_int(config.seed, STAGE_COLLAPSE),
            )
            report["collapse"] = decay.to_dict()

    with _Stage("basins", timings):
        labeling = basins_mod.assign_basins(dec, r, drop_trivial=bool(config.spectral["drop_trivial"]))
        basins_mod.write_labels_csv(labeling, out / "labels.csv")
        coords = spectral_mod.spectral_coordinates(dec, r)
        spectral_mod.write_coordinates_csv(coords, out / "coordinates.csv")
        report["basin_counts"] = [int(c) for c in labeling.counts()]
        report["trivial_modes"] = [bool(t) for t in coords.trivial]

    with _Stage("metrics", timings):
        metrics: dict = {"r": r}
        if cloud is not None and int(config.metrics["bootstrap"]) >= 2:
            estimator = SpectralBasinClusterer(
                bandwidth=config.kernel["bandwidth"],
                variant=config.kernel["variant"],
                n_modes=int(config.spectral["modes"]),
                rank=config.spectral["rank"],
                rank_method=config.spectral["rank_method"],
                gap_eps=float(config.spectral["eps"]),
                drop_trivial=bool(config.spectral["drop_trivial"]),
            )
            stability = basins_mod.bootstrap_ari(
                cloud.points,
                estimator,
                resamples=int(config.metrics["bootstrap"]),
                fraction=float(config.metrics["fraction"]),
                seed=config.seed,
                workers=config.workers,
            )
            metrics["ari_mean"] = stability.mean
            metrics["ari_std"] = stability.std
        if truth is not None:
            metrics["jaccard_ovr_mean"] = basins_mod.jaccard_ovr(labeling.labels, truth)
        tree_report = probes_mod.train_tree(
            features,
            labeling.labels,
            max_depth=int(config.metrics["tree_depth"]),
            split_fraction=float(config.metrics["split_fraction"]),
            seed=config.seed,
        )
        poly_report = probes_mod.train_polylogistic(
            features,
            labeling.labels,
            degree=int(config.metrics["poly_degree"]),
            l2=float(config.metrics["poly_l2"]),
            iters=int(config.metrics["poly_iters"]),
            lr=float(config.metrics["poly_lr"]),
            split_fraction=float(config.metrics["split_fraction"]),
            seed=config.seed,
        )
        metrics["tree_acc"] = tree_report.holdout_accuracy
        metrics["polylog_acc"] = poly_report.holdout_accuracy
        metrics["tree_degenerate"] = tree_report.degenerate
        metrics["polylog_degenerate"] = poly_report.degenerate
        report["metrics"] = metrics

    with _Stage("skeleton", timings):
        lazy = False
        try:
            mu = kernels_mod.stationary_distribution(kernel)
        except NoConvergenceError:
            mu = kernels_mod.stationary_distribution(kernels_mod.lazy_kernel(kernel))
            lazy = True
        graph = skeleton_mod.build_skeleton(
            kernel, labeling, mu, threshold=float(config.skeleton["threshold"])
        )
        skeleton_mod.write_skeleton_dot(graph, out / "skeleton.dot")
        skeleton_mod.write_skeleton_adjacency_csv(graph, out / "skeleton_adjacency.csv")
        report["skeleton"] = {
            "vertices": graph.r,
            "edges": graph.n_edges,
            "max_offdiagonal_weight": graph.max_offdiagonal(),
            "has_cycle_without_self_loops": graph.has_cycle_without_self_loops(),
            "lazy_smoothing": lazy,
        }
        report["doeblin_epsilon"] = kernels_mod.doeblin_check(
            kernel, kernels_mod.ReferenceMeasure.uniform(kernel.n)
        )

    report["timings"] = timings
    _write_json(report, out / "report.json")
    return report


def run_simulate(config: RunConfig, out_dir) -> dict:
    """Closed-loop rollouts to trajectory CSVs plus a seed manifest."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    timings: dict = {}
    if config.input["kind"] not in ("csm_json", "csm_inline"):
        raise ConfigError("simulate requires a csm_json or csm_inline input")
    if config.input["kind"] == "csm_json":
        try:
            spec = csm_mod.spec_from_json(Path(config.input["path"]))
        except (OSError, ValueError, KeyError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read CSM spec {config.input['path']}: {exc}")
    else:
        spec = csm_mod.spec_from_json(config.input["spec"])

    rollouts = int(config.simulate["rollouts"])
    steps = int(config.simulate["steps"])
    manifest: dict = {
        "master_seed": config.seed,
        "stage_key": STAGE_SIMULATE,
        "steps": steps,
        "rollouts": [],
    }
    with _Stage("simulate", timings):
        for i in range(rollouts):
            rng = child_rng(config.seed, STAGE_SIMULATE, i)
            traj = csm_mod.simulate(spec, steps=steps, seed=rng)
            name = f"rollout_{i:04d}.csv"
            csm_mod.write_trajectory_csv(traj, out / name)
            manifest["rollouts"].append({"file": name, "spawn_key": [STAGE_SIMULATE, i]})
    manifest["timings"] = timings
    _write_json(manifest, out / "manifest.json")
    return manifest


def _adiabatic_endpoints(config: RunConfig):
    cfg = config.adiabatic
    if cfg["base_csv"] and cfg["target_csv"]:
        base = kernels_mod.read_kernel_csv(cfg["base_csv"])
        target = kernels_mod.read_kernel_csv(cfg["target_csv"])
        return base, target
    n = int(cfg["size"])
    if n % 2 != 0:
        raise ConfigError("adiabatic.size must be even for the built-in construction")
    rng = np.random.default_rng(int(cfg["construction_seed"]))
    R = rng.uniform(0.5, 1.5, (n, n))
    R /= R.sum(axis=1, keepdims=True)
    base = 0.9 * np.full((n, n), 1.0 / n) + 0.1 * R
    signs_u = rng.permutation(np.resize([1.0, -1.0], n))
    signs_v = rng.permutation(np.repeat([1.0, -1.0], n // 2))  # balanced: rows of the bump sum to 0
    u = signs_u / np.sqrt(n)
    v = signs_v / np.sqrt(n)
    delta = float(cfg["distance"]) * np.outer(u, v)
    target = base + delta
    if target.min() < 0:
        raise ConfigError(
            "adiabatic.distance too large for the built-in construction (negative entries)"
        )
    return kernels_mod.explicit_kernel(base), kernels_mod.explicit_kernel(target)


def run_adiabatic(config: RunConfig, out_dir) -> dict:
    """Drift sweep: product-vs-power errors for each eta, plus per-n curve."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    timings: dict = {}
    base, target = _adiabatic_endpoints(config)
    cfg = config.adiabatic
    horizon = int(cfg["horizon"])
    start = int(cfg["start"])
    distance = skeleton_mod.operator_norm(target.matrix - base.matrix, "spectral")

    report: dict = {
        "size": base.n,
        "horizon": horizon,
        "start": start,
        "endpoint_distance": float(distance),
        "sweeps": [],
        "per_n": [],
    }
    with _Stage("adiabatic", timings):
        zero_family = skeleton_mod.make_adiabatic_family(base, base, steps=max(2, horizon + 1))
        zero_cmp = skeleton_mod.compare_adiabatic(zero_family, n=min(horizon, zero_family.length))
        report["eta_zero_error"] = zero_cmp.error

        first_family = None
        for eta in cfg["etas"]:
            steps = int(round(distance / float(eta))) + 1
            if steps < horizon:
                raise ConfigError(
                    f"eta={eta} yields only {steps} kernels, fewer than horizon {horizon}; "
                    "increase endpoint distance or lower the horizon"
                )
            family = skeleton_mod.make_adiabatic_family(base, target, steps=steps)
            if first_family is None:
                first_family = family
            window_start = min(start, family.length - horizon)
            cmp = skeleton_mod.compare_adiabatic(family, n=horizon, start=window_start)
            report["sweeps"].append(
                {
                    "eta": family.eta,
                    "steps": steps,
                    "error": cmp.error,
                    "ratio": cmp.ratio,
                }
            )
        for n in range(1, min(first_family.length, horizon) + 1):
            cmp = skeleton_mod.compare_adiabatic(first_family, n=n, start=0)
            report["per_n"].append({"n": n, "error": cmp.error, "ratio": cmp.ratio})
        gap = skeleton_mod.uniform_gap_check(first_family, r=int(cfg["gap_rank"]))
        report["gap"] = {
            "gamma": gap.gamma,
            "argmin_t": gap.argmin_t,
            "closed": gap.closed,
        }
    report["timings"] = timings
    _write_json(report, out / "adiabatic_report.json")
    return report


def run_skeleton(config: RunConfig, out_dir) -> dict:
    """Skeleton-only run; adds rollout-based edges for CSM inputs."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    timings: dict = {}
    cloud, spec, grid = _load_input(config)
    report: dict = {"seed": config.seed}

    with _Stage("skeleton", timings):
        if cloud is not None:
            kernel = kernels_mod.diffusion_kernel(
                cloud.points,
                bandwidth=config.kernel["bandwidth"],
                variant=config.kernel["variant"],
            )
        else:
            kernel = kernels_mod.ulam_kernel(
                spec,
                grid,
                samples_per_cell=int(config.kernel["samples_per_cell"]),
                seed=child_seed_int(config.seed, STAGE_ULAM),
            )
        dec, _ = _decompose_resilient(kernel, int(config.spectral["modes"]))
        if config.spectral["rank"] == "auto":
            r = spectral_mod.select_rank(
                dec, method=config.spectral["rank_method"], eps=float(config.spectral["eps"])
            )
        else:
            r = int(config.spectral["rank"])
        labeling = basins_mod.assign_basins(dec, r, drop_trivial=bool(config.spectral["drop_trivial"]))
        try:
            mu = kernels_mod.stationary_distribution(kernel)
        except NoConvergenceError:
            mu = kernels_mod.stationary_distribution(kernels_mod.lazy_kernel(kernel))
        graph = skeleton_mod.build_skeleton(
            kernel, labeling, mu, threshold=float(config.skeleton["threshold"])
        )
        skeleton_mod.write_skeleton_dot(graph, out / "skeleton.dot")
        skeleton_mod.write_skeleton_adjacency_csv(graph, out / "skeleton_adjacency.csv")
        report["skeleton"] = {
            "vertices": graph.r,
            "edges": graph.n_edges,
            "max_offdiagonal_weight": graph.max_offdiagonal(),
            "has_cycle_without_self_loops": graph.has_cycle_without_self_loops(),
        }
        rollouts = int(config.skeleton["rollouts"])
        if spec is not None and rollouts > 0:
            rolled = skeleton_mod.rollout_skeleton(
                spec,
                grid,
                labeling,
                n_rollouts=rollouts,
                horizon=int(config.skeleton["horizon"]),
                seed=config.seed,
                threshold=float(config.skeleton["threshold"]),
            )
            skeleton_mod.write_skeleton_dot(rolled.graph, out / "skeleton_rollout.dot")
            report["rollout_skeleton"] = {
                "vertices": rolled.graph.r,
                "edges": rolled.graph.n_edges,
                "transitions": rolled.n_transitions,
            }
    report["timings"] = timings
    _write_json(report, out / "skeleton.json")
    return report


def run_metrics(config: RunConfig, out_dir) -> dict:
    """Fig-1d-style metrics table for a points input."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    timings: dict = {}
    cloud, spec, _ = _load_input(config)
    if cloud is None:
        raise ConfigError("metrics requires a points input (synthetic or points_csv)")

    with _Stage("metrics", timings):
        estimator = SpectralBasinClusterer(
            bandwidth=config.kernel["bandwidth"],
            variant=config.kernel["variant"],
            n_modes=int(config.spectral["modes"]),
            rank=config.spectral["rank"],
            rank_method=config.spectral["rank_method"],
            gap_eps=float(config.spectral["eps"]),
            drop_trivial=bool(config.spectral["drop_trivial"]),
        )
        fitted = estimator.fit(cloud.points)
        doc: dict = {"r": int(fitted.rank_)}
        if int(config.metrics["bootstrap"]) >= 2:
            stability = basins_mod.bootstrap_ari(
                cloud.points,
                estimator,
                resamples=int(config.metrics["bootstrap"]),
                fraction=float(config.metrics["fraction"]),
                seed=config.seed,
                workers=config.workers,
            )
            doc["ari_mean"] = stability.mean
            doc["ari_std"] = stability.std
        if cloud.labels is not None:
            doc["jaccard_ovr_mean"] = basins_mod.jaccard_ovr(fitted.labels_, cloud.labels)
        tree_report = probes_mod.train_tree(
            cloud.points,
            fitted.labels_,
            max_depth=int(config.metrics["tree_depth"]),
            split_fraction=float(config.metrics["split_fraction"]),
            seed=config.seed,
        )
        poly_report = probes_mod.train_polylogistic(
            cloud.points,
            fitted.labels_,
            degree=int(config.metrics["poly_degree"]),
            l2=float(config.metrics["poly_l2"]),
            iters=int(config.metrics["poly_iters"]),
            lr=float(config.metrics["poly_lr"]),
            split_fraction=float(config.metrics["split_fraction"]),
            seed=config.seed,
        )
        doc["tree_acc"] = tree_report.holdout_accuracy
        doc["polylog_acc"] = poly_report.holdout_accuracy
    doc["timings"] = timings
    _write_json(doc, out / "metrics.json")
    return doc

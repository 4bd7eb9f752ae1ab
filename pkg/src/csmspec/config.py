"""Run configuration: one JSON document drives every CLI command.

The master seed is mandatory; every randomized stage derives its own child
stream from it (see seeding). Missing groups fall back to the documented
defaults; out-of-range values raise ConfigError.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

from .errors import ConfigError

INPUT_KINDS = ("synthetic", "points_csv", "csm_json", "csm_inline")


@dataclass
class RunConfig:
    seed: int
    input: dict
    kernel: dict = field(default_factory=dict)
    spectral: dict = field(default_factory=dict)
    metrics: dict = field(default_factory=dict)
    skeleton: dict = field(default_factory=dict)
    simulate: dict = field(default_factory=dict)
    adiabatic: dict = field(default_factory=dict)
    workers: int = 1

    def raw(self) -> dict:
        return {
            "seed": self.seed,
            "input": self.input,
            "kernel": self.kernel,
            "spectral": self.spectral,
            "metrics": self.metrics,
            "skeleton": self.skeleton,
            "simulate": self.simulate,
            "adiabatic": self.adiabatic,
            "workers": self.workers,
        }


DEFAULTS = {
    "kernel": {"bandwidth": "median", "variant": "squared", "samples_per_cell": 100},
    "spectral": {
        "modes": 10,
        "rank": "auto",
        "rank_method": "max-ratio",
        "eps": 0.1,
        "drop_trivial": False,
        "collapse_t_max": 10,
        "collapse_probes": 5,
    },
    "metrics": {
        "bootstrap": 50,
        "fraction": 0.8,
        "split_fraction": 0.7,
        "tree_depth": 2,
        "poly_degree": 2,
        "poly_l2": 1e-3,
        "poly_lr": 0.5,
        "poly_iters": 300,
    },
    "skeleton": {"threshold": 1e-3, "rollouts": 0, "horizon": 1},
    "simulate": {"rollouts": 1, "steps": 100},
    "adiabatic": {
        "size": 8,
        "horizon": 8,
        "start": 0,
        "etas": [1e-1, 1e-2, 1e-3],
        "distance": 0.8,
        "construction_seed": 11,
        "gap_rank": 1,
        "base_csv": None,
        "target_csv": None,
    },
}


def _merged(group: str, overrides: dict) -> dict:
    merged = dict(DEFAULTS[group])
    unknown = set(overrides) - set(merged)
    if unknown:
        raise ConfigError(f"unknown {group} option(s): {sorted(unknown)}")
    merged.update(overrides)
    return merged


def _require(cond: bool, message: str) -> None:
    if not cond:
        raise ConfigError(message)


def load_config(source, seed_override: int | None = None, workers_override: int | None = None) -> RunConfig:
    """Parse and validate a config from a dict, JSON string, or file path."""
    if isinstance(source, dict):
        doc = dict(source)
    else:
        path = Path(source)
        try:
            doc = json.loads(path.read_text(encoding="utf-8"))
        except FileNotFoundError:
            raise ConfigError(f"config file not found: {path}")
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config is not valid JSON: {exc}")
    if seed_override is not None:
        doc["seed"] = seed_override
    _require("seed" in doc, "config requires a master 'seed'")
    seed = doc["seed"]
    _require(isinstance(seed, int), "seed must be an integer")

    inp = doc.get("input", {})
    kind = inp.get("kind")
    _require(kind in INPUT_KINDS, f"input.kind must be one of {INPUT_KINDS}, got {kind!r}")
    if kind == "synthetic":
        for key in ("k", "d", "n_per"):
            _require(int(inp.get(key, 0)) >= 1, f"input.{key} must be a positive integer")
        _require(float(inp.get("spread", 0)) > 0, "input.spread must be positive")
        _require(float(inp.get("separation", 0)) > 0, "input.separation must be positive")
    elif kind == "points_csv":
        _require("path" in inp, "input.path is required for points_csv")
    elif kind == "csm_json":
        _require("path" in inp, "input.path is required for csm_json")
        _require("cells_per_dim" in inp, "input.cells_per_dim is required for csm_json")
    else:  # csm_inline
        _require("spec" in inp, "input.spec is required for csm_inline")
        _require("cells_per_dim" in inp, "input.cells_per_dim is required for csm_inline")

    kernel = _merged("kernel", doc.get("kernel", {}))
    bw = kernel["bandwidth"]
    _require(
        bw == "median" or (isinstance(bw, (int, float)) and bw > 0),
        "kernel.bandwidth must be 'median' or a positive number",
    )
    _require(kernel["variant"] in ("squared", "plain"), "kernel.variant must be 'squared' or 'plain'")
    _require(int(kernel["samples_per_cell"]) >= 1, "kernel.samples_per_cell must be >= 1")

    spectral = _merged("spectral", doc.get("spectral", {}))
    _require(int(spectral["modes"]) >= 3, "spectral.modes must be >= 3")
    _require(
        spectral["rank"] == "auto" or int(spectral["rank"]) >= 1,
        "spectral.rank must be 'auto' or a positive integer",
    )
    _require(
        spectral["rank_method"] in ("max-ratio", "threshold"),
        "spectral.rank_method must be 'max-ratio' or 'threshold'",
    )
    _require(float(spectral["eps"]) > 0, "spectral.eps must be positive")
    _require(int(spectral["collapse_t_max"]) >= 3, "spectral.collapse_t_max must be >= 3")

    metrics = _merged("metrics", doc.get("metrics", {}))
    _require(int(metrics["bootstrap"]) == 0 or int(metrics["bootstrap"]) >= 2,
             "metrics.bootstrap must be 0 (skip) or >= 2")
    _require(0 < float(metrics["fraction"]) <= 1, "metrics.fraction must lie in (0, 1]")
    _require(0 < float(metrics["split_fraction"]) < 1, "metrics.split_fraction must lie in (0, 1)")

    skeleton = _merged("skeleton", doc.get("skeleton", {}))
    _require(float(skeleton["threshold"]) >= 0, "skeleton.threshold must be >= 0")
    _require(int(skeleton["rollouts"]) >= 0, "skeleton.rollouts must be >= 0")
    _require(int(skeleton["horizon"]) >= 1, "skeleton.horizon must be >= 1")

    simulate = _merged("simulate", doc.get("simulate", {}))
    _require(int(simulate["rollouts"]) >= 1, "simulate.rollouts must be >= 1")
    _require(int(simulate["steps"]) >= 1, "simulate.steps must be >= 1")

    adiabatic = _merged("adiabatic", doc.get("adiabatic", {}))
    _require(int(adiabatic["size"]) >= 2, "adiabatic.size must be >= 2")
    _require(int(adiabatic["horizon"]) >= 1, "adiabatic.horizon must be >= 1")
    _require(all(e > 0 for e in adiabatic["etas"]), "adiabatic.etas must be positive")

    workers = doc.get("workers", 1)
    if workers_override is not None:
        workers = workers_override
    _require(isinstance(workers, int) and workers >= 1, "workers must be a positive integer")

    return RunConfig(
        seed=seed,
        input=inp,
        kernel=kernel,
        spectral=spectral,
        metrics=metrics,
        skeleton=skeleton,
        simulate=simulate,
        adiabatic=adiabatic,
        workers=workers,
    )

"""Continuous state machine dynamics.

A machine is the tuple (state box M, control simplex over a finite
vocabulary, transition s+ = tanh(A s + B u), decoder, identity policy,
initial state). The decoder is either the deterministic softmax of linear
logit functionals or its Gaussian-logit randomization; the identity policy
closes the loop u_{t+1} = O(s_{t+1}).

Reproducibility contract for the stochastic decoder: one standard-normal
vector of length |vocab| is consumed per decode call, in token-index order.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .errors import NumericalBlowUpError, ShapeError
from .statespace import StateBox
from .validation import as_matrix, as_vector, check_simplex

DECODERS = ("softmax", "gaussian")


@dataclass(frozen=True)
class CSMSpec:
    """Parameters of a continuous state machine.

    A is d x d, B is d x vocab, logits is vocab x d (one logit functional
    per token). tanh keeps every image inside [-1, 1]^d, which must be
    contained in the state box.
    """

    A: np.ndarray
    B: np.ndarray
    logits: np.ndarray
    decoder: str = "softmax"
    sigma_dec: float = 0.0
    s0: np.ndarray | None = None
    box: StateBox | None = None

    def __post_init__(self):
        A = as_matrix(self.A, "A")
        B = as_matrix(self.B, "B")
        L = as_matrix(self.logits, "logits")
        d = A.shape[0]
        if A.shape != (d, d):
            raise ShapeError(f"shape error: A must be square, got {A.shape}")
        if B.shape[0] != d:
            raise ShapeError(f"shape error: B has {B.shape[0]} rows, expected {d}")
        vocab = B.shape[1]
        if L.shape != (vocab, d):
            raise ShapeError(f"shape error: logits must be ({vocab}, {d}), got {L.shape}")
        if self.decoder not in DECODERS:
            raise ValueError(f"decoder must be one of {DECODERS}, got {self.decoder!r}")
        if self.sigma_dec < 0:
            raise ValueError("sigma_dec must be >= 0")
        box = self.box if self.box is not None else StateBox.symmetric(d)
        if box.d != d:
            raise ShapeError(f"shape error: box dimension {box.d} != state dimension {d}")
        if np.any(box.lower > -1.0) or np.any(box.upper < 1.0):
            raise ValueError("state box must contain [-1, 1]^d, the range of tanh")
        s0 = np.zeros(d) if self.s0 is None else as_vector(self.s0, "s0")
        if s0.shape != (d,):
            raise ShapeError(f"shape error: s0 has shape {s0.shape}, expected ({d},)")
        if not bool(box.contains(s0[None, :])[0]):
            raise ValueError("s0 must lie inside the state box")
        for name, arr in (("A", A), ("B", B), ("logits", L), ("s0", s0)):
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        object.__setattr__(self, "box", box)

    @property
    def d(self) -> int:
        return self.A.shape[0]

    @property
    def vocab(self) -> int:
        return self.B.shape[1]


@dataclass
class Trajectory:
    """Closed-loop run: states s_t and the controls u_t = O(s_t) actually used.

    Both arrays have steps+1 rows; s_{t+1} = tanh(A s_t + B u_t) holds exactly
    for the recorded controls, in stochastic mode too (noise enters only
    through u).
    """

    states: np.ndarray
    controls: np.ndarray
    mode: str
    seed: int | None = None

    @property
    def steps(self) -> int:
        return self.states.shape[0] - 1


@dataclass(frozen=True)
class ConfidencePolicy:
    """Parameters of the residual-based confidence rule conf = exp(-alpha ||eps||)."""

    alpha: float = 1.0
    tau: float = 0.5
    tol: float = 1e-8
    max_steps: int = 500
    window_frac: float = 0.1

    def __post_init__(self):
        if self.alpha <= 0:
            raise ValueError("alpha must be > 0")
        if not (0.0 < self.tau < 1.0):
            raise ValueError("tau must lie in (0, 1)")
        if not (0.0 < self.window_frac <= 1.0):
            raise ValueError("window_frac must lie in (0, 1]")


@dataclass
class AttractorDecision:
    index: int | None
    confidence: float
    decision: str  # "accept" | "unknown"
    residual: float
    limit: np.ndarray


def _softmax(z: np.ndarray) -> np.ndarray:
    z = z - z.max()
    e = np.exp(z)
    return e / e.sum()


def step_deterministic(spec: CSMSpec, s: np.ndarray, u: np.ndarray) -> np.ndarray:
    """One transition tanh(A s + B u); the image lies in [-1, 1]^d."""
    s = as_vector(s, "state")
    u = as_vector(u, "control")
    if s.shape != (spec.d,):
        raise ShapeError(f"shape error: state has shape {s.shape}, expected ({spec.d},)")
    if u.shape != (spec.vocab,):
        raise ShapeError(f"shape error: control has shape {u.shape}, expected ({spec.vocab},)")
    check_simplex(u, atol=1e-9)
    return np.tanh(spec.A @ s + spec.B @ u)


def decode_softmax(spec: CSMSpec, s: np.ndarray) -> np.ndarray:
    """Deterministic decoder: softmax of the token logit functionals at s."""
    s = as_vector(s, "state")
    if s.shape != (spec.d,):
        raise ShapeError(f"shape error: state has shape {s.shape}, expected ({spec.d},)")
    return _softmax(spec.logits @ s)


def decode_stochastic(spec: CSMSpec, s: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Gaussian-logit decoder: softmax(z), z ~ N(logits @ s, sigma_dec^2 I).

    Consumes exactly vocab standard normals in token-index order; at
    sigma_dec = 0 the output equals decode_softmax.
    """
    s = as_vector(s, "state")
    if s.shape != (spec.d,):
        raise ShapeError(f"shape error: state has shape {s.shape}, expected ({spec.d},)")
    z = spec.logits @ s + spec.sigma_dec * rng.standard_normal(spec.vocab)
    return _softmax(z)


def _decode(spec: CSMSpec, s: np.ndarray, rng: np.random.Generator | None) -> np.ndarray:
    if spec.decoder == "gaussian":
        if rng is None:
            raise ValueError("gaussian decoder requires a generator")
        return decode_stochastic(spec, s, rng)
    return decode_softmax(spec, s)


def simulate(
    spec: CSMSpec,
    steps: int,
    s0: np.ndarray | None = None,
    seed: int | np.random.Generator = 0,
    control_overrides: dict | None = None,
) -> Trajectory:
    """Closed-loop trajectory of length steps+1 from s0 (default spec.s0).

    ``control_overrides`` maps step index t to an exogenous control used in
    place of the decoded one at that step (extension point for user input;
    the closed-loop examples never exercise it).
    """
    if steps < 1:
        raise ValueError("steps must be >= 1")
    s = spec.s0.copy() if s0 is None else as_vector(s0, "s0").copy()
    if s.shape != (spec.d,):
        raise ShapeError(f"shape error: s0 has shape {s.shape}, expected ({spec.d},)")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    seed_info = None if isinstance(seed, np.random.Generator) else int(seed)
    overrides = control_overrides or {}

    states = np.empty((steps + 1, spec.d))
    controls = np.empty((steps + 1, spec.vocab))
    for t in range(steps + 1):
        states[t] = s
        u = overrides.get(t)
        if u is None:
            u = _decode(spec, s, rng)
        else:
            u = as_vector(u, "control override")
            check_simplex(u, atol=1e-9)
        controls[t] = u
        if t < steps:
            s = np.tanh(spec.A @ s + spec.B @ u)
            if not np.all(np.isfinite(s)):
                raise NumericalBlowUpError(f"numerical blow-up at step {t + 1}")
    mode = "stochastic" if spec.decoder == "gaussian" else "deterministic"
    return Trajectory(states=states, controls=controls, mode=mode, seed=seed_info)


def run_until_settled(
    spec: CSMSpec,
    policy: ConfidencePolicy,
    s0: np.ndarray | None = None,
    seed: int | np.random.Generator = 0,
) -> Trajectory:
    """Simulate until the step residual drops below policy.tol.

    Runs at most policy.max_steps transitions; the caller classifies the
    returned trajectory (a drifting system simply uses the full budget and
    then falls to the confidence gate).
    """
    s = spec.s0.copy() if s0 is None else as_vector(s0, "s0").copy()
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    seed_info = None if isinstance(seed, np.random.Generator) else int(seed)
    states = [s]
    controls = []
    for _ in range(policy.max_steps):
        u = _decode(spec, s, rng)
        controls.append(u)
        nxt = np.tanh(spec.A @ s + spec.B @ u)
        if not np.all(np.isfinite(nxt)):
            raise NumericalBlowUpError("numerical blow-up during settle run")
        states.append(nxt)
        done = np.linalg.norm(nxt - s) < policy.tol
        s = nxt
        if done:
            break
    controls.append(_decode(spec, s, rng))
    mode = "stochastic" if spec.decoder == "gaussian" else "deterministic"
    return Trajectory(
        states=np.asarray(states), controls=np.asarray(controls), mode=mode, seed=seed_info
    )


def softmax_jacobian(spec: CSMSpec, s: np.ndarray) -> np.ndarray:
    """d(softmax(logits @ s))/ds, shape (vocab, d)."""
    p = decode_softmax(spec, s)
    return (np.diag(p) - np.outer(p, p)) @ spec.logits


def closed_loop_jacobian(spec: CSMSpec, s: np.ndarray) -> np.ndarray:
    """Jacobian of s -> tanh(A s + B O(s)) with the softmax decoder."""
    u = decode_softmax(spec, s)
    z = spec.A @ s + spec.B @ u
    damp = 1.0 - np.tanh(z) ** 2
    return damp[:, None] * (spec.A + spec.B @ softmax_jacobian(spec, s))


def lipschitz_estimate(spec: CSMSpec, n_samples: int = 200, seed: int = 0) -> tuple:
    """(analytic, sampled) bound for the transition's rate of change in s.

    The analytic bound is ||A||_2 since |tanh'| <= 1. The sampled value is
    the max over random (s, u) of ||diag(1 - tanh^2(A s + B u)) A||_2, which
    never exceeds the analytic bound.
    """
    analytic = float(np.linalg.norm(spec.A, 2))
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(n_samples):
        s = rng.uniform(spec.box.lower, spec.box.upper)
        u = rng.dirichlet(np.ones(spec.vocab))
        damp = 1.0 - np.tanh(spec.A @ s + spec.B @ u) ** 2
        worst = max(worst, float(np.linalg.norm(damp[:, None] * spec.A, 2)))
    return analytic, worst


def classify_attractor(
    trajectory: Trajectory,
    attractors,
    policy: ConfidencePolicy,
) -> AttractorDecision:
    """Confidence-gated attractor decision for a finished trajectory.

    The residual is the distance from the final state to the nearest listed
    attractor, or to the trajectory's own limit estimate (final-window mean)
    when the list is empty. Confidence exp(-alpha ||eps||) below tau yields
    the "unknown" decision with no attractor index.
    """
    states = trajectory.states
    if states.shape[0] < 2:
        raise ValueError("trajectory must contain at least 2 states")
    final = states[-1]
    attractors = [as_vector(a, "attractor") for a in (attractors or [])]
    if attractors:
        dists = np.array([np.linalg.norm(final - a) for a in attractors])
        idx = int(np.argmin(dists))
        residual = float(dists[idx])
        limit = attractors[idx]
    else:
        window = max(2, int(np.ceil(policy.window_frac * states.shape[0])))
        limit = states[-window:].mean(axis=0)
        residual = float(np.linalg.norm(final - limit))
        idx = None
    confidence = float(np.exp(-policy.alpha * residual))
    if confidence < policy.tau:
        return AttractorDecision(None, confidence, "unknown", residual, limit)
    return AttractorDecision(idx, confidence, "accept", residual, limit)


# ---------------------------------------------------------------------------
# External formats


def spec_to_json(spec: CSMSpec, path=None) -> str:
    """Serialize to the documented JSON layout (matrices row-major)."""
    doc = {
        "d": spec.d,
        "vocab": spec.vocab,
        "A": spec.A.ravel().tolist(),
        "B": spec.B.ravel().tolist(),
        "logits": spec.logits.tolist(),
        "decoder": spec.decoder,
        "sigma_dec": spec.sigma_dec,
        "s0": spec.s0.tolist(),
    }
    text = json.dumps(doc, indent=2, sort_keys=True)
    if path is not None:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(text + "\n")
    return text


def spec_from_json(source) -> CSMSpec:
    """Load a spec from a JSON string, dict, or file path."""
    if isinstance(source, dict):
        doc = source
    else:
        text = str(source)
        if "\n" not in text and not text.lstrip().startswith("{"):
            with open(text, encoding="utf-8") as fh:
                doc = json.load(fh)
        else:
            doc = json.loads(text)
    d, vocab = int(doc["d"]), int(doc["vocab"])
    return CSMSpec(
        A=np.asarray(doc["A"], dtype=float).reshape(d, d),
        B=np.asarray(doc["B"], dtype=float).reshape(d, vocab),
        logits=np.asarray(doc["logits"], dtype=float).reshape(vocab, d),
        decoder=doc.get("decoder", "softmax"),
        sigma_dec=float(doc.get("sigma_dec", 0.0)),
        s0=np.asarray(doc["s0"], dtype=float) if "s0" in doc else None,
    )


def write_trajectory_csv(trajectory: Trajectory, path) -> None:
    """CSV rows t,s0..s{d-1},u0..u{vocab-1}."""
    d = trajectory.states.shape[1]
    vocab = trajectory.controls.shape[1]
    header = ["t"] + [f"s{i}" for i in range(d)] + [f"u{i}" for i in range(vocab)]
    with open(path, "w", newline="", encoding="utf-8") as fh:
        fh.write(",".join(header) + "\n")
        for t in range(trajectory.states.shape[0]):
            cells = [str(t)]
            cells += [f"{v:.17g}" for v in trajectory.states[t]]
            cells += [f"{v:.17g}" for v in trajectory.controls[t]]
            fh.write(",".join(cells) + "\n")


def read_trajectory_csv(path, mode: str = "deterministic") -> Trajectory:
    with open(path, encoding="utf-8") as fh:
        header = fh.readline().strip().split(",")
        d = sum(1 for h in header if h.startswith("s"))
        rows = [line.strip().split(",") for line in fh if line.strip()]
    states = np.array([[float(v) for v in r[1 : 1 + d]] for r in rows])
    controls = np.array([[float(v) for v in r[1 + d :]] for r in rows])
    return Trajectory(states=states, controls=controls, mode=mode)

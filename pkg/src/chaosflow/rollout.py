"""Long-horizon autonomous prediction and pointwise comparison."""
from __future__ import annotations

import hashlib
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .flownet import FlowMapModel, checkpoint_to_bytes, net_forward
from .trajectory import Trajectory

__all__ = [
    "PredictionRun",
    "LOG_ERROR_FLOOR",
    "model_fingerprint",
    "predict",
    "continue_run",
    "pointwise_log_abs_error",
    "stability_envelope",
    "passes_stability",
]

# log10 |error| is clipped from below here, so exact agreement reads as -16
LOG_ERROR_FLOOR = -16.0


def model_fingerprint(model: FlowMapModel) -> str:
    return hashlib.sha256(checkpoint_to_bytes(model)).hexdigest()


@dataclass
class PredictionRun:
    model_ref: str
    seed_window: np.ndarray
    dt: float
    predicted: Trajectory
    diverged_at: Optional[int] = None

    @property
    def diverged(self) -> bool:
        return self.diverged_at is not None

    def manifest(self) -> dict:
        return {
            "model_ref": self.model_ref,
            "dt": self.dt,
            "seed_rows": int(self.seed_window.shape[0]),
            "predicted_rows": self.predicted.n_rows,
            "diverged": self.diverged,
            "diverged_at": self.diverged_at,
        }


def predict(
    model: FlowMapModel,
    seed_window,
    n_steps: int,
    dt: Optional[float] = None,
    t0: float = 0.0,
    labels: Optional[Sequence[str]] = None,
) -> PredictionRun:
    """March the model ``n_steps`` beyond the seed window.

    The returned trajectory starts with the seed rows verbatim. If a step
    produces a non-finite state, the trajectory stops before it and
    ``diverged_at`` holds that step number (1-based); no exception is raised.
    """
    seed = np.array(seed_window, dtype=np.float64)
    if seed.shape != (model.window_len, model.obs_dim):
        raise ValueError(
            f"seed window has shape {seed.shape}, expected ({model.window_len}, {model.obs_dim})"
        )
    if n_steps < 0:
        raise ValueError("n_steps must be >= 0")
    if dt is None:
        dt = float(model.meta.get("dt", 1.0))
    L = model.window_len
    S = np.empty((L + n_steps, model.obs_dim))
    S[:L] = seed
    diverged_at = None
    for j in range(n_steps):
        nxt = S[L + j - 1] + net_forward(model, S[j : j + L])
        if not np.all(np.isfinite(nxt)):
            diverged_at = j + 1
            S = S[: L + j]
            break
        S[L + j] = nxt
    traj = Trajectory(dt, t0, S, list(labels) if labels else [])
    return PredictionRun(model_fingerprint(model), seed, dt, traj, diverged_at)


def continue_run(model: FlowMapModel, run: PredictionRun, n_steps: int) -> PredictionRun:
    """Extend ``run`` by ``n_steps`` from its final window."""
    L = model.window_len
    tail = run.predicted.states[-L:]
    t_tail = run.predicted.t0 + (run.predicted.n_rows - L) * run.dt
    more = predict(model, tail, n_steps, run.dt, t_tail, run.predicted.labels)
    states = np.vstack([run.predicted.states, more.predicted.states[L:]])
    diverged = None if more.diverged_at is None else run.predicted.n_rows - L + more.diverged_at
    traj = Trajectory(run.dt, run.predicted.t0, states, run.predicted.labels)
    return PredictionRun(run.model_ref, run.seed_window, run.dt, traj, diverged)


def pointwise_log_abs_error(pred: Trajectory, ref: Trajectory) -> np.ndarray:
    """``log10 |pred - ref|`` per row and variable over the common length,
    clipped below at ``LOG_ERROR_FLOOR``."""
    if not np.isclose(pred.dt, ref.dt, rtol=1e-12, atol=0.0):
        raise ValueError(f"time steps differ: {pred.dt} vs {ref.dt}")
    if pred.dim != ref.dim:
        raise ValueError(f"column counts differ: {pred.dim} vs {ref.dim}")
    if not np.isclose(pred.t0, ref.t0, rtol=0.0, atol=1e-9 * ref.dt):
        raise ValueError(f"start times differ: {pred.t0} vs {ref.t0}")
    n = min(pred.n_rows, ref.n_rows)
    diff = np.abs(pred.states[:n] - ref.states[:n])
    with np.errstate(divide="ignore"):
        out = np.log10(diff)
    return np.maximum(out, LOG_ERROR_FLOOR)


def stability_envelope(ref: Trajectory, factor: float = 1.5) -> np.ndarray:
    """Per-variable bound ``factor * max |ref|``."""
    return factor * ref.envelope()


def passes_stability(pred: Trajectory, envelope) -> bool:
    return bool(np.all(pred.envelope() <= np.asarray(envelope)))

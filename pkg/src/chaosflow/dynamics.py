"""Reference chaotic systems and a fixed-step RK4 integrator.

Lorenz 63 and Lorenz 96 are the only shipped systems. Trajectories are
recorded every ``dt`` seconds while the integrator internally takes
``substeps`` RK4 steps of size ``dt / substeps``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Union

import numpy as np
from numba import njit

from .trajectory import Trajectory

__all__ = [
    "IntegrationDivergedError",
    "Lorenz63Params",
    "Lorenz96Params",
    "SystemSpec",
    "lorenz63_rhs",
    "lorenz96_rhs",
    "rk4_step",
    "integrate",
]


class IntegrationDivergedError(FloatingPointError):
    """Raised when an RK4 stage produces a non-finite value."""

    def __init__(self, step: int, message: str | None = None):
        self.step = step
        super().__init__(message or f"integration diverged at step {step}")


@dataclass(frozen=True)
class Lorenz63Params:
    sigma: float = 10.0
    rho: float = 28.0
    beta: float = 8.0 / 3.0

    def __post_init__(self):
        for name in ("sigma", "rho", "beta"):
            if not math.isfinite(getattr(self, name)):
                raise ValueError(f"Lorenz63Params.{name} must be finite")


@dataclass(frozen=True)
class Lorenz96Params:
    n: int = 40
    forcing: float = 8.0
    # 1.0 gives the standard Lorenz 96 system; 0.0 drops the linear term
    damping: float = 1.0

    def __post_init__(self):
        if int(self.n) != self.n or self.n < 4:
            raise ValueError(f"Lorenz96Params.n must be an integer >= 4, got {self.n}")
        if not math.isfinite(self.forcing):
            raise ValueError("Lorenz96Params.forcing must be finite")
        if not (math.isfinite(self.damping) and self.damping >= 0):
            raise ValueError("Lorenz96Params.damping must be finite and >= 0")


Params = Union[Lorenz63Params, Lorenz96Params]


@dataclass(frozen=True)
class SystemSpec:
    """A reference system: ``kind`` is ``"lorenz63"`` or ``"lorenz96"``."""

    kind: str
    params: Params = field(default=None)  # type: ignore[assignment]

    def __post_init__(self):
        kind = self.kind.lower().replace(" ", "").replace("_", "")
        if kind not in ("lorenz63", "lorenz96"):
            raise ValueError(f"unknown system kind {self.kind!r}")
        object.__setattr__(self, "kind", kind)
        if self.params is None:
            default = Lorenz63Params() if kind == "lorenz63" else Lorenz96Params()
            object.__setattr__(self, "params", default)
        expected = Lorenz63Params if kind == "lorenz63" else Lorenz96Params
        if not isinstance(self.params, expected):
            raise TypeError(f"{kind} requires {expected.__name__}, got {type(self.params).__name__}")

    @property
    def dim(self) -> int:
        return 3 if self.kind == "lorenz63" else self.params.n

    @property
    def labels(self) -> list[str]:
        if self.kind == "lorenz63":
            return ["x", "y", "z"]
        return [f"x{i + 1}" for i in range(self.dim)]

    def rhs(self, state: np.ndarray) -> np.ndarray:
        if self.kind == "lorenz63":
            return lorenz63_rhs(state, self.params)
        return lorenz96_rhs(state, self.params)

    def to_dict(self) -> dict:
        p = self.params
        if self.kind == "lorenz63":
            params = {"sigma": p.sigma, "rho": p.rho, "beta": p.beta}
        else:
            params = {"n": p.n, "forcing": p.forcing, "damping": p.damping}
        return {"kind": self.kind, "params": params}

    @classmethod
    def from_dict(cls, d: dict) -> "SystemSpec":
        kind = str(d["kind"]).lower().replace("_", "")
        raw = d.get("params", {}) or {}
        params = Lorenz63Params(**raw) if kind == "lorenz63" else Lorenz96Params(**raw)
        return cls(kind, params)


def lorenz63_rhs(state, params: Lorenz63Params = Lorenz63Params()) -> np.ndarray:
    x, y, z = np.asarray(state, dtype=np.float64)
    return np.array(
        [
            params.sigma * (y - x),
            x * (params.rho - z) - y,
            x * y - params.beta * z,
        ]
    )


def lorenz96_rhs(state, params: Lorenz96Params = Lorenz96Params()) -> np.ndarray:
    """Lorenz 96 tendency with cyclic indexing.

    Component ``i`` is ``(x[i+1] - x[i-2]) * x[i-1] - damping * x[i] + forcing``.
    """
    x = np.asarray(state, dtype=np.float64)
    if x.shape != (params.n,):
        raise ValueError(f"state has shape {x.shape}, expected ({params.n},)")
    return (np.roll(x, -1) - np.roll(x, 2)) * np.roll(x, 1) - params.damping * x + params.forcing


def rk4_step(rhs: Callable[[np.ndarray], np.ndarray], state, dt: float, step: int = 0) -> np.ndarray:
    """One classical RK4 step. ``step`` only labels a divergence error."""
    if not dt > 0:
        raise ValueError(f"dt must be positive, got {dt}")
    x = np.asarray(state, dtype=np.float64)
    k1 = np.asarray(rhs(x), dtype=np.float64)
    k2 = np.asarray(rhs(x + 0.5 * dt * k1), dtype=np.float64)
    k3 = np.asarray(rhs(x + 0.5 * dt * k2), dtype=np.float64)
    k4 = np.asarray(rhs(x + dt * k3), dtype=np.float64)
    out = x + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
    if not (np.all(np.isfinite(k4)) and np.all(np.isfinite(out))):
        raise IntegrationDivergedError(step)
    return out


# Compiled kernels for the two shipped systems. The arithmetic mirrors
# lorenz63_rhs / lorenz96_rhs / rk4_step operation for operation.

@njit(cache=True)
def _l63(x, out, sigma, rho, beta):
    out[0] = sigma * (x[1] - x[0])
    out[1] = x[0] * (rho - x[2]) - x[1]
    out[2] = x[0] * x[1] - beta * x[2]


@njit(cache=True)
def _l96(x, out, forcing, damping):
    n = x.shape[0]
    for i in range(n):
        out[i] = (x[(i + 1) % n] - x[(i - 2) % n]) * x[(i - 1) % n] - damping * x[i] + forcing


@njit(cache=True)
def _rhs(kind, x, out, p0, p1, p2):
    if kind == 0:
        _l63(x, out, p0, p1, p2)
    else:
        _l96(x, out, p0, p1)


@njit(cache=True)
def _integrate_kernel(kind, x0, h, n_steps, substeps, p0, p1, p2, states):
    d = x0.shape[0]
    x = x0.copy()
    k1 = np.empty(d)
    k2 = np.empty(d)
    k3 = np.empty(d)
    k4 = np.empty(d)
    tmp = np.empty(d)
    states[0, :] = x
    for n in range(n_steps):
        for _ in range(substeps):
            _rhs(kind, x, k1, p0, p1, p2)
            for i in range(d):
                tmp[i] = x[i] + 0.5 * h * k1[i]
            _rhs(kind, tmp, k2, p0, p1, p2)
            for i in range(d):
                tmp[i] = x[i] + 0.5 * h * k2[i]
            _rhs(kind, tmp, k3, p0, p1, p2)
            for i in range(d):
                tmp[i] = x[i] + h * k3[i]
            _rhs(kind, tmp, k4, p0, p1, p2)
            for i in range(d):
                x[i] = x[i] + (h / 6.0) * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i])
                if not np.isfinite(x[i]):
                    return n + 1
        states[n + 1, :] = x
    return -1


def integrate(
    system: SystemSpec,
    x0,
    dt: float,
    n_steps: int,
    substeps: int = 10,
    t0: float = 0.0,
) -> Trajectory:
    """Integrate ``system`` from ``x0`` and record ``n_steps + 1`` states spaced by ``dt``.

    Raises
    ------
    IntegrationDivergedError
        If the state becomes non-finite; ``err.step`` is the recorded step index.
    """
    if not dt > 0:
        raise ValueError(f"dt must be positive, got {dt}")
    if n_steps < 1:
        raise ValueError(f"n_steps must be >= 1, got {n_steps}")
    if substeps < 1:
        raise ValueError(f"substeps must be >= 1, got {substeps}")
    x0 = np.array(x0, dtype=np.float64)
    if x0.shape != (system.dim,):
        raise ValueError(f"x0 has shape {x0.shape}, expected ({system.dim},)")
    if not np.all(np.isfinite(x0)):
        raise ValueError("x0 must be finite")

    p = system.params
    if system.kind == "lorenz63":
        kind, pars = 0, (p.sigma, p.rho, p.beta)
    else:
        kind, pars = 1, (p.forcing, p.damping, 0.0)

    states = np.empty((n_steps + 1, system.dim))
    failed = _integrate_kernel(kind, x0, dt / substeps, int(n_steps), int(substeps), *pars, states)
    if failed >= 0:
        raise IntegrationDivergedError(int(failed))
    return Trajectory(dt=float(dt), t0=float(t0), states=states, labels=system.labels)

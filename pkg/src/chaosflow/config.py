"""Experiment configuration, presets and validation.

An experiment config is a JSON object with the sections ``system``,
``observation``, ``simulate``, ``dataset``, ``model``, ``train``, ``test`` and
``metrics``. Horizons are in seconds and converted to step counts with the
simulation ``dt``.

Presets ``ex1`` ... ``ex4`` are the four reference experiments at full
scale. The ``-desk`` variants keep the protocol but shrink the training
trajectory to 1,000 s, the dataset to 2,000 sequences and the epoch count
(2,000 for Lorenz 63, 500 for reduced Lorenz 96, 200 for full Lorenz 96), and
standardise the network inputs and outputs so that the short budget converges.
"""
from __future__ import annotations

import copy
import hashlib
import json
from dataclasses import dataclass
from pathlib import Path

from .chaostats import MetricsConfig
from .dataset import DatasetSpec, ObservationSpec
from .dynamics import SystemSpec
from .flownet import TrainConfig

__all__ = [
    "ExperimentConfig",
    "ConfigError",
    "PRESETS",
    "preset",
    "validate_config",
    "load_config",
    "config_hash",
]


class ConfigError(ValueError):
    def __init__(self, violations: list[str]):
        self.violations = violations
        super().__init__("invalid config:\n  " + "\n  ".join(violations))


def _metrics(dim: int, acf_max_lag: int = 500) -> dict:
    return MetricsConfig.from_dict(
        {"embedding": {"dim": dim, "lag": 1}, "acf_max_lag": acf_max_lag}
    ).to_dict() | {"stability_factor": 1.5}


def _lorenz63(name, obs, memory_len, m_seq, epochs, horizon, normalize):
    return {
        "name": name,
        "system": {"kind": "lorenz63", "params": {"sigma": 10.0, "rho": 28.0, "beta": 8.0 / 3.0}},
        "observation": {"indices": obs},
        "simulate": {"dt": 0.01, "horizon": horizon, "initial_condition": [1.0, 1.0, 1.0], "substeps": 10},
        "dataset": {"m_sequences": m_seq, "memory_len": memory_len, "recurrent_len": 10, "seed": 0},
        "model": {"hidden_layers": [20, 20, 20], "memory_len": memory_len, "init_seed": 0},
        "train": {
            "epochs": epochs, "batch_size": 50, "learning_rate": 1e-3, "recurrent_len": 10,
            "seed": 0, "shuffle": True, "normalize": normalize,
        },
        "test": {"initial_condition": [10.0, 10.0, 20.0], "horizon": 100.0},
        "metrics": _metrics(3),
    }


def _lorenz96(name, obs, memory_len, widths, m_seq, epochs, horizon, test_horizon, normalize):
    n = 40
    return {
        "name": name,
        "system": {"kind": "lorenz96", "params": {"n": n, "forcing": 8.0, "damping": 1.0}},
        "observation": {"indices": obs},
        "simulate": {
            "dt": 0.01, "horizon": horizon, "initial_condition": [8.0081] + [8.0] * (n - 1), "substeps": 10,
        },
        "dataset": {"m_sequences": m_seq, "memory_len": memory_len, "recurrent_len": 10, "seed": 0},
        "model": {"hidden_layers": widths, "memory_len": memory_len, "init_seed": 0},
        "train": {
            "epochs": epochs, "batch_size": 50, "learning_rate": 1e-3, "recurrent_len": 10,
            "seed": 0, "shuffle": True, "normalize": normalize,
        },
        "test": {"initial_condition": [8.01] + [8.0] * (n - 1), "horizon": test_horizon},
        "metrics": _metrics(n),
    }


PRESETS: dict[str, dict] = {
    "ex1": _lorenz63("ex1", [0, 1, 2], 0, 10_000, 10_000, 10_000.0, False),
    "ex2": _lorenz63("ex2", [0, 1], 10, 10_000, 10_000, 10_000.0, False),
    "ex3": _lorenz96("ex3", list(range(40)), 0, [200] * 3, 100_000, 2_000, 10_000.0, 500.0, False),
    "ex4": _lorenz96("ex4", [0, 1, 2], 100, [20] * 10, 10_000, 10_000, 10_000.0, 100.0, False),
    "ex1-desk": _lorenz63("ex1-desk", [0, 1, 2], 0, 2_000, 2_000, 1_000.0, True),
    "ex2-desk": _lorenz63("ex2-desk", [0, 1], 10, 2_000, 2_000, 1_000.0, True),
    "ex3-desk": _lorenz96("ex3-desk", list(range(40)), 0, [200] * 3, 2_000, 200, 1_000.0, 50.0, True),
    "ex4-desk": _lorenz96("ex4-desk", [0, 1, 2], 100, [20] * 10, 2_000, 500, 1_000.0, 51.0, True),
}


def preset(name: str) -> dict:
    try:
        return copy.deepcopy(PRESETS[name])
    except KeyError:
        raise KeyError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}") from None


def _steps(horizon: float, dt: float) -> int:
    return int(round(horizon / dt))


@dataclass
class ExperimentConfig:
    name: str
    system: SystemSpec
    observation: ObservationSpec
    dt: float
    sim_steps: int
    sim_x0: list[float]
    substeps: int
    dataset: DatasetSpec
    hidden_layers: list[int]
    memory_len: int
    init_seed: int
    train: TrainConfig
    test_x0: list[float]
    test_steps: int
    metrics: MetricsConfig
    stability_factor: float
    raw: dict

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        problems = validate_config(d)
        if problems:
            raise ConfigError(problems)
        sim, test, mdl = d["simulate"], d["test"], d["model"]
        metrics = dict(d.get("metrics", {}))
        factor = float(metrics.pop("stability_factor", 1.5))
        return cls(
            name=str(d.get("name", "experiment")),
            system=SystemSpec.from_dict(d["system"]),
            observation=ObservationSpec(tuple(d["observation"]["indices"])),
            dt=float(sim["dt"]),
            sim_steps=_steps(sim["horizon"], sim["dt"]),
            sim_x0=[float(v) for v in sim["initial_condition"]],
            substeps=int(sim.get("substeps", 10)),
            dataset=DatasetSpec(**d["dataset"]),
            hidden_layers=[int(w) for w in mdl["hidden_layers"]],
            memory_len=int(mdl["memory_len"]),
            init_seed=int(mdl.get("init_seed", 0)),
            train=TrainConfig(**d["train"]),
            test_x0=[float(v) for v in test["initial_condition"]],
            test_steps=_steps(test["horizon"], sim["dt"]),
            metrics=MetricsConfig.from_dict(metrics),
            stability_factor=factor,
            raw=copy.deepcopy(d),
        )


def _try(violations: list[str], path: str, fn):
    try:
        return fn()
    except (TypeError, ValueError, KeyError, IndexError) as exc:
        violations.append(f"{path}: {exc}")
        return None


def validate_config(d: dict) -> list[str]:
    """Every violated constraint as ``"<field path>: <problem>"``; empty when valid."""
    v: list[str] = []
    if not isinstance(d, dict):
        return ["<root>: config must be a JSON object"]
    for section in ("system", "observation", "simulate", "dataset", "model", "train", "test"):
        if not isinstance(d.get(section), dict):
            v.append(f"{section}: missing or not an object")
    if v:
        return v

    system = _try(v, "system", lambda: SystemSpec.from_dict(d["system"]))
    dim = system.dim if system else None

    indices = d["observation"].get("indices")
    obs = _try(v, "observation.indices", lambda: ObservationSpec(tuple(indices)))
    if obs and dim is not None:
        for i in obs.indices:
            if i >= dim:
                v.append(f"observation.indices: index {i} out of range for {dim}-dimensional system")

    sim = d["simulate"]
    dt = sim.get("dt")
    if not isinstance(dt, (int, float)) or not dt > 0:
        v.append(f"simulate.dt: must be a positive number, got {dt!r}")
        dt = None
    if not isinstance(sim.get("horizon"), (int, float)) or not sim["horizon"] > 0:
        v.append("simulate.horizon: must be a positive number of seconds")
    if int(sim.get("substeps", 10)) < 1:
        v.append("simulate.substeps: must be >= 1")
    x0 = sim.get("initial_condition")
    if dim is not None and (not isinstance(x0, list) or len(x0) != dim):
        v.append(f"simulate.initial_condition: need {dim} values")

    ds = _try(v, "dataset", lambda: DatasetSpec(**d["dataset"]))
    mdl = d["model"]
    widths = mdl.get("hidden_layers")
    if not isinstance(widths, list) or any((not isinstance(w, int)) or w < 1 for w in widths):
        v.append("model.hidden_layers: must be a list of positive integers")
    mem = mdl.get("memory_len")
    if not isinstance(mem, int) or mem < 0:
        v.append("model.memory_len: must be a non-negative integer")
    elif ds and mem != ds.memory_len:
        v.append(
            f"model.memory_len={mem} disagrees with dataset.memory_len={ds.memory_len} "
            f"(dataset windows have length {ds.window_len})"
        )
    tr = _try(v, "train", lambda: TrainConfig(**d["train"]))
    if tr and ds:
        if tr.recurrent_len != ds.recurrent_len:
            v.append(
                f"train.recurrent_len={tr.recurrent_len} disagrees with dataset.recurrent_len={ds.recurrent_len}"
            )
        if tr.batch_size > ds.m_sequences:
            v.append(f"train.batch_size={tr.batch_size} exceeds dataset.m_sequences={ds.m_sequences}")
    if ds and dt and isinstance(sim.get("horizon"), (int, float)):
        rows = _steps(sim["horizon"], dt) + 1
        if rows < ds.window_len:
            v.append(f"simulate.horizon: {rows} rows cannot hold windows of {ds.window_len} rows")

    test = d["test"]
    tx0 = test.get("initial_condition")
    if dim is not None and (not isinstance(tx0, list) or len(tx0) != dim):
        v.append(f"test.initial_condition: need {dim} values")
    th = test.get("horizon")
    if not isinstance(th, (int, float)) or not th > 0:
        v.append("test.horizon: must be a positive number of seconds")
    elif dt and isinstance(mem, int) and _steps(th, dt) < mem + 1:
        v.append(f"test.horizon: fewer steps than the {mem + 1}-row seed window")

    metrics = dict(d.get("metrics", {}))
    factor = metrics.pop("stability_factor", 1.5)
    if not isinstance(factor, (int, float)) or not factor > 0:
        v.append("metrics.stability_factor: must be positive")
    _try(v, "metrics", lambda: MetricsConfig.from_dict(metrics))
    return v


def load_config(source: str) -> dict:
    """A preset name or a path to a JSON file."""
    if source in PRESETS:
        return preset(source)
    return json.loads(Path(source).read_text())


def config_hash(d: dict, sections=None) -> str:
    """SHA-256 of the canonical JSON of ``d`` (or only the listed sections)."""
    part = d if sections is None else {k: d.get(k) for k in sections}
    return hashlib.sha256(json.dumps(part, sort_keys=True).encode()).hexdigest()

"""Observation projection and random memory-window sampling.

A training sequence is a contiguous slice of ``memory_len + recurrent_len + 1``
observed states: ``memory_len + 1`` history rows ending at the current state,
followed by ``recurrent_len`` future rows used as rollout targets.
"""
from __future__ import annotations

import json
import os
import struct
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from .trajectory import Trajectory, atomic_write_bytes, fingerprint

__all__ = [
    "BadObservationError",
    "InsufficientDataError",
    "ObservationSpec",
    "DatasetSpec",
    "SequenceDataset",
    "project_observed",
    "sample_sequences",
    "save_dataset",
    "load_dataset",
]

DS_MAGIC = b"CFDS"
DS_VERSION = 1
# magic, version, M, n_M, K, seed, obs_dim, dt, fingerprint (32 raw bytes)
_DS_HEAD = struct.Struct("<4sIQQQqId32s")


class BadObservationError(IndexError):
    pass


class InsufficientDataError(ValueError):
    def __init__(self, required: int, available: int):
        self.required = required
        self.available = available
        super().__init__(f"trajectory too short: need {required} rows, have {available}")


@dataclass(frozen=True)
class ObservationSpec:
    indices: tuple[int, ...]

    def __post_init__(self):
        idx = tuple(int(i) for i in self.indices)
        object.__setattr__(self, "indices", idx)
        if not idx:
            raise ValueError("observation indices must be non-empty")
        if any(b <= a for a, b in zip(idx, idx[1:])):
            raise ValueError(f"observation indices must be strictly increasing, got {list(idx)}")
        if idx[0] < 0:
            raise BadObservationError(f"observation index {idx[0]} is negative")

    @property
    def dim(self) -> int:
        return len(self.indices)


@dataclass(frozen=True)
class DatasetSpec:
    m_sequences: int
    memory_len: int = 0
    recurrent_len: int = 10
    seed: int = 0

    def __post_init__(self):
        if self.m_sequences < 1:
            raise ValueError("m_sequences must be >= 1")
        if self.memory_len < 0:
            raise ValueError("memory_len must be >= 0")
        if self.recurrent_len < 1:
            raise ValueError("recurrent_len must be >= 1")

    @property
    def window_len(self) -> int:
        return self.memory_len + self.recurrent_len + 1


@dataclass
class SequenceDataset:
    spec: DatasetSpec
    obs_dim: int
    dt: float
    sequences: np.ndarray  # (M, n_M + K + 1, m)
    source_fingerprint: str

    def __post_init__(self):
        self.sequences = np.asarray(self.sequences, dtype=np.float64)
        want = (self.spec.m_sequences, self.spec.window_len, self.obs_dim)
        if self.sequences.shape != want:
            raise ValueError(f"sequences have shape {self.sequences.shape}, expected {want}")
        if not np.all(np.isfinite(self.sequences)):
            raise ValueError("dataset contains non-finite values")

    @property
    def history(self) -> np.ndarray:
        """The ``(M, n_M + 1, m)`` input windows, oldest first."""
        return self.sequences[:, : self.spec.memory_len + 1]

    @property
    def targets(self) -> np.ndarray:
        """The ``(M, K, m)`` rollout targets."""
        return self.sequences[:, self.spec.memory_len + 1 :]


def project_observed(traj: Trajectory, obs: ObservationSpec) -> Trajectory:
    for i in obs.indices:
        if i >= traj.dim:
            raise BadObservationError(f"observation index {i} out of range for {traj.dim} columns")
    idx = list(obs.indices)
    return Trajectory(traj.dt, traj.t0, traj.states[:, idx].copy(), [traj.labels[i] for i in idx])


def sample_sequences(traj: Trajectory, spec: DatasetSpec) -> SequenceDataset:
    """Draw ``spec.m_sequences`` windows with uniformly random start rows (with replacement).

    One generator draw per window, in window order, so the result depends only on
    the trajectory and ``spec.seed``.
    """
    L = spec.window_len
    if traj.n_rows < L:
        raise InsufficientDataError(L, traj.n_rows)
    n_offsets = traj.n_rows - L + 1
    rng = np.random.default_rng(spec.seed)
    starts = rng.integers(0, n_offsets, size=spec.m_sequences)
    windows = traj.states[starts[:, None] + np.arange(L)[None, :]]
    return SequenceDataset(spec, traj.dim, traj.dt, windows, fingerprint(traj))


def _sidecar(ds: SequenceDataset) -> dict:
    return {
        "format": "chaosflow-dataset",
        "version": DS_VERSION,
        "spec": asdict(ds.spec),
        "obs_dim": ds.obs_dim,
        "dt": ds.dt,
        "window_len": ds.spec.window_len,
        "source_fingerprint": ds.source_fingerprint,
    }


def dataset_to_bytes(ds: SequenceDataset) -> bytes:
    s = ds.spec
    head = _DS_HEAD.pack(
        DS_MAGIC, DS_VERSION, s.m_sequences, s.memory_len, s.recurrent_len, s.seed,
        ds.obs_dim, ds.dt, bytes.fromhex(ds.source_fingerprint),
    )
    return head + np.ascontiguousarray(ds.sequences, dtype="<f8").tobytes()


def dataset_from_bytes(buf: bytes) -> SequenceDataset:
    if len(buf) < _DS_HEAD.size:
        raise ValueError("truncated dataset header")
    magic, version, M, n_M, K, seed, m, dt, fp = _DS_HEAD.unpack_from(buf)
    if magic != DS_MAGIC:
        raise ValueError(f"bad dataset magic {magic!r}")
    if version != DS_VERSION:
        raise ValueError(f"unsupported dataset version {version}")
    spec = DatasetSpec(M, n_M, K, seed)
    payload = buf[_DS_HEAD.size:]
    expected = 8 * M * spec.window_len * m
    if len(payload) != expected:
        raise ValueError(f"dataset payload has {len(payload)} bytes, expected {expected}")
    seqs = np.frombuffer(payload, dtype="<f8").reshape(M, spec.window_len, m).astype(np.float64)
    return SequenceDataset(spec, m, dt, seqs, fp.hex())


def save_dataset(ds: SequenceDataset, path: str | os.PathLike) -> Path:
    """Write the binary dataset and a ``.json`` sidecar next to it."""
    path = Path(path)
    atomic_write_bytes(path, dataset_to_bytes(ds))
    side = json.dumps(_sidecar(ds), indent=2, sort_keys=True).encode()
    atomic_write_bytes(path.with_suffix(".json"), side)
    return path


def load_dataset(path: str | os.PathLike) -> SequenceDataset:
    return dataset_from_bytes(Path(path).read_bytes())

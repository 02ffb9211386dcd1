"""Uniformly sampled multivariate time series and its on-disk formats.

Text format::

    # chaosflow-traj v1; dt=<float>; t0=<float>; cols=<label,label,...>
    <row 0 as CSV>
    ...

Binary format (little-endian): ``b"CFTJ"``, version ``u32``, dt ``f64``,
t0 ``f64``, d ``u32``, n ``u64`` (number of rows), then ``n * d`` ``f64``
values in row-major order. The binary layout carries no labels; they are
restored as ``c0, c1, ...`` on read.
"""
from __future__ import annotations

import hashlib
import io
import os
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

__all__ = [
    "Trajectory",
    "TrajectoryFormatError",
    "save_trajectory",
    "load_trajectory",
    "trajectory_to_bytes",
    "trajectory_from_bytes",
    "fingerprint",
]

TEXT_TAG = "chaosflow-traj v1"
BIN_MAGIC = b"CFTJ"
BIN_VERSION = 1
_BIN_HEAD = struct.Struct("<4sIddIQ")


class TrajectoryFormatError(ValueError):
    pass


@dataclass
class Trajectory:
    """States sampled at ``t0 + i * dt``; row ``i`` of ``states`` is the state at that time."""

    dt: float
    t0: float
    states: np.ndarray
    labels: list[str] = field(default_factory=list)

    def __post_init__(self):
        self.states = np.asarray(self.states, dtype=np.float64)
        if self.states.ndim == 1:
            self.states = self.states[:, None]
        if self.states.ndim != 2 or self.states.shape[1] < 1:
            raise ValueError(f"states must be 2-D with at least one column, got {self.states.shape}")
        if not self.dt > 0:
            raise ValueError(f"dt must be positive, got {self.dt}")
        if not np.all(np.isfinite(self.states)):
            raise ValueError("trajectory states must be finite")
        if not self.labels:
            self.labels = [f"c{i}" for i in range(self.dim)]
        self.labels = [str(s) for s in self.labels]
        if len(self.labels) != self.dim:
            raise ValueError(f"{len(self.labels)} labels for {self.dim} columns")
        for lab in self.labels:
            if "," in lab or ";" in lab or "\n" in lab:
                raise ValueError(f"label {lab!r} contains a reserved character")

    @property
    def dim(self) -> int:
        return self.states.shape[1]

    @property
    def n_rows(self) -> int:
        return self.states.shape[0]

    @property
    def times(self) -> np.ndarray:
        return self.t0 + self.dt * np.arange(self.n_rows)

    def __len__(self) -> int:
        return self.n_rows

    def slice(self, start: int, stop: int | None = None) -> "Trajectory":
        """Rows ``start:stop`` with ``t0`` shifted accordingly."""
        states = self.states[start:stop]
        return Trajectory(self.dt, self.t0 + start * self.dt, states.copy(), list(self.labels))

    def envelope(self) -> np.ndarray:
        """Per-column ``max |state|``."""
        return np.max(np.abs(self.states), axis=0)


def trajectory_to_bytes(traj: Trajectory) -> bytes:
    n, d = traj.states.shape
    head = _BIN_HEAD.pack(BIN_MAGIC, BIN_VERSION, traj.dt, traj.t0, d, n)
    return head + np.ascontiguousarray(traj.states, dtype="<f8").tobytes()


def trajectory_from_bytes(buf: bytes) -> Trajectory:
    if len(buf) < _BIN_HEAD.size:
        raise TrajectoryFormatError("truncated trajectory header")
    magic, version, dt, t0, d, n = _BIN_HEAD.unpack_from(buf)
    if magic != BIN_MAGIC:
        raise TrajectoryFormatError(f"bad magic {magic!r}")
    if version != BIN_VERSION:
        raise TrajectoryFormatError(f"unsupported trajectory version {version}")
    payload = buf[_BIN_HEAD.size:]
    if len(payload) != 8 * n * d:
        raise TrajectoryFormatError(f"payload has {len(payload)} bytes, expected {8 * n * d}")
    states = np.frombuffer(payload, dtype="<f8").reshape(n, d).astype(np.float64)
    return Trajectory(dt, t0, states)


def fingerprint(traj: Trajectory) -> str:
    """SHA-256 of the binary encoding; independent of labels and file format."""
    return hashlib.sha256(trajectory_to_bytes(traj)).hexdigest()


def _text_bytes(traj: Trajectory) -> bytes:
    buf = io.StringIO()
    buf.write(f"# {TEXT_TAG}; dt={traj.dt!r}; t0={traj.t0!r}; cols={','.join(traj.labels)}\n")
    # %.17g round-trips every float64 exactly
    np.savetxt(buf, traj.states, fmt="%.17g", delimiter=",")
    return buf.getvalue().encode()


def _parse_text(text: str) -> Trajectory:
    first, _, body = text.partition("\n")
    if not first.startswith("#"):
        raise TrajectoryFormatError("missing trajectory header line")
    fields = [f.strip() for f in first[1:].split(";")]
    if not fields or fields[0] != TEXT_TAG:
        raise TrajectoryFormatError(f"unrecognised header {first!r}")
    meta = {}
    for f in fields[1:]:
        key, sep, val = f.partition("=")
        if not sep:
            raise TrajectoryFormatError(f"malformed header field {f!r}")
        meta[key.strip()] = val.strip()
    try:
        dt = float(meta["dt"])
        t0 = float(meta["t0"])
        labels = meta["cols"].split(",")
    except KeyError as exc:
        raise TrajectoryFormatError(f"header missing {exc}") from None
    states = np.loadtxt(io.StringIO(body), delimiter=",", dtype=np.float64, ndmin=2)
    if states.shape[1] != len(labels):
        raise TrajectoryFormatError(f"{states.shape[1]} columns but {len(labels)} labels")
    return Trajectory(dt, t0, states, labels)


def atomic_write_bytes(path: str | os.PathLike, data: bytes) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(f".{path.name}.tmp{os.getpid()}")
    with open(tmp, "wb") as fh:
        fh.write(data)
        fh.flush()
        os.fsync(fh.fileno())
    os.replace(tmp, path)


def save_trajectory(traj: Trajectory, path: str | os.PathLike, fmt: str | None = None) -> Path:
    """Write ``traj``. ``fmt`` is ``"csv"`` or ``"bin"``; inferred from the suffix if omitted
    (``.cftj``/``.bin`` mean binary, anything else text)."""
    path = Path(path)
    if fmt is None:
        fmt = "bin" if path.suffix in (".cftj", ".bin") else "csv"
    data = trajectory_to_bytes(traj) if fmt == "bin" else _text_bytes(traj)
    atomic_write_bytes(path, data)
    return path


def load_trajectory(path: str | os.PathLike) -> Trajectory:
    """Read either format; the binary one is recognised by its magic bytes."""
    raw = Path(path).read_bytes()
    if raw[:4] == BIN_MAGIC:
        return trajectory_from_bytes(raw)
    return _parse_text(raw.decode())

"""Chaos statistics for comparing reference and predicted trajectories.

Every metric works on a delay embedding: each observed channel is embedded
independently with the same dimension and lag, and the per-channel blocks are
concatenated column-wise.

Norm conventions
----------------
* correlation dimension: max-norm, strict ``d < R``
* approximate entropy: max-norm, ``d <= r``, self-matches counted
* Lyapunov exponent: Euclidean nearest neighbours
"""
from __future__ import annotations

import json
import math
import os
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional, Union

import numpy as np
from scipy.spatial import cKDTree
from scipy.spatial.distance import pdist

from .trajectory import Trajectory, atomic_write_bytes

__all__ = [
    "EmbeddingSpec",
    "Embedding",
    "CorrDimConfig",
    "ApEnConfig",
    "LyapConfig",
    "MetricsConfig",
    "ChaosReport",
    "ConstantSeriesError",
    "DegenerateGeometryError",
    "InsufficientLengthError",
    "NoNeighborsError",
    "IncomparableReportsError",
    "delay_embed",
    "select_lag",
    "autocorrelation",
    "histogram",
    "shared_range",
    "correlation_integral",
    "correlation_dimension",
    "approximate_entropy",
    "lyapunov_exponent",
    "first_zero_crossing",
    "chaos_report",
    "report_pair",
    "compare_reports",
    "save_report",
    "load_report",
    "REPORT_VERSION",
]

REPORT_VERSION = 1


class ConstantSeriesError(ValueError):
    pass


class DegenerateGeometryError(ValueError):
    pass


class InsufficientLengthError(ValueError):
    pass


class NoNeighborsError(ValueError):
    pass


class IncomparableReportsError(ValueError):
    pass


SeriesLike = Union[Trajectory, np.ndarray]


def _as_columns(source: SeriesLike) -> np.ndarray:
    x = source.states if isinstance(source, Trajectory) else np.asarray(source, dtype=np.float64)
    if x.ndim == 1:
        x = x[:, None]
    if x.ndim != 2:
        raise ValueError(f"expected a series or a (T, c) array, got shape {x.shape}")
    return x


@dataclass(frozen=True)
class EmbeddingSpec:
    dim: int = 3
    lag: int = 1

    def __post_init__(self):
        if self.dim < 1 or self.lag < 1:
            raise ValueError("embedding dim and lag must be >= 1")


@dataclass
class Embedding:
    spec: EmbeddingSpec
    points: np.ndarray
    source_len: int

    @property
    def n_points(self) -> int:
        return self.points.shape[0]


def delay_embed(source: SeriesLike, spec: EmbeddingSpec) -> Embedding:
    """Row ``j`` holds ``x[j], x[j + lag], ..., x[j + (dim - 1) lag]`` for each channel."""
    x = _as_columns(source)
    T, c = x.shape
    N = T - (spec.dim - 1) * spec.lag
    if N < 1:
        raise InsufficientLengthError(
            f"series of length {T} too short for dim={spec.dim}, lag={spec.lag}"
        )
    offsets = np.arange(spec.dim) * spec.lag
    idx = np.arange(N)[:, None] + offsets[None, :]
    points = np.concatenate([x[idx, ch] for ch in range(c)], axis=1)
    return Embedding(spec, points, T)


def autocorrelation(series, max_lag: int) -> np.ndarray:
    """Sample ACF ``r_k = c_k / c_0`` for ``k = 0..max_lag``.

    ``c_k = (1/T) sum_{t < T-k} (x_t - mean)(x_{t+k} - mean)``, the biased
    estimator whose sequence is positive semi-definite.
    """
    x = np.asarray(series, dtype=np.float64).ravel()
    T = x.size
    if max_lag < 0 or T <= max_lag:
        raise InsufficientLengthError(f"need more than {max_lag} samples, have {T}")
    d = x - x.mean()
    c0 = np.dot(d, d) / T
    if c0 == 0.0:
        raise ConstantSeriesError("autocorrelation of a constant series is undefined")
    ck = np.array([np.dot(d[: T - k], d[k:]) for k in range(max_lag + 1)]) / T
    return ck / c0


def select_lag(series, max_lag: int = 200) -> int:
    """First lag where the ACF drops to ``1 - 1/e`` or below (1 if never)."""
    x = _as_columns(series)
    lags = []
    for ch in range(x.shape[1]):
        r = autocorrelation(x[:, ch], min(max_lag, x.shape[0] - 1))
        hit = np.nonzero(r <= 1.0 - 1.0 / math.e)[0]
        lags.append(int(hit[0]) if hit.size else 1)
    return max(1, min(lags))


def first_zero_crossing(series, max_lag: Optional[int] = None) -> Optional[int]:
    """Smallest lag with ``r_k <= 0``, or ``None`` if there is none up to ``max_lag``."""
    x = np.asarray(series, dtype=np.float64).ravel()
    if max_lag is None:
        max_lag = x.size // 2
    r = autocorrelation(x, min(max_lag, x.size - 1))
    hit = np.nonzero(r <= 0.0)[0]
    return int(hit[0]) if hit.size else None


def shared_range(*series) -> tuple[float, float]:
    lo = min(float(np.min(s)) for s in series)
    hi = max(float(np.max(s)) for s in series)
    return lo, hi


def histogram(series, n_bins: int = 50, range_policy=None) -> tuple[np.ndarray, np.ndarray]:
    """Density histogram (unit area).

    ``range_policy`` is ``None``/``"data"`` for the series' own range, or an
    explicit ``(lo, hi)``, e.g. from :func:`shared_range` when two series are
    to be compared on common bins.
    """
    if n_bins < 1:
        raise ValueError("n_bins must be >= 1")
    x = np.asarray(series, dtype=np.float64).ravel()
    rng = None if range_policy in (None, "data") else tuple(float(v) for v in range_policy)
    densities, edges = np.histogram(x, bins=n_bins, range=rng, density=True)
    return edges, densities


@dataclass(frozen=True)
class CorrDimConfig:
    """Correlation-sum settings.

    Radii are ``n_radii`` log-spaced values between the ``lo_percentile`` and
    ``hi_percentile`` of pairwise max-norm distances; the slope is fitted on the
    radii whose log lies in the ``fit_window`` fraction of that log range.
    """

    n_points: int = 2000
    n_radii: int = 20
    lo_percentile: float = 0.1
    hi_percentile: float = 10.0
    fit_window: tuple[float, float] = (0.0, 1.0)

    def __post_init__(self):
        if self.n_points < 100:
            raise ValueError("n_points must be >= 100")
        if self.n_radii < 10:
            raise ValueError("n_radii must be >= 10")
        if not 0.0 <= self.lo_percentile < self.hi_percentile <= 100.0:
            raise ValueError("need 0 <= lo_percentile < hi_percentile <= 100")
        a, b = self.fit_window
        if not 0.0 <= a < b <= 1.0:
            raise ValueError("fit_window must satisfy 0 <= lo < hi <= 1")
        object.__setattr__(self, "fit_window", (float(a), float(b)))


def _subsample(points: np.ndarray, n_points: int) -> np.ndarray:
    N = points.shape[0]
    if N <= n_points:
        return points
    stride = -(-N // n_points)
    return points[::stride]


def _pair_distances(emb: Embedding, n_points: int) -> np.ndarray:
    pts = _subsample(emb.points, n_points)
    if pts.shape[0] < 2:
        raise InsufficientLengthError("need at least two embedded points")
    return np.sort(pdist(pts, metric="chebyshev"))


def correlation_integral(emb: Embedding, radii, n_points: int = 2000) -> np.ndarray:
    """``C(R)``: fraction of point pairs closer than ``R`` in the max-norm."""
    d = _pair_distances(emb, n_points)
    return np.searchsorted(d, np.asarray(radii, dtype=np.float64), side="left") / d.size


def correlation_dimension(emb: Embedding, cfg: CorrDimConfig = CorrDimConfig()):
    """Grassberger-Procaccia slope of ``log C(R)`` against ``log R``.

    Returns ``(dimension, (log_R, log_C))``; the curve covers every radius on
    the grid, the fit only those inside ``cfg.fit_window``.
    """
    d = _pair_distances(emb, cfg.n_points)
    if d[-1] == 0.0:
        raise DegenerateGeometryError("all embedded points coincide")
    r_lo, r_hi = np.percentile(d, [cfg.lo_percentile, cfg.hi_percentile])
    if r_lo <= 0.0:
        # many exact duplicates; start from the smallest positive distance
        pos = d[d > 0.0]
        r_lo = pos[0]
    if not r_hi > r_lo:
        raise DegenerateGeometryError("radius range collapsed")
    log_r = np.linspace(np.log(r_lo), np.log(r_hi), cfg.n_radii)
    C = np.searchsorted(d, np.exp(log_r), side="left") / d.size
    ok = C > 0
    log_c = np.full_like(log_r, -np.inf)
    log_c[ok] = np.log(C[ok])
    a, b = cfg.fit_window
    span = log_r[-1] - log_r[0]
    sel = ok & (log_r >= log_r[0] + a * span - 1e-12) & (log_r <= log_r[0] + b * span + 1e-12)
    if sel.sum() < 2:
        raise DegenerateGeometryError("fewer than two usable radii in the fit window")
    slope = np.polyfit(log_r[sel], log_c[sel], 1)[0]
    return float(slope), (log_r, log_c)


@dataclass(frozen=True)
class ApEnConfig:
    radius_factor: float = 0.2
    radius: Optional[float] = None

    def __post_init__(self):
        if not self.radius_factor >= 0:
            raise ValueError("radius_factor must be >= 0")


def _phi(x: np.ndarray, dim: int, lag: int, r: float) -> float:
    pts = delay_embed(x, EmbeddingSpec(dim, lag)).points
    counts = cKDTree(pts).query_ball_point(pts, r, p=np.inf, return_length=True)
    return float(np.mean(np.log(counts / pts.shape[0])))


def approximate_entropy(
    source: SeriesLike,
    dim: int,
    lag: int = 1,
    cfg: ApEnConfig = ApEnConfig(),
) -> float:
    """Pincus approximate entropy ``Phi_dim - Phi_{dim+1}``.

    ``Phi_m`` is the mean over templates of ``log(count / n_templates)``, where
    the count includes the template itself. The tolerance defaults to
    ``radius_factor * sqrt(sum of per-channel variances)``, which is
    ``radius_factor * std`` for a single channel.
    """
    x = _as_columns(source)
    if x.shape[0] - dim * lag < 1:
        raise InsufficientLengthError(
            f"series of length {x.shape[0]} too short for dim={dim}+1, lag={lag}"
        )
    r = cfg.radius if cfg.radius is not None else cfg.radius_factor * math.sqrt(float(np.sum(np.var(x, axis=0))))
    return _phi(x, dim, lag, r) - _phi(x, dim + 1, lag, r)


@dataclass(frozen=True)
class LyapConfig:
    """Rosenstein divergence settings; ``min_separation=None`` picks it from the ACF."""

    k_min: int = 1
    k_max: int = 50
    min_separation: Optional[int] = None

    def __post_init__(self):
        if not 1 <= self.k_min <= self.k_max:
            raise ValueError("need 1 <= k_min <= k_max")
        if self.min_separation is not None and self.min_separation < 0:
            raise ValueError("min_separation must be >= 0")


def _auto_separation(x: np.ndarray) -> int:
    seps = []
    for ch in range(x.shape[1]):
        z = first_zero_crossing(x[:, ch])
        if z is not None:
            seps.append(z)
    return max(seps) if seps else max(1, x.shape[0] // 10)


def _nearest_neighbours(pts: np.ndarray, min_sep: int, chunk: int = 512) -> tuple[np.ndarray, np.ndarray]:
    n = pts.shape[0]
    sq = np.einsum("ij,ij->i", pts, pts)
    nbr = np.full(n, -1)
    dist = np.full(n, np.inf)
    cols = np.arange(n)
    for s in range(0, n, chunk):
        rows = np.arange(s, min(s + chunk, n))
        d2 = sq[rows, None] + sq[None, :] - 2.0 * (pts[rows] @ pts.T)
        d2[np.abs(rows[:, None] - cols[None, :]) <= min_sep] = np.inf
        j = np.argmin(d2, axis=1)
        good = np.isfinite(d2[np.arange(rows.size), j])
        nbr[rows[good]] = j[good]
    ok = nbr >= 0
    dist[ok] = np.linalg.norm(pts[ok] - pts[nbr[ok]], axis=1)
    return nbr, dist


def lyapunov_exponent(emb: Embedding, dt: float, cfg: LyapConfig = LyapConfig(), source=None):
    """Largest Lyapunov exponent (1/time) by Rosenstein's method.

    Each point's nearest neighbour (Euclidean, at least ``min_separation``
    samples away in time) is followed for ``k_max`` steps; the exponent is the
    least-squares slope of the mean log separation over ``k_min..k_max`` steps
    against time. ``source`` is the un-embedded series, used only to choose
    ``min_separation`` automatically.

    Returns ``(exponent, (k, mean_log_divergence))``.
    """
    if cfg.min_separation is not None:
        min_sep = cfg.min_separation
    else:
        raw = _as_columns(source) if source is not None else emb.points[:, :1]
        min_sep = _auto_separation(raw)
    pts = emb.points
    n = pts.shape[0] - cfg.k_max
    if n < 2:
        raise InsufficientLengthError(f"need more than k_max={cfg.k_max} embedded points")
    nbr, d0 = _nearest_neighbours(pts[:n], min_sep)
    ok = (nbr >= 0) & (d0 > 0)
    if not np.any(ok):
        raise NoNeighborsError(f"no neighbour pairs with separation > {min_sep} samples")
    i = np.nonzero(ok)[0]
    j = nbr[ok]
    ks = np.arange(cfg.k_max + 1)
    curve = np.empty(ks.size)
    for k in ks:
        dk = np.linalg.norm(pts[i + k] - pts[j + k], axis=1)
        pos = dk > 0
        curve[k] = np.mean(np.log(dk[pos])) if np.any(pos) else -np.inf
    sel = slice(cfg.k_min, cfg.k_max + 1)
    if cfg.k_max == cfg.k_min:
        slope = (curve[cfg.k_min] - curve[0]) / (cfg.k_min * dt)
    else:
        slope = np.polyfit(ks[sel] * dt, curve[sel], 1)[0]
    return float(slope), (ks, curve)


@dataclass(frozen=True)
class MetricsConfig:
    embedding: EmbeddingSpec = EmbeddingSpec()
    corr_dim: CorrDimConfig = CorrDimConfig()
    apen: ApEnConfig = ApEnConfig()
    lyap: LyapConfig = LyapConfig()
    hist_bins: int = 50
    acf_max_lag: int = 500

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "MetricsConfig":
        d = dict(d)
        cd = dict(d.get("corr_dim", {}))
        if "fit_window" in cd:
            cd["fit_window"] = tuple(cd["fit_window"])
        return cls(
            embedding=EmbeddingSpec(**d.get("embedding", {})),
            corr_dim=CorrDimConfig(**cd),
            apen=ApEnConfig(**d.get("apen", {})),
            lyap=LyapConfig(**d.get("lyap", {})),
            hist_bins=int(d.get("hist_bins", 50)),
            acf_max_lag=int(d.get("acf_max_lag", 500)),
        )


@dataclass
class ChaosReport:
    corr_dim: Optional[float]
    approx_entropy: Optional[float]
    lyapunov: Optional[float]
    acf: list[np.ndarray]
    histogram: list[tuple[np.ndarray, np.ndarray]]
    embedding: EmbeddingSpec
    configs: MetricsConfig
    labels: list[str] = field(default_factory=list)
    absent: dict = field(default_factory=dict)
    diagnostics: dict = field(default_factory=dict)

    SCALARS = ("corr_dim", "approx_entropy", "lyapunov")

    def to_dict(self) -> dict:
        return {
            "format": "chaosflow-report",
            "version": REPORT_VERSION,
            "labels": list(self.labels),
            "corr_dim": self.corr_dim,
            "approx_entropy": self.approx_entropy,
            "lyapunov": self.lyapunov,
            "absent": dict(self.absent),
            "embedding": asdict(self.embedding),
            "configs": self.configs.to_dict(),
            "acf": [a.tolist() for a in self.acf],
            "histogram": [{"edges": e.tolist(), "densities": h.tolist()} for e, h in self.histogram],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ChaosReport":
        if d.get("version") != REPORT_VERSION:
            raise ValueError(f"unsupported report version {d.get('version')}")
        return cls(
            corr_dim=d["corr_dim"],
            approx_entropy=d["approx_entropy"],
            lyapunov=d["lyapunov"],
            acf=[np.array(a) for a in d["acf"]],
            histogram=[(np.array(h["edges"]), np.array(h["densities"])) for h in d["histogram"]],
            embedding=EmbeddingSpec(**d["embedding"]),
            configs=MetricsConfig.from_dict(d["configs"]),
            labels=list(d.get("labels", [])),
            absent=dict(d.get("absent", {})),
        )


def chaos_report(
    traj: Trajectory,
    cfg: MetricsConfig = MetricsConfig(),
    hist_range: Optional[list] = None,
) -> ChaosReport:
    """All metrics for one trajectory. A metric that cannot be computed is
    recorded as ``None`` with the reason in ``report.absent``."""
    x = traj.states
    emb_spec = cfg.embedding
    absent: dict = {}
    diag: dict = {}
    values: dict = {}

    try:
        emb = delay_embed(traj, emb_spec)
    except InsufficientLengthError as exc:
        emb = None
        for name in ChaosReport.SCALARS:
            absent[name] = str(exc)

    if emb is not None:
        try:
            values["corr_dim"], diag["corr_dim"] = correlation_dimension(emb, cfg.corr_dim)
        except ValueError as exc:
            absent["corr_dim"] = str(exc)
        try:
            values["approx_entropy"] = approximate_entropy(x, emb_spec.dim, emb_spec.lag, cfg.apen)
        except ValueError as exc:
            absent["approx_entropy"] = str(exc)
        try:
            values["lyapunov"], diag["lyapunov"] = lyapunov_exponent(emb, traj.dt, cfg.lyap, source=x)
        except ValueError as exc:
            absent["lyapunov"] = str(exc)

    acf, hists = [], []
    for ch in range(traj.dim):
        col = x[:, ch]
        try:
            acf.append(autocorrelation(col, min(cfg.acf_max_lag, col.size - 1)))
        except ValueError:
            acf.append(np.array([]))
        rng = None if hist_range is None else hist_range[ch]
        hists.append(histogram(col, cfg.hist_bins, rng))

    def finite_or_none(name):
        v = values.get(name)
        if v is not None and not math.isfinite(v):
            absent[name] = "non-finite value"
            return None
        return v

    return ChaosReport(
        corr_dim=finite_or_none("corr_dim"),
        approx_entropy=finite_or_none("approx_entropy"),
        lyapunov=finite_or_none("lyapunov"),
        acf=acf,
        histogram=hists,
        embedding=emb_spec,
        configs=cfg,
        labels=list(traj.labels),
        absent=absent,
        diagnostics=diag,
    )


def report_pair(ref: Trajectory, pred: Trajectory, cfg: MetricsConfig = MetricsConfig()):
    """Reports for a reference and a prediction, with histograms on shared bins."""
    if ref.dim != pred.dim:
        raise IncomparableReportsError(f"reference has {ref.dim} channels, prediction {pred.dim}")
    ranges = [shared_range(ref.states[:, c], pred.states[:, c]) for c in range(ref.dim)]
    return chaos_report(ref, cfg, ranges), chaos_report(pred, cfg, ranges)


def _step_difference(ea, ha, eb, hb) -> float:
    """Max |density_a - density_b| over the union of both bin grids."""
    if ea.shape == eb.shape and np.array_equal(ea, eb):
        return float(np.max(np.abs(ha - hb))) if ha.size else 0.0
    edges = np.union1d(ea, eb)
    mids = 0.5 * (edges[:-1] + edges[1:])

    def at(e, h, q):
        k = np.searchsorted(e, q, side="right") - 1
        inside = (k >= 0) & (k < h.size)
        out = np.zeros_like(q)
        out[inside] = h[k[inside]]
        return out

    return float(np.max(np.abs(at(ea, ha, mids) - at(eb, hb, mids))))


def compare_reports(ref: ChaosReport, pred: ChaosReport) -> dict:
    """Relative error ``|pred - ref| / |ref|`` per scalar metric, plus the max
    absolute ACF and histogram-density differences per channel."""
    if ref.configs != pred.configs or ref.embedding != pred.embedding:
        raise IncomparableReportsError("reports were computed with different configurations")
    if len(ref.acf) != len(pred.acf):
        raise IncomparableReportsError("reports cover different numbers of channels")
    table: dict = {"metrics": {}}
    for name in ChaosReport.SCALARS:
        a, b = getattr(ref, name), getattr(pred, name)
        if a is None or b is None:
            rel = None
        elif a == b:
            rel = 0.0
        elif a == 0.0:
            rel = math.inf
        else:
            rel = abs(b - a) / abs(a)
        table["metrics"][name] = {"reference": a, "prediction": b, "relative_error": rel}
    acf_diff = []
    for ra, rb in zip(ref.acf, pred.acf):
        n = min(ra.size, rb.size)
        acf_diff.append(float(np.max(np.abs(ra[:n] - rb[:n]))) if n else None)
    table["acf_max_abs_diff"] = acf_diff
    table["histogram_max_abs_diff"] = [
        _step_difference(ea, ha, eb, hb) for (ea, ha), (eb, hb) in zip(ref.histogram, pred.histogram)
    ]
    return table


def save_report(report: ChaosReport, path: str | os.PathLike) -> Path:
    atomic_write_bytes(path, json.dumps(report.to_dict(), indent=1, sort_keys=True).encode())
    return Path(path)


def load_report(path: str | os.PathLike) -> ChaosReport:
    return ChaosReport.from_dict(json.loads(Path(path).read_text()))

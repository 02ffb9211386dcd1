"""
Chaos statistics of a trajectory
================================

Correlation dimension, approximate entropy and the largest Lyapunov exponent
of Lorenz 63, next to the same statistics for signals with known answers.
"""
import numpy as np

from chaosflow import (
    EmbeddingSpec,
    MetricsConfig,
    SystemSpec,
    approximate_entropy,
    chaos_report,
    correlation_dimension,
    delay_embed,
    integrate,
    lyapunov_exponent,
)
from chaosflow.chaostats import Embedding

rng = np.random.default_rng(0)

# Point clouds of known dimension: a segment and a filled square.
t = rng.uniform(size=3000)
seg, _ = correlation_dimension(Embedding(EmbeddingSpec(1, 1), np.column_stack([t, -t]), 3000))
sq, _ = correlation_dimension(Embedding(EmbeddingSpec(1, 1), rng.uniform(size=(3000, 2)), 3000))
print(f"correlation dimension  segment {seg:.3f}  square {sq:.3f}")

# Regular signals are predictable (ApEn near 0); noise is not.
print(f"ApEn  period-10 sine: {approximate_entropy(np.sin(2 * np.pi * np.arange(3000) / 10), 2):.4f}")
print(f"ApEn  white noise:    {approximate_entropy(rng.normal(size=3000), 2):.4f}")

# Lorenz 63, sampled every 0.01 s and embedded with 3 delays per channel.
traj = integrate(SystemSpec("lorenz63"), [10.0, 10.0, 20.0], dt=0.01, n_steps=10_000)
emb = delay_embed(traj.states, EmbeddingSpec(dim=3, lag=1))
print("embedded points:", emb.points.shape)

dim, (log_r, log_c) = correlation_dimension(emb)
lam, (k, divergence) = lyapunov_exponent(emb, traj.dt, source=traj.states)
print(f"Lorenz 63  corr-dim {dim:.3f}  Lyapunov {lam:.3f} per second")
print("mean log divergence at k = 0, 25, 50:", divergence[[0, 25, 50]].round(3))

# chaos_report bundles everything, including ACFs and histograms per channel.
report = chaos_report(traj, MetricsConfig(acf_max_lag=200))
print("report scalars:", report.corr_dim, report.approx_entropy, report.lyapunov)

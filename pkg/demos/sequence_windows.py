"""
Training windows from a partially observed trajectory
=====================================================

Only some state variables are observed. Training data are short windows of
the observed series: ``memory_len + 1`` rows of history followed by
``recurrent_len`` target rows.
"""
import numpy as np

from chaosflow import DatasetSpec, ObservationSpec, SystemSpec, integrate, project_observed, sample_sequences

full = integrate(SystemSpec("lorenz63"), [1.0, 1.0, 1.0], dt=0.01, n_steps=20_000)

# keep x and y; z is the missing variable the network must account for
observed = project_observed(full, ObservationSpec((0, 1)))
print("observed columns:", observed.labels, observed.states.shape)

# 10 past states of memory plus the current one, then 10 recurrent targets
spec = DatasetSpec(m_sequences=500, memory_len=10, recurrent_len=10, seed=0)
ds = sample_sequences(observed, spec)
print("window length:", spec.window_len)
print("history block:", ds.history.shape, "targets:", ds.targets.shape)

# every window is a verbatim slice of the observed series
w = ds.sequences[0]
start = int(np.nonzero(np.all(observed.states == w[0], axis=1))[0][0])
print("first window starts at row", start, "and matches:", np.array_equal(w, observed.states[start : start + 21]))

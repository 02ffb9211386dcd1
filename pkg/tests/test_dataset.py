import numpy as np
import pytest
from scipy import stats

from chaosflow.dataset import (
    BadObservationError,
    DatasetSpec,
    InsufficientDataError,
    ObservationSpec,
    load_dataset,
    project_observed,
    sample_sequences,
    save_dataset,
)
from chaosflow.dynamics import SystemSpec, integrate
from chaosflow.trajectory import Trajectory


@pytest.fixture(scope="module")
def l63():
    return integrate(SystemSpec("lorenz63"), [1.0, 1.0, 1.0], 0.01, 3000)


def test_identity_projection(l63):
    out = project_observed(l63, ObservationSpec((0, 1, 2)))
    assert out.states.tobytes() == l63.states.tobytes()
    assert out.labels == l63.labels and out.dt == l63.dt and out.t0 == l63.t0


def test_z_only(l63):
    out = project_observed(l63, ObservationSpec((2,)))
    assert out.states.shape == (l63.n_rows, 1)
    assert out.labels == ["z"]
    np.testing.assert_array_equal(out.states[:, 0], l63.states[:, 2])


def test_lorenz96_first_three():
    x0 = np.full(40, 8.0)
    x0[0] = 8.0081
    tr = integrate(SystemSpec("lorenz96"), x0, 0.01, 50)
    out = project_observed(tr, ObservationSpec((0, 1, 2)))
    assert out.dim == 3 and out.labels == ["x1", "x2", "x3"]


def test_out_of_range_index_is_named(l63):
    with pytest.raises(BadObservationError, match="3"):
        project_observed(l63, ObservationSpec((0, 3)))


@pytest.mark.parametrize("idx", [(), (1, 0), (0, 0)])
def test_observation_spec_invariants(idx):
    with pytest.raises(ValueError):
        ObservationSpec(idx)


def test_single_valid_offset():
    spec = DatasetSpec(3, memory_len=2, recurrent_len=4, seed=9)
    tr = Trajectory(0.01, 0.0, np.arange(spec.window_len * 2.0).reshape(-1, 2))
    ds = sample_sequences(tr, spec)
    for w in ds.sequences:
        np.testing.assert_array_equal(w, tr.states)


def test_too_short_reports_lengths():
    tr = Trajectory(0.01, 0.0, np.zeros((5, 1)))
    with pytest.raises(InsufficientDataError) as err:
        sample_sequences(tr, DatasetSpec(1, 2, 4))
    assert (err.value.required, err.value.available) == (7, 5)


@pytest.mark.parametrize(
    "memory_len,recurrent_len,length",
    [(0, 10, 11), (10, 10, 21), (100, 10, 111)],
)
def test_window_lengths(l63, memory_len, recurrent_len, length):
    ds = sample_sequences(l63, DatasetSpec(50, memory_len, recurrent_len, 0))
    assert ds.sequences.shape == (50, length, 3)
    assert ds.history.shape == (50, memory_len + 1, 3)
    assert ds.targets.shape == (50, recurrent_len, 3)


def test_full_scale_window_count(l63):
    ds = sample_sequences(l63, DatasetSpec(10_000, 0, 10, 1))
    assert ds.sequences.shape == (10_000, 11, 3)


def test_windows_are_exact_slices(l63):
    ds = sample_sequences(l63, DatasetSpec(200, 3, 5, 4))
    flat = l63.states
    for w in ds.sequences:
        # locate the start by the first row; Lorenz rows are unique
        start = np.nonzero(np.all(flat == w[0], axis=1))[0][0]
        np.testing.assert_array_equal(w, flat[start : start + 9])


def test_reproducible(l63):
    a = sample_sequences(l63, DatasetSpec(100, 2, 3, 77))
    b = sample_sequences(l63, DatasetSpec(100, 2, 3, 77))
    c = sample_sequences(l63, DatasetSpec(100, 2, 3, 78))
    assert a.sequences.tobytes() == b.sequences.tobytes()
    assert a.sequences.tobytes() != c.sequences.tobytes()


def test_offsets_uniform():
    # 10 valid offsets, 20k draws; chi-square at the 1% level
    n_rows, L = 12, 3
    tr = Trajectory(1.0, 0.0, np.arange(float(n_rows))[:, None])
    ds = sample_sequences(tr, DatasetSpec(20_000, 0, L - 1, 2024))
    starts = ds.sequences[:, 0, 0].astype(int)
    counts = np.bincount(starts, minlength=n_rows - L + 1)
    assert stats.chisquare(counts).pvalue > 0.01


def test_file_round_trip(tmp_path, l63):
    ds = sample_sequences(l63, DatasetSpec(40, 2, 3, 5))
    path = save_dataset(ds, tmp_path / "d.cfds")
    assert path.read_bytes()[:4] == b"CFDS"
    assert (tmp_path / "d.json").exists()
    back = load_dataset(path)
    assert back.sequences.tobytes() == ds.sequences.tobytes()
    assert back.spec == ds.spec and back.source_fingerprint == ds.source_fingerprint and back.dt == ds.dt

import numpy as np
import pytest

from chaosflow.flownet import init_model, net_forward
from chaosflow.rollout import (
    LOG_ERROR_FLOOR,
    continue_run,
    passes_stability,
    pointwise_log_abs_error,
    predict,
    stability_envelope,
)
from chaosflow.trajectory import Trajectory


def small_model(m=2, n_M=1, widths=(6,), seed=0, scale=0.05):
    model = init_model(m, n_M, list(widths), seed)
    model.weights[-1] *= scale
    model.meta["dt"] = 0.01
    return model


def test_zero_steps_returns_seed(rng):
    model = small_model()
    seed = rng.normal(size=(2, 2))
    run = predict(model, seed, 0)
    np.testing.assert_array_equal(run.predicted.states, seed)
    assert not run.diverged


def test_zero_network_holds_last_state(rng):
    model = small_model()
    for p in model.parameters():
        p[...] = 0.0
    seed = rng.normal(size=(2, 2))
    run = predict(model, seed, 7)
    np.testing.assert_array_equal(run.predicted.states[2:], np.tile(seed[-1], (7, 1)))


def test_predict_matches_manual_stepping(rng):
    model = small_model(n_M=2)
    seed = rng.normal(size=(3, 2))
    run = predict(model, seed, 5)
    S = list(seed)
    for _ in range(5):
        S.append(S[-1] + net_forward(model, np.array(S[-3:])))
    assert run.predicted.states.tobytes() == np.array(S).tobytes()


def test_dt_and_time_axis_from_model(rng):
    model = small_model()
    run = predict(model, rng.normal(size=(2, 2)), 3, t0=5.0)
    assert run.dt == 0.01
    np.testing.assert_allclose(run.predicted.times, 5.0 + 0.01 * np.arange(5))


def test_seed_shape_checked():
    with pytest.raises(ValueError):
        predict(small_model(n_M=1), np.zeros((1, 2)), 3)


def test_continuation_is_compositional(rng):
    model = small_model(n_M=2, widths=(8, 8))
    seed = rng.normal(size=(3, 2))
    whole = predict(model, seed, 60)
    part = continue_run(model, predict(model, seed, 25), 35)
    assert whole.predicted.states.tobytes() == part.predicted.states.tobytes()
    assert part.predicted.t0 == whole.predicted.t0


def test_divergence_truncates_and_flags():
    model = small_model(m=1, n_M=0, widths=())
    model.weights[0][...] = 1e200
    model.biases[0][...] = 0.0
    with np.errstate(over="ignore", invalid="ignore"):
        run = predict(model, np.array([[1.0]]), 10)
    assert run.diverged and run.diverged_at == 2
    assert run.predicted.n_rows == 2
    assert run.manifest()["diverged_at"] == 2


def traj(states, dt=0.1, t0=0.0):
    return Trajectory(dt, t0, np.asarray(states, dtype=float))


def test_log_error_floor_and_offset():
    ref = traj(np.zeros((4, 2)))
    assert np.all(pointwise_log_abs_error(ref, ref) == LOG_ERROR_FLOOR)
    np.testing.assert_allclose(pointwise_log_abs_error(traj(np.full((4, 2), 0.01)), ref), -2.0, rtol=0, atol=1e-12)


def test_log_error_uses_common_length():
    out = pointwise_log_abs_error(traj(np.ones((3, 1))), traj(np.zeros((8, 1))))
    assert out.shape == (3, 1) and np.all(out == 0.0)


@pytest.mark.parametrize(
    "other",
    [traj(np.zeros((4, 1)), dt=0.2), traj(np.zeros((4, 2))), traj(np.zeros((4, 1)), t0=1.0)],
)
def test_log_error_alignment_errors(other):
    with pytest.raises(ValueError):
        pointwise_log_abs_error(other, traj(np.zeros((4, 1))))


def test_stability_envelope():
    ref = traj([[1.0, -4.0], [-2.0, 3.0]])
    env = stability_envelope(ref)
    np.testing.assert_array_equal(env, [3.0, 6.0])
    assert passes_stability(traj([[3.0, -6.0]]), env)
    assert not passes_stability(traj([[3.01, 0.0]]), env)

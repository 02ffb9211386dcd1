import numpy as np
import pytest

from chaosflow.dataset import DatasetSpec, SequenceDataset
from chaosflow.flownet import (
    AdamState,
    DivergedRolloutError,
    FlowMapModel,
    TrainConfig,
    TrainingDivergedError,
    adam_step,
    checkpoint_from_bytes,
    checkpoint_to_bytes,
    init_model,
    load_checkpoint,
    loss_and_gradient,
    loss_gradient,
    net_forward,
    recurrent_loss,
    recurrent_rollout,
    save_checkpoint,
    train,
)


def zero_model(m, n_M, widths):
    model = init_model(m, n_M, widths, 0)
    for p in model.parameters():
        p[...] = 0.0
    return model


def random_model(m, n_M, widths, seed):
    model = init_model(m, n_M, widths, seed)
    rng = np.random.default_rng(seed + 1000)
    for b in model.biases:
        b[...] = rng.normal(scale=0.3, size=b.shape)
    return model


def scalar_forward(model, window):
    """Neuron-by-neuron evaluation with Python floats."""
    x = [float(v) for row in window for v in row]
    n_layers = len(model.weights)
    for k in range(n_layers):
        W, b = model.weights[k], model.biases[k]
        y = []
        for j in range(W.shape[1]):
            s = float(b[j])
            for i in range(W.shape[0]):
                s += x[i] * float(W[i, j])
            y.append(max(s, 0.0) if k < n_layers - 1 else s)
        x = y
    return np.array(x)


def scalar_loss(model, seqs):
    L = model.memory_len + 1
    total = 0.0
    for seq in seqs:
        states = [row.copy() for row in seq[:L]]
        for k in range(seq.shape[0] - L):
            nxt = states[-1] + scalar_forward(model, np.array(states[-L:]))
            states.append(nxt)
            total += sum((float(a) - float(b)) ** 2 for a, b in zip(seq[L + k], nxt))
    return total / len(seqs)


@pytest.mark.parametrize(
    "m,n_M,widths,input_width",
    [(3, 0, [20, 20, 20], 3), (2, 10, [20, 20, 20], 22), (40, 0, [200, 200, 200], 40)],
)
def test_init_geometry(m, n_M, widths, input_width):
    model = init_model(m, n_M, widths, 3)
    assert model.input_width == input_width
    assert model.weights[0].shape == (input_width, widths[0])
    assert model.weights[-1].shape == (widths[-1], m)
    assert len(model.weights) == len(widths) + 1
    assert all(np.all(b == 0) for b in model.biases)


def test_init_is_he_normal_and_seeded():
    a = init_model(50, 0, [400], 7)
    b = init_model(50, 0, [400], 7)
    assert all(np.array_equal(x, y) for x, y in zip(a.parameters(), b.parameters()))
    assert a.weights[0].std() == pytest.approx(np.sqrt(2 / 50), rel=0.05)


def test_zero_model_gives_zero_increment(rng):
    model = zero_model(3, 2, [5, 5])
    np.testing.assert_array_equal(net_forward(model, rng.normal(size=(3, 3))), np.zeros(3))


def test_linear_identity_on_newest_block(rng):
    m, n_M = 2, 3
    model = zero_model(m, n_M, [])
    model.weights[0][n_M * m :, :] = np.eye(m)
    window = rng.normal(size=(n_M + 1, m))
    np.testing.assert_array_equal(net_forward(model, window), window[-1])


def test_forward_matches_scalar_oracle(rng):
    model = random_model(2, 2, [5, 4], 11)
    for _ in range(5):
        window = rng.normal(size=(3, 2)) * 3
        np.testing.assert_allclose(net_forward(model, window), scalar_forward(model, window), rtol=0, atol=1e-12)


def test_forward_batch_equals_single(rng):
    model = random_model(3, 1, [6], 2)
    windows = rng.normal(size=(4, 2, 3))
    batch = net_forward(model, windows)
    for w, out in zip(windows, batch):
        np.testing.assert_allclose(net_forward(model, w), out, rtol=0, atol=1e-14)


def test_forward_rejects_bad_window():
    with pytest.raises(ValueError):
        net_forward(init_model(3, 1, [4]), np.zeros((3, 3)))


def test_forward_tape_records_layer_inputs(rng):
    model = random_model(2, 0, [4, 4], 0)
    tape = []
    net_forward(model, rng.normal(size=(1, 2)), tape=tape)
    assert [t.shape for t in tape] == [(1, 2), (1, 4), (1, 4)]


def test_rollout_k1_is_plain_resnet_step(rng):
    model = random_model(3, 0, [8, 8], 4)
    z = rng.normal(size=(1, 3))
    np.testing.assert_array_equal(recurrent_rollout(model, z, 1)[0], z[0] + net_forward(model, z))


def test_zero_model_rollout_is_constant(rng):
    model = zero_model(2, 3, [4])
    window = rng.normal(size=(4, 2))
    np.testing.assert_array_equal(recurrent_rollout(model, window, 5), np.tile(window[-1], (5, 1)))


def test_rollout_matches_manual_composition(rng):
    model = random_model(2, 2, [6, 6], 8)
    window = rng.normal(size=(3, 2))
    w = window.copy()
    manual = []
    for _ in range(3):
        nxt = w[-1] + net_forward(model, w)
        manual.append(nxt)
        w = np.vstack([w[1:], nxt])
    np.testing.assert_array_equal(recurrent_rollout(model, window, 3), np.array(manual))


def test_memoryless_rollout_is_bitwise_resnet_recursion(rng):
    model = random_model(3, 0, [10, 10], 5)
    x = rng.normal(size=3)
    out = recurrent_rollout(model, x[None], 20)
    for k in range(20):
        x = x + net_forward(model, x[None])
        assert out[k].tobytes() == x.tobytes()


def test_rollout_divergence_step():
    model = zero_model(1, 0, [])
    model.biases[0][...] = 1e308
    with pytest.raises(DivergedRolloutError) as err, np.errstate(over="ignore"):
        recurrent_rollout(model, np.array([[1e308]]), 4)
    assert err.value.step == 1


def test_loss_zero_when_targets_are_predictions(rng):
    model = random_model(2, 1, [5], 3)
    window = rng.normal(size=(2, 2))
    seq = np.vstack([window, recurrent_rollout(model, window, 4)])
    assert recurrent_loss(model, seq[None]) == 0.0


def test_loss_single_step_is_squared_norm(rng):
    model = random_model(3, 0, [4], 6)
    z, t = rng.normal(size=(2, 3))
    p = z + net_forward(model, z[None])
    seq = np.vstack([z, t])[None]
    assert recurrent_loss(model, seq) == pytest.approx(np.sum((t - p) ** 2), rel=1e-14)


def test_loss_matches_scalar_oracle(rng):
    model = random_model(2, 2, [4, 3], 9)
    seqs = rng.normal(size=(3, 3 + 4, 2))
    assert recurrent_loss(model, seqs) == pytest.approx(scalar_loss(model, seqs), rel=0, abs=1e-12)


def test_zero_residual_gives_zero_gradient(rng):
    model = random_model(2, 1, [5], 3)
    window = rng.normal(size=(2, 2))
    seq = np.vstack([window, recurrent_rollout(model, window, 3)])
    assert all(np.all(g == 0) for g in loss_gradient(model, seq[None]))


def central_differences(model, seqs, h=1e-5):
    out = []
    for p in model.parameters():
        g = np.zeros_like(p)
        for idx in np.ndindex(p.shape):
            old = p[idx]
            p[idx] = old + h
            up = recurrent_loss(model, seqs)
            p[idx] = old - h
            down = recurrent_loss(model, seqs)
            p[idx] = old
            g[idx] = (up - down) / (2 * h)
        out.append(g)
    return out


def max_relative_error(a, b, floor=1e-6):
    return max(float(np.max(np.abs(x - y) / np.maximum(np.maximum(np.abs(x), np.abs(y)), floor))) for x, y in zip(a, b))


def test_gradient_matches_finite_differences(rng):
    model = random_model(2, 2, [4, 4], 21)
    seqs = rng.normal(size=(3, 3 + 3, 2))
    assert max_relative_error(loss_gradient(model, seqs), central_differences(model, seqs)) < 1e-6


def test_gradient_with_normalization_matches_finite_differences(rng):
    model = random_model(2, 3, [5], 4)
    model.in_shift = np.array([0.5, -1.0])
    model.in_scale = np.array([2.0, 0.7])
    model.out_scale = np.array([0.1, 0.3])
    seqs = rng.normal(size=(4, 4 + 2, 2))
    assert max_relative_error(loss_gradient(model, seqs), central_differences(model, seqs)) < 1e-6


def test_duplicated_batch_same_gradient(rng):
    model = random_model(3, 1, [6], 1)
    seqs = rng.normal(size=(5, 2 + 3, 3))
    g1 = loss_gradient(model, seqs)
    g2 = loss_gradient(model, np.concatenate([seqs, seqs]))
    for a, b in zip(g1, g2):
        np.testing.assert_allclose(a, b, rtol=1e-12, atol=1e-14)


def test_batch_order_does_not_change_gradient(rng):
    model = random_model(3, 1, [6], 1)
    seqs = rng.normal(size=(6, 2 + 3, 3))
    perm = rng.permutation(6)
    la, ga = loss_and_gradient(model, seqs)
    lb, gb = loss_and_gradient(model, seqs[perm])
    assert la == pytest.approx(lb, rel=1e-13)
    for a, b in zip(ga, gb):
        np.testing.assert_allclose(a, b, rtol=1e-12, atol=1e-14)


def test_adam_zero_gradient_leaves_params(rng):
    params = [rng.normal(size=(3, 2)), rng.normal(size=2)]
    state = AdamState.zeros_like(params)
    new, state = adam_step(params, [np.zeros((3, 2)), np.zeros(2)], state, 1e-3)
    for a, b in zip(params, new):
        np.testing.assert_array_equal(a, b)
    assert state.step == 1


def test_adam_first_step_is_signed_lr(rng):
    params = [rng.normal(size=5)]
    g = [rng.normal(size=5)]
    new, _ = adam_step(params, g, AdamState.zeros_like(params), 1e-3)
    # m_hat = g, v_hat = g^2  ->  step = lr * g / (|g| + eps)
    np.testing.assert_allclose(new[0] - params[0], -1e-3 * np.sign(g[0]), rtol=1e-6)


def test_adam_two_steps_by_hand():
    p0, g, lr = 1.0, 0.5, 0.01
    b1, b2, eps = 0.9, 0.999, 1e-8
    m1, v1 = (1 - b1) * g, (1 - b2) * g * g
    p1 = p0 - lr * (m1 / (1 - b1)) / (np.sqrt(v1 / (1 - b2)) + eps)
    m2, v2 = b1 * m1 + (1 - b1) * g, b2 * v1 + (1 - b2) * g * g
    p2 = p1 - lr * (m2 / (1 - b1**2)) / (np.sqrt(v2 / (1 - b2**2)) + eps)
    params = [np.array([p0])]
    state = AdamState.zeros_like(params)
    params, state = adam_step(params, [np.array([g])], state, lr)
    params, state = adam_step(params, [np.array([g])], state, lr)
    assert params[0][0] == pytest.approx(p2, rel=1e-14)
    assert state.step == 2


def test_adam_state_invariants():
    with pytest.raises(ValueError):
        AdamState(0, [], [], beta1=1.0)


def make_dataset(rng, M=20, n_M=1, K=3, m=2):
    seqs = np.cumsum(rng.normal(scale=0.1, size=(M, n_M + K + 1, m)), axis=1)
    return SequenceDataset(DatasetSpec(M, n_M, K, 0), m, 0.01, seqs, "0" * 64)


def test_single_full_batch_epoch_is_one_adam_step(rng):
    ds = make_dataset(rng)
    model = random_model(2, 1, [5], 3)
    trained, hist = train(model, ds, TrainConfig(epochs=1, batch_size=20, recurrent_len=3, seed=1))
    loss, grads = loss_and_gradient(model, ds.sequences)
    params, _ = adam_step(model.parameters(), grads, AdamState.zeros_like(model.parameters()), 1e-3)
    for a, b in zip(trained.parameters(), params):
        np.testing.assert_allclose(a, b, rtol=1e-12, atol=1e-15)
    assert hist[0] == pytest.approx(loss, rel=1e-12)


def test_training_reduces_loss_and_is_deterministic(rng):
    ds = make_dataset(rng, M=40)
    model = random_model(2, 1, [8, 8], 3)
    cfg = TrainConfig(epochs=30, batch_size=10, recurrent_len=3, seed=5, learning_rate=3e-3)
    a, ha = train(model, ds, cfg)
    b, hb = train(model, ds, cfg)
    assert ha.tobytes() == hb.tobytes()
    assert ha[-1] < ha[0]
    assert a.meta["epochs"] == 30 and a.meta["dataset_fingerprint"] == "0" * 64


def test_training_does_not_mutate_input_model(rng):
    ds = make_dataset(rng)
    model = random_model(2, 1, [5], 3)
    before = [p.copy() for p in model.parameters()]
    train(model, ds, TrainConfig(epochs=2, batch_size=5, recurrent_len=3))
    assert all(np.array_equal(a, b) for a, b in zip(before, model.parameters()))


def test_training_divergence_names_epoch_and_batch(rng):
    ds = make_dataset(rng)
    model = random_model(2, 1, [5], 3)
    model.biases[-1][...] = 1e200
    with pytest.raises((TrainingDivergedError, DivergedRolloutError)):
        with np.errstate(over="ignore", invalid="ignore"):
            train(model, ds, TrainConfig(epochs=1, batch_size=5, recurrent_len=3))


def test_training_divergence_error_fields():
    err = TrainingDivergedError(3, 7)
    assert (err.epoch, err.batch) == (3, 7)


def test_train_checks_compatibility(rng):
    ds = make_dataset(rng, n_M=1)
    with pytest.raises(ValueError):
        train(init_model(2, 2, [4]), ds, TrainConfig(epochs=1, batch_size=5, recurrent_len=3))
    with pytest.raises(ValueError):
        train(init_model(2, 1, [4]), ds, TrainConfig(epochs=1, batch_size=5, recurrent_len=4))


def test_normalized_training_records_stats(rng):
    ds = make_dataset(rng)
    trained, _ = train(random_model(2, 1, [5], 3), ds, TrainConfig(epochs=1, batch_size=5, recurrent_len=3, normalize=True))
    assert trained.normalized and trained.meta["normalize"] is True


@pytest.mark.parametrize("normalize", [False, True])
def test_checkpoint_round_trip_bit_exact(tmp_path, rng, normalize):
    model = random_model(3, 2, [7, 5], 13)
    model.meta = {"dt": 0.01, "note": "x"}
    if normalize:
        model.in_shift, model.in_scale, model.out_scale = rng.normal(size=(3, 3)) ** 2 + 0.1
    path = save_checkpoint(model, tmp_path / "m.cfnn")
    assert path.read_bytes()[:4] == b"CFNN"
    back = load_checkpoint(path)
    for a, b in zip(model.parameters(), back.parameters()):
        assert a.tobytes() == b.tobytes()
    windows = rng.normal(size=(10, 3, 3))
    assert net_forward(model, windows).tobytes() == net_forward(back, windows).tobytes()
    assert back.meta == model.meta
    assert checkpoint_to_bytes(back) == checkpoint_to_bytes(model)


def test_checkpoint_rejects_bad_magic():
    raw = bytearray(checkpoint_to_bytes(init_model(2, 0, [3])))
    raw[:4] = b"NOPE"
    with pytest.raises(ValueError):
        checkpoint_from_bytes(bytes(raw))


def test_model_shape_validation():
    with pytest.raises(ValueError):
        FlowMapModel(2, 0, [3], [np.zeros((2, 3)), np.zeros((3, 3))], [np.zeros(3), np.zeros(2)])

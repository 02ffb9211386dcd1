"""
Learning the Lorenz 63 flow map
===============================

Train a small residual network on windows of a fully observed Lorenz 63
trajectory, then roll it out far beyond the training horizon of 10 steps.
This is a shortened version of the ``ex1-desk`` preset (about a minute on
one core).
"""
from chaosflow import (
    DatasetSpec,
    SystemSpec,
    TrainConfig,
    init_model,
    integrate,
    pointwise_log_abs_error,
    predict,
    sample_sequences,
    train,
)
from chaosflow.rollout import passes_stability, stability_envelope

system = SystemSpec("lorenz63")
data = integrate(system, [1.0, 1.0, 1.0], dt=0.01, n_steps=100_000)
ds = sample_sequences(data, DatasetSpec(m_sequences=2000, memory_len=0, recurrent_len=10, seed=0))

# Inputs are standardized and increments rescaled; the stats come from the data.
model = init_model(obs_dim=3, memory_len=0, hidden_layers=[20, 20, 20], seed=0)
cfg = TrainConfig(epochs=800, batch_size=50, learning_rate=1e-3, recurrent_len=10, normalize=True)
model, losses = train(model, ds, cfg, callback=lambda e, loss: e % 200 == 0 and print(f"epoch {e:4d}  loss {loss:.4f}"))
print("final loss:", losses[-1].round(4))

# Predict 50 s from a new initial condition and compare with the true flow.
ref = integrate(system, [10.0, 10.0, 20.0], dt=0.01, n_steps=5_000)
run = predict(model, ref.states[:1], n_steps=5_000)
err = pointwise_log_abs_error(run.predicted, ref)

# Pointwise error grows with the leading Lyapunov exponent until it saturates
# at the attractor size, so long-time agreement has to be judged statistically.
for t in (0.05, 0.1, 0.25, 0.5, 1, 5, 50):
    print(f"t = {t:5.2f} s  max log10 |error| = {err[round(t / 0.01)].max():.2f}")
print("stays within 1.5x the reference envelope:", passes_stability(run.predicted, stability_envelope(ref)))

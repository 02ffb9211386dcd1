"""Memory-based residual flow map and its training.

The model advances the observed state by one step::

    z[n+1] = z[n] + N(z[n-n_M], ..., z[n-1], z[n])

where ``N`` is a ReLU multilayer perceptron whose input is the history window
flattened oldest-first (row-major over ``(time, channel)``). With
``memory_len == 0`` this is the plain ResNet step ``z + N(z)``.

Training minimises the recurrent loss: for each sequence the model is rolled
out ``K`` steps from its history window, feeding predictions back into the
window, and the squared errors against the next ``K`` observed states are
summed over steps and averaged over sequences. Gradients are exact: they flow
through every fed-back prediction (full backpropagation through time).
"""
from __future__ import annotations

import json
import os
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional, Sequence

import numpy as np

from .trajectory import atomic_write_bytes

__all__ = [
    "FlowMapModel",
    "AdamState",
    "TrainConfig",
    "DivergedRolloutError",
    "TrainingDivergedError",
    "init_model",
    "net_forward",
    "recurrent_rollout",
    "recurrent_loss",
    "loss_and_gradient",
    "loss_gradient",
    "adam_step",
    "train",
    "normalization_stats",
    "save_checkpoint",
    "load_checkpoint",
    "checkpoint_to_bytes",
    "checkpoint_from_bytes",
    "WINDOW_ORDER",
]

WINDOW_ORDER = "oldest-first; input = window.reshape(-1), row-major over (time, channel)"

CKPT_MAGIC = b"CFNN"
CKPT_VERSION = 1
_CKPT_HEAD = struct.Struct("<4sIQ")


class DivergedRolloutError(FloatingPointError):
    def __init__(self, step: int):
        self.step = step
        super().__init__(f"rollout produced a non-finite state at step {step}")


class TrainingDivergedError(FloatingPointError):
    def __init__(self, epoch: int, batch: int):
        self.epoch = epoch
        self.batch = batch
        super().__init__(f"non-finite loss at epoch {epoch}, batch {batch}")


@dataclass
class FlowMapModel:
    obs_dim: int
    memory_len: int
    hidden_layers: list[int]
    weights: list[np.ndarray]
    biases: list[np.ndarray]
    meta: dict = field(default_factory=dict)
    # optional per-channel standardisation; None means raw states.
    # inputs become (z - in_shift) / in_scale, increments are N(.) * out_scale
    in_shift: Optional[np.ndarray] = None
    in_scale: Optional[np.ndarray] = None
    out_scale: Optional[np.ndarray] = None
    activation: str = "relu"

    def __post_init__(self):
        if self.activation != "relu":
            raise ValueError("only ReLU activation is supported")
        widths = [self.input_width, *self.hidden_layers, self.obs_dim]
        if len(self.weights) != len(widths) - 1 or len(self.biases) != len(widths) - 1:
            raise ValueError("layer count does not match hidden_layers")
        for k, (W, b) in enumerate(zip(self.weights, self.biases)):
            if W.shape != (widths[k], widths[k + 1]) or b.shape != (widths[k + 1],):
                raise ValueError(
                    f"layer {k}: got W{W.shape}, b{b.shape}, expected "
                    f"W{(widths[k], widths[k + 1])}, b{(widths[k + 1],)}"
                )
        given = [a is None for a in (self.in_shift, self.in_scale, self.out_scale)]
        if any(given) and not all(given):
            raise ValueError("in_shift, in_scale and out_scale must be given together")

    @property
    def normalized(self) -> bool:
        return self.in_shift is not None

    @property
    def input_width(self) -> int:
        return self.obs_dim * (self.memory_len + 1)

    @property
    def window_len(self) -> int:
        return self.memory_len + 1

    def parameters(self) -> list[np.ndarray]:
        """``[W0, b0, W1, b1, ...]``; the arrays themselves, not copies."""
        out = []
        for W, b in zip(self.weights, self.biases):
            out += [W, b]
        return out

    def with_parameters(self, params: Sequence[np.ndarray]) -> "FlowMapModel":
        return FlowMapModel(
            self.obs_dim, self.memory_len, list(self.hidden_layers),
            [np.array(p) for p in params[0::2]], [np.array(p) for p in params[1::2]],
            dict(self.meta),
            *(None if a is None else a.copy() for a in (self.in_shift, self.in_scale, self.out_scale)),
        )

    def copy(self) -> "FlowMapModel":
        return self.with_parameters(self.parameters())


def init_model(
    obs_dim: int,
    memory_len: int,
    hidden_layers: Sequence[int],
    seed: int = 0,
) -> FlowMapModel:
    """He-normal weights (std ``sqrt(2 / fan_in)``) and zero biases."""
    if obs_dim < 1 or memory_len < 0 or any(w < 1 for w in hidden_layers):
        raise ValueError("obs_dim and hidden widths must be >= 1, memory_len >= 0")
    rng = np.random.default_rng(seed)
    widths = [obs_dim * (memory_len + 1), *hidden_layers, obs_dim]
    Ws, bs = [], []
    for fan_in, fan_out in zip(widths[:-1], widths[1:]):
        Ws.append(rng.normal(0.0, np.sqrt(2.0 / fan_in), size=(fan_in, fan_out)))
        bs.append(np.zeros(fan_out))
    return FlowMapModel(obs_dim, memory_len, list(hidden_layers), Ws, bs, {"init_seed": seed})


def _check_window(model: FlowMapModel, window: np.ndarray) -> np.ndarray:
    window = np.asarray(window, dtype=np.float64)
    want = (model.window_len, model.obs_dim)
    if window.shape[-2:] != want or window.ndim not in (2, 3):
        raise ValueError(f"window has shape {window.shape}, expected (..., {want[0]}, {want[1]})")
    return window


def _mlp(model: FlowMapModel, x: np.ndarray, tape: Optional[list]) -> np.ndarray:
    """Raw network output for flattened inputs ``x`` of shape ``(B, input_width)``."""
    if model.normalized:
        x = (x - np.tile(model.in_shift, model.window_len)) / np.tile(model.in_scale, model.window_len)
    h = x
    last = len(model.weights) - 1
    for k, (W, b) in enumerate(zip(model.weights, model.biases)):
        if tape is not None:
            tape.append(h)
        h = h @ W + b
        if k < last:
            h = np.maximum(h, 0.0)
    if model.normalized:
        h = h * model.out_scale
    return h


def _mlp_backward(model: FlowMapModel, tape: list, g: np.ndarray, grads: list) -> np.ndarray:
    """Accumulate parameter gradients into ``grads`` and return d(loss)/d(input)."""
    if model.normalized:
        g = g * model.out_scale
    for k in range(len(model.weights) - 1, -1, -1):
        inp = tape[k]
        grads[2 * k] += inp.T @ g
        grads[2 * k + 1] += g.sum(axis=0)
        g = g @ model.weights[k].T
        if k > 0:
            g = g * (inp > 0.0)
    if model.normalized:
        g = g / np.tile(model.in_scale, model.window_len)
    return g


def net_forward(model: FlowMapModel, window, tape: Optional[list] = None) -> np.ndarray:
    """The increment ``N(window)`` (not yet added to the newest state).

    ``window`` is ``(n_M + 1, m)`` oldest-first, or a batch ``(B, n_M + 1, m)``.
    When ``tape`` is a list, each layer's input is appended to it for backprop.
    """
    window = _check_window(model, window)
    single = window.ndim == 2
    x = window.reshape(1 if single else window.shape[0], model.input_width)
    out = _mlp(model, x, tape)
    return out[0] if single else out


def _rollout(model: FlowMapModel, window: np.ndarray, K: int, tapes: Optional[list]):
    B = window.shape[0]
    L = model.window_len
    S = np.empty((B, L + K, model.obs_dim))
    S[:, :L] = window
    for j in range(K):
        tape = [] if tapes is not None else None
        inc = _mlp(model, S[:, j : j + L].reshape(B, model.input_width), tape)
        S[:, L + j] = S[:, L + j - 1] + inc
        if tapes is not None:
            tapes.append(tape)
        if not np.all(np.isfinite(S[:, L + j])):
            raise DivergedRolloutError(j + 1)
    return S


def recurrent_rollout(model: FlowMapModel, window, K: int) -> np.ndarray:
    """Predict ``K`` successive states from a history window.

    Step ``j`` predicts ``z[n+j] = z[n+j-1] + N(window)``, then the window drops
    its oldest row and appends the prediction. Returns ``(K, m)`` or ``(B, K, m)``.
    """
    if K < 1:
        raise ValueError("K must be >= 1")
    window = _check_window(model, window)
    single = window.ndim == 2
    S = _rollout(model, window[None] if single else window, K, None)
    out = S[:, model.window_len :]
    return out[0] if single else out


def _split_batch(model: FlowMapModel, sequences) -> tuple[np.ndarray, np.ndarray, int]:
    seqs = np.asarray(sequences, dtype=np.float64)
    if seqs.ndim == 2:
        seqs = seqs[None]
    L = model.window_len
    if seqs.ndim != 3 or seqs.shape[2] != model.obs_dim or seqs.shape[1] < L + 1:
        raise ValueError(
            f"sequences have shape {seqs.shape}, expected (B, n_M + K + 1, {model.obs_dim}) with K >= 1"
        )
    return seqs[:, :L], seqs[:, L:], seqs.shape[1] - L


def recurrent_loss(model: FlowMapModel, sequences) -> float:
    """Mean over sequences of the summed squared error over the ``K`` rollout steps."""
    window, targets, K = _split_batch(model, sequences)
    pred = _rollout(model, window, K, None)[:, model.window_len :]
    return float(np.sum((targets - pred) ** 2) / window.shape[0])


def loss_and_gradient(model: FlowMapModel, sequences) -> tuple[float, list[np.ndarray]]:
    """Recurrent loss and its exact gradient, ordered like ``model.parameters()``."""
    window, targets, K = _split_batch(model, sequences)
    B = window.shape[0]
    L = model.window_len
    m = model.obs_dim
    tapes: list = []
    S = _rollout(model, window, K, tapes)
    resid = S[:, L:] - targets
    loss = float(np.sum(resid**2) / B)

    grads = [np.zeros_like(p) for p in model.parameters()]
    G = np.zeros_like(S)
    G[:, L:] = (2.0 / B) * resid
    for j in range(K - 1, -1, -1):
        g = G[:, L + j]
        # residual path: prediction j is the newest state of window j plus an increment
        G[:, L + j - 1] += g
        gin = _mlp_backward(model, tapes[j], g, grads)
        G[:, j : j + L] += gin.reshape(B, L, m)
    return loss, grads


def loss_gradient(model: FlowMapModel, sequences) -> list[np.ndarray]:
    return loss_and_gradient(model, sequences)[1]


@dataclass
class AdamState:
    step: int
    first_moment: list[np.ndarray]
    second_moment: list[np.ndarray]
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8

    def __post_init__(self):
        if not (0.0 < self.beta1 < 1.0 and 0.0 < self.beta2 < 1.0):
            raise ValueError("beta1 and beta2 must lie in (0, 1)")

    @classmethod
    def zeros_like(cls, params: Sequence[np.ndarray], **kw) -> "AdamState":
        return cls(0, [np.zeros_like(p) for p in params], [np.zeros_like(p) for p in params], **kw)


def adam_step(
    params: Sequence[np.ndarray],
    grads: Sequence[np.ndarray],
    state: AdamState,
    lr: float,
) -> tuple[list[np.ndarray], AdamState]:
    """Bias-corrected Adam update. Inputs are not modified."""
    if len(params) != len(grads) or len(params) != len(state.first_moment):
        raise ValueError("params, grads and Adam moments must have matching lengths")
    t = state.step + 1
    b1, b2, eps = state.beta1, state.beta2, state.epsilon
    c1 = 1.0 - b1**t
    c2 = 1.0 - b2**t
    new_p, new_m, new_v = [], [], []
    for p, g, m, v in zip(params, grads, state.first_moment, state.second_moment):
        if p.shape != g.shape or p.shape != m.shape:
            raise ValueError(f"shape mismatch: param {p.shape}, grad {g.shape}, moment {m.shape}")
        m = b1 * m + (1.0 - b1) * g
        v = b2 * v + (1.0 - b2) * (g * g)
        new_p.append(p - lr * (m / c1) / (np.sqrt(v / c2) + eps))
        new_m.append(m)
        new_v.append(v)
    return new_p, AdamState(t, new_m, new_v, b1, b2, eps)


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 10_000
    batch_size: int = 50
    learning_rate: float = 1e-3
    recurrent_len: int = 10
    seed: int = 0
    shuffle: bool = True
    normalize: bool = False

    def __post_init__(self):
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be positive")
        if self.recurrent_len < 1:
            raise ValueError("recurrent_len must be >= 1")


def normalization_stats(sequences: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Per-channel state mean and std, and std of one-step increments."""
    flat = sequences.reshape(-1, sequences.shape[-1])
    inc = np.diff(sequences, axis=1).reshape(-1, sequences.shape[-1])

    def safe(s):
        return np.where(s > 0, s, 1.0)

    return flat.mean(axis=0), safe(flat.std(axis=0)), safe(inc.std(axis=0))


def train(
    model: FlowMapModel,
    dataset,
    config: TrainConfig,
    callback: Optional[Callable[[int, float], None]] = None,
) -> tuple[FlowMapModel, np.ndarray]:
    """Mini-batch Adam on the recurrent loss.

    ``dataset`` is a ``SequenceDataset``. Each epoch visits every sequence once
    (in a seeded random order when ``config.shuffle``); the last batch may be
    short. Returns a new model and the per-epoch mean batch loss.
    """
    seqs = dataset.sequences
    M = seqs.shape[0]
    if dataset.obs_dim != model.obs_dim or dataset.spec.memory_len != model.memory_len:
        raise ValueError(
            f"dataset (m={dataset.obs_dim}, n_M={dataset.spec.memory_len}) does not match "
            f"model (m={model.obs_dim}, n_M={model.memory_len})"
        )
    if dataset.spec.recurrent_len != config.recurrent_len:
        raise ValueError(
            f"dataset K={dataset.spec.recurrent_len} but config recurrent_len={config.recurrent_len}"
        )
    if config.batch_size > M:
        raise ValueError(f"batch_size {config.batch_size} exceeds dataset size {M}")

    model = model.copy()
    if config.normalize:
        model.in_shift, model.in_scale, model.out_scale = normalization_stats(seqs)
    rng = np.random.default_rng(config.seed)
    params = model.parameters()
    state = AdamState.zeros_like(params)
    history = np.empty(config.epochs)
    for epoch in range(config.epochs):
        order = rng.permutation(M) if config.shuffle else np.arange(M)
        total = 0.0
        n_batches = 0
        for bi, start in enumerate(range(0, M, config.batch_size)):
            batch = seqs[order[start : start + config.batch_size]]
            loss, grads = loss_and_gradient(model, batch)
            if not np.isfinite(loss) or not all(np.all(np.isfinite(g)) for g in grads):
                raise TrainingDivergedError(epoch, bi)
            params, state = adam_step(params, grads, state, config.learning_rate)
            model.weights = params[0::2]
            model.biases = params[1::2]
            total += loss
            n_batches += 1
        history[epoch] = total / n_batches
        if callback is not None:
            callback(epoch, history[epoch])

    model.meta.update(
        {
            "dt": dataset.dt,
            "dataset_fingerprint": dataset.source_fingerprint,
            "epochs": config.epochs,
            "seed": config.seed,
            "batch_size": config.batch_size,
            "learning_rate": config.learning_rate,
            "recurrent_len": config.recurrent_len,
            "normalize": config.normalize,
            "final_loss": float(history[-1]),
        }
    )
    return model, history


def _header(model: FlowMapModel) -> dict:
    widths = [model.input_width, *model.hidden_layers, model.obs_dim]
    head = {
        "format": "chaosflow-checkpoint",
        "version": CKPT_VERSION,
        "architecture": {
            "obs_dim": model.obs_dim,
            "memory_len": model.memory_len,
            "hidden_layers": list(model.hidden_layers),
            "activation": model.activation,
            "input_width": model.input_width,
            "output_width": model.obs_dim,
            "layer_shapes": [[a, b] for a, b in zip(widths[:-1], widths[1:])],
        },
        "window_order": WINDOW_ORDER,
        "parameter_layout": "per layer: W[fan_in, fan_out] row-major, then b[fan_out]; f64 little-endian",
        "normalization": None,
        "meta": model.meta,
    }
    if model.normalized:
        head["normalization"] = {
            "in_shift": model.in_shift.tolist(),
            "in_scale": model.in_scale.tolist(),
            "out_scale": model.out_scale.tolist(),
        }
    return head


def checkpoint_to_bytes(model: FlowMapModel) -> bytes:
    header = json.dumps(_header(model), sort_keys=True).encode()
    blob = b"".join(np.ascontiguousarray(p, dtype="<f8").tobytes() for p in model.parameters())
    return _CKPT_HEAD.pack(CKPT_MAGIC, CKPT_VERSION, len(header)) + header + blob


def checkpoint_from_bytes(buf: bytes) -> FlowMapModel:
    magic, version, hlen = _CKPT_HEAD.unpack_from(buf)
    if magic != CKPT_MAGIC:
        raise ValueError(f"bad checkpoint magic {magic!r}")
    if version != CKPT_VERSION:
        raise ValueError(f"unsupported checkpoint version {version}")
    off = _CKPT_HEAD.size
    head = json.loads(buf[off : off + hlen].decode())
    arch = head["architecture"]
    blob = np.frombuffer(buf[off + hlen :], dtype="<f8")
    Ws, bs = [], []
    pos = 0
    for fan_in, fan_out in arch["layer_shapes"]:
        Ws.append(blob[pos : pos + fan_in * fan_out].reshape(fan_in, fan_out).astype(np.float64))
        pos += fan_in * fan_out
        bs.append(blob[pos : pos + fan_out].astype(np.float64))
        pos += fan_out
    if pos != blob.size:
        raise ValueError(f"checkpoint blob has {blob.size} values, expected {pos}")
    norm = head.get("normalization")
    stats = [None, None, None]
    if norm:
        stats = [np.array(norm[k], dtype=np.float64) for k in ("in_shift", "in_scale", "out_scale")]
    return FlowMapModel(
        arch["obs_dim"], arch["memory_len"], list(arch["hidden_layers"]), Ws, bs,
        head.get("meta", {}), *stats, arch.get("activation", "relu"),
    )


def save_checkpoint(model: FlowMapModel, path: str | os.PathLike) -> Path:
    atomic_write_bytes(path, checkpoint_to_bytes(model))
    return Path(path)


def load_checkpoint(path: str | os.PathLike) -> FlowMapModel:
    return checkpoint_from_bytes(Path(path).read_bytes())

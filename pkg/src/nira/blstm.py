"""Bidirectional LSTM sequence regressor trained with full BPTT.

Shapes: a batch is ``(B, T, D)`` zero-padded at the end with per-sequence
lengths.  Gate blocks are ordered ``i, f, o, g`` in every weight matrix.
"""

from __future__ import annotations

import itertools
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .binio import Reader, Writer
from .errors import Diverged, EmptyDataset, ModelShapeMismatch, NonFiniteLoss

log = logging.getLogger(__name__)

LAYER_CHOICES = (1, 2, 3, 4)
HIDDEN_CHOICES = (64, 128, 256)
MINIBATCH_CHOICES = (25, 50, 100, 200)
TARGETS = ("drr", "t60")
INIT_SCALE = 0.1
FORGET_BIAS = 1.0

MAGIC = b"NIRABLSM"
VERSION = 1


def _sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


@dataclass
class BlstmModel:
    """Stacked BLSTM with a linear read-out to one target.

    ``weights`` maps names such as ``"l0.f.W"`` (layer 0, forward direction,
    input weights) to arrays; ``param_names`` fixes their order.
    """

    hidden_sizes: tuple
    input_dim: int
    weights: dict
    input_mean: np.ndarray
    input_std: np.ndarray
    target_mean: float = 0.0
    target_std: float = 1.0
    target: str = "t60"
    seed: int = 0
    meta: dict = field(default_factory=dict)

    @classmethod
    def init(cls, input_dim: int, hidden_sizes, seed: int = 0, target: str = "t60") -> "BlstmModel":
        hidden_sizes = tuple(int(h) for h in hidden_sizes)
        if not hidden_sizes:
            raise ValueError("at least one layer required")
        rng = np.random.default_rng(seed)
        weights = {}
        d = input_dim
        for li, hsz in enumerate(hidden_sizes):
            for direction in ("f", "b"):
                p = f"l{li}.{direction}."
                weights[p + "W"] = rng.uniform(-INIT_SCALE, INIT_SCALE, (4 * hsz, d))
                weights[p + "U"] = rng.uniform(-INIT_SCALE, INIT_SCALE, (4 * hsz, hsz))
                b = rng.uniform(-INIT_SCALE, INIT_SCALE, 4 * hsz)
                b[hsz : 2 * hsz] += FORGET_BIAS
                weights[p + "b"] = b
            d = 2 * hsz
        weights["out.w"] = rng.uniform(-INIT_SCALE, INIT_SCALE, d)
        weights["out.b"] = np.zeros(1)
        return cls(hidden_sizes, input_dim, weights, np.zeros(input_dim), np.ones(input_dim),
                   target=target, seed=seed)

    @property
    def param_names(self) -> list[str]:
        names = []
        for li in range(len(self.hidden_sizes)):
            for direction in ("f", "b"):
                names += [f"l{li}.{direction}.{k}" for k in ("W", "U", "b")]
        return names + ["out.w", "out.b"]

    def copy(self) -> "BlstmModel":
        return BlstmModel(self.hidden_sizes, self.input_dim,
                          {k: v.copy() for k, v in self.weights.items()},
                          self.input_mean.copy(), self.input_std.copy(), self.target_mean,
                          self.target_std, self.target, self.seed, dict(self.meta))

    def n_params(self) -> int:
        return sum(v.size for v in self.weights.values())


# ---------------------------------------------------------------- LSTM core

def _lstm_forward(xproj: np.ndarray, U: np.ndarray):
    """Run one direction over pre-projected inputs ``xproj = x W^T + b``."""
    B, T, _ = xproj.shape
    H = U.shape[1]
    h = np.zeros((B, H))
    c = np.zeros((B, H))
    hs = np.empty((B, T, H))
    cs = np.empty((B, T, H))
    acts = np.empty((B, T, 4 * H))
    tcs = np.empty((B, T, H))
    UT = U.T
    for t in range(T):
        z = xproj[:, t] + h @ UT
        a = np.empty_like(z)
        a[:, : 3 * H] = _sigmoid(z[:, : 3 * H])
        a[:, 3 * H :] = np.tanh(z[:, 3 * H :])
        c = a[:, H : 2 * H] * c + a[:, :H] * a[:, 3 * H :]
        tc = np.tanh(c)
        h = a[:, 2 * H : 3 * H] * tc
        hs[:, t], cs[:, t], acts[:, t], tcs[:, t] = h, c, a, tc
    return hs, (cs, acts, tcs)


def _lstm_backward(dhs: np.ndarray, hs: np.ndarray, cache, U: np.ndarray):
    """Gradients w.r.t. the pre-projected inputs and the recurrent weights."""
    cs, acts, tcs = cache
    B, T, H = hs.shape
    dz_all = np.empty((B, T, 4 * H))
    dh_next = np.zeros((B, H))
    dc_next = np.zeros((B, H))
    for t in range(T - 1, -1, -1):
        a = acts[:, t]
        i, f, o, g = a[:, :H], a[:, H : 2 * H], a[:, 2 * H : 3 * H], a[:, 3 * H :]
        dh = dhs[:, t] + dh_next
        dc = dc_next + dh * o * (1.0 - tcs[:, t] ** 2)
        c_prev = cs[:, t - 1] if t > 0 else np.zeros((B, H))
        dz = dz_all[:, t]
        dz[:, :H] = dc * g * i * (1.0 - i)
        dz[:, H : 2 * H] = dc * c_prev * f * (1.0 - f)
        dz[:, 2 * H : 3 * H] = dh * tcs[:, t] * o * (1.0 - o)
        dz[:, 3 * H :] = dc * i * (1.0 - g * g)
        dh_next = dz @ U
        dc_next = dc * f
    h_prev = np.concatenate([np.zeros((B, 1, H)), hs[:, :-1]], axis=1)
    dU = _outer_sum(dz_all, h_prev)
    return dz_all, dU


def _outer_sum(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """``sum_bt a[b,t,:] outer b[b,t,:]``."""
    return a.reshape(-1, a.shape[-1]).T @ b.reshape(-1, b.shape[-1])


def _reverse_padded(x: np.ndarray, lengths: np.ndarray) -> np.ndarray:
    """Reverse each sequence within its own length; padding stays at the end."""
    B, T = x.shape[:2]
    t = np.arange(T)[None, :]
    idx = np.where(t < lengths[:, None], lengths[:, None] - 1 - t, t)
    out = x[np.arange(B)[:, None], idx]
    out[t.repeat(B, 0) >= lengths[:, None]] = 0.0
    return out


def _mask(lengths: np.ndarray, T: int) -> np.ndarray:
    return (np.arange(T)[None, :] < lengths[:, None]).astype(np.float64)


def _pad(seqs: list[np.ndarray]):
    lengths = np.array([s.shape[0] for s in seqs])
    T = int(lengths.max())
    D = seqs[0].shape[1]
    x = np.zeros((len(seqs), T, D))
    for k, s in enumerate(seqs):
        x[k, : s.shape[0]] = s
    return x, lengths


def _forward(model: BlstmModel, x: np.ndarray, lengths: np.ndarray, keep_cache: bool = False):
    """Normalised-space outputs ``(B, T)`` for normalised inputs."""
    caches = []
    layer_in = x
    m = _mask(lengths, x.shape[1])[:, :, None]
    for li in range(len(model.hidden_sizes)):
        outs = []
        for direction in ("f", "b"):
            p = f"l{li}.{direction}."
            inp = layer_in if direction == "f" else _reverse_padded(layer_in, lengths)
            xproj = inp @ model.weights[p + "W"].T + model.weights[p + "b"]
            hs, cache = _lstm_forward(xproj, model.weights[p + "U"])
            caches.append((inp, hs, cache))
            out = hs if direction == "f" else _reverse_padded(hs, lengths)
            outs.append(out * m)
        layer_in = np.concatenate(outs, axis=2)
    y = layer_in @ model.weights["out.w"] + model.weights["out.b"][0]
    return (y, layer_in, caches) if keep_cache else y


def _check_input(model: BlstmModel, values: np.ndarray):
    if values.ndim != 2 or values.shape[1] != model.input_dim:
        raise ModelShapeMismatch(f"model expects {model.input_dim} columns, got shape {values.shape}")
    if not np.all(np.isfinite(values)):
        raise ModelShapeMismatch("non-finite feature values")


def normalize_inputs(model: BlstmModel, values: np.ndarray) -> np.ndarray:
    return (values - model.input_mean) / model.input_std


def blstm_forward(model: BlstmModel, features) -> np.ndarray:
    """Per-frame estimates (target units) for one utterance.

    ``features`` is a :class:`~nira.features.assemble.FeatureMatrix` or a
    ``(T, D)`` array.
    """
    values = getattr(features, "values", features)
    values = np.asarray(values, dtype=np.float64)
    _check_input(model, values)
    x = normalize_inputs(model, values)[None]
    y = _forward(model, x, np.array([values.shape[0]]))[0]
    return y * model.target_std + model.target_mean


def forward_batch(model: BlstmModel, seqs: list[np.ndarray]) -> list[np.ndarray]:
    """Per-frame estimates for several utterances in one padded pass."""
    for s in seqs:
        _check_input(model, s)
    x, lengths = _pad([normalize_inputs(model, s) for s in seqs])
    y = _forward(model, x, lengths) * model.target_std + model.target_mean
    return [y[k, :n] for k, n in enumerate(lengths)]


def temporal_average(per_frame) -> float:
    """Utterance-level estimate: arithmetic mean of the per-frame estimates."""
    per_frame = np.asarray(per_frame, dtype=np.float64)
    if per_frame.size == 0:
        raise ValueError("no frames to average")
    return float(np.mean(per_frame))


def bptt_gradients(model: BlstmModel, batch, normalized: bool = False):
    """Loss and exact gradients for a batch of ``(values, target)`` pairs.

    The loss is the sum over all frames of the squared error between the
    output and the normalised target ``(target - mean) / std``.  ``values``
    are raw features unless ``normalized`` is set.  ``target`` may be a
    scalar (repeated over frames) or a per-frame array.

    Returns ``(loss, grads)`` with ``grads`` keyed like ``model.weights``.
    """
    if not batch:
        raise EmptyDataset("empty batch")
    seqs, targets = [], []
    for values, target in batch:
        values = np.asarray(values, dtype=np.float64)
        _check_input(model, values)
        seqs.append(values if normalized else normalize_inputs(model, values))
        t = np.broadcast_to(np.asarray(target, dtype=np.float64), (values.shape[0],))
        targets.append((t - model.target_mean) / model.target_std)
    x, lengths = _pad(seqs)
    T = x.shape[1]
    tgt = np.zeros((len(seqs), T))
    for k, t in enumerate(targets):
        tgt[k, : t.size] = t
    m = _mask(lengths, T)

    y, top, caches = _forward(model, x, lengths, keep_cache=True)
    err = (y - tgt) * m
    loss = float(np.sum(err * err))
    if not np.isfinite(loss):
        raise NonFiniteLoss("loss is not finite")

    grads = {}
    dy = 2.0 * err
    grads["out.w"] = dy.reshape(-1) @ top.reshape(-1, top.shape[-1])
    grads["out.b"] = np.array([dy.sum()])
    d_in = dy[:, :, None] * model.weights["out.w"][None, None, :]

    n_layers = len(model.hidden_sizes)
    for li in range(n_layers - 1, -1, -1):
        H = model.hidden_sizes[li]
        d_in = d_in * m[:, :, None]
        d_prev = None
        for k, direction in enumerate(("f", "b")):
            p = f"l{li}.{direction}."
            inp, hs, cache = caches[2 * li + k]
            d_out = d_in[:, :, k * H : (k + 1) * H]
            dhs = d_out if direction == "f" else _reverse_padded(d_out, lengths)
            dz, dU = _lstm_backward(dhs, hs, cache, model.weights[p + "U"])
            grads[p + "U"] = dU
            grads[p + "W"] = _outer_sum(dz, inp)
            grads[p + "b"] = dz.sum(axis=(0, 1))
            dx = dz @ model.weights[p + "W"]
            if direction == "b":
                dx = _reverse_padded(dx, lengths)
            d_prev = dx if d_prev is None else d_prev + dx
        d_in = d_prev
    return loss, grads


# ---------------------------------------------------------------- training

@dataclass
class TrainConfig:
    minibatch: int = 25
    max_epochs: int = 50
    patience: int = 5
    learning_rate: float = 1e-4
    momentum: float = 0.9
    gradient_clip: float = 10.0
    seed: int = 0

    def __post_init__(self):
        if self.minibatch not in MINIBATCH_CHOICES:
            raise ValueError(f"minibatch must be one of {MINIBATCH_CHOICES}")
        if self.patience < 1:
            raise ValueError("patience must be >= 1")
        if self.max_epochs < 1:
            raise ValueError("max_epochs must be >= 1")


def sweep_grid():
    """The full architecture sweep: layers x hidden size x minibatch."""
    return [
        {"layers": n, "hidden": h, "minibatch": mb}
        for n, h, mb in itertools.product(LAYER_CHOICES, HIDDEN_CHOICES, MINIBATCH_CHOICES)
    ]


def fit_normalization(model: BlstmModel, train_values: list[np.ndarray], train_targets) -> None:
    """Set input/target statistics from the training split only."""
    stacked = np.concatenate(train_values, axis=0)
    mean = stacked.mean(axis=0)
    std = stacked.std(axis=0)
    std[std < 1e-12] = 1.0
    model.input_mean, model.input_std = mean, std
    t = np.asarray(train_targets, dtype=np.float64)
    model.target_mean = float(t.mean())
    sd = float(t.std())
    model.target_std = sd if sd > 1e-12 else 1.0


def utterance_rmsd(model: BlstmModel, values: list[np.ndarray], targets, chunk: int = 50) -> float:
    est = []
    for k in range(0, len(values), chunk):
        est += [temporal_average(y) for y in forward_batch(model, values[k : k + chunk])]
    err = np.asarray(est) - np.asarray(targets, dtype=np.float64)
    return float(np.sqrt(np.mean(err * err)))


# divergence is detected from the loss and dev error, not from floating-point warnings
@np.errstate(over="ignore", invalid="ignore")
def train(train_set, dev_set, config: TrainConfig, hidden_sizes=(64,), target: str = "t60",
          model: BlstmModel | None = None):
    """Train with momentum SGD, keep the snapshot with the lowest dev RMSD.

    ``train_set`` and ``dev_set`` are sequences of ``(values, target)``
    pairs.  Returns ``(model, log_lines)``; every log line is a JSON object
    with the epoch, mean per-frame training loss and dev RMSD (target
    units).  Training stops after ``patience`` epochs without improvement.
    """
    if not train_set or not dev_set:
        raise EmptyDataset("train and dev sets must be non-empty")
    tr_x = [np.asarray(v, dtype=np.float64) for v, _ in train_set]
    tr_y = np.array([float(t) for _, t in train_set])
    dv_x = [np.asarray(v, dtype=np.float64) for v, _ in dev_set]
    dv_y = np.array([float(t) for _, t in dev_set])

    if model is None:
        model = BlstmModel.init(tr_x[0].shape[1], hidden_sizes, seed=config.seed, target=target)
    fit_normalization(model, tr_x, tr_y)
    tr_norm = [normalize_inputs(model, v) for v in tr_x]
    n_frames = sum(v.shape[0] for v in tr_x)

    rng = np.random.default_rng(config.seed + 1)
    velocity = {k: np.zeros_like(v) for k, v in model.weights.items()}
    best, best_dev, best_epoch, stale = None, np.inf, 0, 0
    lines = []

    for epoch in range(1, config.max_epochs + 1):
        order = rng.permutation(len(tr_norm))
        total = 0.0
        for start in range(0, len(order), config.minibatch):
            idx = order[start : start + config.minibatch]
            batch = [(tr_norm[i], tr_y[i]) for i in idx]
            try:
                loss, grads = bptt_gradients(model, batch, normalized=True)
            except NonFiniteLoss as exc:
                raise Diverged(f"epoch {epoch}: {exc}") from exc
            total += loss
            norm = np.sqrt(sum(float(np.sum(g * g)) for g in grads.values()))
            scale = config.gradient_clip / norm if norm > config.gradient_clip else 1.0
            for k in model.param_names:
                velocity[k] = config.momentum * velocity[k] - config.learning_rate * scale * grads[k]
                model.weights[k] += velocity[k]
        dev = utterance_rmsd(model, dv_x, dv_y)
        if not np.isfinite(dev):
            raise Diverged(f"epoch {epoch}: non-finite dev error")
        lines.append(json.dumps({"epoch": epoch, "train_loss": total / n_frames, "dev_rmsd": dev}))
        log.debug(lines[-1])
        if dev < best_dev:
            best, best_dev, best_epoch, stale = model.copy(), dev, epoch, 0
        else:
            stale += 1
            if stale >= config.patience:
                break
    best.meta.update({"best_epoch": best_epoch, "best_dev_rmsd": best_dev})
    return best, lines


# ---------------------------------------------------------------- files

def dumps_model(model: BlstmModel) -> bytes:
    """Versioned binary model: JSON header, normalisation tables, weights."""
    w = Writer(MAGIC, VERSION)
    w.json({
        "target": model.target,
        "hidden_sizes": list(model.hidden_sizes),
        "input_dim": model.input_dim,
        "seed": model.seed,
        "param_names": model.param_names,
        "meta": model.meta,
    })
    w.array(model.input_mean)
    w.array(model.input_std)
    w.array(np.array([model.target_mean, model.target_std]))
    for name in model.param_names:
        w.array(model.weights[name])
    return w.getvalue()


def loads_model(data: bytes) -> BlstmModel:
    r = Reader(data, MAGIC)
    head = r.json()
    mean, std = r.array(), r.array()
    tnorm = r.array()
    weights = {name: r.array() for name in head["param_names"]}
    r.done()
    model = BlstmModel(tuple(head["hidden_sizes"]), head["input_dim"], weights, mean, std,
                       float(tnorm[0]), float(tnorm[1]), head["target"], head["seed"], head["meta"])
    if model.param_names != head["param_names"]:
        raise ModelShapeMismatch("parameter layout does not match the layer spec")
    return model


def save_model(path, model: BlstmModel) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Path(path).write_bytes(dumps_model(model))


def load_model(path) -> BlstmModel:
    return loads_model(Path(path).read_bytes())

"""Recurrent next-slot occupancy predictor.

A single-hidden-layer Elman network reads a window of the +1 (busy) /
-1 (idle) occupancy series and emits one tanh output that estimates the next
slot's value.  Training minimizes squared error with minibatch gradient
descent; gradients come from backpropagation through time over each window.
"""

from __future__ import annotations

import json
import math
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import metrics
from .channel import OccupancyTrace, SlotState

N_FEATURES = 3
_MAGIC = b"CRNN"
_FORMAT_VERSION = 1
PARAM_NAMES = ("w_xh", "w_hh", "b_h", "w_hy", "b_y")


class PredictorError(ValueError):
    pass


class DivergenceError(ArithmeticError):
    """Training produced a non-finite loss or weight."""

    def __init__(self, epoch: int, detail: str = "non-finite loss"):
        super().__init__(f"training diverged at epoch {epoch}: {detail}")
        self.epoch = epoch


@dataclass(frozen=True)
class RnnConfig:
    """Predictor hyperparameters.

    Stability: with full-batch steps (``batch_size=None``) and
    ``learning_rate <= 0.2`` the training loss on the period-2 series
    decreases at every epoch.
    """

    hidden_size: int = 8
    window: int = 10
    learning_rate: float = 0.05
    epochs: int = 400
    init_weight: float = 0.5
    init_mode: str = "uniform"  # or "constant"
    classify_threshold: float = 0.181
    feature_mode: bool = False
    batch_size: int | None = 64  # None: full batch
    lr_decay: float = 0.05  # step size at epoch e is learning_rate / (1 + lr_decay * (e - 1))

    def __post_init__(self):
        if self.hidden_size < 1:
            raise PredictorError(f"hidden_size must be >= 1, got {self.hidden_size}")
        if self.window < 1:
            raise PredictorError(f"window must be >= 1, got {self.window}")
        if self.learning_rate < 0.0:
            raise PredictorError(f"learning_rate must be >= 0, got {self.learning_rate}")
        if self.epochs < 1:
            raise PredictorError(f"epochs must be >= 1, got {self.epochs}")
        if self.init_mode not in ("uniform", "constant"):
            raise PredictorError(f"init_mode must be 'uniform' or 'constant', got {self.init_mode!r}")
        if self.lr_decay < 0.0:
            raise PredictorError(f"lr_decay must be >= 0, got {self.lr_decay}")
        if self.batch_size is not None and self.batch_size < 1:
            raise PredictorError(f"batch_size must be >= 1 or None, got {self.batch_size}")

    @property
    def input_size(self) -> int:
        return 1 + (N_FEATURES if self.feature_mode else 0)


@dataclass
class RnnModel:
    w_xh: np.ndarray  # (hidden, input)
    w_hh: np.ndarray  # (hidden, hidden)
    b_h: np.ndarray  # (hidden,)
    w_hy: np.ndarray  # (hidden,)
    b_y: np.ndarray  # (1,)

    @property
    def hidden_size(self) -> int:
        return self.w_hh.shape[0]

    @property
    def input_size(self) -> int:
        return self.w_xh.shape[1]

    @classmethod
    def zeros(cls, input_size: int, hidden_size: int) -> "RnnModel":
        return cls(
            np.zeros((hidden_size, input_size)),
            np.zeros((hidden_size, hidden_size)),
            np.zeros(hidden_size),
            np.zeros(hidden_size),
            np.zeros(1),
        )

    @classmethod
    def initialize(cls, config: RnnConfig, rng: np.random.Generator) -> "RnnModel":
        """Uniform weights in ``[-s, s]`` or every weight equal to ``s``; zero biases."""
        m = cls.zeros(config.input_size, config.hidden_size)
        s = config.init_weight
        for name in ("w_xh", "w_hh", "w_hy"):
            arr = getattr(m, name)
            if config.init_mode == "constant":
                arr[...] = s
            else:
                arr[...] = rng.uniform(-s, s, arr.shape)
        return m

    def params(self) -> list[np.ndarray]:
        return [getattr(self, n) for n in PARAM_NAMES]

    def copy(self) -> "RnnModel":
        return RnnModel(*(p.copy() for p in self.params()))

    def flat(self) -> np.ndarray:
        return np.concatenate([p.ravel() for p in self.params()])

    def set_flat(self, vec: np.ndarray) -> None:
        i = 0
        for p in self.params():
            p[...] = vec[i : i + p.size].reshape(p.shape)
            i += p.size

    def is_finite(self) -> bool:
        return all(np.all(np.isfinite(p)) for p in self.params())

    # -- serialization ---------------------------------------------------

    def to_json(self) -> str:
        doc = {
            "format": "cogradio-rnn",
            "version": _FORMAT_VERSION,
            "input_size": self.input_size,
            "hidden_size": self.hidden_size,
        }
        doc.update({n: getattr(self, n).tolist() for n in PARAM_NAMES})
        return json.dumps(doc)

    @classmethod
    def from_json(cls, text: str) -> "RnnModel":
        doc = json.loads(text)
        if doc.get("format") != "cogradio-rnn" or doc.get("version") != _FORMAT_VERSION:
            raise PredictorError("not a version-1 model document")
        m = cls.zeros(doc["input_size"], doc["hidden_size"])
        for n in PARAM_NAMES:
            arr = np.asarray(doc[n], dtype=np.float64)
            if arr.shape != getattr(m, n).shape:
                raise PredictorError(f"{n}: expected shape {getattr(m, n).shape}, got {arr.shape}")
            getattr(m, n)[...] = arr
        return m

    def to_bytes(self) -> bytes:
        """Binary layout: ``b"CRNN"``, u32 version, u32 input, u32 hidden,
        then w_xh, w_hh, b_h, w_hy, b_y as row-major little-endian float64."""
        head = _MAGIC + struct.pack("<III", _FORMAT_VERSION, self.input_size, self.hidden_size)
        return head + b"".join(np.ascontiguousarray(p, dtype="<f8").tobytes() for p in self.params())

    @classmethod
    def from_bytes(cls, data: bytes) -> "RnnModel":
        if data[:4] != _MAGIC:
            raise PredictorError("bad magic: not a model file")
        version, n_in, n_h = struct.unpack("<III", data[4:16])
        if version != _FORMAT_VERSION:
            raise PredictorError(f"unsupported model version {version}")
        m = cls.zeros(n_in, n_h)
        off = 16
        for p in m.params():
            nbytes = p.size * 8
            chunk = data[off : off + nbytes]
            if len(chunk) != nbytes:
                raise PredictorError("truncated model file")
            p[...] = np.frombuffer(chunk, dtype="<f8").reshape(p.shape)
            off += nbytes
        if off != len(data):
            raise PredictorError("trailing bytes after model weights")
        return m

    def save(self, path: str | Path) -> None:
        path = Path(path)
        if path.suffix == ".json":
            path.write_text(self.to_json())
        else:
            path.write_bytes(self.to_bytes())

    @classmethod
    def load(cls, path: str | Path) -> "RnnModel":
        path = Path(path)
        if path.suffix == ".json":
            return cls.from_json(path.read_text())
        return cls.from_bytes(path.read_bytes())


@dataclass
class TrainingReport:
    train_rmse: list[float] = field(default_factory=list)
    val_rmse: list[float] = field(default_factory=list)
    test_rmse: float | None = None
    test_mse: float | None = None


# -- data --------------------------------------------------------------------

def encode_series(trace: OccupancyTrace) -> np.ndarray:
    """+1 for busy slots, -1 for idle slots."""
    return trace.encode()


def decode_series(series, slot_duration: float = 0.01) -> OccupancyTrace:
    return OccupancyTrace.decode(series, slot_duration)


def synthetic_features(length: int, rng: np.random.Generator) -> np.ndarray:
    """Per-slot (capacity, efficiency, base-station distance), each in [0, 1].

    No generating model is known for these quantities; they are drawn
    independently and uniformly so that enabling them exercises the wider
    input path without leaking the target.
    """
    return rng.random((length, N_FEATURES))


def make_windows(series: np.ndarray, window: int, features: np.ndarray | None = None):
    """Sliding ``(inputs, targets)``: ``inputs[i]`` covers slots ``i .. i+window-1``
    and ``targets[i]`` is slot ``i + window``."""
    s = np.asarray(series, dtype=float)
    n = s.size - window
    if n < 1:
        raise PredictorError(f"series of length {s.size} is too short for window {window}")
    idx = np.arange(window)[None, :] + np.arange(n)[:, None]
    x = s[idx][:, :, None]
    if features is not None:
        x = np.concatenate([x, np.asarray(features, dtype=float)[idx]], axis=2)
    return x, s[window:].copy()


# -- network -----------------------------------------------------------------

def _forward(model: RnnModel, x: np.ndarray):
    b, t, _ = x.shape
    hs = np.zeros((t + 1, b, model.hidden_size))
    for k in range(t):
        hs[k + 1] = np.tanh(x[:, k, :] @ model.w_xh.T + hs[k] @ model.w_hh.T + model.b_h)
    y = np.tanh(hs[t] @ model.w_hy + model.b_y[0])
    return y, hs


def forward_batch(model: RnnModel, x: np.ndarray) -> np.ndarray:
    """Outputs for a ``(batch, window, input)`` array."""
    x = np.asarray(x, dtype=float)
    if x.ndim != 3 or x.shape[2] != model.input_size:
        raise PredictorError(f"expected input of shape (batch, window, {model.input_size}), got {x.shape}")
    return _forward(model, x)[0]


def forward(model: RnnModel, window, features=None) -> float:
    """Output in (-1, 1) for one history window (oldest slot first)."""
    w = np.asarray(window, dtype=float).reshape(-1, 1)
    if features is not None:
        w = np.concatenate([w, np.asarray(features, dtype=float).reshape(w.shape[0], -1)], axis=1)
    if w.shape[1] != model.input_size:
        raise PredictorError(f"model takes {model.input_size} inputs per slot, got {w.shape[1]}")
    return float(forward_batch(model, w[None])[0])


def loss_and_grads(model: RnnModel, x: np.ndarray, targets: np.ndarray):
    """Summed squared error over the batch and its gradient per parameter."""
    y, hs = _forward(model, x)
    err = y - targets
    loss = float(np.sum(err * err))
    dz = 2.0 * err * (1.0 - y * y)
    g = RnnModel.zeros(model.input_size, model.hidden_size)
    g.w_hy[...] = dz @ hs[-1]
    g.b_y[0] = dz.sum()
    dh = np.outer(dz, model.w_hy)
    for k in range(x.shape[1] - 1, -1, -1):
        da = dh * (1.0 - hs[k + 1] ** 2)
        g.w_xh += da.T @ x[:, k, :]
        g.w_hh += da.T @ hs[k]
        g.b_h += da.sum(axis=0)
        dh = da @ model.w_hh
    return loss, g


def gradient_check(model: RnnModel, x: np.ndarray, targets: np.ndarray, step: float = 1e-5, floor: float = 1e-8):
    """Largest relative gap between backprop and central-difference gradients.

    Relative error per weight is ``|a - n| / max(|a|, |n|, floor)``.
    Returns ``(max_rel_error, analytic_flat, numeric_flat)``.
    """
    _, g = loss_and_grads(model, x, targets)
    analytic = g.flat()
    base = model.flat()
    probe = model.copy()
    numeric = np.empty_like(base)
    for i in range(base.size):
        v = base.copy()
        v[i] = base[i] + step
        probe.set_flat(v)
        up = loss_and_grads(probe, x, targets)[0]
        v[i] = base[i] - step
        probe.set_flat(v)
        down = loss_and_grads(probe, x, targets)[0]
        numeric[i] = (up - down) / (2.0 * step)
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)
    return float(np.max(np.abs(analytic - numeric) / denom)), analytic, numeric


def predict_next(model: RnnModel, window, threshold: float = 0.181, features=None) -> SlotState:
    return SlotState.BUSY if forward(model, window, features) > threshold else SlotState.IDLE


def hit_rate(model: RnnModel, series: np.ndarray, window: int, threshold: float = 0.181, features=None) -> float:
    """Fraction of next-slot busy/idle calls that match the series."""
    x, t = make_windows(series, window, features)
    y = forward_batch(model, x)
    return float(np.mean((y > threshold) == (t > 0)))


# -- training ----------------------------------------------------------------

def _series_and_features(trace, config: RnnConfig, rng):
    s = encode_series(trace) if isinstance(trace, OccupancyTrace) else np.asarray(trace, dtype=float)
    feats = synthetic_features(s.size, rng) if config.feature_mode else None
    return s, feats


def evaluate(model: RnnModel, x: np.ndarray, t: np.ndarray) -> tuple[np.ndarray, float]:
    y = forward_batch(model, x)
    return y, metrics.rmse(t, y)


def train(
    config: RnnConfig,
    train_trace,
    val_trace,
    rng: np.random.Generator,
    test_trace=None,
    model: RnnModel | None = None,
):
    """Fit a predictor and record per-epoch RMSE on both splits.

    Traces may be :class:`OccupancyTrace` objects or +/-1 arrays.  Each epoch
    visits every training window once in a fresh random order; updates use
    the batch-mean gradient with an inverse-time decaying step size.  Raises :class:`DivergenceError` if the loss or
    weights stop being finite.
    """
    if model is None:
        model = RnnModel.initialize(config, rng)
    else:
        model = model.copy()
    s_tr, f_tr = _series_and_features(train_trace, config, rng)
    s_va, f_va = _series_and_features(val_trace, config, rng)
    if s_tr.size <= config.window + 1 or s_va.size <= config.window:
        raise PredictorError("traces must be longer than the window plus one slot")
    x_tr, t_tr = make_windows(s_tr, config.window, f_tr)
    x_va, t_va = make_windows(s_va, config.window, f_va)
    n = t_tr.size
    bs = n if config.batch_size is None else min(config.batch_size, n)
    report = TrainingReport()
    for epoch in range(1, config.epochs + 1):
        lr = config.learning_rate / (1.0 + config.lr_decay * (epoch - 1))
        order = rng.permutation(n)
        if lr > 0.0:
            for start in range(0, n, bs):
                idx = order[start : start + bs]
                loss, g = loss_and_grads(model, x_tr[idx], t_tr[idx])
                if not math.isfinite(loss):
                    raise DivergenceError(epoch)
                scale = lr / idx.size
                for p, dp in zip(model.params(), g.params()):
                    p -= scale * dp
        if not model.is_finite():
            raise DivergenceError(epoch, "non-finite weights")
        _, r_tr = evaluate(model, x_tr, t_tr)
        _, r_va = evaluate(model, x_va, t_va)
        if not (math.isfinite(r_tr) and math.isfinite(r_va)):
            raise DivergenceError(epoch)
        report.train_rmse.append(r_tr)
        report.val_rmse.append(r_va)
    if test_trace is not None:
        s_te, f_te = _series_and_features(test_trace, config, rng)
        x_te, t_te = make_windows(s_te, config.window, f_te)
        y_te = forward_batch(model, x_te)
        report.test_mse = metrics.mse(t_te, y_te)
        report.test_rmse = metrics.rmse(t_te, y_te)
    return model, report


def bayes_hit_rate(series: np.ndarray, p: float, q: float, window: int) -> float:
    """Hit rate of the optimal one-step predictor for a known Markov chain.

    Predicts the more likely next state given the last observed state and
    scores it on the same targets a predictor with ``window`` history sees.
    """
    s = np.asarray(series, dtype=float)
    last = s[window - 1 : -1]
    target = s[window:]
    # +1 busy: stay busy w.p. 1-p; -1 idle: turn busy w.p. q
    p_busy = np.where(last > 0, 1.0 - p, q)
    guess = np.where(p_busy > 0.5, 1.0, -1.0)
    return float(np.mean(guess == target))

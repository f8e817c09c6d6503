"""Minimal neural substrate: parameters, LSTM, linear/softmax, SGD, grad checking.

Gradients are hand-derived per layer and verified against central finite
differences (:func:`grad_check`).  Storage and training arithmetic use 32-bit
floats; models can be built in 64-bit for gradient-check mode.  Determinism
contract: a fixed seed gives bit-identical initialization, batch order, and
therefore parameters after any number of steps on one platform.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Callable, Iterable, Sequence

import numpy as np

DEFAULT_DTYPE = np.float32


def make_rng(seed: int) -> np.random.Generator:
    """PCG64 generator; the single source of randomness for a run."""
    return np.random.Generator(np.random.PCG64(seed))


class Parameter:
    """Named value/gradient pair.  Names are unique within a model."""

    __slots__ = ("name", "value", "grad")

    def __init__(self, name: str, value: np.ndarray):
        self.name = name
        self.value = np.ascontiguousarray(value)
        self.grad = np.zeros_like(self.value)

    @property
    def dtype(self):
        return self.value.dtype

    def __repr__(self) -> str:
        return f"Parameter({self.name!r}, shape={self.value.shape})"


def zero_grads(params: Iterable[Parameter]) -> None:
    for p in params:
        p.grad[...] = 0


def uniform_init(rng: np.random.Generator, shape: tuple[int, ...],
                 fan_in: int, dtype=DEFAULT_DTYPE) -> np.ndarray:
    bound = math.sqrt(1.0 / fan_in)
    return rng.uniform(-bound, bound, shape).astype(dtype)


def sigmoid(z: np.ndarray) -> np.ndarray:
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def _check_dim(name: str, array: np.ndarray, expected: int) -> None:
    if array.shape[-1] != expected:
        raise ValueError(
            f"dimension mismatch for {name}: expected last dimension {expected}, "
            f"got shape {array.shape}"
        )


class Lstm:
    """Single LSTM layer over batched steps.  Gate order i, f, g, o.

    Weights: wx [d_in, 4H], wh [d_h, 4H], b [4H] with the forget-gate slice
    of the bias initialized to 1.
    """

    def __init__(self, name: str, d_in: int, d_h: int,
                 rng: np.random.Generator | None, dtype=DEFAULT_DTYPE):
        self.name = name
        self.d_in = d_in
        self.d_h = d_h
        if rng is None:
            wx = np.zeros((d_in, 4 * d_h), dtype)
            wh = np.zeros((d_h, 4 * d_h), dtype)
        else:
            wx = uniform_init(rng, (d_in, 4 * d_h), d_in, dtype)
            wh = uniform_init(rng, (d_h, 4 * d_h), d_h, dtype)
        b = np.zeros(4 * d_h, dtype)
        b[d_h:2 * d_h] = 1.0
        self.wx = Parameter(f"{name}.wx", wx)
        self.wh = Parameter(f"{name}.wh", wh)
        self.b = Parameter(f"{name}.b", b)

    def parameters(self) -> list[Parameter]:
        return [self.wx, self.wh, self.b]

    def initial_state(self, batch: int) -> tuple[np.ndarray, np.ndarray]:
        dtype = self.wx.dtype
        return (np.zeros((batch, self.d_h), dtype), np.zeros((batch, self.d_h), dtype))

    def step(self, x: np.ndarray, h_prev: np.ndarray, c_prev: np.ndarray):
        """One gated update on a [B, d] batch; returns (h, c) plus a cache."""
        h = self.d_h
        z = x @ self.wx.value + h_prev @ self.wh.value + self.b.value
        i = sigmoid(z[:, :h])
        f = sigmoid(z[:, h:2 * h])
        g = np.tanh(z[:, 2 * h:3 * h])
        o = sigmoid(z[:, 3 * h:])
        c = f * c_prev + i * g
        ct = np.tanh(c)
        out = o * ct
        cache = (x, h_prev, c_prev, i, f, g, o, ct)
        return out, c, cache

    def step_backward(self, cache, dh: np.ndarray, dc: np.ndarray):
        """Backward through one step; accumulates weight grads, returns
        (dx, dh_prev, dc_prev)."""
        x, h_prev, c_prev, i, f, g, o, ct = cache
        do = dh * ct
        dc_total = dc + dh * o * (1.0 - ct * ct)
        df = dc_total * c_prev
        di = dc_total * g
        dg = dc_total * i
        dc_prev = dc_total * f
        dz = np.concatenate(
            [di * i * (1.0 - i),
             df * f * (1.0 - f),
             dg * (1.0 - g * g),
             do * o * (1.0 - o)],
            axis=1,
        )
        self.wx.grad += x.T @ dz
        self.wh.grad += h_prev.T @ dz
        self.b.grad += dz.sum(axis=0)
        dx = dz @ self.wx.value.T
        dh_prev = dz @ self.wh.value.T
        return dx, dh_prev, dc_prev

    def forward(self, xs: np.ndarray, state: tuple[np.ndarray, np.ndarray] | None = None):
        """Run a [T, B, d_in] sequence; returns (hs [T, B, H], final state, caches)."""
        T, B, _ = xs.shape
        h, c = state if state is not None else self.initial_state(B)
        hs = np.empty((T, B, self.d_h), dtype=self.wx.dtype)
        caches = []
        for t in range(T):
            h, c, cache = self.step(xs[t], h, c)
            hs[t] = h
            caches.append(cache)
        return hs, (h, c), caches

    def backward(self, caches, dhs: np.ndarray,
                 d_state: tuple[np.ndarray, np.ndarray] | None = None):
        """Backward over a cached sequence; returns (dxs, dh0, dc0)."""
        T = len(caches)
        B = dhs.shape[1]
        if d_state is not None:
            dh, dc = d_state
        else:
            dh = np.zeros((B, self.d_h), dtype=self.wx.dtype)
            dc = np.zeros_like(dh)
        dxs = np.empty((T, B, self.d_in), dtype=self.wx.dtype)
        for t in range(T - 1, -1, -1):
            dx, dh_prev, dc_prev = self.step_backward(caches[t], dhs[t] + dh, dc)
            dxs[t] = dx
            dh, dc = dh_prev, dc_prev
        return dxs, dh, dc


def lstm_step(x: np.ndarray, h_prev: np.ndarray, c_prev: np.ndarray,
              lstm: Lstm) -> tuple[np.ndarray, np.ndarray]:
    """One LSTM cell update.  Accepts [d] vectors or [B, d] batches."""
    single = x.ndim == 1
    x2 = np.atleast_2d(np.asarray(x, dtype=lstm.wx.dtype))
    h2 = np.atleast_2d(np.asarray(h_prev, dtype=lstm.wx.dtype))
    c2 = np.atleast_2d(np.asarray(c_prev, dtype=lstm.wx.dtype))
    _check_dim("x", x2, lstm.d_in)
    _check_dim("h_prev", h2, lstm.d_h)
    _check_dim("c_prev", c2, lstm.d_h)
    h, c, _ = lstm.step(x2, h2, c2)
    if single:
        return h[0], c[0]
    return h, c


class Linear:
    """Affine map y = x @ W.T + b with W laid out [d_out, d_in]."""

    def __init__(self, name: str, d_in: int, d_out: int,
                 rng: np.random.Generator | None, dtype=DEFAULT_DTYPE):
        self.name = name
        self.d_in = d_in
        self.d_out = d_out
        w = (np.zeros((d_out, d_in), dtype) if rng is None
             else uniform_init(rng, (d_out, d_in), d_in, dtype))
        self.w = Parameter(f"{name}.w", w)
        self.b = Parameter(f"{name}.b", np.zeros(d_out, dtype))

    def parameters(self) -> list[Parameter]:
        return [self.w, self.b]

    def forward(self, x: np.ndarray) -> np.ndarray:
        return x @ self.w.value.T + self.b.value

    def backward(self, x: np.ndarray, dy: np.ndarray) -> np.ndarray:
        flat_x = x.reshape(-1, self.d_in)
        flat_dy = dy.reshape(-1, self.d_out)
        self.w.grad += flat_dy.T @ flat_x
        self.b.grad += flat_dy.sum(axis=0)
        return (flat_dy @ self.w.value).reshape(x.shape)


class Embedding:
    """Lookup table [n, dim]; ids out of range are rejected."""

    def __init__(self, name: str, n: int, dim: int,
                 rng: np.random.Generator | None, dtype=DEFAULT_DTYPE):
        self.name = name
        self.n = n
        self.dim = dim
        table = (np.zeros((n, dim), dtype) if rng is None
                 else uniform_init(rng, (n, dim), dim, dtype))
        self.table = Parameter(f"{name}.table", table)

    def parameters(self) -> list[Parameter]:
        return [self.table]

    def forward(self, ids: np.ndarray) -> np.ndarray:
        ids = np.asarray(ids)
        if ids.size and (ids.min() < 0 or ids.max() >= self.n):
            raise ValueError(
                f"{self.name}: id out of range [0, {self.n}) in lookup"
            )
        return self.table.value[ids]

    def backward(self, ids: np.ndarray, dy: np.ndarray) -> None:
        np.add.at(self.table.grad, np.asarray(ids).reshape(-1),
                  dy.reshape(-1, self.dim))


def softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


def linear_softmax(h: np.ndarray, w: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Class probabilities softmax(W h + b), computed with max-subtraction."""
    _check_dim("h", np.atleast_1d(h), w.shape[1])
    if w.shape[0] != b.shape[0]:
        raise ValueError(
            f"dimension mismatch for b: W has {w.shape[0]} rows, b has {b.shape[0]}"
        )
    return softmax(h @ w.T + b)


def cross_entropy(probabilities: np.ndarray, target: int) -> float:
    """Negative log-likelihood in nats; probability floored at float64 tiny."""
    if not 0 <= target < probabilities.shape[-1]:
        raise ValueError(
            f"target {target} out of range for {probabilities.shape[-1]} classes"
        )
    p = max(float(probabilities[target]), float(np.finfo(np.float64).tiny))
    return -math.log(p)


def softmax_xent(logits: np.ndarray, targets: np.ndarray) -> tuple[float, np.ndarray]:
    """Fused stable softmax + cross-entropy over [N, V] rows.

    Returns (sum of nats accumulated in float64, dlogits = softmax - onehot).
    """
    n = logits.shape[0]
    shifted = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    z = e.sum(axis=1, keepdims=True)
    log_probs = shifted - np.log(z)
    rows = np.arange(n)
    loss = -float(log_probs[rows, targets].astype(np.float64).sum())
    dlogits = e / z
    dlogits[rows, targets] -= 1.0
    return loss, dlogits


def sgd_step(params: Sequence[Parameter], lr: float, clip_norm: float = math.inf) -> float:
    """Clip the global gradient norm, then value -= lr * grad.

    Returns the pre-clip global norm.  Raises on non-finite gradients,
    naming the offending parameter.
    """
    sq = 0.0
    for p in params:
        if not np.all(np.isfinite(p.grad)):
            raise ValueError(f"non-finite gradient for parameter {p.name!r}")
        sq += float(np.dot(p.grad.reshape(-1).astype(np.float64),
                           p.grad.reshape(-1).astype(np.float64)))
    norm = math.sqrt(sq)
    scale = 1.0 if norm <= clip_norm or norm == 0.0 else clip_norm / norm
    step = lr * scale
    for p in params:
        p.value -= (step * p.grad).astype(p.dtype, copy=False)
    return norm


@dataclass(frozen=True)
class SgdState:
    """Plateau-annealing schedule state.

    ``mode`` declares the metric direction: "min" (e.g. dev loss) or "max"
    (e.g. dev F1).  ``stop`` is raised once the learning rate falls below
    ``lr_floor`` after an anneal.
    """

    lr: float
    anneal_factor: float = 4.0
    patience: int = 1
    mode: str = "min"
    clip_norm: float = 5.0
    lr_floor: float = 1e-4
    best_dev_metric: float = math.nan
    epochs_since_improve: int = 0
    stop: bool = False

    def __post_init__(self):
        if self.mode not in ("min", "max"):
            raise ValueError(f"mode must be 'min' or 'max', got {self.mode!r}")
        if math.isnan(self.best_dev_metric):
            best = math.inf if self.mode == "min" else -math.inf
            object.__setattr__(self, "best_dev_metric", best)

    def is_improvement(self, dev_metric: float) -> bool:
        if self.mode == "min":
            return dev_metric < self.best_dev_metric
        return dev_metric > self.best_dev_metric


@dataclass(frozen=True)
class EpochRecord:
    """One line of a training log."""

    epoch: int
    train_loss: float
    dev_metric: float
    lr: float

    def render(self) -> str:
        return (f"epoch={self.epoch} train={self.train_loss:.6f} "
                f"dev={self.dev_metric:.6f} lr={self.lr:g}")


def maybe_anneal(state: SgdState, dev_metric: float) -> SgdState:
    """Advance the schedule by one dev evaluation.

    Improvement records the new best; ``patience`` consecutive
    non-improvements divide the learning rate by ``anneal_factor``.
    """
    if not math.isfinite(dev_metric):
        raise ValueError(f"dev metric must be finite, got {dev_metric}")
    if state.is_improvement(dev_metric):
        return replace(state, best_dev_metric=dev_metric, epochs_since_improve=0)
    count = state.epochs_since_improve + 1
    if count >= state.patience:
        lr = state.lr / state.anneal_factor
        return replace(state, lr=lr, epochs_since_improve=0,
                       stop=lr < state.lr_floor or state.stop)
    return replace(state, epochs_since_improve=count)


def grad_check(loss_fn: Callable[[], float], params: Sequence[Parameter],
               eps: float = 1e-5, num_samples: int | None = None,
               rng: np.random.Generator | None = None,
               magnitude_floor: float = 1e-4) -> float:
    """Max relative error between analytic gradients and central differences.

    ``loss_fn`` must be deterministic, run forward and backward, leave
    gradients in each parameter, and return the scalar loss.  Relative error
    is |a - n| / max(|a|, |n|, 1e-8) over the sampled coordinates; difference
    quotients are accumulated in float64 regardless of parameter precision.

    Coordinates whose analytic gradient magnitude is below
    ``magnitude_floor`` times the largest magnitude across all parameters
    are excluded from sampling: there the difference quotient is pure
    rounding noise of the loss evaluation and the relative error saturates
    near 1 regardless of how correct the gradients are.  At float32 the
    noise floor is high enough that only coordinates within a couple of
    orders of magnitude of the peak gradient are resolvable; pass
    ``magnitude_floor=1e-2`` with ``eps=1e-2`` there.
    """
    if not 1e-5 <= eps <= 1e-2:
        raise ValueError(f"eps must be in [1e-5, 1e-2], got {eps}")
    zero_grads(params)
    base = float(loss_fn())
    if not math.isfinite(base):
        raise ValueError(f"loss is not finite: {base}")
    analytic = [p.grad.copy() for p in params]

    peak = max((float(np.abs(g).max()) for g in analytic if g.size), default=0.0)
    cutoff = magnitude_floor * peak
    coords = [(pi, fi)
              for pi, p in enumerate(params)
              for fi in range(p.value.size)
              if abs(float(analytic[pi].flat[fi])) >= cutoff]
    if not coords:
        raise ValueError("no gradient-carrying coordinates to check")
    if num_samples is not None and num_samples < len(coords):
        if rng is None:
            rng = make_rng(0)
        chosen = rng.choice(len(coords), size=num_samples, replace=False)
        coords = [coords[int(k)] for k in sorted(chosen)]

    max_rel = 0.0
    for pi, fi in coords:
        p = params[pi]
        orig = p.value.flat[fi]
        p.value.flat[fi] = orig + eps
        vp = float(p.value.flat[fi])
        zero_grads(params)
        lp = float(loss_fn())
        p.value.flat[fi] = orig - eps
        vm = float(p.value.flat[fi])
        zero_grads(params)
        lm = float(loss_fn())
        p.value.flat[fi] = orig
        if not (math.isfinite(lp) and math.isfinite(lm)):
            raise ValueError("loss is not finite during finite differencing")
        # vp - vm is the step actually realized after storage rounding
        numeric = (lp - lm) / (vp - vm)
        a = float(analytic[pi].flat[fi])
        rel = abs(a - numeric) / max(abs(a), abs(numeric), 1e-8)
        max_rel = max(max_rel, rel)
    # restore analytic gradients for the caller
    for p, g in zip(params, analytic):
        p.grad[...] = g
    return max_rel

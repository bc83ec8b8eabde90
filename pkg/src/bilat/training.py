"""Training graphs for the three schemes, with manual backprop.

A window of paired 20 ms rows is tiled into rollout segments of length
``k`` (the autoregression number). Measured states enter the network
only at segment starts; inside a segment the scheme's own predictions
are fed back as inputs:

  S2M    teacher-forced at every step (k ignored by the loss),
  SM2SM  feeds back the predicted slave AND master states,
  S2SM   feeds back the predicted slave state only (the predicted master
         is output-only, so measured master data never enter any input).

The loss is the mean squared error in normalized space, summed over the
k steps of each segment and averaged over segments (and batch). The
hidden state flows across segment boundaries so the recurrent context
spans the whole window. Gradients are exact backpropagation through the
full graph, including the prediction-feedback paths, verified by
:func:`grad_check`.
"""

from __future__ import annotations

import numpy as np

from .dataset import Dataset
from .errors import DivergedLoss, ShapeMismatch, WindowTooShort
from .network import (
    ModelConfig,
    TrainedModel,
    flatten_params,
    init_params,
    num_layers_of,
    scheme_dims,
    step_backward,
    step_batch,
    unflatten_params,
    zero_grads,
    zero_hidden,
)

STATE_DIM = 9


def normalize(x: np.ndarray, mean: np.ndarray, std: np.ndarray) -> np.ndarray:
    return (x - mean) / std


def denormalize(x: np.ndarray, mean: np.ndarray, std: np.ndarray) -> np.ndarray:
    return x * std + mean


def _check_windows(S: np.ndarray, M: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    S = np.asarray(S, dtype=float)
    M = np.asarray(M, dtype=float)
    if S.ndim == 2:
        S, M = S[None], M[None]
    if S.shape != M.shape or S.ndim != 3 or S.shape[2] != STATE_DIM:
        raise ShapeMismatch(f"windows must be (B, T, {STATE_DIM}); got {S.shape} and {M.shape}")
    return S, M


def rollout_predictions(params: dict, S: np.ndarray, M: np.ndarray, scheme: str, k: int, noise=None):
    """Forward pass of the training graph: per-step predictions and caches.

    Measured rows enter only at segment starts (every step for S2M); inside
    a segment the scheme's own predictions are the inputs. ``noise`` of
    (sigma, rng) perturbs every network input (never the targets), which
    regularizes the closed-loop behavior the way demonstration-noise
    augmentation does.
    """
    S, M = _check_windows(S, M)
    B, T, _ = S.shape
    if scheme == "S2M":
        k = 1
    if T < k + 1:
        raise WindowTooShort(f"window length {T} < k+1 = {k + 1}")
    n_seg = (T - 1) // k
    steps = n_seg * k
    _, out_dim = scheme_dims(scheme)
    hidden = zero_hidden(params, B)
    ys = np.empty((steps, B, out_dim))
    caches = []
    for t in range(steps):
        fed_back = t % k != 0
        if scheme == "S2M":
            x = S[:, t]
        elif scheme == "S2SM":
            x = ys[t - 1][:, :STATE_DIM] if fed_back else S[:, t]
        else:  # SM2SM
            x = ys[t - 1] if fed_back else np.concatenate([S[:, t], M[:, t]], axis=1)
        if noise is not None:
            x = x + noise[0] * noise[1].standard_normal(x.shape)
        y, hidden, cache = step_batch(params, x, hidden)
        ys[t] = y
        caches.append(cache)
    return ys, caches, n_seg, steps


def rollout_loss(
    params: dict,
    S: np.ndarray,
    M: np.ndarray,
    scheme: str,
    k: int,
    want_grads: bool = True,
    noise=None,
):
    """Scheme loss over one window (T, 9) or a batch (B, T, 9) of windows.

    Returns (loss, grads) with grads None when not requested.
    """
    S, M = _check_windows(S, M)
    B = S.shape[0]
    if scheme == "S2M":
        k = 1
    ys, caches, n_seg, steps = rollout_predictions(params, S, M, scheme, k, noise=noise)
    _, out_dim = scheme_dims(scheme)

    if scheme == "S2M":
        targets = M[:, 1 : steps + 1]
    else:
        targets = np.concatenate([S[:, 1 : steps + 1], M[:, 1 : steps + 1]], axis=2)
    targets = np.swapaxes(targets, 0, 1)  # (steps, B, out_dim)
    err = ys - targets
    loss = float(np.sum(err * err) / (n_seg * B * out_dim))
    if not want_grads:
        return loss, None

    grads = zero_grads(params)
    dys = (2.0 / (n_seg * B * out_dim)) * err
    d_hidden = zero_hidden(params, B)
    dy_extra = np.zeros((B, out_dim))
    for t in reversed(range(steps)):
        dy = dys[t] + dy_extra
        dx, d_hidden = step_backward(params, grads, dy, d_hidden, caches[t])
        dy_extra = np.zeros((B, out_dim))
        if t % k != 0 and scheme != "S2M":
            # input at step t came from y_{t-1}: route input grads back
            if scheme == "S2SM":
                dy_extra[:, :STATE_DIM] = dx
            else:
                dy_extra[:] = dx
    return loss, grads


def teacher_forced_loss(params: dict, S: np.ndarray, M: np.ndarray, scheme: str) -> float:
    """Independently coded one-step loss used as an equivalence oracle."""
    S = np.asarray(S, dtype=float)
    M = np.asarray(M, dtype=float)
    if S.ndim == 2:
        S, M = S[None], M[None]
    B, T, _ = S.shape
    hidden = zero_hidden(params, B)
    total = 0.0
    count = 0
    for t in range(T - 1):
        if scheme == "S2M":
            x, target = S[:, t], M[:, t + 1]
        elif scheme == "S2SM":
            x, target = S[:, t], np.concatenate([S[:, t + 1], M[:, t + 1]], axis=1)
        else:
            x = np.concatenate([S[:, t], M[:, t]], axis=1)
            target = np.concatenate([S[:, t + 1], M[:, t + 1]], axis=1)
        y, hidden, _ = step_batch(params, x, hidden)
        d = y - target
        total += float(np.mean(d * d))
        count += 1
    return total / count


class Adam:
    """Adaptive-moment optimizer over a parameter dict."""

    def __init__(self, params: dict, lr: float = 1e-3, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}

    def step(self, params: dict, grads: dict) -> None:
        self.t += 1
        b1c = 1.0 - self.beta1**self.t
        b2c = 1.0 - self.beta2**self.t
        for key, g in grads.items():
            self.m[key] = self.beta1 * self.m[key] + (1.0 - self.beta1) * g
            self.v[key] = self.beta2 * self.v[key] + (1.0 - self.beta2) * g * g
            params[key] -= self.lr * (self.m[key] / b1c) / (np.sqrt(self.v[key] / b2c) + self.eps)


def clip_grad_norm(grads: dict, max_norm: float) -> float:
    total = np.sqrt(sum(float(np.sum(g * g)) for g in grads.values()))
    if total > max_norm > 0:
        scale = max_norm / total
        for g in grads.values():
            g *= scale
    return total


def make_windows(dataset: Dataset, window: int, stride: int) -> tuple[np.ndarray, np.ndarray]:
    """Stack normalized (S, M) windows from every trial long enough to hold one."""
    s_parts, m_parts = [], []
    for trial in dataset.trials:
        T = trial.S.shape[0]
        s_norm = normalize(trial.S, dataset.s_mean, dataset.s_std)
        m_norm = normalize(trial.M, dataset.m_mean, dataset.m_std)
        for start in range(0, T - window + 1, stride):
            s_parts.append(s_norm[start : start + window])
            m_parts.append(m_norm[start : start + window])
    if not s_parts:
        raise WindowTooShort(f"no trial provides a {window}-row window")
    return np.stack(s_parts), np.stack(m_parts)


def train(dataset: Dataset, config: ModelConfig, config_hash: str = "") -> tuple[TrainedModel, list[float]]:
    """Adaptive-moment gradient descent over shuffled windows.

    Deterministic given config.seed; returns the model and the per-epoch
    mean training loss.
    """
    in_dim, out_dim = scheme_dims(config.scheme)
    params = init_params(in_dim, out_dim, config.hidden_size, config.num_layers, config.seed)
    S_w, M_w = make_windows(dataset, config.window, config.stride)
    n = S_w.shape[0]
    rng = np.random.default_rng([config.seed, 0x5EED])
    noise_rng = np.random.default_rng([config.seed, 0x0153])
    noise = (config.input_noise, noise_rng) if config.input_noise > 0 else None
    opt = Adam(params, lr=config.learning_rate)
    curve: list[float] = []
    for _ in range(config.epochs):
        perm = rng.permutation(n)
        total = 0.0
        for start in range(0, n, config.batch_size):
            idx = perm[start : start + config.batch_size]
            loss, grads = rollout_loss(
                params, S_w[idx], M_w[idx], config.scheme, config.autoregression_k, noise=noise
            )
            clip_grad_norm(grads, config.grad_clip)
            opt.step(params, grads)
            total += loss * len(idx)
        epoch_loss = total / n
        if not np.isfinite(epoch_loss):
            raise DivergedLoss(f"training loss became non-finite at epoch {len(curve)}")
        curve.append(epoch_loss)
    return (
        TrainedModel(
            scheme=config.scheme,
            autoregression_k=config.autoregression_k,
            hidden_size=config.hidden_size,
            num_layers=config.num_layers,
            params=params,
            s_mean=dataset.s_mean.copy(),
            s_std=dataset.s_std.copy(),
            m_mean=dataset.m_mean.copy(),
            m_std=dataset.m_std.copy(),
            m0_mean=dataset.master_t0_mean(),
            seed=config.seed,
            config_hash=config_hash,
        ),
        curve,
    )


def grad_check(params: dict, S: np.ndarray, M: np.ndarray, scheme: str, k: int, h: float = 1e-4) -> float:
    """Central finite differences vs. analytic gradients; max relative error."""
    _, grads = rollout_loss(params, S, M, scheme, k)
    analytic = flatten_params(grads)
    flat = flatten_params(params)
    numeric = np.empty_like(flat)
    for i in range(flat.size):
        bumped = flat.copy()
        bumped[i] = flat[i] + h
        lp, _ = rollout_loss(unflatten_params(bumped, params), S, M, scheme, k, want_grads=False)
        bumped[i] = flat[i] - h
        lm, _ = rollout_loss(unflatten_params(bumped, params), S, M, scheme, k, want_grads=False)
        numeric[i] = (lp - lm) / (2.0 * h)
    rel = np.abs(analytic - numeric) / (np.abs(analytic) + np.abs(numeric) + 1e-8)
    return float(rel.max())

"""From-scratch gated recurrent network for the sequence models.

A stack of GRU layers with a linear head, implemented directly on numpy
arrays with manual backpropagation (see :mod:`bilat.training`). Three
prediction schemes share the architecture and differ only in their
input/output dimensions:

  S2M    slave state (9)            -> next master state (9)
  SM2SM  slave + master state (18)  -> next slave + master states (18)
  S2SM   slave state (9)            -> next slave + master states (18)

Outputs with 18 dims are ordered (slave estimate, master estimate).
Checkpoints are a single self-describing file: one JSON header line
followed by the raw little-endian float64 parameter bytes.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import SchemaError, ShapeMismatch

SCHEMES = ("S2M", "SM2SM", "S2SM")
STATE_DIM = 9


def scheme_dims(scheme: str) -> tuple[int, int]:
    if scheme == "S2M":
        return STATE_DIM, STATE_DIM
    if scheme == "SM2SM":
        return 2 * STATE_DIM, 2 * STATE_DIM
    if scheme == "S2SM":
        return STATE_DIM, 2 * STATE_DIM
    raise ValueError(f"unknown scheme {scheme!r}")


@dataclass(frozen=True)
class ModelConfig:
    scheme: str
    autoregression_k: int = 1
    hidden_size: int = 64
    num_layers: int = 2
    epochs: int = 1000
    learning_rate: float = 1e-3
    window: int = 100
    stride: int = 10
    batch_size: int = 64
    grad_clip: float = 1.0
    input_noise: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.scheme not in SCHEMES:
            raise ValueError(f"unknown scheme {self.scheme!r}")
        if self.autoregression_k < 1:
            raise ValueError("autoregression_k must be >= 1")
        if self.scheme == "S2M" and self.autoregression_k != 1:
            raise ValueError("S2M is non-autoregressive: autoregression_k must be 1")
        if self.hidden_size < 1 or self.num_layers < 1:
            raise ValueError("hidden_size and num_layers must be >= 1")


def param_names(num_layers: int) -> list[str]:
    names = []
    for i in range(num_layers):
        names += [f"l{i}.W", f"l{i}.U", f"l{i}.Un", f"l{i}.b"]
    names += ["head.W", "head.b"]
    return names


def init_params(in_dim: int, out_dim: int, hidden: int, num_layers: int, seed: int) -> dict[str, np.ndarray]:
    """Uniform(-1/sqrt(hidden), 1/sqrt(hidden)) init, deterministic by seed.

    Gate weights are stored fused: ``W`` stacks the update/reset/candidate
    input weights (3h x in), ``U`` the update/reset recurrent weights
    (2h x h); the candidate recurrent weight ``Un`` stays separate because
    it is gated by the reset activation.
    """
    rng = np.random.default_rng(seed)
    s = 1.0 / np.sqrt(hidden)
    params: dict[str, np.ndarray] = {}
    for i in range(num_layers):
        d_in = in_dim if i == 0 else hidden
        params[f"l{i}.W"] = rng.uniform(-s, s, (3 * hidden, d_in))
        params[f"l{i}.U"] = rng.uniform(-s, s, (2 * hidden, hidden))
        params[f"l{i}.Un"] = rng.uniform(-s, s, (hidden, hidden))
        params[f"l{i}.b"] = rng.uniform(-s, s, 3 * hidden)
    params["head.W"] = rng.uniform(-s, s, (out_dim, hidden))
    params["head.b"] = rng.uniform(-s, s, out_dim)
    return params


def num_layers_of(params: dict[str, np.ndarray]) -> int:
    return sum(1 for k in params if k.endswith(".Un"))


def zero_hidden(params: dict[str, np.ndarray], batch: int) -> list[np.ndarray]:
    hidden = params["head.W"].shape[1]
    return [np.zeros((batch, hidden)) for _ in range(num_layers_of(params))]


def _sigmoid(x: np.ndarray) -> np.ndarray:
    return 1.0 / (1.0 + np.exp(-x))


def gru_layer_step(params: dict, layer: int, x: np.ndarray, h: np.ndarray):
    """One batched GRU cell update; returns (h_next, cache for backprop)."""
    hid = h.shape[1]
    xw = x @ params[f"l{layer}.W"].T + params[f"l{layer}.b"]
    hu = h @ params[f"l{layer}.U"].T
    z = _sigmoid(xw[:, :hid] + hu[:, :hid])
    r = _sigmoid(xw[:, hid : 2 * hid] + hu[:, hid:])
    h_un = h @ params[f"l{layer}.Un"].T
    n = np.tanh(xw[:, 2 * hid :] + r * h_un)
    h_next = (1.0 - z) * n + z * h
    return h_next, (x, h, z, r, n, h_un)


def gru_layer_backward(params: dict, grads: dict, layer: int, d_h_next: np.ndarray, cache):
    """Backprop one cell update; accumulates into grads, returns (dx, dh)."""
    x, h, z, r, n, h_un = cache
    dn = d_h_next * (1.0 - z)
    dz = d_h_next * (h - n)
    dh = d_h_next * z
    da_n = dn * (1.0 - n * n)
    dr = da_n * h_un
    d_h_un = da_n * r
    grads[f"l{layer}.Un"] += d_h_un.T @ h
    dh += d_h_un @ params[f"l{layer}.Un"]
    da_z = dz * z * (1.0 - z)
    da_r = dr * r * (1.0 - r)
    da = np.concatenate([da_z, da_r, da_n], axis=1)
    grads[f"l{layer}.W"] += da.T @ x
    grads[f"l{layer}.b"] += da.sum(axis=0)
    da_zr = da[:, : 2 * h.shape[1]]
    grads[f"l{layer}.U"] += da_zr.T @ h
    dh += da_zr @ params[f"l{layer}.U"]
    dx = da @ params[f"l{layer}.W"]
    return dx, dh


def step_batch(params: dict, x: np.ndarray, hidden: list[np.ndarray]):
    """Full stack + head for a batch of inputs: (y, hidden_next, caches)."""
    caches = []
    h_next = []
    inp = x
    for layer in range(len(hidden)):
        h, cache = gru_layer_step(params, layer, inp, hidden[layer])
        caches.append(cache)
        h_next.append(h)
        inp = h
    y = inp @ params["head.W"].T + params["head.b"]
    return y, h_next, (caches, inp)


def step_backward(params: dict, grads: dict, dy: np.ndarray, d_hidden: list[np.ndarray], step_cache):
    """Backprop one stack step. d_hidden carries gradients from the future.

    Returns (dx, d_hidden_prev).
    """
    caches, top_h = step_cache
    grads["head.W"] += dy.T @ top_h
    grads["head.b"] += dy.sum(axis=0)
    d_inp = dy @ params["head.W"]
    d_hidden_prev = [None] * len(caches)
    for layer in reversed(range(len(caches))):
        d_h_next = d_inp + d_hidden[layer]
        dx, dh = gru_layer_backward(params, grads, layer, d_h_next, caches[layer])
        d_hidden_prev[layer] = dh
        d_inp = dx
    return d_inp, d_hidden_prev


def forward(params: dict, x: np.ndarray, hidden: list[np.ndarray] | None):
    """Single-sample inference step: (output, hidden_next).

    ``x`` has shape (in_dim,); hidden of None starts a fresh sequence.
    """
    x = np.asarray(x, dtype=float)
    in_dim = params["l0.W"].shape[1]
    if x.shape != (in_dim,):
        raise ShapeMismatch(f"input shape {x.shape}, expected ({in_dim},)")
    if hidden is None:
        hidden = zero_hidden(params, 1)
    y, h_next, _ = step_batch(params, x[None, :], hidden)
    return y[0], h_next


def zero_grads(params: dict) -> dict[str, np.ndarray]:
    return {k: np.zeros_like(v) for k, v in params.items()}


def flatten_params(params: dict) -> np.ndarray:
    names = sorted(params)
    return np.concatenate([params[k].ravel() for k in names])


def unflatten_params(flat: np.ndarray, template: dict) -> dict[str, np.ndarray]:
    out = {}
    pos = 0
    for k in sorted(template):
        size = template[k].size
        out[k] = flat[pos : pos + size].reshape(template[k].shape).copy()
        pos += size
    return out


def num_params(params: dict) -> int:
    return sum(v.size for v in params.values())


@dataclass
class TrainedModel:
    """Weights plus everything inference needs: scheme, depth, stats, seeds."""

    scheme: str
    autoregression_k: int
    hidden_size: int
    num_layers: int
    params: dict
    s_mean: np.ndarray
    s_std: np.ndarray
    m_mean: np.ndarray
    m_std: np.ndarray
    m0_mean: np.ndarray
    seed: int
    config_hash: str = ""

    def init_hidden(self):
        return zero_hidden(self.params, 1)

    def step_norm(self, x: np.ndarray, hidden):
        """One normalized-space prediction step."""
        return forward(self.params, x, hidden)


def save_model(model: TrainedModel, path: str | Path) -> None:
    names = param_names(model.num_layers)
    header = {
        "format": 1,
        "scheme": model.scheme,
        "autoregression_k": model.autoregression_k,
        "hidden_size": model.hidden_size,
        "num_layers": model.num_layers,
        "seed": model.seed,
        "config_hash": model.config_hash,
        "s_mean": model.s_mean.tolist(),
        "s_std": model.s_std.tolist(),
        "m_mean": model.m_mean.tolist(),
        "m_std": model.m_std.tolist(),
        "m0_mean": model.m0_mean.tolist(),
        "params": [[k, list(model.params[k].shape)] for k in names],
    }
    with open(path, "wb") as fh:
        fh.write(json.dumps(header, sort_keys=True).encode() + b"\n")
        for k in names:
            fh.write(np.ascontiguousarray(model.params[k], dtype="<f8").tobytes())


def load_model(path: str | Path) -> TrainedModel:
    with open(path, "rb") as fh:
        header_line = fh.readline()
        try:
            header = json.loads(header_line.decode())
        except (UnicodeDecodeError, json.JSONDecodeError) as exc:
            raise SchemaError(f"{path}: bad checkpoint header: {exc}") from exc
        blob = fh.read()
    params = {}
    pos = 0
    for name, shape in header["params"]:
        size = int(np.prod(shape)) if shape else 1
        arr = np.frombuffer(blob, dtype="<f8", count=size, offset=pos * 8)
        params[name] = arr.reshape(shape).astype(float)
        pos += size
    if pos * 8 != len(blob):
        raise SchemaError(f"{path}: checkpoint payload size mismatch")
    return TrainedModel(
        scheme=header["scheme"],
        autoregression_k=int(header["autoregression_k"]),
        hidden_size=int(header["hidden_size"]),
        num_layers=int(header["num_layers"]),
        params=params,
        s_mean=np.asarray(header["s_mean"]),
        s_std=np.asarray(header["s_std"]),
        m_mean=np.asarray(header["m_mean"]),
        m_std=np.asarray(header["m_std"]),
        m0_mean=np.asarray(header["m0_mean"]),
        seed=int(header["seed"]),
        config_hash=header.get("config_hash", ""),
    )

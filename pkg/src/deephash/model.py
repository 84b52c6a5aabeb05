"""A small ReLU MLP with hand-written forward/backward passes and Adam.

All parameters and activations are float64 so that finite-difference
gradient checks are meaningful.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .exceptions import DivergenceError, FormatError, ShapeMismatchError

CHECKPOINT_VERSION = 1
NORM_EPS = 1e-12


@dataclass
class MlpParams:
    layer_dims: list[int]
    weights: list[np.ndarray]
    biases: list[np.ndarray]
    normalize: bool = False

    def __post_init__(self):
        self.layer_dims = [int(d) for d in self.layer_dims]
        if len(self.layer_dims) < 2:
            raise ShapeMismatchError("need at least an input and an output dimension")
        if len(self.weights) != len(self.layer_dims) - 1 or len(self.biases) != len(self.weights):
            raise ShapeMismatchError("number of weight/bias arrays does not match layer_dims")
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            shape = (self.layer_dims[i], self.layer_dims[i + 1])
            if w.shape != shape or b.shape != (shape[1],):
                raise ShapeMismatchError(
                    f"layer {i}: weight {w.shape} / bias {b.shape}, expected {shape} / ({shape[1]},)"
                )

    @property
    def n_layers(self) -> int:
        return len(self.weights)

    @property
    def code_length(self) -> int:
        return self.layer_dims[-1]

    def arrays(self) -> list[np.ndarray]:
        """Flat parameter list ``[W0, b0, W1, b1, ...]``."""
        out = []
        for w, b in zip(self.weights, self.biases):
            out += [w, b]
        return out

    def with_arrays(self, arrays) -> "MlpParams":
        return MlpParams(
            list(self.layer_dims),
            [np.asarray(a, dtype=np.float64) for a in arrays[0::2]],
            [np.asarray(a, dtype=np.float64) for a in arrays[1::2]],
            self.normalize,
        )

    def copy(self) -> "MlpParams":
        return self.with_arrays([a.copy() for a in self.arrays()])

    def equals(self, other: "MlpParams") -> bool:
        return (
            self.layer_dims == other.layer_dims
            and self.normalize == other.normalize
            and all(a.tobytes() == b.tobytes() for a, b in zip(self.arrays(), other.arrays()))
        )


@dataclass
class ForwardCache:
    inputs: list[np.ndarray]  # input to each layer
    pre: list[np.ndarray]  # pre-activation of each layer
    normalized: bool
    norms: np.ndarray | None = None  # row norms of the final pre-activation
    output: np.ndarray | None = None


@dataclass
class AdamState:
    m: list[np.ndarray]
    v: list[np.ndarray]
    t: int = 0

    @classmethod
    def zeros_like(cls, params: MlpParams) -> "AdamState":
        arrays = params.arrays()
        return cls([np.zeros_like(a) for a in arrays], [np.zeros_like(a) for a in arrays], 0)


def init_mlp(layer_dims, seed: int, normalize: bool = False) -> MlpParams:
    """Glorot-uniform weights, zero biases."""
    layer_dims = [int(d) for d in layer_dims]
    if len(layer_dims) < 2 or min(layer_dims) < 1:
        raise ShapeMismatchError(f"invalid layer_dims {layer_dims}")
    rng = np.random.default_rng(seed)
    weights, biases = [], []
    for fan_in, fan_out in zip(layer_dims[:-1], layer_dims[1:]):
        a = np.sqrt(6.0 / (fan_in + fan_out))
        weights.append(rng.uniform(-a, a, size=(fan_in, fan_out)))
        biases.append(np.zeros(fan_out))
    return MlpParams(layer_dims, weights, biases, normalize)


def forward(params: MlpParams, X, normalize: bool | None = None):
    """Map a ``(B, d)`` batch to ``(B, K)`` outputs.

    Hidden layers are ReLU, the last layer is affine. With ``normalize`` each
    output row is scaled to unit L2 norm (rows with norm below 1e-12 are left
    as is). Returns ``(U, cache)``.
    """
    if normalize is None:
        normalize = params.normalize
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[1] != params.layer_dims[0]:
        raise ShapeMismatchError(f"input shape {X.shape} does not match d={params.layer_dims[0]}")
    inputs, pre = [], []
    h = X
    for i, (w, b) in enumerate(zip(params.weights, params.biases)):
        inputs.append(h)
        z = h @ w + b
        pre.append(z)
        h = np.maximum(z, 0.0) if i < params.n_layers - 1 else z
    cache = ForwardCache(inputs, pre, bool(normalize))
    if normalize:
        norms = np.linalg.norm(h, axis=1)
        scale = np.where(norms < NORM_EPS, 1.0, norms)
        h = h / scale[:, None]
        cache.norms = norms
    cache.output = h
    return h, cache


def backward(params: MlpParams, cache: ForwardCache, dL_dU) -> list[np.ndarray]:
    """Gradients of a scalar loss w.r.t. ``[W0, b0, W1, b1, ...]``."""
    g = np.asarray(dL_dU, dtype=np.float64)
    if len(cache.pre) != params.n_layers or g.shape != cache.pre[-1].shape:
        raise ShapeMismatchError(
            f"gradient shape {g.shape} / cache does not match the parameters"
        )
    if cache.normalized:
        norms = cache.norms
        y = cache.output
        active = norms >= NORM_EPS
        proj = g - y * np.sum(y * g, axis=1, keepdims=True)
        g = np.where(active[:, None], proj / np.where(active, norms, 1.0)[:, None], g)
    grads: list[np.ndarray] = [None] * (2 * params.n_layers)  # type: ignore[list-item]
    for i in range(params.n_layers - 1, -1, -1):
        if i < params.n_layers - 1:
            g = g * (cache.pre[i] > 0)
        grads[2 * i] = cache.inputs[i].T @ g
        grads[2 * i + 1] = g.sum(axis=0)
        if i > 0:
            g = g @ params.weights[i].T
    return grads


def adam_step(
    params: MlpParams,
    grads,
    state: AdamState,
    lr: float = 1e-3,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
) -> tuple[MlpParams, AdamState]:
    """One bias-corrected Adam update; inputs are not modified."""
    arrays = params.arrays()
    if len(grads) != len(arrays) or any(g.shape != a.shape for g, a in zip(grads, arrays)):
        raise ShapeMismatchError("gradient shapes do not match parameters")
    for i, g in enumerate(grads):
        if not np.all(np.isfinite(g)):
            raise DivergenceError(f"non-finite gradient in parameter array {i}")
    t = state.t + 1
    new_m, new_v, new_p = [], [], []
    for p, g, m, v in zip(arrays, grads, state.m, state.v):
        m = beta1 * m + (1.0 - beta1) * g
        v = beta2 * v + (1.0 - beta2) * g * g
        m_hat = m / (1.0 - beta1**t)
        v_hat = v / (1.0 - beta2**t)
        new_p.append(p - lr * m_hat / (np.sqrt(v_hat) + eps))
        new_m.append(m)
        new_v.append(v)
    return params.with_arrays(new_p), AdamState(new_m, new_v, t)


def checkpoint_dict(params: MlpParams) -> dict:
    return {
        "version": CHECKPOINT_VERSION,
        "layer_dims": list(params.layer_dims),
        "normalize": bool(params.normalize),
        "layers": [
            {"weight": w.tolist(), "bias": b.tolist()} for w, b in zip(params.weights, params.biases)
        ],
    }


def save_checkpoint(params: MlpParams, path) -> None:
    # json writes floats with repr(), which round-trips float64 exactly.
    text = json.dumps(checkpoint_dict(params), separators=(",", ":"))
    Path(path).write_text(text + "\n")


def load_checkpoint(path) -> MlpParams:
    try:
        doc = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise FormatError(f"{path}: not a JSON checkpoint ({exc})") from None
    if doc.get("version") != CHECKPOINT_VERSION:
        raise FormatError(f"{path}: unsupported checkpoint version {doc.get('version')!r}")
    dims = doc["layer_dims"]
    layers = doc["layers"]
    if len(layers) != len(dims) - 1:
        raise ShapeMismatchError(f"{path}: {len(layers)} layers for layer_dims {dims}")
    weights, biases = [], []
    for i, layer in enumerate(layers):
        w = np.array(layer["weight"], dtype=np.float64)
        b = np.array(layer["bias"], dtype=np.float64)
        if w.shape != (dims[i], dims[i + 1]):
            raise ShapeMismatchError(
                f"{path}: layer {i} weight has shape {w.shape}, declared {(dims[i], dims[i + 1])}"
            )
        weights.append(w.reshape(dims[i], dims[i + 1]))
        biases.append(b)
    return MlpParams(dims, weights, biases, bool(doc.get("normalize", False)))

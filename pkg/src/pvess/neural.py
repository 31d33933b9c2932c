"""Small dense networks with hand-written backprop and an Adam optimizer.

Everything is float64 and operates on row batches: inputs have shape
``(batch, in_width)``.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

LOG_2PI = math.log(2.0 * math.pi)


class DenseNet:
    """Affine layers with tanh between them.

    ``out_activation`` is ``"linear"`` or ``"tanh"``; hidden layers are always tanh.
    Parameters are kept in a flat list ``[W0, b0, W1, b1, ...]`` with ``W``
    shaped ``(in, out)``.
    """

    def __init__(self, sizes, rng=None, out_activation="linear", gain=1.0, out_gain=None):
        if len(sizes) < 2:
            raise ValueError("need at least input and output widths")
        if out_activation not in ("linear", "tanh"):
            raise ValueError(f"unknown activation {out_activation!r}")
        self.sizes = tuple(int(s) for s in sizes)
        self.out_activation = out_activation
        rng = rng if rng is not None else np.random.default_rng(0)
        self.params: list[np.ndarray] = []
        n_layers = len(self.sizes) - 1
        for i, (n_in, n_out) in enumerate(zip(self.sizes[:-1], self.sizes[1:])):
            g = out_gain if (out_gain is not None and i == n_layers - 1) else gain
            self.params.append(g * rng.standard_normal((n_in, n_out)) / math.sqrt(n_in))
            self.params.append(np.zeros(n_out))

    @property
    def n_layers(self) -> int:
        return len(self.sizes) - 1

    def clone(self) -> "DenseNet":
        other = DenseNet.__new__(DenseNet)
        other.sizes = self.sizes
        other.out_activation = self.out_activation
        other.params = [p.copy() for p in self.params]
        return other

    def forward(self, x):
        x = np.asarray(x, dtype=np.float64)
        squeeze = x.ndim == 1
        if squeeze:
            x = x[None, :]
        if x.shape[1] != self.sizes[0]:
            raise ValueError(f"expected input width {self.sizes[0]}, got {x.shape[1]}")
        acts = [x]
        h = x
        for i in range(self.n_layers):
            h = h @ self.params[2 * i] + self.params[2 * i + 1]
            if i < self.n_layers - 1 or self.out_activation == "tanh":
                h = np.tanh(h)
            acts.append(h)
        cache = _Cache(acts, [id(p) for p in self.params], squeeze)
        return (h[0] if squeeze else h), cache

    def __call__(self, x):
        return self.forward(x)[0]

    def backward(self, cache: "_Cache", grad_out):
        """Return ``(param_grads, grad_input)`` for upstream gradient ``grad_out``."""
        if cache.param_ids != [id(p) for p in self.params]:
            raise RuntimeError("stale cache: parameters were replaced since forward")
        g = np.asarray(grad_out, dtype=np.float64)
        if cache.squeeze:
            g = g[None, :]
        grads = [None] * len(self.params)
        acts = cache.acts
        for i in reversed(range(self.n_layers)):
            if i < self.n_layers - 1 or self.out_activation == "tanh":
                g = g * (1.0 - acts[i + 1] ** 2)
            grads[2 * i] = acts[i].T @ g
            grads[2 * i + 1] = g.sum(axis=0)
            g = g @ self.params[2 * i].T
        return grads, (g[0] if cache.squeeze else g)


@dataclass
class _Cache:
    acts: list
    param_ids: list
    squeeze: bool


# -- optimizer -------------------------------------------------------------------


@dataclass
class OptimizerState:
    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: list = field(default_factory=list)
    v: list = field(default_factory=list)

    @classmethod
    def for_params(cls, params, **kwargs) -> "OptimizerState":
        state = cls(**kwargs)
        state.m = [np.zeros_like(p) for p in params]
        state.v = [np.zeros_like(p) for p in params]
        return state


def optimizer_step(params, grads, state: OptimizerState) -> None:
    """Adam with bias correction; updates ``params`` and ``state`` in place."""
    if len(params) != len(grads) or len(state.m) != len(params):
        raise ValueError("params, grads and moments must align")
    for g in grads:
        if not np.all(np.isfinite(g)):
            raise FloatingPointError("non-finite gradient")
    state.step += 1
    c1 = 1.0 - state.beta1**state.step
    c2 = 1.0 - state.beta2**state.step
    for p, g, m, v in zip(params, grads, state.m, state.v):
        if p.shape != g.shape:
            raise ValueError(f"gradient shape {g.shape} != parameter shape {p.shape}")
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * g * g
        p -= state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)


def clip_grad_norm(grads, max_norm: float) -> float:
    norm = math.sqrt(sum(float(np.sum(g * g)) for g in grads))
    if norm > max_norm:
        scale = max_norm / (norm + 1e-12)
        for g in grads:
            g *= scale
    return norm


# -- diagonal Gaussian -------------------------------------------------------------


@dataclass
class GaussianHead:
    """Linear mean layer on a latent plus a state-independent log std."""

    mean_layer: DenseNet
    log_std: np.ndarray

    @property
    def std(self) -> np.ndarray:
        return np.exp(self.log_std)


def gaussian_logprob_and_entropy(log_std, mean, action):
    """Per-row log density of a diagonal Gaussian and its (row-independent) entropy."""
    log_std = np.asarray(log_std, dtype=np.float64)
    z = (np.asarray(action) - np.asarray(mean)) / np.exp(log_std)
    logp = -0.5 * np.sum(z * z, axis=-1) - np.sum(log_std) - 0.5 * log_std.size * LOG_2PI
    entropy = float(np.sum(0.5 * (LOG_2PI + 1.0) + log_std))
    return logp, entropy


# -- checkpoints -------------------------------------------------------------------

CHECKPOINT_FORMAT = "pvess-params/1"


def save_arrays(path, arrays: dict[str, np.ndarray], meta: dict | None = None) -> None:
    """Write named arrays as JSON: shapes then row-major values (exact float repr)."""
    doc = {
        "format": CHECKPOINT_FORMAT,
        "meta": meta or {},
        "arrays": [
            {"name": name, "shape": list(a.shape), "values": np.asarray(a, dtype=np.float64).ravel().tolist()}
            for name, a in arrays.items()
        ],
    }
    path = Path(path)
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_text(json.dumps(doc), encoding="utf-8")
    tmp.replace(path)


def load_arrays(path) -> tuple[dict[str, np.ndarray], dict]:
    doc = json.loads(Path(path).read_text(encoding="utf-8"))
    if doc.get("format") != CHECKPOINT_FORMAT:
        raise ValueError(f"{path}: not a {CHECKPOINT_FORMAT} file")
    arrays = {
        entry["name"]: np.array(entry["values"], dtype=np.float64).reshape(entry["shape"])
        for entry in doc["arrays"]
    }
    return arrays, doc.get("meta", {})


def net_arrays(prefix: str, net: DenseNet) -> dict[str, np.ndarray]:
    return {f"{prefix}.{i}": p for i, p in enumerate(net.params)}


def net_from_arrays(prefix: str, arrays: dict, sizes, out_activation="linear") -> DenseNet:
    net = DenseNet(sizes, out_activation=out_activation)
    net.params = [arrays[f"{prefix}.{i}"].copy() for i in range(len(net.params))]
    for p, want in zip(net.params[::2], zip(net.sizes[:-1], net.sizes[1:])):
        if p.shape != want:
            raise ValueError(f"{prefix}: layer shape {p.shape} != {want}")
    return net


def digest(arrays) -> str:
    h = hashlib.sha256()
    for a in arrays:
        a = np.ascontiguousarray(a, dtype=np.float64)
        h.update(str(a.shape).encode())
        h.update(a.tobytes())
    return h.hexdigest()

"""Plaintext dense networks: the numerical reference for every encrypted path.

Row-vector convention: u_j = l_{j-1} w_j + b_j with w_j of shape
(d_{j-1}, d_j). The loss is 0.5 * ||l_L - y||^2, so the output error is
e_L = l_L - y and SGD subtracts the gradient.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

ACTIVATIONS = ("sigmoid", "identity")
CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class ModelArch:
    widths: tuple[int, ...]
    activations: tuple[str, ...] | None = None

    def __post_init__(self):
        w = tuple(int(x) for x in self.widths)
        object.__setattr__(self, "widths", w)
        if len(w) < 2:
            raise ValueError("an architecture needs at least one layer")
        if any(x < 1 for x in w):
            raise ValueError("layer widths must be positive")
        acts = self.activations or ("sigmoid",) * (len(w) - 1)
        acts = tuple(acts)
        if len(acts) != len(w) - 1:
            raise ValueError("need exactly one activation per layer")
        for a in acts:
            if a not in ACTIVATIONS:
                raise ValueError(f"unknown activation {a!r}")
        object.__setattr__(self, "activations", acts)

    @property
    def depth(self) -> int:
        return len(self.widths) - 1

    def shape(self, j: int) -> tuple[int, int]:
        """Weight shape of layer j (1-based)."""
        return self.widths[j - 1], self.widths[j]

    def param_count(self, j: int) -> int:
        r, c = self.shape(j)
        return r * c + c


@dataclass
class LayerParams:
    w: np.ndarray
    b: np.ndarray


@dataclass
class Model:
    arch: ModelArch
    layers: list[LayerParams]

    def copy(self) -> "Model":
        return Model(self.arch, [LayerParams(p.w.copy(), p.b.copy()) for p in self.layers])


@dataclass
class ForwardTrace:
    u: list[np.ndarray]          # u[j-1] for layer j
    l: list[np.ndarray]          # l[0] = x, l[j] for layer j


@dataclass
class GradientSet:
    dw: list[np.ndarray]
    db: list[np.ndarray]
    e: list[np.ndarray] = field(default_factory=list)   # e[j-1] = error at layer j output


@dataclass(frozen=True)
class SgdConfig:
    lr: float = 0.1
    batch_size: int = 1
    weight_decay: float = 0.0
    local_epochs: int = 1
    global_rounds: int = 1
    seed: int = 0

    def __post_init__(self):
        if self.lr < 0:
            raise ValueError("learning rate must be non-negative")
        if self.batch_size < 1 or self.local_epochs < 1 or self.global_rounds < 1:
            raise ValueError("batch size, local epochs and global rounds must be >= 1")
        if self.weight_decay < 0:
            raise ValueError("weight decay must be non-negative")


def sigmoid(x):
    x = np.asarray(x, dtype=np.float64)
    return np.where(x >= 0, 1.0 / (1.0 + np.exp(-np.abs(x))), np.exp(-np.abs(x)) / (1.0 + np.exp(-np.abs(x))))


def sigmoid_prime(x):
    s = sigmoid(x)
    return s * (1.0 - s)


def activate(name: str, u):
    return sigmoid(u) if name == "sigmoid" else np.asarray(u, dtype=np.float64)


def activate_prime(name: str, u):
    return sigmoid_prime(u) if name == "sigmoid" else np.ones_like(np.asarray(u, dtype=np.float64))


def init_model(arch: ModelArch, scheme: str = "xavier", seed: int = 0) -> Model:
    rng = np.random.default_rng(seed)
    layers = []
    for j in range(1, arch.depth + 1):
        fan_in, fan_out = arch.shape(j)
        if scheme == "xavier":
            bound = np.sqrt(6.0 / (fan_in + fan_out))
            w = rng.uniform(-bound, bound, size=(fan_in, fan_out))
        elif scheme == "normal":
            w = rng.normal(0.0, np.sqrt(2.0 / (fan_in + fan_out)), size=(fan_in, fan_out))
        elif scheme == "zeros":
            w = np.zeros((fan_in, fan_out))
        else:
            raise ValueError(f"unknown init scheme {scheme!r}")
        layers.append(LayerParams(w, np.zeros(fan_out)))
    return Model(arch, layers)


def feedforward(model: Model, x) -> ForwardTrace:
    """Works on one row vector or a batch of rows."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] != model.arch.widths[0]:
        raise ValueError(f"input has {x.shape[-1]} features, model expects {model.arch.widths[0]}")
    us, ls = [], [x]
    for p, act in zip(model.layers, model.arch.activations):
        u = ls[-1] @ p.w + p.b
        us.append(u)
        ls.append(activate(act, u))
    return ForwardTrace(us, ls)


def backprop(model: Model, trace: ForwardTrace, y) -> GradientSet:
    """Gradients of 0.5*||l_L - y||^2; batched inputs give batch-averaged gradients."""
    y = np.asarray(y, dtype=np.float64)
    out = trace.l[-1]
    if y.shape != out.shape:
        raise ValueError(f"label shape {y.shape} does not match output {out.shape}")
    batched = out.ndim == 2
    m = out.shape[0] if batched else 1
    L = model.arch.depth
    dw, db, es = [None] * L, [None] * L, [None] * L
    e = out - y
    for j in range(L, 0, -1):
        es[j - 1] = e
        delta = e * activate_prime(model.arch.activations[j - 1], trace.u[j - 1])
        prev = trace.l[j - 1]
        if batched:
            dw[j - 1] = prev.T @ delta / m
            db[j - 1] = delta.mean(axis=0)
        else:
            dw[j - 1] = np.outer(prev, delta)
            db[j - 1] = delta
        e = delta @ model.layers[j - 1].w.T
    return GradientSet(dw, db, es)


def mse_loss(pred, y) -> float:
    pred = np.asarray(pred, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if pred.shape != y.shape:
        raise ValueError("prediction and label shapes differ")
    return float(0.5 * np.sum((pred - y) ** 2))


def average_gradients(grads: list[GradientSet]) -> GradientSet:
    k = len(grads)
    L = len(grads[0].dw)
    dw = [sum(g.dw[j] for g in grads) / k for j in range(L)]
    db = [sum(g.db[j] for g in grads) / k for j in range(L)]
    return GradientSet(dw, db)


def sgd_update(model: Model, grads: GradientSet, cfg: SgdConfig) -> Model:
    """w <- (1 - lr*lambda/B) w - lr*dw ; b <- b - lr*db (gradients batch-averaged)."""
    decay = 1.0 - cfg.lr * cfg.weight_decay / cfg.batch_size
    layers = []
    for p, gw, gb in zip(model.layers, grads.dw, grads.db):
        if gw.shape != p.w.shape or gb.shape != p.b.shape:
            raise ValueError("gradient shapes do not match parameters")
        layers.append(LayerParams(decay * p.w - cfg.lr * gw, p.b - cfg.lr * gb))
    return Model(model.arch, layers)


def predict(model: Model, x) -> np.ndarray:
    return feedforward(model, x).l[-1]


def accuracy(model: Model, x, y) -> float:
    pred = np.argmax(predict(model, x), axis=-1)
    return float(np.mean(pred == np.argmax(y, axis=-1)))


def one_hot(labels, classes: int) -> np.ndarray:
    labels = np.asarray(labels, dtype=np.int64)
    out = np.zeros((labels.size, classes))
    out[np.arange(labels.size), labels] = 1.0
    return out


# ---------------------------------------------------------------- checkpoints

def model_to_dict(model: Model) -> dict:
    return {
        "version": CHECKPOINT_VERSION,
        "widths": list(model.arch.widths),
        "activations": list(model.arch.activations),
        "layers": [{"w": p.w.tolist(), "b": p.b.tolist()} for p in model.layers],
    }


def model_from_dict(d: dict) -> Model:
    if d.get("version") != CHECKPOINT_VERSION:
        raise ValueError(f"unsupported checkpoint version {d.get('version')}")
    arch = ModelArch(tuple(d["widths"]), tuple(d["activations"]))
    layers = [LayerParams(np.array(p["w"], dtype=np.float64).reshape(arch.shape(j + 1)),
                          np.array(p["b"], dtype=np.float64)) for j, p in enumerate(d["layers"])]
    return Model(arch, layers)


def save_model(model: Model, path) -> None:
    with open(path, "w") as f:
        json.dump(model_to_dict(model), f)


def load_model(path) -> Model:
    with open(path) as f:
        return model_from_dict(json.load(f))

"""Laplace noise on exposed-layer gradients.

The per-epoch budget epsilon is split evenly over the c exposed gradient
values, so each clipped value in [-gamma, gamma] receives Laplace noise of
scale 2 * c * gamma / epsilon. Secret-layer gradients pass through untouched.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .nn import GradientSet, LayerParams, Model, ModelArch, backprop, feedforward, init_model, sgd_update


@dataclass(frozen=True)
class DpConfig:
    epsilon: float = 1.0
    gamma: object = None          # float, {"w1": .., "b1": ..} per tensor, or None to estimate
    enabled: bool = True
    per_parameter: bool = False   # gamma estimated per value instead of per tensor

    def __post_init__(self):
        if self.epsilon <= 0:
            raise ValueError("epsilon must be positive")
        gs = self.gamma.values() if isinstance(self.gamma, dict) else [self.gamma]
        for g in gs:
            if g is not None and not (np.all(np.isfinite(g)) and np.all(np.asarray(g) > 0)):
                raise ValueError("clip bounds must be finite and positive")


def tensor_names(j: int) -> tuple[str, str]:
    return f"w{j}", f"b{j}"


def count_exposed(partition, arch: ModelArch) -> int:
    return sum(arch.param_count(j) for j in sorted(partition.exposed))


def laplace_scale(count: int, gamma, epsilon: float):
    return 2.0 * count * np.asarray(gamma, dtype=np.float64) / epsilon


def estimate_clip_bounds(history, per_parameter: bool = False) -> dict:
    """Median absolute value per tensor (or per entry) over a pilot-run history.

    history: iterable of GradientSet or of {tensor name: array} dicts.
    """
    stacks: dict[str, list] = {}
    for item in history:
        if isinstance(item, GradientSet):
            item = {k: v for j, (gw, gb) in enumerate(zip(item.dw, item.db), start=1)
                    for k, v in zip(tensor_names(j), (gw, gb))}
        for k, v in item.items():
            stacks.setdefault(k, []).append(np.abs(np.asarray(v, dtype=np.float64)))
    if not stacks:
        raise ValueError("empty gradient history")
    out = {}
    for k, vs in stacks.items():
        arr = np.stack(vs)
        out[k] = np.median(arr, axis=0) if per_parameter else float(np.median(arr))
    return out


def _gamma_for(cfg: DpConfig, name: str, bounds):
    g = bounds if bounds is not None else cfg.gamma
    if isinstance(g, dict):
        return g[name]
    if g is None:
        raise ValueError("no clip bound configured or estimated")
    return g


def perturb_exposed_gradients(grads: dict, partition, arch: ModelArch, cfg: DpConfig,
                              rng: np.random.Generator, bounds=None) -> dict:
    """grads: {tensor name: array}; returns a new dict with exposed tensors clipped and noised."""
    if not cfg.enabled:
        return dict(grads)
    c = count_exposed(partition, arch)
    out = dict(grads)
    for j in sorted(partition.exposed):
        for name in tensor_names(j):
            if name not in grads:
                continue
            gamma = _gamma_for(cfg, name, bounds)
            g = np.clip(np.asarray(grads[name], dtype=np.float64), -gamma, gamma)
            scale = laplace_scale(c, gamma, cfg.epsilon)
            out[name] = g + rng.laplace(0.0, 1.0, size=g.shape) * scale
    return out


def fit_laplace_scale(draws) -> float:
    """Maximum-likelihood Laplace scale: mean absolute deviation from the median."""
    x = np.asarray(draws, dtype=np.float64)
    return float(np.mean(np.abs(x - np.median(x))))


def pilot_clip_bounds(arch: ModelArch, parts, cfg, rounds: int, per_parameter: bool = False,
                      init_scheme: str = "xavier") -> dict:
    """Plaintext FedAvg for a few rounds; clip bounds from each party's aggregated local gradient."""
    model = init_model(arch, init_scheme, cfg.seed)
    lr = cfg.lr if cfg.lr > 0 else 1.0
    history = []
    for g in range(1, rounds + 1):
        local = []
        for q, data in enumerate(parts):
            rng = np.random.default_rng([cfg.seed, g, q])
            m = model.copy()
            for _ in range(cfg.local_epochs):
                order = rng.permutation(len(data))
                for s in range(0, len(order), cfg.batch_size):
                    idx = order[s:s + cfg.batch_size]
                    m = sgd_update(m, backprop(m, feedforward(m, data.x[idx]), data.y[idx]), cfg)
            local.append(m)
            entry = {}
            for j, (p0, p1) in enumerate(zip(model.layers, m.layers), start=1):
                wn, bn = tensor_names(j)
                entry[wn] = (p0.w - p1.w) / lr
                entry[bn] = (p0.b - p1.b) / lr
            history.append(entry)
        model = Model(arch, [LayerParams(sum(m.layers[j].w for m in local) / len(local),
                                         sum(m.layers[j].b for m in local) / len(local))
                             for j in range(arch.depth)])
    return estimate_clip_bounds(history, per_parameter)

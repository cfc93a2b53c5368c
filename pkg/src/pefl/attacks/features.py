"""What a gray-box attacker can compute from the exposed layers of a model."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .. import nn

OUTPUT = "output"
GRADIENT = "gradient"
KINDS = (OUTPUT, GRADIENT)


class FeatureUnavailable(ValueError):
    pass


@dataclass(frozen=True)
class ExposureMask:
    depth: int
    exposed: frozenset
    outputs: bool = True
    gradients: bool = True

    def __post_init__(self):
        e = frozenset(int(j) for j in self.exposed)
        if any(j < 1 or j > self.depth for j in e):
            raise ValueError(f"exposed layers {sorted(e)} outside 1..{self.depth}")
        object.__setattr__(self, "exposed", e)

    @property
    def loss(self) -> bool:
        # the loss needs the output layer in the clear
        return self.depth in self.exposed

    @classmethod
    def from_partition(cls, partition, outputs: bool = True, gradients: bool = True) -> "ExposureMask":
        return cls(partition.depth, partition.exposed, outputs, gradients)

    @classmethod
    def white_box(cls, depth: int) -> "ExposureMask":
        return cls(depth, frozenset(range(1, depth + 1)))


@dataclass
class AttackFeatures:
    """Per exposed layer: output and a gradient summary; plus label and loss if available."""
    outputs: dict
    gradients: dict
    label: np.ndarray
    loss: float | None

    def vector(self, layers=None, kind: str = GRADIENT) -> np.ndarray:
        """Concatenate features of `layers` (default all present) in a fixed order.

        kind "output" uses layer outputs and the label; "gradient" adds the
        layer gradients and the loss.
        """
        layers = sorted(self.outputs) if layers is None else sorted(layers)
        parts = []
        for j in layers:
            if j in self.outputs:
                parts.append(self.outputs[j])
            if kind == GRADIENT:
                if j not in self.gradients:
                    raise FeatureUnavailable(f"no gradient features for layer {j}")
                parts.append(self.gradients[j])
        parts.append(self.label)
        if kind == GRADIENT:
            if self.loss is None:
                raise FeatureUnavailable("loss is not available to this attacker")
            parts.append(np.array([self.loss]))
        return np.concatenate(parts)


def gradient_summary(dw: np.ndarray, db: np.ndarray) -> np.ndarray:
    """∇b followed by the row norms of ∇w.

    For a single example ∇w = outer(l_prev, ∇b), so the norms carry |l_prev|
    times ||∇b||; with sigmoid inputs (all positive) this pins ∇w down exactly
    while using in + out numbers instead of in * out.
    """
    return np.concatenate([db, np.linalg.norm(dw, axis=1)])


def build_features(model: nn.Model, x, y, mask: ExposureMask, want_gradients: bool | None = None) -> AttackFeatures:
    """Features of one labelled point under `mask`.

    Gradients need the loss, so they are only produced when the output layer
    is exposed; asking for them otherwise raises FeatureUnavailable.
    """
    want = mask.gradients if want_gradients is None else want_gradients
    if want and not mask.loss:
        raise FeatureUnavailable("gradient features need the loss, which needs the output layer exposed")
    tr = nn.feedforward(model, x)
    outs = {j: tr.l[j].copy() for j in sorted(mask.exposed)} if mask.outputs else {}
    grads = {}
    loss = None
    if mask.loss:
        loss = nn.mse_loss(tr.l[-1], y)
    if want:
        g = nn.backprop(model, tr, y)
        for j in sorted(mask.exposed):
            grads[j] = gradient_summary(g.dw[j - 1], g.db[j - 1])
    return AttackFeatures(outs, grads, np.asarray(y, dtype=np.float64).copy(), loss)


def feature_matrix(model: nn.Model, data, mask: ExposureMask, layers, kind: str) -> np.ndarray:
    want = kind == GRADIENT
    return np.stack([build_features(model, data.x[i], data.y[i], mask, want).vector(layers, kind)
                     for i in range(len(data))])

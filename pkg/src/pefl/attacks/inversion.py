"""Model inversion by gradient descent on the input.

A softmax cross-entropy head is put on the output layer's pre-activations and
the input is moved downhill toward a target class, starting from a flat gray
image. Computing the input gradient needs the first layer's weights, so the
attack refuses to run when that layer is encrypted.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .. import nn
from .features import ExposureMask


class InversionBlocked(PermissionError):
    pass


@dataclass
class InversionResult:
    x: np.ndarray
    confidence: float
    steps: int
    converged: bool


def softmax(z):
    z = np.asarray(z, dtype=np.float64)
    e = np.exp(z - z.max())
    return e / e.sum()


def input_gradient(model: nn.Model, x, target: int) -> tuple[np.ndarray, float]:
    """d CE(softmax(u_L), target) / dx and the target probability."""
    tr = nn.feedforward(model, x)
    p = softmax(tr.u[-1])
    g = p.copy()
    g[target] -= 1.0
    # g is dCE/du_L; walk it back to the input
    for j in range(model.arch.depth, 0, -1):
        g = g @ model.layers[j - 1].w.T
        if j > 1:
            g = g * nn.activate_prime(model.arch.activations[j - 2], tr.u[j - 2])
    return g, float(p[target])


def model_inversion(model: nn.Model, target_class: int, steps: int = 500, step_size: float = 0.1,
                    mask: ExposureMask | None = None, init: float = 0.5, clip=(0.0, 1.0),
                    target_confidence: float = 0.99) -> InversionResult:
    mask = mask or ExposureMask.white_box(model.arch.depth)
    if 1 not in mask.exposed:
        raise InversionBlocked("the input gradient needs the first layer, which is encrypted")
    classes = model.arch.widths[-1]
    if not 0 <= target_class < classes:
        raise ValueError(f"target class {target_class} outside 0..{classes - 1}")
    x = np.full(model.arch.widths[0], float(init))
    conf = float(softmax(nn.feedforward(model, x).u[-1])[target_class])
    done = 0
    for done in range(1, steps + 1):
        g, conf = input_gradient(model, x, target_class)
        if conf >= target_confidence:
            done -= 1
            break
        x = x - step_size * g
        if clip is not None:
            x = np.clip(x, clip[0], clip[1])
    conf = float(softmax(nn.feedforward(model, x).u[-1])[target_class])
    return InversionResult(x, conf, done, conf >= target_confidence)


def cosine(a, b) -> float:
    a = np.asarray(a, dtype=np.float64).ravel()
    b = np.asarray(b, dtype=np.float64).ravel()
    return float(a @ b / (np.linalg.norm(a) * np.linalg.norm(b) + 1e-300))

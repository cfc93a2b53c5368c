"""Batch property inference on exposed-layer gradients.

Each sample for the attack is the mean gradient of one training batch. Half of
the batches contain examples with the property, half contain none; a random
forest learns to tell them apart from one layer's gradients at a time.
"""

from __future__ import annotations

import numpy as np
from sklearn.ensemble import RandomForestClassifier

from .. import nn
from .features import ExposureMask
from .membership import ImbalanceError
from .report import AttackReport

PROPERTY = "property"


def train_random_forest(features, labels, trees: int = 50, seed: int = 0) -> RandomForestClassifier:
    """Bagged Gini trees with sqrt feature subsampling."""
    labels = np.asarray(labels)
    if len(np.unique(labels)) < 2:
        raise ValueError("random forest needs at least two classes")
    clf = RandomForestClassifier(n_estimators=trees, criterion="gini", max_features="sqrt",
                                 bootstrap=True, random_state=seed)
    clf.fit(np.asarray(features, dtype=np.float64), labels)
    return clf


def batch_gradients(model: nn.Model, data, has_property, n_batches: int, rng: np.random.Generator,
                    batch_size: int = 32, property_fraction: float = 0.5, mask: ExposureMask | None = None):
    """Balanced batches: returns ({layer: (n_batches, |∇w|+|∇b|)}, labels)."""
    mask = mask or ExposureMask.white_box(model.arch.depth)
    has_property = np.asarray(has_property, dtype=bool)
    pos, neg = np.flatnonzero(has_property), np.flatnonzero(~has_property)
    k = max(1, int(round(property_fraction * batch_size)))
    if len(pos) < k or len(neg) < batch_size:
        raise ValueError("not enough examples with and without the property")
    labels = np.arange(n_batches) % 2
    feats = {j: [] for j in sorted(mask.exposed)}
    for lab in labels:
        if lab:
            idx = np.r_[rng.choice(pos, k, replace=False), rng.choice(neg, batch_size - k, replace=False)]
        else:
            idx = rng.choice(neg, batch_size, replace=False)
        g = nn.backprop(model, nn.feedforward(model, data.x[idx]), data.y[idx])
        for j in feats:
            feats[j].append(np.concatenate([g.dw[j - 1].ravel(), g.db[j - 1]]))
    return {j: np.array(v) for j, v in feats.items()}, labels


def property_inference(features: dict, labels, trees: int = 50, seed: int = 0,
                       test_fraction: float = 0.5, imbalance_tol: float = 0.1,
                       epoch: int | str = "") -> AttackReport:
    """One row per layer: forest accuracy on held-out batches."""
    labels = np.asarray(labels)
    n1 = int(labels.sum())
    n0 = len(labels) - n1
    if min(n0, n1) == 0 or abs(n1 - n0) / max(n0, n1) > imbalance_tol:
        raise ImbalanceError(f"{n1} property vs {n0} plain batches")
    rng = np.random.default_rng(seed)
    perm = rng.permutation(len(labels))
    cut = int(round(len(labels) * (1 - test_fraction)))
    tr, te = perm[:cut], perm[cut:]
    report = AttackReport()
    for j in sorted(features):
        x = features[j]
        clf = train_random_forest(x[tr], labels[tr], trees, seed)
        acc = float(np.mean(clf.predict(x[te]) == labels[te]))
        report.add(PROPERTY, j, "gradient", epoch, [acc])
    return report

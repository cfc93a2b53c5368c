"""Supervised per-layer membership inference.

The attacker knows part of the target's training set and an equal number of
outside points, extracts the features its exposure allows, and trains a small
classifier to tell the two apart. Accuracy is measured on the held-out part.
"""

from __future__ import annotations

import warnings

import numpy as np
from sklearn.exceptions import ConvergenceWarning
from sklearn.model_selection import GridSearchCV, StratifiedKFold
from sklearn.neural_network import MLPClassifier
from sklearn.pipeline import make_pipeline
from sklearn.preprocessing import StandardScaler

from .. import nn
from .features import GRADIENT, KINDS, OUTPUT, ExposureMask, FeatureUnavailable, feature_matrix
from .report import AttackReport

MEMBERSHIP = "membership"
# L2 penalties tried by the inner cross-validation. Output features are small
# and want little shrinkage; gradient features are wide and want more.
ALPHAS = (1e-3, 0.1, 1.0, 10.0)


class ImbalanceError(ValueError):
    pass


def train_membership_attack(member_x: np.ndarray, nonmember_x: np.ndarray, seed: int = 0,
                            hidden: int = 64, max_iter: int = 200, imbalance_tol: float = 0.1,
                            alphas=ALPHAS, inner_folds: int = 3):
    """Standardize features, then a one-hidden-layer MLP (member = 1).

    With several `alphas` the L2 penalty is picked by stratified inner CV on
    the training half only, so the held-out half never influences it.
    """
    m, n = len(member_x), len(nonmember_x)
    if m == 0 or n == 0:
        raise ImbalanceError("need both members and non-members")
    if abs(m - n) / max(m, n) > imbalance_tol:
        raise ImbalanceError(f"{m} members vs {n} non-members exceeds tolerance {imbalance_tol}")
    x = np.vstack([member_x, nonmember_x])
    y = np.r_[np.ones(m), np.zeros(n)]
    alphas = list(alphas)
    clf = make_pipeline(StandardScaler(),
                        MLPClassifier(hidden_layer_sizes=(hidden,), solver="lbfgs", alpha=alphas[0],
                                      max_iter=max_iter, random_state=seed))
    if len(alphas) > 1 and min(m, n) >= inner_folds:
        folds = StratifiedKFold(inner_folds, shuffle=True, random_state=seed)
        clf = GridSearchCV(clf, {"mlpclassifier__alpha": alphas}, cv=folds)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", ConvergenceWarning)
        clf.fit(x, y)
    return clf


def attack_accuracy(clf, member_x, nonmember_x) -> float:
    x = np.vstack([member_x, nonmember_x])
    y = np.r_[np.ones(len(member_x)), np.zeros(len(nonmember_x))]
    return float(np.mean(clf.predict(x) == y))


def two_fold_accuracy(member_x, nonmember_x, seed: int, hidden: int = 64) -> float:
    """Random halves of both sets; train on one half, test on the other, then swap."""
    rng = np.random.default_rng(seed)
    k = min(len(member_x), len(nonmember_x))
    pm = rng.permutation(len(member_x))[:k]
    pn = rng.permutation(len(nonmember_x))[:k]
    h = k // 2
    accs = []
    for a, b in ((slice(0, h), slice(h, 2 * h)), (slice(h, 2 * h), slice(0, h))):
        clf = train_membership_attack(member_x[pm[a]], nonmember_x[pn[a]], seed=seed, hidden=hidden)
        accs.append(attack_accuracy(clf, member_x[pm[b]], nonmember_x[pn[b]]))
    return float(np.mean(accs))


def eval_membership_per_layer(model: nn.Model, members, nonmembers, kinds=KINDS, runs: int = 4,
                              mask: ExposureMask | None = None, seed: int = 0, epoch: int | str = "",
                              hidden: int = 64) -> AttackReport:
    """One row per (exposed layer, feature kind), averaged over `runs` attack splits.

    Gradient rows are skipped when the mask hides the loss.
    """
    mask = mask or ExposureMask.white_box(model.arch.depth)
    report = AttackReport()
    for j in sorted(mask.exposed):
        for kind in kinds:
            if kind not in KINDS:
                raise ValueError(f"unknown feature kind {kind!r}")
            if kind == GRADIENT and not (mask.loss and mask.gradients):
                continue
            try:
                fm = feature_matrix(model, members, mask, [j], kind)
                fn = feature_matrix(model, nonmembers, mask, [j], kind)
            except FeatureUnavailable:
                continue
            accs = [two_fold_accuracy(fm, fn, seed=seed + 1000 * r, hidden=hidden) for r in range(runs)]
            report.add(MEMBERSHIP, j, kind, epoch, accs)
    return report


def epoch_sweep(checkpoints: dict, attack, cadence: int = 10, epochs=None) -> AttackReport:
    """Run `attack(model, epoch) -> AttackReport` on checkpoints every `cadence` epochs."""
    if epochs is None:
        last = max(checkpoints)
        epochs = list(range(0, last + 1, cadence))
    missing = [g for g in epochs if g not in checkpoints]
    if missing:
        raise KeyError(f"missing checkpoints for epochs {missing}")
    out = AttackReport()
    for g in epochs:
        out.extend(attack(checkpoints[g], g))
    return out


def curves(report: AttackReport, depth: int, kind: str = OUTPUT, attack: str = MEMBERSHIP):
    """(epochs, accuracy array of shape (n_epochs, depth)) for layer selection.

    Layers without a row (hidden from the attacker) count as baseline 0.5.
    """
    rows = [r for r in report.rows if r.attack == attack and r.kind == kind and r.runs > 0]
    epochs = sorted({int(r.epoch) for r in rows})
    arr = np.full((len(epochs), depth), report.baseline)
    pos = {g: i for i, g in enumerate(epochs)}
    for r in rows:
        arr[pos[int(r.epoch)], int(r.layer) - 1] = float(r.mean_acc)
    return epochs, arr

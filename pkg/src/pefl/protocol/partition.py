"""Layer partitions, expected encryption statuses and encryption schedules."""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

PLAINTEXT = "plaintext"
ENCRYPTED = "encrypted"
DECRYPTED = "decrypted"      # computed under encryption, then jointly decrypted at a boundary

QUANTITIES = ("u", "l", "e", "db", "dw", "w", "b")


class SingleLayerWarning(UserWarning):
    pass


@dataclass(frozen=True)
class LayerPartition:
    depth: int
    secret: frozenset

    def __post_init__(self):
        s = frozenset(int(j) for j in self.secret)
        if any(j < 1 or j > self.depth for j in s):
            raise ValueError(f"secret layers {sorted(s)} outside 1..{self.depth}")
        object.__setattr__(self, "secret", s)

    @classmethod
    def suffix(cls, depth: int, exposed_prefix: int) -> "LayerPartition":
        """Encrypt layers exposed_prefix+1 .. depth (exposed_prefix = 0 is full encryption)."""
        if not 0 <= exposed_prefix <= depth:
            raise ValueError(f"prefix {exposed_prefix} outside 0..{depth}")
        return cls(depth, frozenset(range(exposed_prefix + 1, depth + 1)))

    @property
    def exposed(self) -> frozenset:
        return frozenset(range(1, self.depth + 1)) - self.secret

    def is_secret(self, j: int) -> bool:
        return j in self.secret

    def continues(self, j: int) -> bool:
        """True when the encrypted computation carries on past layer j: the next
        layer is secret too, or j is a secret output layer."""
        if j == self.depth:
            return j in self.secret
        return j in self.secret and (j + 1) in self.secret

    def single_exposure(self) -> list[int]:
        """Secret non-output layers whose neighbours are both exposed."""
        return [j for j in sorted(self.secret)
                if j < self.depth and (j - 1) not in self.secret and (j + 1) not in self.secret]

    def orientation(self, j: int) -> str:
        # parity keeps any run of consecutive layers alternating
        return "column" if j % 2 == 1 else "row"

    def label(self) -> str:
        return "{" + ",".join(str(j) for j in sorted(self.secret)) + "}"


def all_partitions(depth: int) -> list[LayerPartition]:
    out = []
    for mask in range(1 << depth):
        out.append(LayerPartition(depth, frozenset(j + 1 for j in range(depth) if mask >> j & 1)))
    return out


def warn_single_layers(partition: LayerPartition) -> None:
    for j in partition.single_exposure():
        warnings.warn(f"layer {j} is the only encrypted layer of its group: its output and "
                      "bias gradient are decrypted in every pass", SingleLayerWarning, stacklevel=2)


def enc_status_map(partition: LayerPartition, omit_bias: bool = False) -> dict[tuple[str, int], str]:
    """Expected representation of every training-pass quantity, keyed by (name, layer).

    With omit_bias, the last layer of an interior secret group drops its bias,
    so its bias gradient is reported as "omitted" instead of being exposed.
    """
    S = partition.secret
    L = partition.depth
    out = {}
    for j in range(1, L + 1):
        sec = j in S
        cont = partition.continues(j)
        out[("w", j)] = out[("b", j)] = ENCRYPTED if sec else PLAINTEXT
        if not sec:
            out[("u", j)] = PLAINTEXT
        elif j < L and (j + 1) not in S:
            out[("u", j)] = DECRYPTED
        else:
            out[("u", j)] = ENCRYPTED
        out[("l", j)] = ENCRYPTED if cont else PLAINTEXT
        # e_j comes from the product with w_{j+1} (or from l_L for the output)
        if j == L:
            out[("e", j)] = ENCRYPTED if sec else PLAINTEXT
        elif (j + 1) in S:
            out[("e", j)] = ENCRYPTED if sec else DECRYPTED
        else:
            out[("e", j)] = PLAINTEXT
        out[("db", j)] = ENCRYPTED if cont else PLAINTEXT
        if omit_bias and sec and j < L and (j + 1) not in S:
            out[("db", j)] = "omitted"
        prev_secret = j > 1 and (j - 1) in S
        out[("dw", j)] = ENCRYPTED if sec and (prev_secret or cont) else PLAINTEXT
    return out


# ---------------------------------------------------------------- schedules

@dataclass(frozen=True)
class Schedule:
    """Secret layers per global epoch (1-based); epochs past the end reuse the last entry."""
    depth: int
    per_epoch: tuple[frozenset, ...]

    def at(self, epoch: int) -> LayerPartition:
        idx = min(max(epoch, 1), len(self.per_epoch)) - 1
        return LayerPartition(self.depth, self.per_epoch[idx])

    def is_monotone(self) -> bool:
        return all(a <= b for a, b in zip(self.per_epoch, self.per_epoch[1:]))

    def is_suffix_closed(self) -> bool:
        return all(all(k in s for j in s for k in range(j, self.depth + 1)) for s in self.per_epoch)

    def first_epoch(self, layer: int) -> int | None:
        for g, s in enumerate(self.per_epoch, start=1):
            if layer in s:
                return g
        return None

    def to_rows(self) -> list[dict]:
        return [{"epoch": g, "secret": " ".join(str(j) for j in sorted(s))}
                for g, s in enumerate(self.per_epoch, start=1)]

    @classmethod
    def from_rows(cls, depth: int, rows) -> "Schedule":
        """Inverse of to_rows; epochs must run 1, 2, .. without gaps."""
        per_epoch = []
        for g, r in enumerate(rows, start=1):
            if int(r["epoch"]) != g:
                raise ValueError(f"schedule row {g} is for epoch {r['epoch']}")
            per_epoch.append(frozenset(int(j) for j in str(r["secret"]).split()))
        if not per_epoch:
            raise ValueError("empty schedule")
        out = cls(depth, tuple(per_epoch))
        for s in per_epoch:
            LayerPartition(depth, s)        # range check
        return out


def constant_schedule(partition: LayerPartition, epochs: int) -> Schedule:
    return Schedule(partition.depth, (partition.secret,) * epochs)


def delayed_encryption_schedule(base: LayerPartition, start_epoch: int, epochs: int) -> Schedule:
    """No encryption before `start_epoch`, the base partition from then on."""
    if not 1 <= start_epoch <= epochs + 1:
        raise ValueError(f"start epoch {start_epoch} outside 1..{epochs + 1}")
    return Schedule(base.depth, tuple(frozenset() if g < start_epoch else base.secret
                                      for g in range(1, epochs + 1)))


@dataclass
class Selection:
    schedule: Schedule
    per_party: list[Schedule]
    infeasible: list[tuple[int, int]]      # (party, epoch) where even full encryption exceeds tau


def _party_schedule(curves: np.ndarray, tau: float, depth: int, floor=None):
    """curves: (epochs, depth) attack accuracy per layer; floor: (epochs,) accuracy
    that no layer choice removes (an attack needing no parameters)."""
    chosen, infeasible = [], []
    current = depth + 1               # smallest encrypted index; depth + 1 means nothing encrypted
    for g in range(curves.shape[0]):
        leaking = [j for j in range(1, depth + 1) if curves[g, j - 1] >= tau]
        if leaking:
            current = min(current, min(leaking))
        if floor is not None and floor[g] >= tau:
            infeasible.append(g + 1)
            current = 1
        chosen.append(frozenset(range(current, depth + 1)))
    return chosen, infeasible


def select_secret_layers(curves, taus, epochs: int | None = None, combine: str = "union",
                         floor=None, measured_at=None) -> Selection:
    """Per party and epoch, the smallest suffix of layers whose encryption keeps
    every exposed layer's attack accuracy below tau; once chosen a layer stays
    encrypted. Parties are combined by union (default) or majority vote.

    curves: array (parties, epochs, depth) or a list of (epochs, depth) arrays.
    floor: optional (parties, epochs) accuracy reachable with every layer
    encrypted; where it reaches tau the choice is flagged infeasible and the
    whole model is encrypted.
    measured_at: the global epoch of each curve row (default 1, 2, ..); a
    measurement governs every epoch up to the next one, and epochs before the
    first measurement stay unencrypted.
    """
    curves = np.asarray(curves, dtype=np.float64)
    if curves.ndim == 2:
        curves = curves[None]
    n_parties, n_epochs, depth = curves.shape
    taus = np.broadcast_to(np.asarray(taus, dtype=np.float64), (n_parties,))
    if np.any((taus < 0.5) | (taus > 1.0)):
        raise ValueError("thresholds must lie in [0.5, 1]")
    measured_at = np.arange(1, n_epochs + 1) if measured_at is None else np.asarray(measured_at)
    if len(measured_at) != n_epochs or np.any(np.diff(measured_at) <= 0):
        raise ValueError("measured_at must be increasing with one entry per curve row")
    epochs = int(measured_at[-1]) if epochs is None else epochs
    # row governing each epoch, -1 before the first measurement
    row = np.searchsorted(measured_at, np.arange(1, epochs + 1), side="right") - 1
    per_party, infeasible = [], []
    for i in range(n_parties):
        fl = None if floor is None else np.asarray(floor, dtype=np.float64).reshape(n_parties, -1)[i]
        chosen, bad = _party_schedule(curves[i], float(taus[i]), depth, fl)
        per_party.append(Schedule(depth, tuple(chosen[r] if r >= 0 else frozenset() for r in row)))
        infeasible += [(i, int(measured_at[g - 1])) for g in bad]
    merged = []
    for g in range(epochs):
        sets = [p.per_epoch[g] for p in per_party]
        if combine == "union":
            merged.append(frozenset().union(*sets))
        elif combine == "vote":
            votes = {j: sum(j in s for s in sets) for j in range(1, depth + 1)}
            picked = {j for j, v in votes.items() if 2 * v > n_parties}
            # keep the result a suffix and monotone
            lo = min(picked, default=depth + 1)
            if merged:
                lo = min(lo, min(merged[-1], default=depth + 1))
            merged.append(frozenset(range(lo, depth + 1)))
        else:
            raise ValueError(f"unknown combination rule {combine!r}")
    return Selection(Schedule(depth, tuple(merged)), per_party, infeasible)

"""Analytic traffic model for partially encrypted training.

Nothing is encrypted or computed here. The model tracks only the level of each
ciphertext through one training pass, using the level cost of every packed
operation:

    product with a matrix          1 level
    sigmoid (masked odd Chebyshev)  1 + depth of the polynomial
    sigmoid derivative l(1-l)       1 level, times the error: 1 more
    outer product                   1 level
    mask before a decryption        1 level
    scaled parameter update         1 level

A ciphertext is refreshed by a collective bootstrap whenever the next step
would leave it below the bootstrap floor. Counting decryptions and bootstraps
this way and pricing every message gives bytes per round for any layer
partition, which is then compared against the simulator's transcript.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .. import threshold as th
from ..ckks import chebyshev
from ..netsim import _FRAME, LinkParams
from ..packing import next_pow2
from .partition import LayerPartition

FRAME = _FRAME.size


@dataclass
class TrafficEstimate:
    decrypts: int = 0
    bootstraps: int = 0
    bytes: dict = field(default_factory=lambda: {"model-broadcast": 0, "local-update": 0,
                                                 "partial-decryption": 0, "bootstrap": 0, "keygen": 0})
    messages: int = 0

    @property
    def total(self) -> int:
        return sum(self.bytes.values())

    def comm_seconds(self, link: LinkParams, n_parties: int) -> float:
        """Link time with the traffic spread evenly over the parties' links."""
        per_party = self.total / max(n_parties, 1)
        return self.messages / max(n_parties, 1) * link.delay + per_party * 8.0 / link.bandwidth


class LevelFlowModel:
    """Message counts and sizes from level bookkeeping alone."""

    def __init__(self, arch, params, n_parties: int, boot_min: int = 1, degree: int = 13,
                 bound: float = 10.0, block: int | None = None):
        self.arch = arch
        self.params = params
        self.N = n_parties
        self.top = params.max_level
        self.boot_min = boot_min
        odd = np.array(chebyshev.sigmoid_coeffs(degree, bound), dtype=np.float64)
        odd[0::2] = 0.0
        self.sig_levels = 1 + chebyshev.depth(odd)
        self.block = block or max(next_pow2(w) for w in arch.widths)

    # ------------------------------------------------------------ pricing
    def ct(self, level: int) -> int:
        return self.params.ciphertext_bytes(level) + FRAME

    def _share(self, kind: str, level: int) -> int:
        limbs = self.params.limbs_at(level)
        if kind == "decrypt":
            return th.poly_bytes(self.params, limbs)
        return th.poly_bytes(self.params, limbs) + th.poly_bytes(self.params, self.params.limbs_at(self.top))

    def collective(self, est: TrafficEstimate, kind: str, level: int, by_server: bool) -> None:
        cat = "partial-decryption" if kind == "decrypt" else "bootstrap"
        share = self._share(kind, level)
        others = self.N if by_server else self.N - 1
        b = others * (self.ct(level) + share + FRAME)
        msgs = 2 * others
        if not by_server:
            back = others * share if kind == "decrypt" else share
            b += self.ct(level) + back + FRAME
            msgs += 2
        est.bytes[cat] += b
        est.messages += msgs
        if kind == "decrypt":
            est.decrypts += 1
        else:
            est.bootstraps += 1

    def keygen(self, est: TrafficEstimate) -> None:
        p = self.params
        K = p.limbs_at(self.top)
        key_poly = th.poly_bytes(p, K + 1)
        n_rot = _rotation_count(self.block, p.n // 2)
        for size in (key_poly, n_rot * K * key_poly, 2 * K * key_poly, 2 * K * key_poly):
            est.bytes["keygen"] += 2 * self.N * (size + FRAME)
            est.messages += 2 * self.N

    # ------------------------------------------------------------ level flow
    def _need(self, est, lv, k, by_server=False):
        if lv is None:
            return None
        if lv - k < self.boot_min:
            self.collective(est, "bootstrap", lv, by_server)
            return self.top
        return lv

    def _pass(self, est, w_lv, b_lv, S):
        """One training pass; returns levels of the weight and bias gradients."""
        L = self.arch.depth
        acts = self.arch.activations
        l_lv = None                      # None: plaintext
        lin, u, lout = {}, {}, {}
        for j in range(1, L + 1):
            if j not in S:
                if l_lv is not None:
                    raise ValueError("encrypted input to an exposed layer")
                continue
            x = self._need(est, l_lv, 1)
            lin[j] = x
            w = self._need(est, w_lv[j], 1)
            prod = (w if x is None else min(w, x)) - 1
            u[j] = min(prod, b_lv[j])
            if j < L and (j + 1) not in S:
                lv = self._need(est, u[j], 1) - 1
                self.collective(est, "decrypt", lv, False)
                l_lv = None
            elif acts[j - 1] == "sigmoid":
                l_lv = self._need(est, u[j], self.sig_levels) - self.sig_levels
            else:
                l_lv = self._need(est, u[j], 1) - 1
            lout[j] = l_lv
        gw, gb = {}, {}
        e_lv = lout.get(L)               # e_L = l_L - y
        for j in range(L, 0, -1):
            if j not in S:
                e_lv = None
                continue
            if e_lv is None and lout[j] is None:
                delta = None
            elif acts[j - 1] == "sigmoid":
                lv = self._need(est, lout[j], 2)
                ev = self._need(est, e_lv, 1)
                delta = min(ev, lv - 1) - 1
            else:
                delta = self._need(est, e_lv, 1) - 1
            gb[j] = delta
            d = self._need(est, self._need(est, delta, 0), 1)
            if d is None and lin[j] is None:
                gw[j] = None
            else:
                gw[j] = min(v for v in (d, lin[j]) if v is not None) - 1
            e_lv = None
            if j > 1:
                w = self._need(est, w_lv[j], 1)
                e_lv = (w if d is None else min(w, d)) - 1
                if (j - 1) not in S:
                    lv = self._need(est, e_lv, 1) - 1
                    self.collective(est, "decrypt", lv, False)
                    e_lv = None
        return gw, gb

    def _update(self, est, lv, g):
        if g is not None:
            lv = min(lv, self._need(est, g, 1) - 1)
        return self._need(est, lv, 1)

    def _tensor_bytes(self, j, kind, lv, S):
        fan_in, fan_out = self.arch.shape(j)
        if j in S:
            return self.ct(lv)
        return (fan_in * fan_out if kind == "w" else fan_out) * 8 + FRAME

    def estimate(self, partition: LayerPartition, rounds: int, local_examples, local_epochs: int = 1,
                 batch_size: int = 1) -> TrafficEstimate:
        """Traffic of `rounds` global rounds with the given per-party dataset sizes."""
        if batch_size != 1:
            raise NotImplementedError("the level flow is modelled for single-example batches")
        S = partition.secret
        L = self.arch.depth
        est = TrafficEstimate()
        if S:
            self.keygen(est)
        gw_lv = {j: self.top for j in S}
        gb_lv = {j: self.top for j in S}
        for _ in range(rounds):
            ups_w, ups_b = [], []
            for q in range(self.N):
                for j in range(1, L + 1):
                    est.bytes["model-broadcast"] += self._tensor_bytes(j, "w", gw_lv.get(j), S)
                    est.bytes["model-broadcast"] += self._tensor_bytes(j, "b", gb_lv.get(j), S)
                    est.messages += 2
                w, b = dict(gw_lv), dict(gb_lv)
                for _ in range(local_epochs * local_examples[q]):
                    dw, db = self._pass(est, w, b, S)
                    for j in S:
                        w[j] = self._update(est, w[j], dw[j])
                        b[j] = self._update(est, b[j], db[j])
                for j in range(1, L + 1):
                    est.bytes["local-update"] += self._tensor_bytes(j, "w", w.get(j), S)
                    est.bytes["local-update"] += self._tensor_bytes(j, "b", b.get(j), S)
                    est.messages += 2
                ups_w.append(w)
                ups_b.append(b)
            for j in S:
                for store, ups in ((gw_lv, ups_w), (gb_lv, ups_b)):
                    lv = min(u[j] for u in ups)
                    store[j] = self._need(est, lv, 1, by_server=True) - 1
        return est


def _rotation_count(block: int, slots: int) -> int:
    # folds and spreads use +-2^i and +-2^i * block for 2^i < block
    rots = set()
    s = 1
    while s < block:
        rots |= {s, -s, s * block, -s * block}
        s *= 2
    return len({r % slots for r in rots} - {0})


def full_vs_last_ratio(model: LevelFlowModel, rounds: int, local_examples, local_epochs: int = 1) -> float:
    """Bytes with every layer encrypted over bytes with only the output layer encrypted."""
    L = model.arch.depth
    full = model.estimate(LayerPartition.suffix(L, 0), rounds, local_examples, local_epochs)
    last = model.estimate(LayerPartition.suffix(L, L - 1), rounds, local_examples, local_epochs)
    return full.total / last.total

"""Homomorphic backends shared by the packing and federated layers.

`LatticeBackend` runs real threshold CKKS. `SimulatedBackend` keeps the slot
vector in the clear but follows the same level/scale bookkeeping, raises the
same level errors, reports the same ciphertext sizes and adds noise with the
analytically predicted magnitude. Both count operations identically, so any
traffic or cost figure derived from the counters does not depend on which
backend produced it.
"""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass, field

import numpy as np

from . import threshold as th
from .ckks import chebyshev
from .ckks.params import CkksParams
from .ckks.scheme import CkksContext, LevelExhausted, MissingKey

# Cost model in NTT-row equivalents (one length-n NTT over one prime).
# Elementwise passes count as a quarter row.
_ELEM = 0.25


def _ks_rows(k: int) -> float:
    return k * (k + 1) + 2 * (k + 1) + k


def op_cost(op: str, limbs: int, top_limbs: int) -> float:
    k = limbs
    if op in ("add", "sub", "neg", "add_plain", "add_const", "mult_int", "drop"):
        return 2 * k * _ELEM
    if op in ("mult_plain", "mult_const"):
        return 4 * k * _ELEM + 4 * k
    if op == "mult":
        return 6 * k * _ELEM + _ks_rows(k) + 4 * k
    if op == "rotate":
        return 2 * k * _ELEM + _ks_rows(k)
    if op == "encrypt":
        return 4 * k + 6 * k * _ELEM
    if op == "partial_decrypt":
        return 2 * k * _ELEM + k
    if op == "bootstrap_share":
        return 2 * k + 2 * top_limbs + 4 * (k + top_limbs) * _ELEM
    if op == "bootstrap_combine":
        return k + top_limbs + 16 * k * _ELEM
    if op == "decode":
        return k + 4
    raise KeyError(op)


@dataclass
class OpMeter:
    """Counts of homomorphic operations and their modelled cost."""
    counts: Counter = field(default_factory=Counter)
    work: float = 0.0

    def add(self, op: str, limbs: int, top_limbs: int) -> None:
        self.counts[op] += 1
        self.work += op_cost(op, limbs, top_limbs)

    def snapshot(self) -> tuple[Counter, float]:
        return Counter(self.counts), self.work


class HEBackend:
    """Common interface; subclasses implement the `_`-prefixed primitives."""

    name = "abstract"

    def __init__(self, params: CkksParams, n_parties: int, flood: th.FloodConfig):
        self.params = params
        self.n_parties = n_parties
        self.flood = flood
        self.meter = OpMeter()
        self.boot_min = th.bootstrap_min_level(params, n_parties, flood)
        self.rotations: set[int] = set()
        # callback(kind, level) for collective operations, installed by the protocol
        self.on_collective = None

    @property
    def slots(self) -> int:
        return self.params.slots

    @property
    def top(self) -> int:
        return self.params.max_level

    def _tick(self, op: str, ct) -> None:
        self.meter.add(op, self.params.limbs_at(self.level(ct)), self.params.limbs_at(self.top))

    def ct_bytes(self, ct) -> int:
        return self.params.ciphertext_bytes(self.level(ct))

    def usable_levels(self) -> int:
        """Levels a circuit can consume between bootstraps."""
        return self.top - self.boot_min

    # ---- level management
    def ensure_level(self, ct, need: int):
        """Bootstrap if fewer than `need` levels remain above the bootstrap floor."""
        if need > self.usable_levels():
            raise LevelExhausted(f"sub-circuit needs {need} levels, chain offers {self.usable_levels()}")
        if self.level(ct) - need < self.boot_min:
            return self.bootstrap(ct)
        return ct

    def bootstrap(self, ct):
        if self.level(ct) < self.boot_min:
            raise LevelExhausted(f"bootstrap needs level >= {self.boot_min}")
        if self.on_collective is not None:
            self.on_collective("bootstrap", self.level(ct))
        lv = self.level(ct)
        for _ in range(self.n_parties):
            self.meter.add("bootstrap_share", self.params.limbs_at(lv), self.params.limbs_at(self.top))
        self.meter.add("bootstrap_combine", self.params.limbs_at(lv), self.params.limbs_at(self.top))
        return self._bootstrap(ct)

    def decrypt(self, ct, length: int | None = None) -> np.ndarray:
        """Collective decryption: one partial per party, combined by the requester."""
        if self.on_collective is not None:
            self.on_collective("decrypt", self.level(ct))
        lv = self.params.limbs_at(self.level(ct))
        for _ in range(self.n_parties):
            self.meter.add("partial_decrypt", lv, 0)
        self.meter.add("decode", lv, 0)
        out = self._decrypt(ct)
        return out if length is None else out[:length]

    def peek(self, ct) -> np.ndarray:
        """Evaluation-harness read of a ciphertext: no traffic, no metering."""
        return self._peek(ct)

    # ---- arithmetic wrappers with metering
    def encrypt(self, values, level: int | None = None):
        level = self.top if level is None else level
        v = np.zeros(self.slots)
        arr = np.asarray(values, dtype=np.float64).ravel()
        v[: arr.size] = arr
        ct = self._encrypt(v, level)
        self._tick("encrypt", ct)
        return ct

    def add(self, a, b):
        out = self._add(a, b)
        self._tick("add", out)
        return out

    def sub(self, a, b):
        out = self._add(a, self._neg(b))
        self._tick("sub", out)
        return out

    def neg(self, a):
        self._tick("neg", a)
        return self._neg(a)

    def add_plain(self, a, values):
        self._tick("add_plain", a)
        return self._add_plain(a, self._pad(values))

    def add_const(self, a, c: float):
        self._tick("add_const", a)
        return self._add_const(a, float(c))

    def mult_int(self, a, m: int):
        self._tick("mult_int", a)
        return self._mult_int(a, int(m))

    def mult_plain(self, a, values):
        self._need(a, 1)
        self._tick("mult_plain", a)
        return self._mult_plain(a, self._pad(values))

    def mult_const(self, a, c: float):
        self._need(a, 1)
        self._tick("mult_const", a)
        return self._mult_const(a, float(c))

    def mult(self, a, b):
        self._need(a, 1)
        self._need(b, 1)
        lv = min(self.level(a), self.level(b))
        self.meter.add("mult", self.params.limbs_at(lv), 0)
        return self._mult(a, b)

    def rotate(self, a, r: int):
        r %= self.slots
        if r == 0:
            return a
        if r not in self.rotations:
            raise MissingKey(f"rotation key for {r}")
        self._tick("rotate", a)
        return self._rotate(a, r)

    def drop_to(self, a, level: int):
        if level == self.level(a):
            return a
        return self._drop_to(a, level)

    def chebyshev(self, ct, coeffs, a: float, b: float):
        return chebyshev.eval_chebyshev(self, ct, coeffs, a, b)

    def _need(self, ct, k: int) -> None:
        if self.level(ct) < k:
            raise LevelExhausted("no level left for a multiplication")

    def _pad(self, values) -> np.ndarray:
        arr = np.asarray(values, dtype=np.float64).ravel()
        if arr.size > self.slots:
            raise ValueError("plaintext longer than the slot count")
        v = np.zeros(self.slots)
        v[: arr.size] = arr
        return v


class LatticeBackend(HEBackend):
    """Real threshold CKKS over N simulated parties."""

    name = "lattice"

    def __init__(self, params: CkksParams, n_parties: int = 3, seed: int = 0,
                 flood: th.FloodConfig | None = None, key_mode: str = "distributed"):
        super().__init__(params, n_parties, flood or th.FloodConfig())
        self.ctx = CkksContext(params)
        self.seed = seed
        self.key_mode = key_mode
        self.parties = th.make_parties(self.ctx, n_parties, seed)
        self.keys = th.collective_keys(self.ctx, self.parties, seed, (), key_mode)
        self.rng = np.random.default_rng([seed, 31337])
        self._boot_round = 1000

    def add_rotations(self, rotations) -> None:
        new = {r % self.slots for r in rotations} - self.rotations - {0}
        if not new:
            return
        if self.key_mode == "dealer":
            sk = th.collective_secret(self.ctx, self.parties)
            rng = th.crp_rng(self.seed, 1, "dealer-rot")
            for r in sorted(new):
                self.ctx.add_rotation_key(self.keys, sk, r, rng)
        else:
            self.keys.rot.update(th.dkg_rotation_keys(self.ctx, self.parties, self.seed, new))
        self.rotations |= new

    def level(self, ct) -> int:
        return ct.level

    def scale(self, ct) -> float:
        return ct.scale

    def _encrypt(self, v, level):
        return self.ctx.encrypt_values(v, self.keys.pk, self.rng, level=level)

    def _peek(self, ct):
        return th.threshold_decrypt(self.ctx, self.parties, ct, th.FloodConfig(enabled=False))

    def _decrypt(self, ct):
        return th.threshold_decrypt(self.ctx, self.parties, ct, self.flood)

    def _bootstrap(self, ct):
        self._boot_round += 1
        return th.collective_bootstrap(self.ctx, ct, self.parties, self.seed, self._boot_round,
                                       self.flood, self.n_parties)

    def _add(self, a, b):
        return self.ctx.add(a, b)

    def _neg(self, a):
        return self.ctx.neg(a)

    def _add_plain(self, a, v):
        return self.ctx.add_plain(a, v)

    def _add_const(self, a, c):
        return self.ctx.add_const(a, c)

    def _mult_int(self, a, m):
        return self.ctx.mult_int(a, m)

    def _mult_plain(self, a, v):
        return self.ctx.mult_plain(a, v)

    def _mult_const(self, a, c):
        return self.ctx.mult_const(a, c)

    def _mult(self, a, b):
        return self.ctx.mult(a, b, self.keys.rlk)

    def _rotate(self, a, r):
        return self.ctx.rotate(a, r, self.keys.rot)

    def _drop_to(self, a, level):
        return self.ctx.drop_to(a, level)


@dataclass
class SimCiphertext:
    values: np.ndarray
    scale: float
    level: int


class SimulatedBackend(HEBackend):
    """Cleartext stand-in with identical bookkeeping and modelled noise."""

    name = "simulated"

    def __init__(self, params: CkksParams, n_parties: int = 3, seed: int = 0,
                 flood: th.FloodConfig | None = None, noise: bool = True):
        super().__init__(params, n_parties, flood or th.FloodConfig())
        self.rng = np.random.default_rng([seed, 4242])
        self.noise = noise
        # fresh encryption error per slot (ternary secrets summed over parties)
        self.fresh_std = float(np.sqrt(params.n / 2 * params.n * (2.0 / 3.0) * 2 * n_parties)
                               * params.sigma / params.scale)
        self.flood_std = th.flood_std(params, n_parties, self.flood.kappa) if self.flood.enabled else 0.0

    def add_rotations(self, rotations) -> None:
        self.rotations |= {r % self.slots for r in rotations} - {0}

    def level(self, ct) -> int:
        return ct.level

    def scale(self, ct) -> float:
        return ct.scale

    def _noise(self, std: float) -> np.ndarray:
        if not self.noise or std == 0.0:
            return 0.0
        return self.rng.normal(0.0, std, self.slots)

    def _check_bound(self, v):
        bound = 2.0 ** self.params.message_bits
        if np.max(np.abs(v)) > bound:
            raise ValueError(f"slot magnitude {np.max(np.abs(v)):.3g} exceeds message bound {bound}")

    def _encrypt(self, v, level):
        self._check_bound(v)
        return SimCiphertext(v + self._noise(self.fresh_std), self.params.scale, level)

    def _peek(self, ct):
        return ct.values.copy()

    def _decrypt(self, ct):
        limit = 2.0 ** (self.params.message_bits + 1)
        if np.max(np.abs(ct.values)) > limit:
            raise OverflowError("slot values beyond the decodable range")
        return ct.values + self._noise(self.flood_std * self.params.scale / ct.scale)

    def _bootstrap(self, ct):
        v = ct.values * 1.0 + self._noise(self.flood_std * self.params.scale / ct.scale)
        return SimCiphertext(v, self.params.scale, self.top)

    def _align(self, a, b):
        lv = min(a.level, b.level)
        return lv

    def _add(self, a, b):
        if abs(a.scale - b.scale) > 1e-4 * max(a.scale, b.scale):
            raise ValueError(f"scale mismatch {a.scale:.6g} vs {b.scale:.6g}")
        return SimCiphertext(a.values + b.values * (b.scale / a.scale), a.scale, self._align(a, b))

    def _neg(self, a):
        return SimCiphertext(-a.values, a.scale, a.level)

    def _add_plain(self, a, v):
        self._check_bound(v)
        return SimCiphertext(a.values + v, a.scale, a.level)

    def _add_const(self, a, c):
        return SimCiphertext(a.values + round(c * a.scale) / a.scale, a.scale, a.level)

    def _mult_int(self, a, m):
        return SimCiphertext(a.values * m, a.scale, a.level)

    def _mult_plain(self, a, v):
        self._check_bound(v)
        return SimCiphertext(a.values * v, a.scale, a.level - 1)

    def _mult_const(self, a, c):
        d = self.params.drop_factor(a.level)
        return SimCiphertext(a.values * (round(c * d) / float(d)), a.scale, a.level - 1)

    def _mult(self, a, b):
        lv = min(a.level, b.level)
        scale = a.scale * b.scale / self.params.drop_factor(lv)
        # the decoded value is relative to the tracked product scale, so it is exact
        return SimCiphertext(a.values * b.values, scale, lv - 1)

    def _rotate(self, a, r):
        return SimCiphertext(np.roll(a.values, -r), a.scale, a.level)

    def _drop_to(self, a, level):
        if level > a.level:
            raise ValueError("cannot raise the level without bootstrapping")
        return SimCiphertext(a.values, a.scale, level)


def make_backend(kind: str, params: CkksParams, n_parties: int, seed: int,
                 flood: th.FloodConfig | None = None, **kw) -> HEBackend:
    if kind == "lattice":
        return LatticeBackend(params, n_parties, seed, flood, **kw)
    if kind == "simulated":
        return SimulatedBackend(params, n_parties, seed, flood, **kw)
    raise ValueError(f"unknown backend {kind!r}")

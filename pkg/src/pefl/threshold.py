"""N-of-N threshold CKKS: distributed key generation, partial decryption and
collective bootstrapping.

The collective secret is s = sum_i s_i over ternary shares that never leave
their owner. Every keygen round is driven by common random polynomials derived
from (seed, round id, tag), so all parties reconstruct the same CRP locally.
Each protocol step is split into a per-party `*_share` function (what goes on
the wire) and an aggregation function, so the federated layer can route the
shares through the transport and account for their bytes.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass
from fractions import Fraction

import numpy as np

from .ckks.ring import crt_reconstruct
from .ckks.scheme import (CkksContext, Ciphertext, KeySet, LevelExhausted,
                          ParamsMismatch, Plaintext, PublicKey, SecretKey,
                          SwitchingKey, sample_gaussian, sample_ternary, sample_uniform)

POLY_HEADER_BYTES = 40  # fingerprint + level + polynomial count


class MissingContribution(RuntimeError):
    pass


class RoundOrderError(RuntimeError):
    pass


@dataclass(frozen=True)
class FloodConfig:
    """Flooding noise: uniform integers in [-2^kappa, 2^kappa] per coefficient."""
    kappa: int = 32
    stat_bits: int = 40       # statistical hiding of bootstrap masks
    enabled: bool = True


@dataclass
class Party:
    pid: int
    share: SecretKey
    rng: np.random.Generator


@dataclass
class PartialDecryption:
    pid: int
    poly: np.ndarray          # NTT form, limbs at the ciphertext level
    kappa: int | None
    fingerprint: bytes


@dataclass
class BootstrapShare:
    pid: int
    masked: np.ndarray        # s_i*c1 + M_i + flooding, at the input level
    reenc: np.ndarray         # -s_i*a - round(M_i*Delta/scale) + e, at the top level


def poly_bytes(params, limbs: int, count: int = 1) -> int:
    return POLY_HEADER_BYTES + count * limbs * params.n * 8


# ---------------------------------------------------------------- setup

def make_parties(ctx: CkksContext, n_parties: int, seed: int) -> list[Party]:
    parties = []
    for pid in range(n_parties):
        rng = np.random.default_rng([seed, 7919, pid])
        s = sample_ternary(rng, ctx.n, ctx.params.hamming_weight)
        parties.append(Party(pid, ctx.secret_from_coeffs(s), rng))
    return parties


def collective_secret(ctx: CkksContext, parties) -> SecretKey:
    """Sum of shares; only for dealer mode and tests."""
    s = np.sum([p.share.coeffs for p in parties], axis=0)
    return ctx.secret_from_coeffs(s)


def crp_rng(seed: int, round_id: int, tag: str) -> np.random.Generator:
    h = int.from_bytes(hashlib.sha256(tag.encode()).digest()[:4], "little")
    return np.random.default_rng([seed, round_id, h])


def crp_poly(ctx: CkksContext, seed: int, round_id: int, tag: str, with_special: bool = False):
    q = ctx.ext.q if with_special else ctx.ext.q[: ctx.K]
    return sample_uniform(crp_rng(seed, round_id, tag), q, ctx.n)


def crp_digits(ctx: CkksContext, seed: int, round_id: int, tag: str) -> np.ndarray:
    rng = crp_rng(seed, round_id, tag)
    return np.stack([sample_uniform(rng, ctx.ext.q, ctx.n) for _ in range(ctx.K)])


def _err(ctx, rng, k, special=False):
    return ctx.to_ntt_signed(sample_gaussian(rng, ctx.n, ctx.params.sigma), k, special)


def _flood(ctx, rng, k, kappa):
    e = rng.integers(-(1 << kappa), (1 << kappa) + 1, size=ctx.n, dtype=np.int64)
    return ctx.to_ntt_signed(e, k)


# ---------------------------------------------------------------- public key

def pk_share(ctx: CkksContext, party: Party, a: np.ndarray) -> np.ndarray:
    q = ctx.qcol(ctx.K)
    return (-(a * party.share.ntt[: ctx.K]) % q + _err(ctx, party.rng, ctx.K)) % q


def dkg_public_key(ctx: CkksContext, parties, seed: int, round_id: int = 0,
                   n_expected: int | None = None) -> PublicKey:
    a = crp_poly(ctx, seed, round_id, "pk")
    shares = [pk_share(ctx, p, a) for p in parties]
    return aggregate_pk(ctx, shares, a, n_expected or len(parties))


def aggregate_pk(ctx, shares, a, n_parties: int) -> PublicKey:
    if len(shares) != n_parties:
        raise MissingContribution(f"public key: {len(shares)} of {n_parties} shares")
    q = ctx.qcol(ctx.K)
    b = np.sum(shares, axis=0) % q
    return PublicKey(b, a)


# ---------------------------------------------------------------- rotation keys

def rot_key_share(ctx: CkksContext, party: Party, r: int, a: np.ndarray) -> np.ndarray:
    """b_i = -a_i*s_p + P*g_i*s_p(X^k) + e for every digit i."""
    q = ctx.ext.qcol
    target = ctx.rotated_secret_ntt(party.share.coeffs, r)
    e = np.stack([_err(ctx, party.rng, ctx.K, True) for _ in range(ctx.K)])
    return (-(a * party.share.ntt[None]) % q[None] + e + ctx.gadget_term(target)) % q[None]


def dkg_rotation_keys(ctx: CkksContext, parties, seed: int, rotations, round_id: int = 1,
                      n_expected: int | None = None) -> dict[int, SwitchingKey]:
    n_expected = n_expected or len(parties)
    if len(parties) != n_expected:
        raise MissingContribution(f"rotation keys: {len(parties)} of {n_expected} parties")
    keys = {}
    q = ctx.ext.qcol[None]
    for r in sorted({r % ctx.params.slots for r in rotations} - {0}):
        a = crp_digits(ctx, seed, round_id, f"rot{r}")
        b = np.sum([rot_key_share(ctx, p, r, a) for p in parties], axis=0) % q
        keys[r] = SwitchingKey(b, a)
    return keys


# ---------------------------------------------------------------- relinearization key

class RelinKeyGen:
    """Two-round relinearization key generation.

    Round 1: each party p with ephemeral ternary u_p publishes, per digit i,
    h0 = -u_p*a_i + P*g_i*s_p + e and h1 = s_p*a_i + e.
    Round 2: on the aggregates, p publishes s_p*H0 + e and (u_p - s_p)*H1 + e.
    The key is (sum of round-2 shares, H1).
    """

    def __init__(self, ctx: CkksContext, seed: int, round_id: int = 2):
        self.ctx = ctx
        self.a = crp_digits(ctx, seed, round_id, "rlk")
        self._u: dict[int, SecretKey] = {}
        self.h0 = self.h1 = None

    def round1_share(self, party: Party) -> tuple[np.ndarray, np.ndarray]:
        ctx = self.ctx
        q = ctx.ext.qcol[None]
        u = ctx.secret_from_coeffs(sample_ternary(party.rng, ctx.n))
        self._u[party.pid] = u
        e0 = np.stack([_err(ctx, party.rng, ctx.K, True) for _ in range(ctx.K)])
        e1 = np.stack([_err(ctx, party.rng, ctx.K, True) for _ in range(ctx.K)])
        h0 = (-(self.a * u.ntt[None]) % q + ctx.gadget_term(party.share.ntt) + e0) % q
        h1 = (self.a * party.share.ntt[None] % q + e1) % q
        return h0, h1

    def aggregate_round1(self, shares, n_parties: int) -> None:
        if len(shares) != n_parties:
            raise MissingContribution(f"relinearization round 1: {len(shares)} of {n_parties}")
        q = self.ctx.ext.qcol[None]
        self.h0 = np.sum([s[0] for s in shares], axis=0) % q
        self.h1 = np.sum([s[1] for s in shares], axis=0) % q

    def round2_share(self, party: Party) -> tuple[np.ndarray, np.ndarray]:
        if self.h0 is None:
            raise RoundOrderError("relinearization round 2 before round 1 aggregation")
        if party.pid not in self._u:
            raise RoundOrderError(f"party {party.pid} skipped round 1")
        ctx = self.ctx
        q = ctx.ext.qcol[None]
        s = party.share.ntt[None]
        u_minus_s = (self._u[party.pid].ntt[None] - s) % q
        e2 = np.stack([_err(ctx, party.rng, ctx.K, True) for _ in range(ctx.K)])
        e3 = np.stack([_err(ctx, party.rng, ctx.K, True) for _ in range(ctx.K)])
        return ((self.h0 * s % q + e2) % q, (self.h1 * u_minus_s % q + e3) % q)

    def finalize(self, shares, n_parties: int) -> SwitchingKey:
        if len(shares) != n_parties:
            raise MissingContribution(f"relinearization round 2: {len(shares)} of {n_parties}")
        q = self.ctx.ext.qcol[None]
        b = np.sum([s[0] + s[1] for s in shares], axis=0) % q
        return SwitchingKey(b, self.h1.copy())


def dkg_relin_key(ctx: CkksContext, parties, seed: int, mode: str = "distributed",
                  round_id: int = 2) -> SwitchingKey:
    if mode == "dealer":
        sk = collective_secret(ctx, parties)
        rng = crp_rng(seed, round_id, "dealer-rlk")
        return ctx.switching_key(sk, sk.ntt * sk.ntt % ctx.ext.qcol, rng)
    if mode != "distributed":
        raise ValueError(f"unknown key mode {mode!r}")
    gen = RelinKeyGen(ctx, seed, round_id)
    gen.aggregate_round1([gen.round1_share(p) for p in parties], len(parties))
    return gen.finalize([gen.round2_share(p) for p in parties], len(parties))


def collective_keys(ctx: CkksContext, parties, seed: int, rotations=(),
                    mode: str = "distributed") -> KeySet:
    """Full key set in one call: pk, relinearization key and rotation keys."""
    if mode == "dealer":
        sk = collective_secret(ctx, parties)
        rng = crp_rng(seed, 0, "dealer")
        _, keys = _dealer_keys(ctx, sk, rng, rotations)
        return keys
    keys = KeySet(dkg_public_key(ctx, parties, seed))
    keys.rlk = dkg_relin_key(ctx, parties, seed)
    keys.rot = dkg_rotation_keys(ctx, parties, seed, rotations)
    return keys


def _dealer_keys(ctx, sk, rng, rotations):
    a = sample_uniform(rng, ctx.ext.q[: ctx.K], ctx.n)
    q = ctx.qcol(ctx.K)
    b = (-(a * sk.ntt[: ctx.K]) % q + _err(ctx, rng, ctx.K)) % q
    keys = KeySet(PublicKey(b, a))
    keys.rlk = ctx.switching_key(sk, sk.ntt * sk.ntt % ctx.ext.qcol, rng)
    for r in rotations:
        ctx.add_rotation_key(keys, sk, r, rng)
    return sk, keys


# ---------------------------------------------------------------- decryption

def partial_decrypt(ctx: CkksContext, party: Party, ct: Ciphertext,
                    flood: FloodConfig | None = None) -> PartialDecryption:
    ctx.check(ct)
    if ct.degree != 1:
        raise ValueError("relinearize before decrypting")
    k = ct.parts.shape[1]
    q = ctx.qcol(k)
    h = ct.parts[1] * party.share.ntt[:k] % q
    kappa = None
    if flood is not None and flood.enabled:
        kappa = flood.kappa
        h = (h + _flood(ctx, party.rng, k, kappa)) % q
    return PartialDecryption(party.pid, h, kappa, ct.fingerprint)


def combine_partials(ctx: CkksContext, ct: Ciphertext, partials, n_parties: int) -> Plaintext:
    if len({p.pid for p in partials}) != n_parties or len(partials) != n_parties:
        raise MissingContribution(f"decryption: {len(partials)} of {n_parties} partials")
    for p in partials:
        if p.fingerprint != ct.fingerprint:
            raise ParamsMismatch("partial decryption for a different parameter set")
    q = ctx.qcol(ct.parts.shape[1])
    acc = ct.parts[0].copy()
    for p in partials:
        acc = (acc + p.poly) % q
    return Plaintext(acc, ct.scale, ct.level)


def threshold_decrypt(ctx, parties, ct, flood=None, length=None) -> np.ndarray:
    parts = [partial_decrypt(ctx, p, ct, flood) for p in parties]
    return ctx.decode(combine_partials(ctx, ct, parts, len(parties)), length)


def flood_std(params, n_parties: int, kappa: int, scale: float | None = None) -> float:
    """Std of the real part of one slot after summing n_parties flooding terms."""
    scale = params.scale if scale is None else scale
    var_coeff = n_parties * ((2.0 ** kappa) ** 2) / 3.0
    return float(np.sqrt(params.n / 2 * var_coeff) / scale)


# ---------------------------------------------------------------- bootstrapping

def mask_bits(params, scale: float, flood: FloodConfig) -> int:
    return int(np.ceil(np.log2(scale))) + params.message_bits + flood.stat_bits


def bootstrap_min_level(params, n_parties: int, flood: FloodConfig, scale: float | None = None) -> int:
    """Lowest level whose modulus leaves room for the masked value."""
    scale = params.scale if scale is None else scale
    need = mask_bits(params, scale, flood) + int(np.ceil(np.log2(max(n_parties, 1)))) + 2
    for lv in range(params.max_level + 1):
        if params.modulus_at(lv).bit_length() - 1 > need:
            return lv
    raise ValueError("no level can hold a bootstrap mask")


class Bootstrapper:
    """One-round collective refresh of a ciphertext to the top level."""

    def __init__(self, ctx: CkksContext, seed: int, round_id: int, flood: FloodConfig):
        self.ctx = ctx
        self.flood = flood
        self.a = crp_poly(ctx, seed, round_id, "boot")

    def share(self, party: Party, ct: Ciphertext) -> BootstrapShare:
        ctx = self.ctx
        p = ctx.params
        k = ct.parts.shape[1]
        q = ctx.qcol(k)
        bits = mask_bits(p, ct.scale, self.flood)
        lim = 1 << bits
        mask = np.array([int(x) for x in party.rng.integers(0, 2**62, size=ctx.n, dtype=np.int64)],
                        dtype=object)
        # widen to `bits` bits from 62-bit draws
        extra = bits - 62
        if extra > 0:
            hi = np.array([int(x) for x in party.rng.integers(0, 1 << extra, size=ctx.n)], dtype=object)
            mask = mask + hi * (1 << 62)
        mask = mask % (2 * lim) - lim
        masked = (ct.parts[1] * party.share.ntt[:k] % q + ctx.to_ntt_signed(mask, k)) % q
        if self.flood.enabled:
            masked = (masked + _flood(ctx, party.rng, k, self.flood.kappa)) % q
        ratio = Fraction(p.scale) / Fraction(ct.scale)
        lifted = np.array([_round_frac(m * ratio) for m in mask], dtype=object)
        qt = ctx.qcol(ctx.K)
        reenc = (-(self.a * party.share.ntt[: ctx.K]) % qt - ctx.to_ntt_signed(lifted, ctx.K)
                 + _err(ctx, party.rng, ctx.K)) % qt
        return BootstrapShare(party.pid, masked, reenc)

    def combine(self, ct: Ciphertext, shares, n_parties: int) -> Ciphertext:
        ctx = self.ctx
        p = ctx.params
        if len({s.pid for s in shares}) != n_parties or len(shares) != n_parties:
            raise MissingContribution(f"bootstrap: {len(shares)} of {n_parties} participants")
        k = ct.parts.shape[1]
        q = ctx.qcol(k)
        w = ct.parts[0].copy()
        for s in shares:
            w = (w + s.masked) % q
        b = ctx.basis_at_limbs(k)
        ints = crt_reconstruct(b.intt(w), b.primes)
        ratio = Fraction(p.scale) / Fraction(ct.scale)
        num, den = ratio.numerator, ratio.denominator
        lifted = np.array([(int(x) * num * 2 + den) // (2 * den) for x in ints], dtype=object)
        qt = ctx.qcol(ctx.K)
        c0 = ctx.to_ntt_signed(lifted, ctx.K)
        for s in shares:
            c0 = (c0 + s.reenc) % qt
        return Ciphertext(np.stack([c0, self.a.copy()]), p.scale, p.max_level, ct.fingerprint)


def _round_frac(x: Fraction) -> int:
    return (2 * x.numerator + x.denominator) // (2 * x.denominator)


def collective_bootstrap(ctx: CkksContext, ct: Ciphertext, parties, seed: int, round_id: int,
                         flood: FloodConfig | None = None, n_expected: int | None = None) -> Ciphertext:
    flood = flood or FloodConfig()
    n_expected = n_expected or len(parties)
    ctx.check(ct)
    if ct.degree != 1:
        raise ValueError("relinearize before bootstrapping")
    need = bootstrap_min_level(ctx.params, n_expected, flood, ct.scale)
    if ct.level < need:
        raise LevelExhausted(f"bootstrap needs level >= {need} for mask headroom, got {ct.level}")
    bs = Bootstrapper(ctx, seed, round_id, flood)
    return bs.combine(ct, [bs.share(p, ct) for p in parties], n_expected)

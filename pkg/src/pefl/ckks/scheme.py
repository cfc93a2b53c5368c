"""Single-key RNS-CKKS: keys, encryption, arithmetic, rotations, rescaling.

Polynomials are kept in NTT form throughout. Key switching is hybrid: the
input is decomposed per RNS limb (digit i is the residue mod q_i, lifted to
every prime) and the key lives modulo Q_top * P for one special prime P, so
the switching noise is divided by P on the way back down.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import encoding
from .params import CkksParams
from .ring import automorphism_coeff, automorphism_perm, basis, centered


class LevelExhausted(RuntimeError):
    """No modulus left to rescale into; a bootstrap is needed."""


class ParamsMismatch(ValueError):
    pass


class MissingKey(KeyError):
    pass


@dataclass
class Plaintext:
    poly: np.ndarray          # (limbs, n) NTT form
    scale: float
    level: int


@dataclass
class Ciphertext:
    parts: np.ndarray         # (2 or 3, limbs, n) NTT form
    scale: float
    level: int
    fingerprint: bytes

    @property
    def degree(self) -> int:
        return self.parts.shape[0] - 1

    def copy(self) -> "Ciphertext":
        return Ciphertext(self.parts.copy(), self.scale, self.level, self.fingerprint)


@dataclass
class SecretKey:
    coeffs: np.ndarray        # (n,) small signed integers
    ntt: np.ndarray           # (K+1, n) over every ciphertext prime and P


@dataclass
class PublicKey:
    b: np.ndarray             # (K, n)
    a: np.ndarray


@dataclass
class SwitchingKey:
    b: np.ndarray             # (K, K+1, n): one digit per ciphertext prime
    a: np.ndarray


@dataclass
class KeySet:
    pk: PublicKey
    rlk: SwitchingKey | None = None
    rot: dict[int, SwitchingKey] = field(default_factory=dict)


# ---------------------------------------------------------------- sampling

def sample_ternary(rng: np.random.Generator, n: int, hamming_weight: int | None = None) -> np.ndarray:
    if hamming_weight is None:
        return rng.integers(-1, 2, size=n, dtype=np.int64)
    s = np.zeros(n, dtype=np.int64)
    idx = rng.choice(n, size=hamming_weight, replace=False)
    s[idx] = rng.choice(np.array([-1, 1]), size=hamming_weight)
    return s


def sample_gaussian(rng: np.random.Generator, n: int, sigma: float, rows: int | None = None) -> np.ndarray:
    shape = n if rows is None else (rows, n)
    e = np.rint(rng.normal(0.0, sigma, size=shape)).astype(np.int64)
    bound = int(np.ceil(6 * sigma))
    return np.clip(e, -bound, bound)


def sample_uniform(rng: np.random.Generator, q: np.ndarray, n: int) -> np.ndarray:
    return rng.integers(0, q[:, None], size=(q.size, n), dtype=np.int64)


# ---------------------------------------------------------------- context

class CkksContext:
    """Bases and arithmetic for one parameter set."""

    def __init__(self, params: CkksParams):
        self.params = params
        self.n = params.n
        self.K = len(params.primes)
        self.ext = basis(params.primes + params.special, self.n)
        self.P = params.special[0]
        self.fp = params.fingerprint
        self._pinv = np.array([pow(self.P, -1, q) for q in params.primes], dtype=np.int64)
        self._p_mod = np.array([self.P % q for q in params.primes], dtype=np.int64)

    # -- bases
    def limbs(self, level: int) -> int:
        return self.params.limbs_at(level)

    def basis_at(self, level: int):
        return basis(self.params.primes[: self.limbs(level)], self.n)

    def qcol(self, k: int) -> np.ndarray:
        return self.ext.qcol[:k]

    def to_ntt_signed(self, coeffs: np.ndarray, k: int, with_special: bool = False) -> np.ndarray:
        """Signed int64 (or object) coefficients -> NTT form over the first k primes (+P)."""
        rows = list(range(k)) + ([self.K] if with_special else [])
        q = self.ext.q[rows][:, None]
        if coeffs.dtype == object:
            red = np.stack([(coeffs % int(p)).astype(np.int64) for p in q[:, 0]])
        else:
            red = np.mod(coeffs[None, :], q)
        return self.ext.ntt_rows(red, np.array(rows))

    def check(self, *cts: Ciphertext) -> None:
        for c in cts:
            if c.fingerprint != self.fp:
                raise ParamsMismatch("ciphertext was produced under different parameters")

    # -- encoding
    def encode(self, values, scale: float | None = None, level: int | None = None) -> Plaintext:
        scale = self.params.scale if scale is None else scale
        level = self.params.max_level if level is None else level
        v = np.asarray(values, dtype=np.float64).ravel()
        bound = 2.0 ** self.params.message_bits
        if v.size and np.max(np.abs(v)) > bound:
            raise ValueError(f"slot magnitude {np.max(np.abs(v)):.3g} exceeds message bound {bound}")
        coeffs = encoding.scaled_coeffs(v, self.n, scale)
        return Plaintext(self.to_ntt_signed(coeffs, self.limbs(level)), scale, level)

    def decode(self, pt: Plaintext, length: int | None = None) -> np.ndarray:
        b = self.basis_at(pt.level)
        coeffs = b.intt(pt.poly)
        out = encoding.decode_coeffs(coeffs, b.primes, pt.scale)
        return out if length is None else out[:length]

    # -- keys
    def keygen(self, rng: np.random.Generator, rotations=()) -> tuple[SecretKey, KeySet]:
        s = sample_ternary(rng, self.n, self.params.hamming_weight)
        sk = self.secret_from_coeffs(s)
        a = sample_uniform(rng, self.ext.q[: self.K], self.n)
        e = self.to_ntt_signed(sample_gaussian(rng, self.n, self.params.sigma), self.K)
        q = self.qcol(self.K)
        b = (-(a * sk.ntt[: self.K]) + e) % q
        keys = KeySet(PublicKey(b, a))
        keys.rlk = self.switching_key(sk, (sk.ntt * sk.ntt) % self.ext.qcol, rng)
        for r in rotations:
            self.add_rotation_key(keys, sk, r, rng)
        return sk, keys

    def secret_from_coeffs(self, s: np.ndarray) -> SecretKey:
        return SecretKey(s.astype(np.int64), self.to_ntt_signed(s.astype(np.int64), self.K, True))

    def gadget_term(self, target_ntt: np.ndarray) -> np.ndarray:
        """P * g_i * target for each digit i, shape (K, K+1, n)."""
        out = np.zeros((self.K, self.K + 1, self.n), dtype=np.int64)
        for i in range(self.K):
            out[i, i] = (target_ntt[i] * self._p_mod[i]) % self.ext.q[i]
        return out

    def switching_key(self, sk: SecretKey, target_ntt: np.ndarray, rng) -> SwitchingKey:
        """Key taking a ciphertext under `target` to one under sk."""
        q = self.ext.qcol
        a = np.stack([sample_uniform(rng, self.ext.q, self.n) for _ in range(self.K)])
        e = np.stack([self.to_ntt_signed(sample_gaussian(rng, self.n, self.params.sigma), self.K, True)
                      for _ in range(self.K)])
        b = (-(a * sk.ntt[None]) % q[None] + e + self.gadget_term(target_ntt)) % q[None]
        return SwitchingKey(b, a)

    def rotation_exponent(self, r: int) -> int:
        return pow(5, r % self.params.slots, 2 * self.n)

    def rotated_secret_ntt(self, s: np.ndarray, r: int) -> np.ndarray:
        k = self.rotation_exponent(r)
        sr = automorphism_coeff(s[None, :], k)[0]
        return self.to_ntt_signed(sr, self.K, True)

    def add_rotation_key(self, keys: KeySet, sk: SecretKey, r: int, rng) -> None:
        r %= self.params.slots
        if r and r not in keys.rot:
            keys.rot[r] = self.switching_key(sk, self.rotated_secret_ntt(sk.coeffs, r), rng)

    # -- encryption
    def encrypt(self, pt: Plaintext, pk: PublicKey, rng) -> Ciphertext:
        k = self.limbs(pt.level)
        q = self.qcol(k)
        v = self.to_ntt_signed(sample_ternary(rng, self.n), k)
        e0 = self.to_ntt_signed(sample_gaussian(rng, self.n, self.params.sigma), k)
        e1 = self.to_ntt_signed(sample_gaussian(rng, self.n, self.params.sigma), k)
        c0 = (v * pk.b[:k] % q + e0 + pt.poly) % q
        c1 = (v * pk.a[:k] % q + e1) % q
        return Ciphertext(np.stack([c0, c1]), pt.scale, pt.level, self.fp)

    def encrypt_values(self, values, pk: PublicKey, rng, level: int | None = None) -> Ciphertext:
        return self.encrypt(self.encode(values, level=level), pk, rng)

    def phase(self, ct: Ciphertext, s_ntt: np.ndarray) -> np.ndarray:
        """c0 + c1*s (+ c2*s^2) in NTT form."""
        k = ct.parts.shape[1]
        q = self.qcol(k)
        s = s_ntt[:k]
        acc = ct.parts[0].copy()
        power = s
        for i in range(1, ct.parts.shape[0]):
            acc = (acc + ct.parts[i] * power % q) % q
            power = power * s % q
        return acc

    def decrypt(self, ct: Ciphertext, sk: SecretKey) -> Plaintext:
        self.check(ct)
        return Plaintext(self.phase(ct, sk.ntt), ct.scale, ct.level)

    def decrypt_values(self, ct: Ciphertext, sk: SecretKey, length: int | None = None) -> np.ndarray:
        return self.decode(self.decrypt(ct, sk), length)

    # -- level management
    def drop_to(self, ct: Ciphertext, level: int) -> Ciphertext:
        if level > ct.level:
            raise ValueError("cannot raise the level without bootstrapping")
        if level == ct.level:
            return ct
        k = self.limbs(level)
        return Ciphertext(ct.parts[:, :k].copy(), ct.scale, level, ct.fingerprint)

    def _divide_last(self, x: np.ndarray) -> np.ndarray:
        """Exact rounding division by the last prime of x (..., k, n)."""
        k = x.shape[-2]
        ql = int(self.ext.q[k - 1])
        flat_last = x[..., k - 1:k, :].reshape(-1, self.n)
        last = self.ext.intt_rows(flat_last, np.full(flat_last.shape[0], k - 1))
        last = centered(last, ql)
        head = x[..., : k - 1, :]
        q = self.qcol(k - 1)
        flat = last.reshape(-1, 1, self.n)
        red = np.mod(flat, q[None])
        rows = np.tile(np.arange(k - 1), flat.shape[0])
        red = self.ext.ntt_rows(red.reshape(-1, self.n), rows).reshape(head.shape)
        inv = np.array([pow(ql, -1, int(p)) for p in q[:, 0]], dtype=np.int64)[:, None]
        return (head - red) % q * inv % q

    def rescale(self, ct: Ciphertext) -> Ciphertext:
        if ct.level == 0:
            raise LevelExhausted("rescale at level 0")
        x = ct.parts
        for _ in self.params.groups[ct.level]:
            x = self._divide_last(x)
        return Ciphertext(x, ct.scale / self.params.drop_factor(ct.level), ct.level - 1, ct.fingerprint)

    # -- key switching
    def key_switch(self, d: np.ndarray, key: SwitchingKey) -> tuple[np.ndarray, np.ndarray]:
        """Switch the NTT-form polynomial d (k limbs) using `key`; returns (k0, k1)."""
        k = d.shape[0]
        rows = np.array(list(range(k)) + [self.K])
        qe = self.ext.q[rows][:, None]
        dc = self.basis_at_limbs(k).intt(d)
        lifted = dc[:, None, :] % qe[None]
        lifted = self.ext.ntt_rows(lifted.reshape(-1, self.n), np.tile(rows, k)).reshape(k, k + 1, self.n)
        kb = key.b[:k][:, rows]
        ka = key.a[:k][:, rows]
        acc0 = np.sum(lifted * kb % qe[None], axis=0) % qe
        acc1 = np.sum(lifted * ka % qe[None], axis=0) % qe
        return self._mod_down(acc0), self._mod_down(acc1)

    def basis_at_limbs(self, k: int):
        return basis(self.params.primes[:k], self.n)

    def _mod_down(self, x: np.ndarray) -> np.ndarray:
        k = x.shape[0] - 1
        lastc = self.ext.intt_rows(x[k:], np.array([self.K]))
        lastc = centered(lastc, self.P)[0]
        red = self.to_ntt_signed(lastc, k)
        q = self.qcol(k)
        return (x[:k] - red) % q * self._pinv[:k, None] % q

    # -- arithmetic
    def _align(self, a: Ciphertext, b: Ciphertext) -> tuple[Ciphertext, Ciphertext]:
        self.check(a, b)
        lv = min(a.level, b.level)
        return self.drop_to(a, lv), self.drop_to(b, lv)

    @staticmethod
    def _scales_match(s1: float, s2: float, tol: float = 1e-4) -> None:
        if abs(s1 - s2) > tol * max(s1, s2):
            raise ValueError(f"scale mismatch {s1:.6g} vs {s2:.6g}")

    def add(self, a: Ciphertext, b: Ciphertext) -> Ciphertext:
        a, b = self._align(a, b)
        self._scales_match(a.scale, b.scale)
        q = self.qcol(a.parts.shape[1])
        deg = max(a.parts.shape[0], b.parts.shape[0])
        out = np.zeros((deg,) + a.parts.shape[1:], dtype=np.int64)
        out[: a.parts.shape[0]] += a.parts
        out[: b.parts.shape[0]] += b.parts
        return Ciphertext(out % q, a.scale, a.level, a.fingerprint)

    def neg(self, a: Ciphertext) -> Ciphertext:
        q = self.qcol(a.parts.shape[1])
        return Ciphertext((-a.parts) % q, a.scale, a.level, a.fingerprint)

    def sub(self, a: Ciphertext, b: Ciphertext) -> Ciphertext:
        return self.add(a, self.neg(b))

    def add_plain(self, a: Ciphertext, values) -> Ciphertext:
        pt = self.encode(values, scale=a.scale, level=a.level)
        q = self.qcol(a.parts.shape[1])
        out = a.parts.copy()
        out[0] = (out[0] + pt.poly) % q
        return Ciphertext(out, a.scale, a.level, a.fingerprint)

    def add_const(self, a: Ciphertext, c: float) -> Ciphertext:
        k = a.parts.shape[1]
        q = self.qcol(k)
        v = int(round(c * a.scale))
        out = a.parts.copy()
        out[0] = (out[0] + np.array([v % int(p) for p in q[:, 0]], dtype=np.int64)[:, None]) % q
        return Ciphertext(out, a.scale, a.level, a.fingerprint)

    def mult_int(self, a: Ciphertext, m: int) -> Ciphertext:
        q = self.qcol(a.parts.shape[1])
        mm = np.array([int(m) % int(p) for p in q[:, 0]], dtype=np.int64)[None, :, None]
        return Ciphertext(a.parts * mm % q[None], a.scale, a.level, a.fingerprint)

    def mult_plain(self, a: Ciphertext, values) -> Ciphertext:
        """Slotwise product with a plaintext vector; consumes one level, keeps the scale."""
        if a.level == 0:
            raise LevelExhausted("mult_plain at level 0")
        d = float(self.params.drop_factor(a.level))
        pt = self.encode(values, scale=d, level=a.level)
        q = self.qcol(a.parts.shape[1])
        prod = Ciphertext(a.parts * pt.poly[None] % q[None], a.scale * d, a.level, a.fingerprint)
        out = self.rescale(prod)
        out.scale = a.scale
        return out

    def mult_const(self, a: Ciphertext, c: float) -> Ciphertext:
        """Product with a real scalar; consumes one level, keeps the scale."""
        if a.level == 0:
            raise LevelExhausted("mult_const at level 0")
        d = self.params.drop_factor(a.level)
        v = int(round(c * d))
        q = self.qcol(a.parts.shape[1])
        mm = np.array([v % int(p) for p in q[:, 0]], dtype=np.int64)[None, :, None]
        out = self.rescale(Ciphertext(a.parts * mm % q[None], a.scale * d, a.level, a.fingerprint))
        out.scale = a.scale
        return out

    def tensor(self, a: Ciphertext, b: Ciphertext) -> Ciphertext:
        a, b = self._align(a, b)
        if a.degree != 1 or b.degree != 1:
            raise ValueError("tensor expects degree-1 ciphertexts")
        q = self.qcol(a.parts.shape[1])
        a0, a1 = a.parts
        b0, b1 = b.parts
        d0 = a0 * b0 % q
        d1 = (a0 * b1 % q + a1 * b0 % q) % q
        d2 = a1 * b1 % q
        return Ciphertext(np.stack([d0, d1, d2]), a.scale * b.scale, a.level, a.fingerprint)

    def relinearize(self, ct: Ciphertext, rlk: SwitchingKey | None) -> Ciphertext:
        if ct.degree == 1:
            return ct
        if rlk is None:
            raise MissingKey("relinearization key")
        k0, k1 = self.key_switch(ct.parts[2], rlk)
        q = self.qcol(ct.parts.shape[1])
        out = np.stack([(ct.parts[0] + k0) % q, (ct.parts[1] + k1) % q])
        return Ciphertext(out, ct.scale, ct.level, ct.fingerprint)

    def mult(self, a: Ciphertext, b: Ciphertext, rlk: SwitchingKey) -> Ciphertext:
        """Ciphertext product with relinearization and rescale."""
        if min(a.level, b.level) == 0:
            raise LevelExhausted("multiplication at level 0")
        return self.rescale(self.relinearize(self.tensor(a, b), rlk))

    def rotate(self, ct: Ciphertext, r: int, rot_keys: dict[int, SwitchingKey]) -> Ciphertext:
        """Cyclic left shift of the slot vector by r."""
        self.check(ct)
        r %= self.params.slots
        if r == 0:
            return ct.copy()
        if r not in rot_keys:
            raise MissingKey(f"rotation key for {r}")
        perm = automorphism_perm(self.n, self.rotation_exponent(r))
        c0 = ct.parts[0][:, perm]
        c1 = ct.parts[1][:, perm]
        k0, k1 = self.key_switch(c1, rot_keys[r])
        q = self.qcol(ct.parts.shape[1])
        return Ciphertext(np.stack([(c0 + k0) % q, k1]), ct.scale, ct.level, ct.fingerprint)

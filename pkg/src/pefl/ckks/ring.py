"""Arithmetic in R_Q = Z_Q[X]/(X^n + 1) in residue-number-system form.

Polynomials are int64 arrays of shape (limbs, n), one row per prime. The
negacyclic NTT is the merged Cooley-Tukey / Gentleman-Sande pair with the
powers of a primitive 2n-th root folded into the twiddles, so evaluation
slot i holds a(psi^(2*bitrev(i)+1)).
"""

from __future__ import annotations

from functools import lru_cache

import numba
import numpy as np


def _bitrev(x: int, bits: int) -> int:
    return int(format(x, f"0{bits}b")[::-1], 2) if bits else 0


def _primitive_root_2n(q: int, n: int) -> int:
    """Smallest primitive 2n-th root of unity modulo prime q."""
    order = 2 * n
    cofactor = (q - 1) // order
    for g in range(2, q):
        psi = pow(g, cofactor, q)
        if pow(psi, n, q) == q - 1:
            return psi
    raise ValueError(f"no primitive {order}-th root mod {q}")


@numba.njit(cache=True)
def _ntt_inplace(a, qs, tw, tw_sh):
    rows, n = a.shape
    for r in range(rows):
        q = qs[r]
        t = n
        m = 1
        while m < n:
            t >>= 1
            for i in range(m):
                j1 = 2 * i * t
                w = tw[r, m + i]
                ws = tw_sh[r, m + i]
                for j in range(j1, j1 + t):
                    u = a[r, j]
                    x = a[r, j + t]
                    v = x * w - ((x * ws) >> 32) * q
                    if v >= q:
                        v -= q
                    s = u + v
                    if s >= q:
                        s -= q
                    d = u - v
                    if d < 0:
                        d += q
                    a[r, j] = s
                    a[r, j + t] = d
            m <<= 1


@numba.njit(cache=True)
def _intt_inplace(a, qs, tw, tw_sh, ninv, ninv_sh):
    rows, n = a.shape
    for r in range(rows):
        q = qs[r]
        t = 1
        m = n
        while m > 1:
            h = m >> 1
            j1 = 0
            for i in range(h):
                w = tw[r, h + i]
                ws = tw_sh[r, h + i]
                for j in range(j1, j1 + t):
                    u = a[r, j]
                    x = a[r, j + t]
                    s = u + x
                    if s >= q:
                        s -= q
                    d = u - x
                    if d < 0:
                        d += q
                    v = d * w - ((d * ws) >> 32) * q
                    if v >= q:
                        v -= q
                    a[r, j] = s
                    a[r, j + t] = v
                j1 += 2 * t
            t <<= 1
            m = h
        c = ninv[r]
        cs = ninv_sh[r]
        for j in range(n):
            x = a[r, j]
            v = x * c - ((x * cs) >> 32) * q
            if v >= q:
                v -= q
            a[r, j] = v


class NttTables:
    """Twiddle tables for one prime and ring degree."""

    def __init__(self, q: int, n: int):
        self.q = q
        self.n = n
        bits = n.bit_length() - 1
        psi = _primitive_root_2n(q, n)
        psi_inv = pow(psi, -1, q)
        self.fwd = np.array([pow(psi, _bitrev(i, bits), q) for i in range(n)], dtype=np.int64)
        self.inv = np.array([pow(psi_inv, _bitrev(i, bits), q) for i in range(n)], dtype=np.int64)
        self.fwd_sh = (self.fwd << 32) // q
        self.inv_sh = (self.inv << 32) // q
        self.n_inv = pow(n, -1, q)
        self.n_inv_sh = (self.n_inv << 32) // q


@lru_cache(maxsize=None)
def tables(q: int, n: int) -> NttTables:
    return NttTables(q, n)


class RnsBasis:
    """An ordered set of primes with stacked NTT tables."""

    def __init__(self, primes: tuple[int, ...], n: int):
        self.primes = tuple(primes)
        self.n = n
        self.q = np.array(self.primes, dtype=np.int64)
        self.qcol = self.q[:, None]
        ts = [tables(p, n) for p in self.primes]
        self._fwd = np.stack([t.fwd for t in ts])
        self._fwd_sh = np.stack([t.fwd_sh for t in ts])
        self._inv = np.stack([t.inv for t in ts])
        self._inv_sh = np.stack([t.inv_sh for t in ts])
        self._ninv = np.array([t.n_inv for t in ts], dtype=np.int64)
        self._ninv_sh = np.array([t.n_inv_sh for t in ts], dtype=np.int64)

    def __len__(self) -> int:
        return len(self.primes)

    def ntt(self, a: np.ndarray) -> np.ndarray:
        out = np.ascontiguousarray(a, dtype=np.int64).copy()
        _ntt_inplace(out, self.q, self._fwd, self._fwd_sh)
        return out

    def intt(self, a: np.ndarray) -> np.ndarray:
        out = np.ascontiguousarray(a, dtype=np.int64).copy()
        _intt_inplace(out, self.q, self._inv, self._inv_sh, self._ninv, self._ninv_sh)
        return out

    def ntt_rows(self, a: np.ndarray, rows: np.ndarray) -> np.ndarray:
        """NTT where row k of `a` is reduced by prime index rows[k]."""
        out = np.ascontiguousarray(a, dtype=np.int64).copy()
        _ntt_inplace(out, self.q[rows], self._fwd[rows], self._fwd_sh[rows])
        return out

    def intt_rows(self, a: np.ndarray, rows: np.ndarray) -> np.ndarray:
        out = np.ascontiguousarray(a, dtype=np.int64).copy()
        _intt_inplace(out, self.q[rows], self._inv[rows], self._inv_sh[rows],
                      self._ninv[rows], self._ninv_sh[rows])
        return out

    def reduce(self, coeffs: np.ndarray) -> np.ndarray:
        """Reduce signed integer coefficients (n,) into every limb."""
        return np.mod(np.asarray(coeffs, dtype=np.int64)[None, :], self.qcol)

    def reduce_big(self, coeffs) -> np.ndarray:
        """Reduce arbitrary Python-int coefficients into every limb."""
        arr = np.asarray(coeffs, dtype=object)
        return np.stack([(arr % p).astype(np.int64) for p in self.primes])

    def sub_basis(self, k: int) -> "RnsBasis":
        return basis(self.primes[:k], self.n)


@lru_cache(maxsize=None)
def basis(primes: tuple[int, ...], n: int) -> RnsBasis:
    return RnsBasis(primes, n)


@lru_cache(maxsize=None)
def automorphism_perm(n: int, k: int) -> np.ndarray:
    """Evaluation-slot permutation realising X -> X^k in NTT form."""
    bits = n.bit_length() - 1
    two_n = 2 * n
    exps = np.array([2 * _bitrev(i, bits) + 1 for i in range(n)], dtype=np.int64)
    index_of = np.empty(two_n, dtype=np.int64)
    index_of[exps] = np.arange(n)
    return index_of[(exps * k) % two_n]


def automorphism_coeff(a: np.ndarray, k: int, q: np.ndarray | None = None) -> np.ndarray:
    """X -> X^k on coefficient-form rows; signed arithmetic when q is None."""
    n = a.shape[-1]
    idx = (np.arange(n) * k) % (2 * n)
    out = np.zeros_like(a)
    pos = idx < n
    out[..., idx[pos]] = a[..., pos]
    neg = -a[..., ~pos]
    out[..., idx[~pos] - n] = neg if q is None else np.mod(neg, q)
    return out


def mul(a: np.ndarray, b: np.ndarray, qcol: np.ndarray) -> np.ndarray:
    return (a * b) % qcol


def add(a: np.ndarray, b: np.ndarray, qcol: np.ndarray) -> np.ndarray:
    s = a + b
    return np.where(s >= qcol, s - qcol, s)


def sub(a: np.ndarray, b: np.ndarray, qcol: np.ndarray) -> np.ndarray:
    d = a - b
    return np.where(d < 0, d + qcol, d)


def neg(a: np.ndarray, qcol: np.ndarray) -> np.ndarray:
    return np.where(a == 0, a, qcol - a)


def centered(x: np.ndarray, q) -> np.ndarray:
    return np.where(x > q // 2, x - q, x)


def crt_reconstruct(residues: np.ndarray, primes: tuple[int, ...]) -> np.ndarray:
    """Centered integers (object array) from coefficient-form residues."""
    Q = 1
    for p in primes:
        Q *= p
    acc = np.zeros(residues.shape[1], dtype=object)
    for r, p in zip(residues, primes):
        qi = Q // p
        coef = qi * pow(qi, -1, p)
        acc = acc + r.astype(object) * coef
    acc = acc % Q
    half = Q // 2
    return np.where(acc > half, acc - Q, acc)

"""Chebyshev interpolation and its homomorphic evaluation.

Coefficient convention throughout: p(t) = c_0/2 + sum_{k>=1} c_k T_k(t), with
t = (2x - a - b) / (b - a) mapping [a, b] onto [-1, 1].

The encrypted evaluator is a baby-step/giant-step scheme: T_1..T_{m-1} and the
giant powers T_m, T_2m, T_4m, ... are built by the doubling identities, then the
polynomial is split recursively with T_{g+j} = 2 T_g T_j - T_{|g-j|} so each
split costs one ciphertext product. Degree 13 uses 7 ciphertext products and
at most 5 levels on top of the input.
"""

from __future__ import annotations

import math

import numpy as np


def chebyshev_nodes(a: float, b: float, degree: int) -> np.ndarray:
    k = np.arange(degree + 1)
    t = np.cos(np.pi * (k + 0.5) / (degree + 1))
    return 0.5 * (b - a) * t + 0.5 * (a + b)


def chebyshev_fit(f, a: float, b: float, degree: int) -> np.ndarray:
    """Coefficients (c_0 halved convention) of the interpolant at Chebyshev nodes."""
    if not a < b:
        raise ValueError("interval must satisfy a < b")
    if degree < 0:
        raise ValueError("degree must be non-negative")
    m = degree + 1
    theta = np.pi * (np.arange(m) + 0.5) / m
    fx = np.asarray(f(0.5 * (b - a) * np.cos(theta) + 0.5 * (a + b)), dtype=np.float64)
    k = np.arange(m)[:, None]
    return (2.0 / m) * (np.cos(k * theta[None, :]) @ fx)


def clenshaw(coeffs, x, a: float = -1.0, b: float = 1.0) -> np.ndarray:
    """Evaluate c_0/2 + sum c_k T_k(t(x)) by the Clenshaw recurrence."""
    c = np.asarray(coeffs, dtype=np.float64)
    t = (2.0 * np.asarray(x, dtype=np.float64) - a - b) / (b - a)
    b1 = np.zeros_like(t)
    b2 = np.zeros_like(t)
    for ck in c[:0:-1]:
        b1, b2 = 2.0 * t * b1 - b2 + ck, b1
    return t * b1 - b2 + 0.5 * c[0]


def to_standard(coeffs) -> np.ndarray:
    """Switch from the c_0/2 convention to plain sum a_k T_k."""
    c = np.array(coeffs, dtype=np.float64)
    if c.size:
        c[0] *= 0.5
    return c


def divide(coeffs: np.ndarray, g: int) -> tuple[np.ndarray, np.ndarray]:
    """Split p = q*T_g + r (standard convention, deg p < 2g)."""
    d = len(coeffs) - 1
    if not g <= d < 2 * g:
        raise ValueError("divide needs g <= deg < 2g")
    q = np.zeros(d - g + 1)
    r = np.array(coeffs[:g], dtype=np.float64)
    q[0] = coeffs[g]
    for k in range(g + 1, d + 1):
        # T_k = 2 T_g T_{k-g} - T_{2g-k}
        q[k - g] += 2.0 * coeffs[k]
        r[2 * g - k] -= coeffs[k]
    return q, r


def baby_step(degree: int) -> int:
    return 1 << max(1, math.ceil(math.log2(math.sqrt(degree + 1))))


class _LevelCounter:
    """Evaluator over bare level numbers, used to dry-run the level cost."""

    def mult(self, a, b):
        return min(a, b) - 1

    def mult_const(self, a, c):
        return a - 1

    def mult_int(self, a, m):
        return a

    def add_const(self, a, c):
        return a

    def add(self, a, b):
        return min(a, b)

    sub = add


def depth(coeffs, tol: float = 0.0) -> int:
    """Levels consumed by eval_normalized for these coefficients."""
    top = 1 << 20
    return top - eval_normalized(_LevelCounter(), top, coeffs, tol)


class _PowerCache:
    def __init__(self, ev, t1):
        self.ev = ev
        self.T = {1: t1}

    def get(self, k: int):
        if k in self.T:
            return self.T[k]
        ev = self.ev
        half = k // 2
        if k % 2 == 0:
            th = self.get(half)
            out = ev.add_const(ev.mult_int(ev.mult(th, th), 2), -1.0)
        else:
            lo, hi = self.get(half), self.get(half + 1)
            out = ev.sub(ev.mult_int(ev.mult(lo, hi), 2), self.get(1))
        self.T[k] = out
        return out


def _linear(ev, cache: _PowerCache, a: np.ndarray, tol: float):
    acc = None
    for k in range(1, len(a)):
        if abs(a[k]) <= tol:
            continue
        term = ev.mult_const(cache.get(k), float(a[k]))
        acc = term if acc is None else ev.add(acc, term)
    if acc is None:
        return float(a[0]) if len(a) else 0.0
    return ev.add_const(acc, float(a[0])) if a[0] != 0.0 else acc


def _recurse(ev, cache, a: np.ndarray, m: int, tol: float):
    d = len(a) - 1
    while d > 0 and abs(a[d]) <= tol:
        d -= 1
    a = a[: d + 1]
    if d < m:
        return _linear(ev, cache, a, tol)
    g = m
    while 2 * g <= d:
        g *= 2
    q, r = divide(a, g)
    qv = _recurse(ev, cache, q, m, tol)
    rv = _recurse(ev, cache, r, m, tol)
    tg = cache.get(g)
    prod = ev.mult_const(tg, qv) if isinstance(qv, float) else ev.mult(qv, tg)
    if isinstance(rv, float):
        return ev.add_const(prod, rv) if rv != 0.0 else prod
    return ev.add(prod, rv)


def eval_normalized(ev, t_ct, coeffs, tol: float = 0.0):
    """Evaluate c_0/2 + sum c_k T_k on a ciphertext already mapped into [-1, 1].

    `ev` is any evaluator exposing mult, mult_int, mult_const, add, sub and
    add_const on its ciphertext type.
    """
    a = to_standard(coeffs)
    d = len(a) - 1
    cache = _PowerCache(ev, t_ct)
    out = _recurse(ev, cache, a, baby_step(max(d, 1)), tol)
    if isinstance(out, float):
        return ev.add_const(ev.mult_const(t_ct, 0.0), out)
    return out


def eval_chebyshev(ev, ct, coeffs, a: float, b: float, tol: float = 0.0):
    """Encrypted evaluation on [a, b]: one affine step then eval_normalized."""
    t = ev.mult_const(ct, 2.0 / (b - a))
    shift = -(a + b) / (b - a)
    if shift != 0.0:
        t = ev.add_const(t, shift)
    return eval_normalized(ev, t, coeffs, tol)


def sigmoid(x):
    return 1.0 / (1.0 + np.exp(-np.asarray(x, dtype=np.float64)))


def sigmoid_coeffs(degree: int = 13, bound: float = 10.0) -> np.ndarray:
    return chebyshev_fit(sigmoid, -bound, bound, degree)

"""Canonical-embedding encoder: real slot vectors <-> integer polynomials.

Slot j is the evaluation of the polynomial at zeta^(5^j mod 2n) with
zeta = exp(i*pi/n). Both directions go through a length-n FFT after a
twist by powers of zeta.
"""

from __future__ import annotations

from functools import lru_cache

import numpy as np

from .ring import crt_reconstruct


@lru_cache(maxsize=None)
def _slot_index(n: int) -> np.ndarray:
    """t_j with 2*t_j + 1 = 5^j mod 2n, for j < n/2."""
    two_n = 2 * n
    out = np.empty(n // 2, dtype=np.int64)
    g = 1
    for j in range(n // 2):
        out[j] = (g - 1) // 2
        g = g * 5 % two_n
    return out


@lru_cache(maxsize=None)
def _twist(n: int) -> np.ndarray:
    return np.exp(1j * np.pi * np.arange(n) / n)


def embed_inverse(values, n: int) -> np.ndarray:
    """Real coefficients (float) of the polynomial whose slots are `values`."""
    v = np.asarray(values, dtype=np.float64).ravel()
    if v.size > n // 2:
        raise ValueError(f"vector of length {v.size} exceeds {n // 2} slots")
    t = _slot_index(n)
    ev = np.zeros(n, dtype=np.complex128)
    ev[t[: v.size]] = v
    ev[n - 1 - t[: v.size]] = v
    y = np.fft.fft(ev) / n
    return np.real(y * np.conj(_twist(n)))


def embed(coeffs: np.ndarray) -> np.ndarray:
    """Complex slot values of a real-coefficient polynomial."""
    c = np.asarray(coeffs, dtype=np.float64)
    n = c.size
    ev = n * np.fft.ifft(c * _twist(n))
    return ev[_slot_index(n)]


def scaled_coeffs(values, n: int, scale: float):
    """Round scale * embed_inverse(values) to integers.

    Returns an int64 array when every coefficient fits, else an object array of
    Python ints.
    """
    c = embed_inverse(values, n) * scale
    if np.max(np.abs(c), initial=0.0) < 2.0**62:
        return np.rint(c).astype(np.int64)
    return np.array([int(x) for x in np.rint(c)], dtype=object)


def limbs_for_decode(primes, scale: float, headroom_bits: int = 10) -> int:
    """Smallest prefix of `primes` whose product exceeds scale * 2^headroom."""
    need = np.log2(scale) + headroom_bits + 1
    bits = 0.0
    for k, p in enumerate(primes, 1):
        bits += np.log2(p)
        if bits > need:
            return k
    return len(primes)


def decode_coeffs(coeff_residues: np.ndarray, primes, scale: float,
                  headroom_bits: int = 10) -> np.ndarray:
    """Slot values from coefficient-form RNS residues at the given scale."""
    k = limbs_for_decode(primes, scale, headroom_bits)
    ints = crt_reconstruct(coeff_residues[:k], tuple(primes[:k]))
    c = ints.astype(np.float64) / scale
    return np.real(embed(c))

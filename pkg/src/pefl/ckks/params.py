"""Parameter sets for the RNS-CKKS scheme.

Every RNS limb is a prime below 2**31 so that residue products fit in a signed
64-bit integer. A scaling factor near 2**55 is therefore carried by a *group*
of two primes whose product is close to 2**55 ("composite scaling"); rescaling
drops one whole group, which is what a level means here.
"""

from __future__ import annotations

import bisect
import hashlib
import math
from dataclasses import dataclass
from functools import cached_property

_MR_BASES = (2, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37)


def is_prime(n: int) -> bool:
    """Deterministic Miller-Rabin for n < 3.3e24."""
    if n < 2:
        return False
    for p in _MR_BASES:
        if n % p == 0:
            return n == p
    d, s = n - 1, 0
    while d % 2 == 0:
        d //= 2
        s += 1
    for a in _MR_BASES:
        x = pow(a, d, n)
        if x in (1, n - 1):
            continue
        for _ in range(s - 1):
            x = x * x % n
            if x == n - 1:
                break
        else:
            return False
    return True


def ntt_primes_near(target: float, m: int, count: int, below: int | None = None,
                    exclude: set[int] = frozenset()) -> list[int]:
    """`count` primes p = 1 mod m, searching downward from `target`."""
    out = []
    k = int(target) // m
    while len(out) < count:
        p = k * m + 1
        if (below is None or p < below) and p not in exclude and is_prime(p):
            out.append(p)
        k -= 1
        if k <= 0:
            raise ValueError("ran out of NTT-friendly primes")
    return out


def _paired_primes(n: int, log_scale: int, levels: int, exclude: set[int]) -> list[tuple[int, int]]:
    """Pick `levels` disjoint prime pairs whose products are closest to 2**log_scale."""
    m = 2 * n
    half = 2.0 ** (log_scale / 2)
    pool = []
    # widen the window until it holds ~150k candidates; more primes give
    # products closer to the target scale
    width = 1.02
    while width < 8 and (half * width - half / width) / m < 150_000:
        width *= 1.1
    k_hi = min(int(half * width), 2**31) // m
    k_lo = int(half / width) // m
    for k in range(k_lo, k_hi + 1):
        p = k * m + 1
        if p < 2**31 and p not in exclude and is_prime(p):
            pool.append(p)
    target = 2**log_scale
    cands = []
    for a in pool:
        want = target / a
        i = bisect.bisect_left(pool, want)
        for j in (i - 1, i):
            if 0 <= j < len(pool) and pool[j] != a:
                b = pool[j]
                cands.append((abs(a * b - target) / target, min(a, b), max(a, b)))
    cands.sort()
    used: set[int] = set()
    pairs = []
    for _, a, b in cands:
        if a in used or b in used:
            continue
        pairs.append((a, b))
        used.update((a, b))
        if len(pairs) == levels:
            break
    if len(pairs) < levels:
        raise ValueError("not enough prime pairs for the requested chain")
    # deepest level first so index 1 is the first group dropped last
    return pairs


@dataclass(frozen=True)
class CkksParams:
    """Ring degree, modulus chain and noise settings.

    ``groups[0]`` is the base modulus q_0; ``groups[i]`` for i >= 1 is the
    prime group removed when rescaling from level i to level i - 1.
    """

    n: int
    groups: tuple[tuple[int, ...], ...]
    special: tuple[int, ...]
    log_scale: int = 55
    sigma: float = 3.2
    hamming_weight: int | None = None
    message_bits: int = 5
    security_note: str = (
        "desk-scale research preset; ring degree and modulus are NOT chosen for "
        "128-bit security"
    )

    def __post_init__(self):
        if self.n < 4 or self.n & (self.n - 1):
            raise ValueError("ring degree must be a power of two")
        if len(self.groups) < 2:
            raise ValueError("modulus chain needs at least two levels")
        primes = [p for g in self.groups for p in g] + list(self.special)
        if len(set(primes)) != len(primes):
            raise ValueError("chain primes must be distinct")
        for p in primes:
            if p >= 2**31 or (p - 1) % (2 * self.n):
                raise ValueError(f"prime {p} unusable for ring degree {self.n}")
        if math.prod(self.groups[0]) <= self.scale * 2**self.message_bits:
            raise ValueError("base modulus leaves no room for the message bound")
        for g in self.groups[1:]:
            if not 0.5 < math.prod(g) / self.scale < 2.0:
                raise ValueError("rescaling groups must match the scaling factor")

    @property
    def scale(self) -> float:
        return float(2**self.log_scale)

    @property
    def slots(self) -> int:
        return self.n // 2

    @property
    def max_level(self) -> int:
        return len(self.groups) - 1

    @cached_property
    def primes(self) -> tuple[int, ...]:
        """All ciphertext primes, lowest level first."""
        return tuple(p for g in self.groups for p in g)

    def limbs_at(self, level: int) -> int:
        return sum(len(g) for g in self.groups[: level + 1])

    def modulus_at(self, level: int) -> int:
        return math.prod(self.primes[: self.limbs_at(level)])

    def drop_factor(self, level: int) -> int:
        """Integer divided out when rescaling from `level`."""
        return math.prod(self.groups[level])

    @cached_property
    def fingerprint(self) -> bytes:
        h = hashlib.sha256()
        h.update(f"ckks:{self.n}:{self.log_scale}:{self.sigma}:{self.hamming_weight}".encode())
        for g in self.groups:
            h.update(repr(g).encode())
        h.update(repr(self.special).encode())
        return h.digest()

    def ciphertext_bytes(self, level: int, parts: int = 2) -> int:
        """Serialized size of a ciphertext, see :mod:`pefl.ckks.serialize`."""
        return 32 + 4 + 8 + 4 + parts * self.limbs_at(level) * self.n * 8


def make_params(n: int = 2**12, levels: int = 8, log_scale: int = 55,
                sigma: float = 3.2, hamming_weight: int | None = None) -> CkksParams:
    """Build a chain with `levels` rescalings of about 2**log_scale each.

    The base modulus uses two primes just below 2**31 (about 62 bits), which
    leaves roughly log_scale + 5 bits of room for the message at level 0.
    """
    m = 2 * n
    base = ntt_primes_near(2**31, m, 2, below=2**31)
    special = ntt_primes_near(base[-1] - 1, m, 1, below=2**31, exclude=set(base))
    taken = set(base) | set(special)
    pairs = _paired_primes(n, log_scale, levels, taken)
    return CkksParams(n=n, groups=(tuple(base),) + tuple(pairs), special=tuple(special),
                      log_scale=log_scale, sigma=sigma, hamming_weight=hamming_weight)


_PRESET_ARGS = {
    # full-size ring: 55-bit scale, 8 levels, degree 2^15
    "large": dict(n=2**15, levels=8, log_scale=55),
    # default for tests and desk-scale runs
    "desk": dict(n=2**12, levels=8, log_scale=55),
    # small ring for fast unit tests of ring/threshold logic
    "toy": dict(n=2**8, levels=8, log_scale=55),
}

_cache: dict[str, CkksParams] = {}


def preset(name: str = "desk") -> CkksParams:
    if name not in _PRESET_ARGS:
        raise KeyError(f"unknown CKKS preset {name!r}; choose from {sorted(_PRESET_ARGS)}")
    if name not in _cache:
        _cache[name] = make_params(**_PRESET_ARGS[name])
    return _cache[name]

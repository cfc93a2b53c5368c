import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from numpy.polynomial import chebyshev as npcheb

from pefl.ckks import chebyshev, encoding
from pefl.ckks.params import is_prime, make_params, preset
from pefl.ckks.ring import automorphism_coeff, automorphism_perm, basis, crt_reconstruct, mul
from pefl.ckks.scheme import CkksContext, LevelExhausted, MissingKey, ParamsMismatch
from pefl.ckks.serialize import ciphertext_from_bytes, ciphertext_to_bytes

from oracles import negacyclic_mul


# ---------------------------------------------------------------- parameters

def test_primes_are_ntt_friendly(desk):
    for p in desk.primes + desk.special:
        assert is_prime(p)
        assert (p - 1) % (2 * desk.n) == 0
    assert desk.slots == 2048 and desk.max_level == 8


def test_rescale_groups_match_scale(desk):
    for level in range(1, desk.max_level + 1):
        assert 0.5 < desk.drop_factor(level) / desk.scale < 2.0


def test_unknown_preset():
    with pytest.raises(KeyError):
        preset("huge")


# ---------------------------------------------------------------- ring

def test_ntt_roundtrip_and_negacyclic_product():
    toy = preset("toy")
    B = basis(toy.primes[:2], toy.n)
    rng = np.random.default_rng(0)
    x = rng.integers(-50, 50, toy.n)
    y = rng.integers(-5, 6, toy.n)
    X, Y = B.reduce(x), B.reduce(y)
    assert np.array_equal(B.intt(B.ntt(X)), X)
    z = B.intt(mul(B.ntt(X), B.ntt(Y), B.qcol))
    for limb, q in enumerate(B.primes):
        assert np.array_equal(z[limb].astype(object), negacyclic_mul(x % q, y % q, q))


@settings(max_examples=25, deadline=None)
@given(st.integers(min_value=0, max_value=2**31), st.sampled_from([3, 5, 25, 127]))
def test_automorphism_matches_in_both_domains(seed, k):
    toy = preset("toy")
    B = basis(toy.primes[:1], toy.n)
    a = np.random.default_rng(seed).integers(0, B.primes[0], (1, toy.n))
    direct = B.ntt(automorphism_coeff(a, k, B.qcol))
    assert np.array_equal(direct[0], B.ntt(a)[0][automorphism_perm(toy.n, k)])


@settings(max_examples=25, deadline=None)
@given(st.lists(st.integers(min_value=-2**80, max_value=2**80), min_size=8, max_size=8))
def test_crt_reconstructs_signed_integers(values):
    primes = preset("toy").primes[:4]
    residues = np.stack([np.array([v % p for v in values], dtype=np.int64) for p in primes])
    assert list(crt_reconstruct(residues, primes)) == values


# ---------------------------------------------------------------- encoding

@settings(max_examples=20, deadline=None)
@given(st.integers(min_value=0, max_value=2**31))
def test_canonical_embedding_inverts(seed):
    n = 64
    v = np.random.default_rng(seed).uniform(-4, 4, n // 2)
    coeffs = encoding.embed_inverse(v, n)
    assert np.allclose(encoding.embed(coeffs).real, v, atol=1e-9)


# ---------------------------------------------------------------- scheme

def test_encrypt_decrypt_identity(ctx, keypair, rng):
    sk, keys = keypair
    x = rng.uniform(-8, 8, ctx.params.slots)
    ct = ctx.encrypt_values(x, keys.pk, rng)
    assert np.max(np.abs(ctx.decrypt_values(ct, sk) - x)) < 1e-8


def test_homomorphic_ops(ctx, keypair, rng):
    sk, keys = keypair
    x = rng.uniform(-2, 2, ctx.params.slots)
    y = rng.uniform(-2, 2, ctx.params.slots)
    cx, cy = (ctx.encrypt_values(v, keys.pk, rng) for v in (x, y))
    dec = lambda c: ctx.decrypt_values(c, sk)  # noqa: E731
    assert np.allclose(dec(ctx.add(cx, cy)), x + y, atol=1e-8)
    assert np.allclose(dec(ctx.sub(cx, cy)), x - y, atol=1e-8)
    assert np.allclose(dec(ctx.add_const(cx, 0.75)), x + 0.75, atol=1e-8)
    assert np.allclose(dec(ctx.mult_int(cx, 3)), 3 * x, atol=1e-8)
    prod = ctx.mult(cx, cy, keys.rlk)
    assert prod.level == cx.level - 1
    assert np.allclose(dec(prod), x * y, atol=1e-8)
    assert np.allclose(dec(ctx.mult_plain(cx, y)), x * y, atol=1e-8)
    assert np.allclose(dec(ctx.mult_const(cx, -0.3)), -0.3 * x, atol=1e-8)
    for r in (1, 5, -1):
        assert np.allclose(dec(ctx.rotate(cx, r, keys.rot)), np.roll(x, -r), atol=1e-8)


def test_rescale_keeps_value_and_drops_one_level(ctx, keypair, rng):
    sk, keys = keypair
    x = rng.uniform(-4, 4, ctx.params.slots)
    for level in (8, 4, 1):
        d = ctx.params.drop_factor(level)
        ct = ctx.encrypt(ctx.encode(x, scale=ctx.params.scale * d, level=level), keys.pk, rng)
        out = ctx.rescale(ct)
        assert out.level == level - 1
        assert np.max(np.abs(ctx.decrypt_values(out, sk) - x)) < 1e-4


def test_level_exhaustion_and_missing_keys(ctx, keypair, rng):
    sk, keys = keypair
    ct = ctx.encrypt_values(np.ones(4), keys.pk, rng, level=0)
    with pytest.raises(LevelExhausted):
        ctx.rescale(ct)
    with pytest.raises(LevelExhausted):
        ctx.mult(ct, ct, keys.rlk)
    with pytest.raises(MissingKey):
        ctx.rotate(ctx.encrypt_values(np.ones(4), keys.pk, rng), 11, keys.rot)


def test_message_bound_enforced(ctx):
    with pytest.raises(ValueError):
        ctx.encode(np.array([1e3]))


def test_serialization_roundtrip_and_mismatch(ctx, keypair, rng):
    sk, keys = keypair
    ct = ctx.encrypt_values(rng.uniform(-1, 1, 16), keys.pk, rng, level=3)
    buf = ciphertext_to_bytes(ct)
    assert len(buf) == ctx.params.ciphertext_bytes(3)
    back = ciphertext_from_bytes(buf, ctx.params)
    assert np.array_equal(back.parts, ct.parts) and back.level == 3
    with pytest.raises(ParamsMismatch):
        ciphertext_from_bytes(buf, preset("toy"))
    with pytest.raises(ValueError):
        ciphertext_from_bytes(buf[:-8], ctx.params)


def test_foreign_ciphertext_rejected(ctx, keypair, rng):
    other = CkksContext(make_params(n=2**12, levels=4))
    sk, keys = keypair
    ct = ctx.encrypt_values(np.ones(4), keys.pk, rng)
    with pytest.raises(ParamsMismatch):
        other.decrypt(ct, sk)


# ---------------------------------------------------------------- chebyshev

def test_sigmoid_fit_matches_independent_interpolant():
    c = chebyshev.sigmoid_coeffs(13, 10.0)
    ref = npcheb.chebinterpolate(lambda t: 1.0 / (1.0 + np.exp(-10.0 * t)), 13)
    assert np.allclose(chebyshev.to_standard(c), ref, atol=1e-12)


class _Plain:
    """Evaluator on (values, level) pairs that mirrors ciphertext level rules."""

    def mult(self, a, b):
        return a[0] * b[0], min(a[1], b[1]) - 1

    def mult_int(self, a, m):
        return a[0] * m, a[1]

    def mult_const(self, a, c):
        return a[0] * c, a[1] - 1

    def add(self, a, b):
        return a[0] + b[0], min(a[1], b[1])

    def sub(self, a, b):
        return a[0] - b[0], min(a[1], b[1])

    def add_const(self, a, c):
        return a[0] + c, a[1]


@settings(max_examples=30, deadline=None)
@given(st.integers(min_value=0, max_value=24), st.integers(min_value=0, max_value=10**6))
def test_baby_step_giant_step_equals_clenshaw(degree, seed):
    coeffs = np.random.default_rng(seed).normal(size=degree + 1)
    x = np.linspace(-3, 3, 41)
    val, level = chebyshev.eval_chebyshev(_Plain(), (x, 30), coeffs, -3, 3)
    assert np.allclose(val, chebyshev.clenshaw(coeffs, x, -3, 3), atol=1e-8 * max(1, np.abs(coeffs).sum()))
    assert 30 - level == chebyshev.depth(coeffs) + 1

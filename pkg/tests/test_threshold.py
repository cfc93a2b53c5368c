import numpy as np
import pytest

from pefl import threshold as th
from pefl.ckks.scheme import LevelExhausted


@pytest.fixture(scope="module")
def trio(ctx):
    parties = th.make_parties(ctx, 3, seed=11)
    keys = th.collective_keys(ctx, parties, seed=11, rotations=[1, 4])
    return parties, keys


def test_collective_keys_encrypt_mult_rotate(ctx, trio, rng):
    parties, keys = trio
    x = rng.uniform(-4, 4, ctx.params.slots)
    y = rng.uniform(-4, 4, ctx.params.slots)
    cx = ctx.encrypt_values(x, keys.pk, rng)
    cy = ctx.encrypt_values(y, keys.pk, rng)
    assert np.max(np.abs(th.threshold_decrypt(ctx, parties, cx) - x)) < 1e-8
    prod = ctx.mult(cx, cy, keys.rlk)
    assert np.max(np.abs(th.threshold_decrypt(ctx, parties, prod) - x * y)) < 1e-8
    rot = ctx.rotate(cx, 4, keys.rot)
    assert np.max(np.abs(th.threshold_decrypt(ctx, parties, rot) - np.roll(x, -4))) < 1e-8


def test_partial_share_sets_do_not_decrypt(ctx, trio, rng):
    parties, keys = trio
    x = rng.uniform(-1, 1, ctx.params.slots)
    ct = ctx.encrypt_values(x, keys.pk, rng)
    for subset in ([0, 1], [0, 2], [1, 2], [1]):
        sk = th.collective_secret(ctx, [parties[i] for i in subset])
        assert np.max(np.abs(ctx.decrypt_values(ct, sk) - x)) > 1e3 * 1e-8


def test_missing_partial_is_an_error(ctx, trio, rng):
    parties, keys = trio
    ct = ctx.encrypt_values(np.ones(8), keys.pk, rng)
    partials = [th.partial_decrypt(ctx, p, ct) for p in parties[:2]]
    with pytest.raises(th.MissingContribution):
        th.combine_partials(ctx, ct, partials, 3)
    with pytest.raises(th.MissingContribution):
        th.combine_partials(ctx, ct, partials + [partials[0]], 3)


def test_flooding_noise_has_predicted_spread(ctx, trio, rng):
    parties, keys = trio
    x = rng.uniform(-1, 1, ctx.params.slots)
    ct = ctx.encrypt_values(x, keys.pk, rng, level=3)
    err = th.threshold_decrypt(ctx, parties, ct, th.FloodConfig(kappa=32)) - x
    predicted = th.flood_std(ctx.params, 3, 32)
    assert 0.7 < np.std(err) / predicted < 1.3


def test_key_generation_is_reproducible(ctx):
    a = th.dkg_public_key(ctx, th.make_parties(ctx, 3, seed=4), seed=4)
    b = th.dkg_public_key(ctx, th.make_parties(ctx, 3, seed=4), seed=4)
    assert np.array_equal(a.b, b.b) and np.array_equal(a.a, b.a)


def test_dealer_and_distributed_relinearization_agree(ctx, trio, rng):
    parties, keys = trio
    dealer = th.dkg_relin_key(ctx, parties, 11, mode="dealer")
    x = rng.uniform(-2, 2, ctx.params.slots)
    cx = ctx.encrypt_values(x, keys.pk, rng)
    for rlk in (keys.rlk, dealer):
        out = th.threshold_decrypt(ctx, parties, ctx.mult(cx, cx, rlk))
        assert np.max(np.abs(out - x * x)) < 1e-8


def test_bootstrap_refreshes_and_checks_headroom(ctx, trio, rng):
    parties, keys = trio
    x = rng.uniform(-3, 3, ctx.params.slots)
    low = ctx.encrypt_values(x, keys.pk, rng, level=2)
    fresh = th.collective_bootstrap(ctx, low, parties, seed=11, round_id=500)
    assert fresh.level == ctx.params.max_level
    assert np.max(np.abs(th.threshold_decrypt(ctx, parties, fresh) - x)) < 1e-3
    floor = th.bootstrap_min_level(ctx.params, 3, th.FloodConfig())
    if floor > 0:
        with pytest.raises(LevelExhausted):
            th.collective_bootstrap(ctx, ctx.encrypt_values(x, keys.pk, rng, level=floor - 1),
                                    parties, seed=11, round_id=501)
    bs = th.Bootstrapper(ctx, 11, 502, th.FloodConfig())
    with pytest.raises(th.MissingContribution):
        bs.combine(low, [bs.share(p, low) for p in parties[:2]], 3)

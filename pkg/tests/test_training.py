import numpy as np
import pytest

from pefl import nn
from pefl.backend import make_backend
from pefl.ckks.params import preset
from pefl.protocol.partition import LayerPartition, all_partitions, delayed_encryption_schedule
from pefl.protocol.training import Session, global_training

from train_checks import (SMALL_ARCH, audit_partitions, bitwise_equal, faulty_run, plaintext_vs_oracle,
                          small_parts)


@pytest.fixture(scope="module")
def lattice_session():
    be = make_backend("lattice", preset("desk"), 3, seed=0, key_mode="dealer")
    s = Session(SMALL_ARCH, be, 3)
    s.setup_keys()
    return s


@pytest.mark.parametrize("secret", [{3}, {1, 2}, {2, 3}, {1, 2, 3}])
def test_encrypted_pass_matches_plaintext_gradients(lattice_session, secret):
    s = lattice_session
    model = nn.init_model(SMALL_ARCH, seed=3)
    rng = np.random.default_rng(0)
    x, y = rng.random(6), np.array([0.0, 1.0, 0.0])
    ref = nn.backprop(model, nn.feedforward(model, x), y)
    part = LayerPartition(3, secret)
    s.round_id, s.party = 1, 0
    got = s.training_pass(s.encrypt_model(model, part), x, y, part)
    for j in range(3):
        for g, want in ((got.dw[j], ref.dw[j]), (got.db[j], ref.db[j])):
            v = s.reveal(g, "test").value if g.encrypted else g.value
            assert np.max(np.abs(v - want)) < 5e-3


def test_every_partition_passes_both_audits():
    for p, status, taint, checked in audit_partitions(rounds=2, per_party=2):
        assert checked > 0
        assert status == [], (p.label(), status[:3])
        assert taint == [], p.label()


def test_skipped_encryption_is_caught():
    res = faulty_run()
    assert len(res.taint_violations) >= 1
    assert res.status_violations


def test_plaintext_mode_is_bitwise_fedavg():
    parts, test = small_parts(per_party=4)
    cfg = nn.SgdConfig(lr=0.3, global_rounds=5, seed=4, local_epochs=2)
    res, W, B = plaintext_vs_oracle(SMALL_ARCH, parts, test, cfg)
    assert bitwise_equal(res.model, W, B)
    assert res.collective_counts == {"decrypt": 0, "bootstrap": 0}


def test_encrypted_training_tracks_plaintext():
    parts, test = small_parts(per_party=4)
    cfg = nn.SgdConfig(lr=0.3, global_rounds=4, seed=4)
    runs = {}
    for T in (3, 0):
        be = make_backend("simulated", preset("desk"), 3, seed=0)
        runs[T] = global_training(Session(SMALL_ARCH, be, 3), parts, test, cfg, LayerPartition.suffix(3, T))
    for a, b in zip(runs[3].model.layers, runs[0].model.layers):
        assert np.max(np.abs(a.w - b.w)) < 5e-2
    assert runs[0].collective_counts["bootstrap"] > 0


def test_delayed_schedule_switches_representation():
    parts, test = small_parts(per_party=2)
    cfg = nn.SgdConfig(lr=0.3, global_rounds=3, seed=0)
    sched = delayed_encryption_schedule(LayerPartition(3, {3}), 3, 3)
    be = make_backend("simulated", preset("desk"), 3, seed=0)
    res = global_training(Session(SMALL_ARCH, be, 3), parts, test, cfg, sched)
    assert [m["secret"] for m in res.metrics] == ["", "", "3"]
    assert res.status_violations == [] and res.taint_violations == []
    assert res.metrics[1]["decrypts"] == 0 < res.metrics[2]["decrypts"]


def test_traffic_grows_with_encryption():
    parts, test = small_parts(per_party=1)
    cfg = nn.SgdConfig(lr=0.3, global_rounds=1, seed=0)
    totals = []
    for T in (3, 2, 1, 0):
        be = make_backend("simulated", preset("desk"), 3, seed=0)
        res = global_training(Session(SMALL_ARCH, be, 3), parts, test, cfg, LayerPartition.suffix(3, T))
        totals.append((res.simulated_seconds, res.transport.log.total_sent()))
    assert all(a[0] < b[0] and a[1] < b[1] for a, b in zip(totals, totals[1:]))


def test_input_validation():
    parts, test = small_parts(per_party=1)
    be = make_backend("simulated", preset("desk"), 3, seed=0)
    s = Session(SMALL_ARCH, be, 3)
    cfg = nn.SgdConfig(global_rounds=1)
    with pytest.raises(ValueError):
        global_training(s, parts[:2], test, cfg, LayerPartition(3, set()))
    with pytest.raises(ValueError):
        global_training(s, parts, test, nn.SgdConfig(batch_size=5), LayerPartition(3, set()))
    assert len(all_partitions(3)) == 8

import numpy as np
import pytest

from pefl import data, nn
from pefl.attacks import features as F
from pefl.attacks.inversion import InversionBlocked, cosine, input_gradient, model_inversion, softmax
from pefl.attacks.membership import (ImbalanceError, curves, epoch_sweep, eval_membership_per_layer,
                                     train_membership_attack)
from pefl.attacks.property import property_inference, train_random_forest
from pefl.attacks.report import AttackReport
from pefl.protocol.partition import LayerPartition, all_partitions

from attack_checks import inversion_cosines, planted_property, prototype_target
from oracles import finite_difference


@pytest.fixture(scope="module")
def proto():
    return prototype_target()


def test_inversion_blocked_exactly_when_first_layer_secret(proto):
    model, _ = proto
    for p in all_partitions(3):
        mask = F.ExposureMask.from_partition(p)
        if p.is_secret(1):
            with pytest.raises(InversionBlocked):
                model_inversion(model, 0, steps=2, mask=mask)
        else:
            assert model_inversion(model, 0, steps=2, mask=mask).x.shape == (64,)


def test_inversion_recovers_class_means(proto):
    model, ds = proto
    assert inversion_cosines(model, ds).min() > 0.8


def test_input_gradient_matches_finite_differences(proto):
    model, _ = proto
    x = np.random.default_rng(0).random(64)

    def ce():
        return -np.log(softmax(nn.feedforward(model, x).u[-1])[2])

    g, _ = input_gradient(model, x, 2)
    (fd,) = finite_difference(ce, [x], h=1e-6)
    assert np.max(np.abs(g - fd)) < 1e-6
    assert cosine([1, 0], [2, 0]) == pytest.approx(1.0)


def test_gradient_summary_is_lossless_for_positive_inputs():
    model = nn.init_model(nn.ModelArch((5, 4, 3)), seed=1)
    x = np.random.default_rng(2).random(5)
    g = nn.backprop(model, nn.feedforward(model, x), np.array([0, 1.0, 0]))
    s = F.gradient_summary(g.dw[0], g.db[0])
    # rebuild dw from db and row norms
    rebuilt = np.outer(s[4:] / np.linalg.norm(g.db[0]), g.db[0])
    assert np.allclose(rebuilt, g.dw[0])


def test_feature_availability():
    model = nn.init_model(nn.ModelArch((5, 4, 3)), seed=1)
    x, y = np.ones(5), np.array([1.0, 0, 0])
    hidden_out = F.ExposureMask.from_partition(LayerPartition(2, {2}))
    with pytest.raises(F.FeatureUnavailable):
        F.build_features(model, x, y, hidden_out, want_gradients=True)
    feats = F.build_features(model, x, y, hidden_out, want_gradients=False)
    assert set(feats.outputs) == {1} and feats.loss is None
    with pytest.raises(F.FeatureUnavailable):
        feats.vector(kind=F.GRADIENT)
    full = F.build_features(model, x, y, F.ExposureMask.white_box(2))
    assert full.vector([2], F.OUTPUT).size == 3 + 3
    assert full.vector([2], F.GRADIENT).size == 3 + (3 + 4) + 3 + 1
    with pytest.raises(ValueError):
        F.ExposureMask(2, {3})


def test_membership_attack_separates_obvious_signal():
    rng = np.random.default_rng(0)
    members = rng.normal(1.0, 0.5, (60, 3))
    nonmembers = rng.normal(-1.0, 0.5, (60, 3))
    clf = train_membership_attack(members[:30], nonmembers[:30])
    assert np.mean(clf.predict(members[30:])) > 0.9
    with pytest.raises(ImbalanceError):
        train_membership_attack(members, nonmembers[:10])


def test_membership_report_and_sweep():
    ds, _ = data.synth_dataset(3, 6, 2.0, 0.5, 80, seed=0)
    model = nn.init_model(nn.ModelArch((6, 5, 3)), seed=0)
    members, nonmembers = ds.take(range(40)), ds.take(range(40, 80))
    mask = F.ExposureMask.from_partition(LayerPartition(2, {2}))
    rep = eval_membership_per_layer(model, members, nonmembers, runs=1, mask=mask)
    assert [(r.layer, r.kind) for r in rep.rows] == [(1, "output")]
    sweep = epoch_sweep({0: model, 10: model}, lambda m, g: eval_membership_per_layer(
        m, members, nonmembers, kinds=("output",), runs=1, epoch=g), cadence=10)
    epochs, arr = curves(sweep, 2)
    assert epochs == [0, 10] and arr.shape == (2, 2)
    with pytest.raises(KeyError):
        epoch_sweep({0: model}, None, epochs=[5])


def test_property_inference_signal_and_null():
    planted, shuffled = planted_property()
    assert planted.max() > 0.7
    assert abs(shuffled.mean() - 0.5) <= 0.05


def test_property_inputs_are_checked():
    with pytest.raises(ImbalanceError):
        property_inference({1: np.zeros((10, 2))}, np.r_[np.ones(8), np.zeros(2)])
    with pytest.raises(ValueError):
        train_random_forest(np.zeros((4, 2)), np.ones(4))


def test_report_roundtrip():
    rep = AttackReport()
    rep.add("membership", 3, "output", 30, [0.6, 0.7])
    rep.add_blocked("membership", 1, "gradient", 30)
    back = AttackReport.from_csv(rep.to_csv())
    assert back.mean(layer=3) == pytest.approx(0.65)
    assert back.get(layer=1)[0].mean_acc == "blocked"
    with pytest.raises(ValueError):
        rep.add("membership", 1, "output", 0, [1.2])

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from pefl import nn

from nn_checks import backprop_fd_error, random_model as _random_model


@settings(max_examples=15, deadline=None)
@given(st.integers(0, 10**6),
       st.lists(st.integers(1, 6), min_size=2, max_size=4),
       st.integers(0, 4),
       st.booleans())
def test_backprop_matches_finite_differences(seed, widths, batch, linear_out):
    depth = len(widths) - 1
    acts = ("sigmoid",) * (depth - 1) + (("identity",) if linear_out else ("sigmoid",))
    assert backprop_fd_error(seed, widths, acts, batch) < 1e-4


def test_batched_gradient_is_mean_of_single_gradients():
    model = _random_model(3, (6, 5, 3), None)
    rng = np.random.default_rng(0)
    x = rng.normal(size=(7, 6))
    y = nn.one_hot(rng.integers(0, 3, 7), 3)
    batch = nn.backprop(model, nn.feedforward(model, x), y)
    singles = [nn.backprop(model, nn.feedforward(model, x[i]), y[i]) for i in range(7)]
    avg = nn.average_gradients(singles)
    for a, b in zip(batch.dw + batch.db, avg.dw + avg.db):
        assert np.allclose(a, b)


def test_sigmoid_is_stable_and_symmetric():
    x = np.array([-800.0, -30.0, 0.0, 30.0, 800.0])
    s = nn.sigmoid(x)
    assert np.all(np.isfinite(s))
    assert np.allclose(s + nn.sigmoid(-x), 1.0)
    assert s[2] == 0.5


def test_sgd_update_with_weight_decay():
    model = _random_model(1, (3, 2), None)
    g = nn.GradientSet([np.ones((3, 2))], [np.ones(2)])
    cfg = nn.SgdConfig(lr=0.1, weight_decay=0.5, batch_size=2)
    out = nn.sgd_update(model, g, cfg)
    assert np.allclose(out.layers[0].w, (1 - 0.1 * 0.5 / 2) * model.layers[0].w - 0.1)
    assert np.allclose(out.layers[0].b, model.layers[0].b - 0.1)


def test_invalid_configurations():
    with pytest.raises(ValueError):
        nn.ModelArch((4,))
    with pytest.raises(ValueError):
        nn.ModelArch((4, 3), ("relu",))
    with pytest.raises(ValueError):
        nn.SgdConfig(lr=-1)
    with pytest.raises(ValueError):
        nn.SgdConfig(batch_size=0)
    model = _random_model(0, (4, 3), None)
    with pytest.raises(ValueError):
        nn.feedforward(model, np.ones(5))
    with pytest.raises(ValueError):
        nn.backprop(model, nn.feedforward(model, np.ones(4)), np.ones(2))


def test_checkpoint_roundtrip(tmp_path):
    model = _random_model(5, (8, 4, 2), ("sigmoid", "identity"))
    nn.save_model(model, tmp_path / "m.json")
    back = nn.load_model(tmp_path / "m.json")
    assert back.arch == model.arch
    for a, b in zip(model.layers, back.layers):
        assert np.array_equal(a.w, b.w) and np.array_equal(a.b, b.b)
    bad = nn.model_to_dict(model)
    bad["version"] = 99
    with pytest.raises(ValueError):
        nn.model_from_dict(bad)

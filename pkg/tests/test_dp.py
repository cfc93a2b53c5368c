import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from pefl import dp, nn
from pefl.protocol.partition import LayerPartition

from dp_checks import DP_ARCH, mechanism_check
from train_checks import small_parts


def test_mechanism_statistics():
    fitted, b, clip_exact, untouched = mechanism_check()
    assert abs(fitted / b - 1) < 0.05
    assert clip_exact and untouched


def test_noise_scale_formula():
    part = LayerPartition(3, {2, 3})
    c = dp.count_exposed(part, DP_ARCH)
    assert c == 6 * 5 + 5
    assert dp.laplace_scale(c, 0.1, 0.5) == pytest.approx(2 * 35 * 0.1 / 0.5)


@settings(max_examples=30, deadline=None)
@given(st.floats(0.01, 5.0), st.integers(0, 1000))
def test_clipping_bounds_every_value(gamma, seed):
    rng = np.random.default_rng(seed)
    g = {"w2": rng.normal(0, 3, (5, 4))}
    cfg = dp.DpConfig(epsilon=1e300, gamma=gamma)
    out = dp.perturb_exposed_gradients(g, LayerPartition(3, set()), DP_ARCH, cfg, rng)["w2"]
    assert np.max(np.abs(out)) <= gamma


def test_per_tensor_bounds_and_disabled():
    rng = np.random.default_rng(0)
    g = {"w1": np.full((6, 5), 9.0), "b1": np.full(5, 9.0)}
    cfg = dp.DpConfig(epsilon=1e300, gamma={"w1": 0.5, "b1": 0.25})
    out = dp.perturb_exposed_gradients(g, LayerPartition(3, {2, 3}), DP_ARCH, cfg, rng)
    assert np.all(out["w1"] == 0.5) and np.all(out["b1"] == 0.25)
    off = dp.perturb_exposed_gradients(g, LayerPartition(3, set()), DP_ARCH, dp.DpConfig(enabled=False), rng)
    assert off["w1"] is g["w1"]
    with pytest.raises(ValueError):
        dp.DpConfig(epsilon=0)
    with pytest.raises(ValueError):
        dp.DpConfig(gamma=-1.0)
    with pytest.raises(ValueError):
        dp.perturb_exposed_gradients(g, LayerPartition(3, set()), DP_ARCH, dp.DpConfig(), rng)


def test_clip_bound_estimation():
    hist = [{"w1": np.array([1.0, -3.0])}, {"w1": np.array([2.0, 5.0])}]
    assert dp.estimate_clip_bounds(hist)["w1"] == pytest.approx(2.5)
    per = dp.estimate_clip_bounds(hist, per_parameter=True)["w1"]
    assert np.allclose(per, [1.5, 4.0])
    with pytest.raises(ValueError):
        dp.estimate_clip_bounds([])
    parts, _ = small_parts(per_party=2)
    bounds = dp.pilot_clip_bounds(DP_ARCH, parts, nn.SgdConfig(lr=0.3), rounds=2)
    assert set(bounds) == {"w1", "b1", "w2", "b2", "w3", "b3"}
    assert all(v > 0 for v in bounds.values())

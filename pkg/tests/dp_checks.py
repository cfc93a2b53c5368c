"""Statistics of the Laplace mechanism on exposed gradients."""

import numpy as np

from pefl import dp, nn
from pefl.protocol.partition import LayerPartition

DP_ARCH = nn.ModelArch((6, 5, 4, 3))


def mechanism_check(epsilon=2.0, gamma=0.05, draws=100_000, seed=0):
    """Returns (fitted scale, analytic scale, clipping exact, secret layers untouched)."""
    part = LayerPartition(3, {3})
    cfg = dp.DpConfig(epsilon=epsilon, gamma=gamma)
    c = dp.count_exposed(part, DP_ARCH)
    b = float(dp.laplace_scale(c, gamma, epsilon))
    rng = np.random.default_rng(seed)
    # zero gradients: the output is pure noise, so its scale is measured directly
    zeros = {"w1": np.zeros(draws), "b1": np.zeros(1)}
    fitted = dp.fit_laplace_scale(dp.perturb_exposed_gradients(zeros, part, DP_ARCH, cfg, rng)["w1"])

    # replaying the same noise draws isolates the clipping step exactly
    big = {"w1": np.linspace(-1, 1, 41)}
    got = dp.perturb_exposed_gradients(big, part, DP_ARCH, cfg, np.random.default_rng(7))["w1"]
    noise = np.random.default_rng(7).laplace(0.0, 1.0, 41) * b
    clip_exact = np.array_equal(got, np.clip(big["w1"], -gamma, gamma) + noise)

    secret_in = {"w3": rng.normal(size=(4, 3)), "b3": rng.normal(size=3), "w1": rng.normal(size=(6, 5))}
    out = dp.perturb_exposed_gradients(secret_in, part, DP_ARCH, cfg, rng)
    untouched = (out["w3"] is secret_in["w3"] and out["b3"] is secret_in["b3"]
                 and not np.array_equal(out["w1"], secret_in["w1"]))
    return fitted, b, clip_exact, untouched

"""Backpropagation against central finite differences."""

import numpy as np

from pefl import nn

from oracles import finite_difference


def random_model(seed, widths, acts=None):
    return nn.init_model(nn.ModelArch(widths, acts), "normal", seed)


def backprop_fd_error(seed, widths, acts=None, batch=0):
    """Largest gradient discrepancy relative to the largest finite-difference entry."""
    rng = np.random.default_rng(seed)
    model = random_model(seed, widths, acts)
    x = rng.normal(size=(batch, widths[0])) if batch else rng.normal(size=widths[0])
    y = rng.uniform(0, 1, size=(batch, widths[-1])) if batch else rng.uniform(0, 1, widths[-1])
    g = nn.backprop(model, nn.feedforward(model, x), y)

    def loss():
        return nn.mse_loss(nn.predict(model, x), y) / (batch or 1)

    params = [p.w for p in model.layers] + [p.b for p in model.layers]
    fd = finite_difference(loss, params, h=1e-5)
    ana = g.dw + g.db
    num = max(np.max(np.abs(a - f)) for a, f in zip(ana, fd))
    den = max(max(np.max(np.abs(f)) for f in fd), 1e-8)
    return num / den

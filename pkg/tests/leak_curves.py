"""Synthetic per-layer membership accuracy curves shaped like a slowly
overfitting model: early layers stay near chance, the last layer rises and
crosses 0.6 at epoch 90."""

import numpy as np

EPOCHS = np.arange(10, 301, 10)
LAST_LAYER_ANCHORS = ([0, 30, 60, 80, 90, 150, 300], [0.50, 0.53, 0.565, 0.59, 0.605, 0.63, 0.645])


def leak_curves(seed=0, shift=0):
    """(epochs, 3) accuracies at EPOCHS; `shift` delays the last-layer rise."""
    rng = np.random.default_rng(seed)
    last = np.interp(EPOCHS - shift, *LAST_LAYER_ANCHORS)
    first = 0.49 + 0.02 * rng.random(len(EPOCHS))
    middle = 0.50 + 0.03 * rng.random(len(EPOCHS))
    return np.stack([first, middle, last], axis=1)

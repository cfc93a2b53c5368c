"""Synthetic targets for the inversion and property attacks."""

import numpy as np

from pefl import data, nn
from pefl.attacks.inversion import cosine, model_inversion
from pefl.attacks.property import batch_gradients, property_inference

PROTO_ARCH = nn.ModelArch((64, 30, 20, 4))


def train_plain(arch, ds, epochs, lr=0.5, seed=0, n=None):
    model = nn.init_model(arch, seed=seed)
    cfg = nn.SgdConfig(lr=lr)
    rng = np.random.default_rng(seed)
    n = len(ds) if n is None else n
    for _ in range(epochs):
        for i in rng.permutation(n):
            model = nn.sgd_update(model, nn.backprop(model, nn.feedforward(model, ds.x[i]), ds.y[i]), cfg)
    return model


def prototype_target(seed=0, epochs=20):
    ds, _ = data.synth_dataset(4, 64, 1.0, 0.15, 1000, seed)
    return train_plain(PROTO_ARCH, ds, epochs, seed=seed), ds


def inversion_cosines(model, ds, mask=None):
    """Cosine between each class reconstruction and that class's mean input."""
    out = []
    for c in range(ds.classes):
        r = model_inversion(model, c, steps=500, step_size=0.01, mask=mask, init=0.0, clip=None,
                            target_confidence=1.1)
        out.append(cosine(r.x, ds.x[ds.labels == c].mean(axis=0)))
    return np.array(out)


def planted_property(seed=0, shift=1.0, n_batches=400, epochs=5):
    """Per-layer property accuracy, and shuffled-label accuracies over five permutations."""
    ds, prop = data.synth_dataset(4, 64, 1.0, 0.15, 1500, seed, property_shift=shift)
    model = train_plain(PROTO_ARCH, ds, epochs, seed=seed, n=1000)
    feats, labels = batch_gradients(model, ds, prop, n_batches, np.random.default_rng(seed + 1))
    planted = [r.mean_acc for r in property_inference(feats, labels, seed=seed).rows]
    shuffled = []
    for s in range(5):
        perm = np.random.default_rng(100 + s).permutation(labels)
        shuffled += [r.mean_acc for r in property_inference(feats, perm, seed=seed).rows]
    return np.array(planted), np.array(shuffled)

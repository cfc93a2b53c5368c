"""Reference implementations written independently of the package code paths."""

import numpy as np


def negacyclic_mul(a, b, q):
    """Schoolbook product in Z_q[x]/(x^n + 1)."""
    a = [int(v) for v in a]
    b = [int(v) for v in b]
    n = len(a)
    out = [0] * n
    for i, ai in enumerate(a):
        if ai == 0:
            continue
        for j, bj in enumerate(b):
            k = i + j
            if k < n:
                out[k] += ai * bj
            else:
                out[k - n] -= ai * bj
    return np.array([v % q for v in out], dtype=object)


def stable_sigmoid(x):
    # same elementary operations as the library, so plaintext runs match bit for bit
    x = np.asarray(x, dtype=np.float64)
    return np.where(x >= 0, 1.0 / (1.0 + np.exp(-np.abs(x))), np.exp(-np.abs(x)) / (1.0 + np.exp(-np.abs(x))))


def straight_line_fedavg(weights, biases, parts, lr, rounds, seed, local_epochs=1):
    """FedAvg with per-example SGD on 0.5*||sigmoid net - y||^2, written out by hand.

    weights/biases: lists of arrays (layer 1 first). parts: list of (x, y) arrays.
    Returns final (weights, biases).
    """
    W = [w.copy() for w in weights]
    B = [b.copy() for b in biases]
    L = len(W)
    for g in range(1, rounds + 1):
        local = []
        for q, (px, py) in enumerate(parts):
            rng = np.random.default_rng([seed, g, q])
            w = [a.copy() for a in W]
            b = [a.copy() for a in B]
            for _ in range(local_epochs):
                for i in rng.permutation(len(px)):
                    acts, pre = [px[i]], []
                    for k in range(L):
                        u = acts[-1] @ w[k] + b[k]
                        pre.append(u)
                        acts.append(stable_sigmoid(u))
                    err = acts[-1] - py[i]
                    gw, gb = [None] * L, [None] * L
                    for k in range(L - 1, -1, -1):
                        s = stable_sigmoid(pre[k])
                        d = err * (s * (1.0 - s))
                        gw[k] = np.outer(acts[k], d)
                        gb[k] = d
                        if k > 0:
                            err = d @ w[k].T
                    for k in range(L):
                        w[k] = 1.0 * w[k] - lr * (gw[k] / 1)
                        b[k] = b[k] - lr * (gb[k] / 1)
            local.append((w, b))
        n = len(parts)
        newW, newB = [], []
        for k in range(L):
            sw, sb = local[0][0][k], local[0][1][k]
            for w, b in local[1:]:
                sw = sw + w[k]
                sb = sb + b[k]
            newW.append(sw / n)
            newB.append(sb / n)
        W, B = newW, newB
    return W, B


def finite_difference(f, params, h=1e-6):
    """Central differences of scalar f w.r.t. every entry of every array in params (in place)."""
    grads = []
    for p in params:
        g = np.zeros_like(p)
        for idx in np.ndindex(p.shape):
            old = p[idx]
            p[idx] = old + h
            up = f()
            p[idx] = old - h
            down = f()
            p[idx] = old
            g[idx] = (up - down) / (2 * h)
        grads.append(g)
    return grads

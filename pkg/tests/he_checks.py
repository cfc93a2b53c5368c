"""Reusable drivers that compare encrypted computations with numpy."""

import numpy as np

from pefl.packing import next_pow2

CIRCUIT_ROTATIONS = (1, 2, 3, 5, -1, 7)


def random_circuit(ctx, keys, rng, depth, width=3, ops=8):
    """Run a random add/mult/rotate circuit of multiplicative depth <= depth on
    fresh ciphertexts and return (result ciphertext, plaintext reference)."""
    slots = ctx.params.slots
    pool = []
    for _ in range(width):
        x = rng.uniform(-1, 1, slots)
        pool.append((ctx.encrypt_values(x, keys.pk, rng), x, 0))
    for _ in range(ops):
        kind = rng.choice(["add", "sub", "mult", "rotate", "mult_const", "mult_plain"])
        i, j = rng.integers(len(pool), size=2)
        (ca, a, da), (cb, b, db) = pool[i], pool[j]
        if kind in ("mult", "mult_const", "mult_plain") and max(da, db if kind == "mult" else 0) >= depth:
            kind = "add"
        if kind == "add":
            item = (ctx.add(ca, cb), a + b, max(da, db))
        elif kind == "sub":
            item = (ctx.sub(ca, cb), a - b, max(da, db))
        elif kind == "mult":
            item = (ctx.mult(ca, cb, keys.rlk), a * b, max(da, db) + 1)
        elif kind == "mult_const":
            c = float(rng.uniform(-1.5, 1.5))
            item = (ctx.mult_const(ca, c), a * c, da + 1)
        elif kind == "mult_plain":
            p = rng.uniform(-1, 1, slots)
            item = (ctx.mult_plain(ca, p), a * p, da + 1)
        else:
            r = int(rng.choice(CIRCUIT_ROTATIONS))
            item = (ctx.rotate(ca, r, keys.rot), np.roll(a, -r), da)
        # keep magnitudes bounded so deep products stay inside the message range
        if np.max(np.abs(item[1])) > 8:
            continue
        pool.append(item)
    ct, ref, _ = max(pool[width:] or pool, key=lambda t: t[2])
    return ct, ref


def rel_error(got, want):
    return float(np.max(np.abs(np.asarray(got) - want)) / max(1.0, np.max(np.abs(want))))


def packing_errors(pk, rng, rows, cols, orientation, level=None):
    """Relative errors of v*M, w*M^T and outer(a, b) for one random instance.

    Column-based instances take a rows x cols matrix; row-based ones need the
    vector input strided, so `rows` must fit a strided vector.
    """
    M = rng.uniform(-1, 1, (rows, cols))
    rp, cp = next_pow2(rows), next_pow2(cols)
    pm = pk.encode_matrix(M, orientation, level=level)
    col = orientation == "column"

    v = rng.uniform(-1, 1, rows)
    pv = pk.encode_vector(v, "contiguous" if col else "strided", level=level)
    out = pk.clean(pk.vm_mult(pk.to_input(pv, orientation, cp), pm))
    e_vm = rel_error(pk.decode_vector(out), v @ M)

    w = rng.uniform(-1, 1, cols)
    pw = pk.encode_vector(w, "strided" if col else "contiguous", level=level)
    pw = pk.to_input(pw, "row" if col else "column", rp)
    out = pk.clean(pk.vm_mult_transpose(pw, pm))
    e_t = rel_error(pk.decode_vector(out), M @ w)

    a = rng.uniform(-1, 1, rows)
    b = rng.uniform(-1, 1, cols)
    if col:
        left = pk.encode_vector(a, "replicated", cp, level=level)
        right = pk.encode_vector(b, "expanded", rp, level=level)
    else:
        left = pk.encode_vector(a, "expanded", cp, level=level)
        right = pk.encode_vector(b, "replicated", rp, level=level)
    e_o = rel_error(pk.decode_matrix(pk.outer_product(left, right, orientation)), np.outer(a, b))
    return e_vm, e_t, e_o

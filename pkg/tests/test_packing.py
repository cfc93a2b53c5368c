import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from pefl.backend import make_backend
from pefl.ckks import chebyshev
from pefl.ckks.params import preset
from pefl.packing import CapacityError, LayoutError, Packer, next_pow2

from he_checks import packing_errors


@pytest.fixture(scope="module")
def sim_packer():
    be = make_backend("simulated", preset("desk"), 3, seed=3)
    pk = Packer(be, 64)
    be.add_rotations(pk.rotations_needed())
    return pk


@settings(max_examples=40, deadline=None)
@given(st.integers(1, 64), st.integers(1, 32), st.integers(0, 10**6))
def test_column_products_match_numpy(sim_packer, rows, cols, seed):
    errs = packing_errors(sim_packer, np.random.default_rng(seed), rows, cols, "column")
    assert max(errs) < 1e-3


@settings(max_examples=40, deadline=None)
@given(st.integers(1, 32), st.integers(1, 64), st.integers(0, 10**6))
def test_row_products_match_numpy(sim_packer, rows, cols, seed):
    errs = packing_errors(sim_packer, np.random.default_rng(seed), rows, cols, "row")
    assert max(errs) < 1e-3


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 64), st.integers(1, 32), st.sampled_from(["column", "row"]))
def test_slot_maps_roundtrip(sim_packer, rows, cols, orientation):
    if orientation == "row":
        rows, cols = cols, rows
    m = np.arange(rows * cols, dtype=float).reshape(rows, cols)
    slots = sim_packer.matrix_slots(m, orientation)
    assert np.array_equal(sim_packer.matrix_from_slots(slots, orientation, m.shape), m)
    assert np.count_nonzero(slots) == m.size - 1


def test_transpose_view_is_free(sim_packer):
    m = np.random.default_rng(0).normal(size=(20, 12))
    pm = sim_packer.encode_matrix(m, "column", encrypt=False)
    assert np.array_equal(sim_packer.decode_matrix(pm.transposed()), m.T)


def test_capacity_and_layout_errors(sim_packer):
    with pytest.raises(CapacityError):
        sim_packer.encode_matrix(np.ones((65, 4)))
    with pytest.raises(CapacityError):
        sim_packer.encode_matrix(np.ones((64, 64)), "row")
    pv = sim_packer.encode_vector(np.ones(10), "strided")
    with pytest.raises(LayoutError):
        sim_packer.to_input(pv, "column", 16)
    pm = sim_packer.encode_matrix(np.ones((10, 4)))
    with pytest.raises(LayoutError):
        sim_packer.vm_mult(pv, pm)
    with pytest.raises(ValueError):
        Packer(sim_packer.be, 48)


def test_plaintext_operands_use_the_same_code_path(sim_packer):
    rng = np.random.default_rng(1)
    m = rng.normal(size=(30, 20))
    v = rng.normal(size=30)
    pm = sim_packer.encode_matrix(m, "column", encrypt=False)
    pv = sim_packer.to_input(sim_packer.encode_vector(v, encrypt=False), "column", next_pow2(20))
    out = sim_packer.vm_mult(pv, pm)
    assert not out.encrypted
    assert np.allclose(sim_packer.decode_vector(sim_packer.clean(out)), v @ m)


def test_masked_sigmoid_zeroes_padding(sim_packer):
    u = np.random.default_rng(2).uniform(-8, 8, 30)
    pv = sim_packer.encode_vector(u, "strided")
    pv.clean = False
    out = sim_packer.sigmoid(pv, chebyshev.sigmoid_coeffs(), 10.0)
    got = sim_packer.decode_vector(out)
    assert np.max(np.abs(got - chebyshev.sigmoid(u))) < 1e-2
    slots = sim_packer.be.peek(out.data)
    assert np.max(np.abs(slots[sim_packer.mask(30, "strided") == 0])) < 1e-6


@pytest.mark.parametrize("orientation,shape", [("column", (64, 32)), ("row", (32, 20))])
def test_lattice_products(orientation, shape):
    be = make_backend("lattice", preset("desk"), 3, seed=9, key_mode="dealer")
    pk = Packer(be, 64)
    be.add_rotations(pk.rotations_needed())
    errs = packing_errors(pk, np.random.default_rng(5), *shape, orientation, level=4)
    assert max(errs) < 1e-3

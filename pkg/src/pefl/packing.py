"""SIMD packing of matrices and vectors and encrypted linear algebra.

All layouts share one block size B (a power of two at least every padded
dimension of the model):

    column-based matrix   M[i, k] at slot k*B + i
    row-based matrix      M[i, k] at slot i*B + k

    contiguous vector     v_k at k
    strided vector        v_k at k*B
    replicated vector     v_i at t*B + i   for t < copies
    expanded vector       v_i at i*B + t   for t < copies

A column-based product takes a replicated input, multiplies slotwise and folds
each block with rotations 1, 2, .., r'/2, leaving (vM)_k at k*B: a strided
vector. Expanding that strided vector is exactly the input a row-based matrix
needs; a row-based product folds across blocks with rotations B, 2B, .. and
leaves a contiguous vector, which replicates into the input of the next
column-based matrix. Reading a column-based ciphertext as row-based (and vice
versa) gives the transpose for free.

Fold outputs carry partial sums in the non-result slots. A vector is "clean"
once those slots are zero; cleaning costs one multiplication by a 0/1 mask and
is done lazily, either fused into the activation's input scaling or right
before a decryption.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .ckks import chebyshev

LAYOUTS = ("contiguous", "strided", "replicated", "expanded")


class CapacityError(ValueError):
    pass


class LayoutError(ValueError):
    pass


def next_pow2(x: int) -> int:
    return 1 << max(0, int(x - 1).bit_length())


@dataclass
class PackedMatrix:
    data: object               # backend ciphertext, or np.ndarray of slots when plaintext
    orientation: str           # "column" | "row"
    dims: tuple[int, int]
    padded: tuple[int, int]
    block: int
    encrypted: bool = True

    def transposed(self) -> "PackedMatrix":
        """Same slots read as the transpose in the opposite orientation."""
        flip = "row" if self.orientation == "column" else "column"
        return replace(self, orientation=flip, dims=self.dims[::-1], padded=self.padded[::-1])


@dataclass
class PackedVector:
    data: object               # backend ciphertext or np.ndarray of slots
    length: int
    layout: str
    block: int
    copies: int = 1
    clean: bool = True
    encrypted: bool = True

    @property
    def padded(self) -> int:
        return next_pow2(self.length)


class Packer:
    def __init__(self, backend, block: int):
        if block & (block - 1):
            raise ValueError("block size must be a power of two")
        self.be = backend
        self.B = block
        self.slots = backend.slots

    # ------------------------------------------------------------ slot maps
    def _check_dim(self, d: int) -> None:
        if next_pow2(d) > self.B:
            raise CapacityError(f"dimension {d} exceeds block size {self.B}")

    def matrix_slots(self, m: np.ndarray, orientation: str) -> np.ndarray:
        r, c = m.shape
        self._check_dim(r)
        self._check_dim(c)
        rp, cp = next_pow2(r), next_pow2(c)
        nblocks = cp if orientation == "column" else rp
        if nblocks * self.B > self.slots:
            raise CapacityError(f"{r}x{c} matrix needs {nblocks * self.B} slots, have {self.slots}")
        out = np.zeros(self.slots)
        i, k = np.meshgrid(np.arange(r), np.arange(c), indexing="ij")
        if orientation == "column":
            out[k * self.B + i] = m
        elif orientation == "row":
            out[i * self.B + k] = m
        else:
            raise LayoutError(f"unknown orientation {orientation!r}")
        return out

    def matrix_from_slots(self, slots: np.ndarray, orientation: str, dims) -> np.ndarray:
        r, c = dims
        i, k = np.meshgrid(np.arange(r), np.arange(c), indexing="ij")
        idx = k * self.B + i if orientation == "column" else i * self.B + k
        return np.asarray(slots)[idx]

    def layout_index(self, length: int, layout: str, copies: int = 1) -> np.ndarray:
        """Slot positions holding the logical vector; shape (copies, length)."""
        i = np.arange(length)[None, :]
        t = np.arange(copies)[:, None]
        if layout == "contiguous":
            idx = i + 0 * t
        elif layout == "strided":
            idx = i * self.B + 0 * t
        elif layout == "replicated":
            idx = t * self.B + i
        elif layout == "expanded":
            idx = i * self.B + t
        else:
            raise LayoutError(f"unknown layout {layout!r}")
        if idx.size and idx.max() >= self.slots:
            raise CapacityError(f"{layout} vector of length {length} x{copies} exceeds slot count")
        return idx

    def vector_slots(self, v, layout: str, copies: int = 1) -> np.ndarray:
        v = np.asarray(v, dtype=np.float64).ravel()
        out = np.zeros(self.slots)
        idx = self.layout_index(v.size, layout, copies)
        out[idx] = np.broadcast_to(v[None, :], idx.shape)
        return out

    def mask(self, length: int, layout: str, copies: int = 1) -> np.ndarray:
        return self.vector_slots(np.ones(length), layout, copies)

    # ------------------------------------------------------------ encode / decode
    def encode_matrix(self, m, orientation: str = "column", encrypt: bool = True,
                      level: int | None = None) -> PackedMatrix:
        m = np.atleast_2d(np.asarray(m, dtype=np.float64))
        slots = self.matrix_slots(m, orientation)
        data = self.be.encrypt(slots, level) if encrypt else slots
        r, c = m.shape
        return PackedMatrix(data, orientation, (r, c), (next_pow2(r), next_pow2(c)), self.B, encrypt)

    def decode_matrix(self, pm: PackedMatrix) -> np.ndarray:
        slots = self.be.decrypt(pm.data) if pm.encrypted else pm.data
        return self.matrix_from_slots(slots, pm.orientation, pm.dims)

    def encode_vector(self, v, layout: str = "contiguous", copies: int = 1,
                      encrypt: bool = True, level: int | None = None) -> PackedVector:
        v = np.asarray(v, dtype=np.float64).ravel()
        slots = self.vector_slots(v, layout, copies)
        data = self.be.encrypt(slots, level) if encrypt else slots
        return PackedVector(data, v.size, layout, self.B, copies, True, encrypt)

    def decode_vector(self, pv: PackedVector) -> np.ndarray:
        """Decrypt (if needed) and read the logical entries; does not mask first."""
        slots = self.be.decrypt(pv.data) if pv.encrypted else pv.data
        return np.asarray(slots)[self.layout_index(pv.length, pv.layout, 1)[0]]

    # ------------------------------------------------------------ element ops
    def _mul(self, a, a_enc: bool, b, b_enc: bool):
        if a_enc and b_enc:
            return self.be.mult(a, b), True
        if a_enc:
            return self.be.mult_plain(a, b), True
        if b_enc:
            return self.be.mult_plain(b, a), True
        return a * b, False

    def _rot(self, x, r: int, enc: bool):
        return self.be.rotate(x, r) if enc else np.roll(x, -r)

    def _add(self, a, b, enc: bool):
        return self.be.add(a, b) if enc else a + b

    def clean(self, pv: PackedVector, scale: float = 1.0) -> PackedVector:
        """Zero every slot outside the layout (one level when encrypted)."""
        if pv.clean and scale == 1.0:
            return pv
        m = self.mask(pv.length, pv.layout, pv.copies) * scale
        data = self.be.mult_plain(pv.data, m) if pv.encrypted else pv.data * m
        return replace(pv, data=data, clean=True)

    def cumulative_add(self, pv: PackedVector, block: int, stride: int = 1) -> PackedVector:
        """Fold: slot j*block*stride accumulates the `block` entries spaced by `stride`."""
        if block & (block - 1):
            raise ValueError("block must be a power of two")
        x = pv.data
        step = 1
        while step < block:
            x = self._add(x, self._rot(x, step * stride, pv.encrypted), pv.encrypted)
            step *= 2
        return replace(pv, data=x, clean=pv.clean and block == 1)

    def _spread(self, x, copies: int, stride: int, enc: bool):
        """x + shift_right(x, stride) + ... : `copies` copies spaced by stride (clean x)."""
        step = 1
        while step < copies:
            x = self._add(x, self._rot(x, -step * stride, enc), enc)
            step *= 2
        return x

    def vec_replicate(self, pv: PackedVector, copies: int, period: int | None = None) -> PackedVector:
        """Tile a clean vector `copies` times with the given period (default: padded length)."""
        if copies & (copies - 1):
            raise ValueError("copies must be a power of two")
        period = pv.padded if period is None else period
        if pv.layout != "contiguous":
            raise LayoutError("vec_replicate expects a contiguous vector")
        if copies * period > self.slots:
            raise CapacityError("replication exceeds slot count")
        pv = self.clean(pv)
        data = self._spread(pv.data, copies, period, pv.encrypted)
        layout = "replicated" if period == self.B else "contiguous"
        return replace(pv, data=data, layout=layout, copies=copies if period == self.B else 1)

    def to_input(self, pv: PackedVector, orientation: str, copies: int) -> PackedVector:
        """Bring a vector into the input layout of a matrix of the given orientation."""
        want = "replicated" if orientation == "column" else "expanded"
        if pv.layout == want and pv.copies >= copies:
            return pv
        src = "contiguous" if want == "replicated" else "strided"
        if pv.layout != src:
            raise LayoutError(f"cannot turn a {pv.layout} vector into {want}")
        pv = self.clean(pv)
        stride = self.B if want == "replicated" else 1
        data = self._spread(pv.data, copies, stride, pv.encrypted)
        return replace(pv, data=data, layout=want, copies=copies)

    # ------------------------------------------------------------ products
    def vm_mult(self, pv: PackedVector, pm: PackedMatrix) -> PackedVector:
        """v * M; output is strided (column-based M) or contiguous (row-based M)."""
        r, c = pm.dims
        rp, cp = pm.padded
        if pv.length != r:
            raise LayoutError(f"vector length {pv.length} does not match {r} matrix rows")
        if pm.orientation == "column":
            if pv.layout != "replicated" or pv.copies < cp:
                raise LayoutError("column-based product needs a replicated input")
            prod, enc = self._mul(pm.data, pm.encrypted, pv.data, pv.encrypted)
            out = PackedVector(prod, c, "strided", self.B, 1, False, enc)
            return self.cumulative_add(out, rp, 1)
        if pv.layout != "expanded" or pv.copies < cp:
            raise LayoutError("row-based product needs an expanded input")
        prod, enc = self._mul(pm.data, pm.encrypted, pv.data, pv.encrypted)
        out = PackedVector(prod, c, "contiguous", self.B, 1, False, enc)
        return self.cumulative_add(out, rp, self.B)

    def vm_mult_transpose(self, pv: PackedVector, pm: PackedMatrix) -> PackedVector:
        """v * M^T by reading M in the opposite orientation."""
        return self.vm_mult(pv, pm.transposed())

    def outer_product(self, left: PackedVector, right: PackedVector, orientation: str) -> PackedMatrix:
        """left^T right packed in `orientation`.

        Column-based needs left replicated and right expanded; row-based needs
        left expanded and right replicated. Both operands must be clean.
        """
        want = ("replicated", "expanded") if orientation == "column" else ("expanded", "replicated")
        if (left.layout, right.layout) != want:
            raise LayoutError(f"{orientation}-based outer product needs layouts {want}")
        if not (left.clean and right.clean):
            raise LayoutError("outer product operands must be clean")
        r, c = left.length, right.length
        if orientation == "column" and (left.copies < next_pow2(c) or right.copies < next_pow2(r)):
            raise LayoutError("not enough copies for the outer product")
        if orientation == "row" and (left.copies < next_pow2(c) or right.copies < next_pow2(r)):
            raise LayoutError("not enough copies for the outer product")
        prod, enc = self._mul(left.data, left.encrypted, right.data, right.encrypted)
        return PackedMatrix(prod, orientation, (r, c), (next_pow2(r), next_pow2(c)), self.B, enc)

    # ------------------------------------------------------------ activation
    def sigmoid(self, pv: PackedVector, coeffs: np.ndarray, bound: float) -> PackedVector:
        """Masked sigmoid: the odd part of the fit plus 0.5 on the logical slots.

        The input mask and the 1/bound scaling share one plaintext product, and
        padding slots come out exactly zero.
        """
        m = self.mask(pv.length, pv.layout, pv.copies)
        odd = np.array(coeffs, dtype=np.float64)
        odd[0::2] = 0.0
        if pv.encrypted:
            t = self.be.mult_plain(pv.data, m / bound)
            y = chebyshev.eval_normalized(self.be, t, odd)
            y = self.be.add_plain(y, 0.5 * m)
        else:
            t = pv.data * m / bound
            y = chebyshev.clenshaw(odd, t) + 0.5 * m
        return replace(pv, data=y, clean=True)

    def sigmoid_levels(self, coeffs) -> int:
        odd = np.array(coeffs, dtype=np.float64)
        odd[0::2] = 0.0
        return 1 + chebyshev.depth(odd)

    # ------------------------------------------------------------ rotations
    def rotations_needed(self) -> set[int]:
        """Every rotation this packer can issue for dimensions up to B."""
        rots = set()
        s = 1
        while s < self.B:
            rots |= {s, -s, s * self.B, -s * self.B}
            s *= 2
        return {r % self.slots for r in rots} - {0}

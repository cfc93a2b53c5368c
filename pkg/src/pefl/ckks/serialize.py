"""Byte layout of ciphertexts.

    fingerprint   32 bytes (sha256 of the parameter set)
    level         u32 little-endian
    scale         f64 little-endian
    parts         u32 little-endian
    residues      parts * limbs * n little-endian int64, part-major then limb-major

The limb count follows from the level and the parameter set.
"""

from __future__ import annotations

import struct

import numpy as np

from .params import CkksParams
from .scheme import Ciphertext, ParamsMismatch

_HEADER = struct.Struct("<32sIdI")


def ciphertext_to_bytes(ct: Ciphertext) -> bytes:
    data = np.ascontiguousarray(ct.parts, dtype="<i8").tobytes()
    return _HEADER.pack(ct.fingerprint, ct.level, ct.scale, ct.parts.shape[0]) + data


def ciphertext_from_bytes(buf: bytes, params: CkksParams) -> Ciphertext:
    if len(buf) < _HEADER.size:
        raise ValueError("truncated ciphertext header")
    fp, level, scale, parts = _HEADER.unpack_from(buf)
    if fp != params.fingerprint:
        raise ParamsMismatch("ciphertext fingerprint does not match parameters")
    if level > params.max_level:
        raise ValueError(f"level {level} above chain top")
    limbs = params.limbs_at(level)
    want = _HEADER.size + parts * limbs * params.n * 8
    if len(buf) != want:
        raise ValueError(f"ciphertext body has {len(buf)} bytes, expected {want}")
    arr = np.frombuffer(buf, dtype="<i8", offset=_HEADER.size).astype(np.int64)
    return Ciphertext(arr.reshape(parts, limbs, params.n), scale, level, fp)

"""Values that are either plaintext arrays or packed ciphertexts, with a taint bit.

A value is tainted when it was derived from secret-layer parameters. Taint
spreads through every operation; only a sanctioned joint decryption clears it.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..packing import PackedMatrix, PackedVector
from .partition import DECRYPTED, ENCRYPTED, PLAINTEXT


@dataclass
class MaybeEncrypted:
    value: object                 # np.ndarray, PackedVector or PackedMatrix
    tainted: bool = False
    note: str = ""                # where a decryption happened, if any

    @property
    def encrypted(self) -> bool:
        return isinstance(self.value, (PackedVector, PackedMatrix)) and self.value.encrypted

    @property
    def status(self) -> str:
        if self.encrypted:
            return ENCRYPTED
        return DECRYPTED if self.note else PLAINTEXT

    def nbytes(self, backend) -> int:
        if self.encrypted:
            return backend.ct_bytes(self.value.data)
        return int(np.asarray(self.value).size) * 8


def plain(v, tainted: bool = False) -> MaybeEncrypted:
    return MaybeEncrypted(np.asarray(v, dtype=np.float64), tainted)


def secret(v) -> MaybeEncrypted:
    return MaybeEncrypted(v, True)

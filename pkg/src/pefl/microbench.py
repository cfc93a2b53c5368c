"""Per-operation cost table: computation, communication and bytes.

Computation time is the backend's work meter times the calibrated seconds per
NTT row, so the table is reproducible; `wall_clock=True` adds the measured
time as an extra column. Communication time is the link time of the messages
an operation sends, one after another.
"""

from __future__ import annotations

import csv
import io
import time
from dataclasses import dataclass

import numpy as np

from . import nn
from .backend import make_backend
from .ckks.params import preset as ckks_preset
from .netsim import LinkParams, SERVER
from .packing import next_pow2
from .protocol.partition import LayerPartition
from .protocol.training import Session, in_layout, seconds_per_unit

COLUMNS = ("operation", "computation_s", "communication_s", "total_s", "bytes")


@dataclass
class BenchRow:
    operation: str
    computation_s: float
    communication_s: float
    bytes: int
    wall_s: float | None = None

    @property
    def total_s(self) -> float:
        return self.computation_s + self.communication_s


class _Probe:
    """Measures meter work and transcript growth around a block of operations."""

    def __init__(self, session: Session, repetitions: int):
        self.s = session
        self.reps = repetitions
        self.unit = seconds_per_unit(session.backend.params)
        self.rows: list[BenchRow] = []

    def run(self, name: str, fn):
        be, tr = self.s.backend, self.s.transport
        w0, n0 = be.meter.work, len(tr.transcript)
        t0 = time.perf_counter()
        out = None
        for _ in range(self.reps):
            out = fn()
        wall = (time.perf_counter() - t0) / self.reps
        msgs = tr.transcript[n0:]
        nbytes = sum(e.nbytes for e in msgs) // self.reps
        comm = sum(tr.link.message_time(e.nbytes) for e in msgs) / self.reps
        comp = (be.meter.work - w0) * self.unit / self.reps
        self.rows.append(BenchRow(name, comp, comm, int(nbytes), wall))
        return out


def microbench(preset: str = "desk", arch: nn.ModelArch | None = None, n_parties: int = 3,
               link: LinkParams | None = None, repetitions: int = 1, backend: str = "simulated",
               seed: int = 0) -> list[BenchRow]:
    arch = arch or nn.ModelArch((64, 30, 20, 10))
    params = ckks_preset(preset)
    be = make_backend(backend, params, n_parties, seed)
    s = Session(arch, be, n_parties, link or LinkParams())
    s.setup_keys()
    s.party = 0
    p = _Probe(s, repetitions)
    rng = np.random.default_rng(seed)
    v = rng.uniform(-1, 1, be.slots)
    a = be.encrypt(v)
    b = be.encrypt(rng.uniform(-1, 1, be.slots))

    p.run("Encryption", lambda: be.encrypt(v))
    p.run("Addition", lambda: be.add(a, b))
    p.run("Multiplication", lambda: be.mult(a, b))
    p.run("Rotation", lambda: be.rotate(a, 1))
    p.run("Decryption", lambda: be.decrypt(a))
    p.run("Bootstrapping", lambda: be.bootstrap(be.drop_to(a, 1)))

    model = nn.init_model(arch, seed=seed)
    full = LayerPartition.suffix(arch.depth, 0)
    pm = s.encrypt_model(model, full)
    pk = s.packer
    for j in range(1, arch.depth + 1):
        o = s.orientation(j)
        rp, cp = (next_pow2(d) for d in arch.shape(j))
        x = pk.encode_vector(rng.uniform(0, 1, arch.widths[j - 1]), in_layout(o), cp, encrypt=True)
        p.run(f"Vector-Matrix mult. ({rp}x{cp})", lambda x=x, w=pm.w[j - 1].value: pk.vm_mult(x, w))
    u = pk.encode_vector(rng.uniform(-5, 5, arch.widths[1]), "strided", 1, encrypt=True)
    p.run(f"Sigmoid (degree {s.degree})", lambda: pk.sigmoid(u, s.coeffs, s.bound))

    x0 = rng.uniform(0, 1, arch.widths[0])
    y0 = nn.one_hot([int(rng.integers(arch.widths[-1]))], arch.widths[-1])[0]
    trace = p.run("One pass forward", lambda: s.forward(pm, x0, full, record=False))
    p.run("One pass backward", lambda: s.backward(pm, trace, y0, full))
    p.run("One training pass", lambda: s.training_pass(pm, x0, y0, full))
    s.party = SERVER
    p.run("Aggregation", lambda: s.aggregate([pm] * n_parties, full))
    return p.rows


def to_csv(rows: list[BenchRow], wall_clock: bool = False) -> str:
    buf = io.StringIO()
    cols = list(COLUMNS) + (["wall_s"] if wall_clock else [])
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(cols)
    for r in rows:
        line = [r.operation, f"{r.computation_s:.6f}", f"{r.communication_s:.6f}", f"{r.total_s:.6f}", r.bytes]
        if wall_clock:
            line.append(f"{r.wall_s:.6f}")
        w.writerow(line)
    return buf.getvalue()

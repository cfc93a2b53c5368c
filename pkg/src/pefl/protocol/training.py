"""Federated training over partially encrypted models.

One `Session` owns the homomorphic backend, the packer and the simulated
network for a run. Parties take turns on the shared backend; every joint
decryption or bootstrap a party triggers is turned into the corresponding
star-topology messages so the traffic log matches a deployment.

Secret layers are packed with the orientation given by layer parity (odd:
column-based, even: row-based), so any run of consecutive secret layers
alternates and each product's output layout is the next product's input.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .. import nn
from .. import threshold as th
from ..ckks import chebyshev
from ..netsim import SERVER, Envelope, LinkParams, MsgType, Transport, taint_audit
from ..packing import PackedMatrix, PackedVector, Packer, next_pow2
from .partition import LayerPartition, Schedule, constant_schedule, enc_status_map
from .values import MaybeEncrypted, plain, secret

FORWARD_BOUNDARY = "forward-boundary"
BACKWARD_BOUNDARY = "backward-boundary"
OUTPUT_RELEASE = "prediction-output"

# compute-time model: one NTT row at n = 4096 measured at about 1.4e-4 s
SECONDS_PER_ROW_4096 = 1.4e-4
SECONDS_PER_FLOP = 1e-9


def seconds_per_unit(params) -> float:
    n = params.n
    return SECONDS_PER_ROW_4096 * (n / 4096) * (np.log2(n) / 12)


def out_layout(orientation: str) -> str:
    return "strided" if orientation == "column" else "contiguous"


def in_layout(orientation: str) -> str:
    return "replicated" if orientation == "column" else "expanded"


def flip(orientation: str) -> str:
    return "row" if orientation == "column" else "column"


class StatusMismatch(AssertionError):
    pass


@dataclass(frozen=True)
class Fault:
    """Deliberate protocol deviation for audit tests: keep ∇w of `layer` in
    plaintext, so the party ends up updating and uploading that layer in the clear."""
    quantity: str = "dw"
    layer: int = 0


@dataclass
class PartyModel:
    """Per-layer parameters; secret layers hold packed ciphertexts."""
    w: list[MaybeEncrypted]
    b: list[MaybeEncrypted]

    def copy(self) -> "PartyModel":
        return PartyModel(list(self.w), list(self.b))


@dataclass
class PassResult:
    dw: list[MaybeEncrypted]
    db: list[MaybeEncrypted]
    output: MaybeEncrypted


@dataclass
class RunResult:
    model: nn.Model
    metrics: list[dict]
    checkpoints: dict
    transport: Transport
    status_violations: list
    taint_violations: list
    op_counts: dict
    collective_counts: dict
    simulated_seconds: float


@dataclass
class Session:
    arch: nn.ModelArch
    backend: object
    n_parties: int
    link: LinkParams = field(default_factory=LinkParams)
    bound: float = 10.0
    degree: int = 13
    fault: Fault | None = None
    omit_boundary_bias: bool = False
    block: int | None = None

    def __post_init__(self):
        self.L = self.arch.depth
        B = self.block or max(next_pow2(w) for w in self.arch.widths)
        self.packer = Packer(self.backend, B)
        self.coeffs = chebyshev.sigmoid_coeffs(self.degree, self.bound)
        self.sig_levels = self.packer.sigmoid_levels(self.coeffs)
        self.transport = Transport(self.n_parties, self.link)
        self.backend.on_collective = self._collective
        self.party = SERVER
        self.round_id = 0
        self.collective_counts = {"decrypt": 0, "bootstrap": 0}
        self.observed: list = []          # (round, party, name, layer, status)
        self.leaked: set[int] = set()     # layers a faulty party holds in the clear
        self._keys_ready = False

    # ------------------------------------------------------------ network glue
    def _collective(self, kind: str, level: int) -> None:
        """Messages of one joint decryption or bootstrap requested by self.party."""
        p, r = self.party, self.round_id
        params = self.backend.params
        self.collective_counts[kind] += 1
        ct = params.ciphertext_bytes(level)
        limbs = params.limbs_at(level)
        if kind == "decrypt":
            req, rsp = MsgType.DECRYPT_REQUEST, MsgType.PARTIAL_DECRYPTION
            share = th.poly_bytes(params, limbs)
        else:
            req, rsp = MsgType.BOOTSTRAP_REQUEST, MsgType.BOOTSTRAP_SHARE
            share = th.poly_bytes(params, limbs) + th.poly_bytes(params, params.limbs_at(params.max_level))
        others = [q for q in range(self.n_parties) if q != p]
        send = self.transport.send
        if p != SERVER:
            send(Envelope(req, r, p, SERVER, ct), label=kind)
        for q in others:
            send(Envelope(req, r, SERVER, q, ct), label=kind)
            send(Envelope(rsp, r, q, SERVER, share), label=kind)
        if p != SERVER:
            back = len(others) * share if kind == "decrypt" else share
            mtype = rsp if kind == "decrypt" else MsgType.BOOTSTRAP_RESULT
            send(Envelope(mtype, r, SERVER, p, back), label=kind)

    def setup_keys(self) -> None:
        """Collective key generation traffic and rotation keys for the packer."""
        if self._keys_ready:
            return
        self._keys_ready = True
        rots = self.packer.rotations_needed()
        self.backend.add_rotations(rots)
        params = self.backend.params
        K = params.limbs_at(params.max_level)
        key_poly = th.poly_bytes(params, K + 1)
        sizes = [("pk", key_poly), ("rot", len(rots) * K * key_poly),
                 ("relin-1", 2 * K * key_poly), ("relin-2", 2 * K * key_poly)]
        for label, size in sizes:
            for q in range(self.n_parties):
                self.transport.send(Envelope(MsgType.KEYGEN, 0, q, SERVER, size), label=label)
            for q in range(self.n_parties):
                self.transport.send(Envelope(MsgType.KEYGEN, 0, SERVER, q, size), label=label)

    # ------------------------------------------------------------ helpers
    def observe(self, name: str, j: int, me: MaybeEncrypted | str) -> None:
        status = me if isinstance(me, str) else me.status
        self.observed.append((self.round_id, self.party, name, j, status))

    def _need(self, x, k: int):
        """Bootstrap the ciphertext inside a packed value if k levels would leave it unbootstrappable."""
        if isinstance(x, (PackedVector, PackedMatrix)) and x.encrypted:
            return replace(x, data=self.backend.ensure_level(x.data, k))
        return x

    def reveal(self, me: MaybeEncrypted, note: str, sanctioned: bool = True) -> MaybeEncrypted:
        """Joint decryption of a packed value; padding slots are masked off first."""
        pv = me.value
        if isinstance(pv, PackedMatrix):
            return MaybeEncrypted(self.packer.decode_matrix(pv), me.tainted and not sanctioned, note)
        if not pv.clean:
            pv = self.packer.clean(self._need(pv, 1))
        v = self.packer.decode_vector(pv)
        return MaybeEncrypted(v, me.tainted and not sanctioned, note)

    def _vec(self, me: MaybeEncrypted, layout: str, copies: int = 1) -> PackedVector:
        if isinstance(me.value, PackedVector):
            return me.value
        return self.packer.encode_vector(me.value, layout, copies, encrypt=False)

    def orientation(self, j: int) -> str:
        return "column" if j % 2 == 1 else "row"

    # ------------------------------------------------------------ model conversion
    def encrypt_layer(self, j: int, w: np.ndarray, b: np.ndarray) -> tuple[MaybeEncrypted, MaybeEncrypted]:
        o = self.orientation(j)
        pw = self.packer.encode_matrix(w, o, encrypt=True)
        pb = self.packer.encode_vector(b, out_layout(o), 1, encrypt=True)
        return secret(pw), secret(pb)

    def encrypt_model(self, model: nn.Model, partition: LayerPartition) -> PartyModel:
        ws, bs = [], []
        for j, p in enumerate(model.layers, start=1):
            if j in partition.secret:
                w, b = self.encrypt_layer(j, p.w, p.b)
            else:
                w, b = plain(p.w), plain(p.b)
            ws.append(w)
            bs.append(b)
        return PartyModel(ws, bs)

    def peek_model(self, pm: PartyModel) -> nn.Model:
        """Harness-side view of the current parameters (no protocol traffic)."""
        layers = []
        for j in range(1, self.L + 1):
            w, b = pm.w[j - 1].value, pm.b[j - 1].value
            if isinstance(w, PackedMatrix):
                slots = self.backend.peek(w.data) if w.encrypted else w.data
                w = self.packer.matrix_from_slots(slots, w.orientation, w.dims)
            if isinstance(b, PackedVector):
                slots = self.backend.peek(b.data) if b.encrypted else b.data
                b = np.asarray(slots)[self.packer.layout_index(b.length, b.layout)[0]]
            layers.append(nn.LayerParams(np.array(w, dtype=np.float64), np.array(b, dtype=np.float64)))
        return nn.Model(self.arch, layers)

    # ------------------------------------------------------------ one training pass
    def forward(self, pm: PartyModel, x, partition: LayerPartition, record: bool = True):
        self._partition = partition
        S, L, pk, be = partition.secret, self.L, self.packer, self.backend
        l = plain(x)
        trace_u, trace_l, inputs = [None] * (L + 1), [l] + [None] * L, [None] * (L + 1)
        for j in range(1, L + 1):
            act = self.arch.activations[j - 1]
            w, b = pm.w[j - 1], pm.b[j - 1]
            if w.encrypted:
                o = self.orientation(j)
                cp = next_pow2(self.arch.widths[j])
                if l.encrypted:
                    lin = pk.to_input(l.value, o, cp)
                else:
                    lin = pk.encode_vector(l.value, in_layout(o), cp, encrypt=False)
                lin = self._need(lin, 1)
                inputs[j] = MaybeEncrypted(lin, l.tainted)
                prod = pk.vm_mult(lin, self._need(w.value, 1))
                u = MaybeEncrypted(replace(prod, data=be.add(prod.data, b.value.data)), True)
                if j < L and (j + 1) not in S:
                    u = self.reveal(u, FORWARD_BOUNDARY)
                    l = plain(nn.activate(act, u.value), u.tainted)
                elif act == "sigmoid":
                    l = MaybeEncrypted(pk.sigmoid(self._need(u.value, self.sig_levels), self.coeffs, self.bound), True)
                else:
                    l = MaybeEncrypted(pk.clean(self._need(u.value, 1)), True)
            else:
                if l.encrypted:
                    raise StatusMismatch(f"layer {j} is exposed but its input is encrypted")
                wv, bv = self._plain_params(j, w, b)
                u = plain(l.value @ wv + bv, l.tainted or w.tainted or b.tainted)
                l = plain(nn.activate(act, u.value), u.tainted)
            trace_u[j], trace_l[j] = u, l
            if record:
                self.observe("u", j, u)
                self.observe("l", j, l)
        return trace_u, trace_l, inputs

    def _plain_params(self, j, w, b):
        return np.asarray(w.value), np.asarray(b.value)

    def training_pass(self, pm: PartyModel, x, y, partition: LayerPartition) -> PassResult:
        trace = self.forward(pm, x, partition)
        return self.backward(pm, trace, y, partition)

    def backward(self, pm: PartyModel, trace, y, partition: LayerPartition) -> PassResult:
        L, pk, be = self.L, self.packer, self.backend
        self._partition = partition
        trace_u, trace_l, inputs = trace
        omitted = omitted_bias_layers(partition) if self.omit_boundary_bias else set()
        y = np.asarray(y, dtype=np.float64)
        out = trace_l[L]
        if out.encrypted:
            o = self.orientation(L)
            neg_y = -pk.vector_slots(y, out_layout(o))
            e = MaybeEncrypted(replace(out.value, data=be.add_plain(out.value.data, neg_y)), True)
        else:
            e = plain(out.value - y, out.tainted)
        self.observe("e", L, e)
        dws, dbs = [None] * L, [None] * L
        for j in range(L, 0, -1):
            act = self.arch.activations[j - 1]
            w = pm.w[j - 1]
            prev = trace_l[j - 1]
            if w.encrypted:
                delta, dw, e = self._secret_layer_backward(j, act, e, trace_u[j], trace_l[j], prev, inputs[j], w)
            else:
                d = e.value * nn.activate_prime(act, trace_u[j].value)
                taint = e.tainted or trace_u[j].tainted
                delta = plain(d, taint)
                dw = plain(np.outer(prev.value, d), taint or prev.tainted)
                if j > 1:
                    wv = np.asarray(w.value)
                    e = plain(d @ wv.T, taint or w.tainted)
                    self.observe("e", j - 1, e)
            if self.fault is not None and self.fault.quantity == "dw" and self.fault.layer == j and dw.encrypted:
                dw = self.reveal(dw, "", sanctioned=False)
                self.leaked.add(j)
            dws[j - 1], dbs[j - 1] = dw, delta
            self.observe("db", j, "omitted" if j in omitted else delta)
            self.observe("dw", j, dw)
        return PassResult(dws, dbs, out)

    def _secret_layer_backward(self, j, act, e, u, l, prev, lin, w):
        pk, be = self.packer, self.backend
        o = self.orientation(j)
        rp = next_pow2(self.arch.widths[j - 1])
        # delta_j = e_j * phi'(u_j)
        if not e.encrypted and not l.encrypted:
            delta = plain(e.value * nn.activate_prime(act, u.value), e.tainted or u.tainted)
        elif act == "sigmoid":
            lv = self._need(l.value, 2)
            m = pk.mask(lv.length, lv.layout, lv.copies)
            one_minus = be.add_plain(be.neg(lv.data), m)
            phi = be.mult(lv.data, one_minus)
            ev = self._need(self._vec(e, out_layout(o)), 1)
            delta = MaybeEncrypted(replace(lv, data=be.mult(ev.data, phi), clean=True), True)
        else:
            delta = MaybeEncrypted(pk.clean(self._need(self._vec(e, out_layout(o)), 1)), True)
        # delta in the input layout of the transposed product (also the outer-product operand)
        if delta.encrypted:
            dlay = self._need(pk.to_input(self._need(delta.value, 0), flip(o), rp), 1)
        else:
            dlay = pk.encode_vector(delta.value, in_layout(flip(o)), rp, encrypt=False)
        if not delta.encrypted and not lin.encrypted:
            dw = plain(np.outer(prev.value, delta.value), delta.tainted or prev.tainted)
        else:
            dw = MaybeEncrypted(pk.outer_product(lin.value, dlay, o), True)
        e_prev = e
        if j > 1:
            prod = pk.vm_mult_transpose(dlay, self._need(w.value, 1))
            e_prev = MaybeEncrypted(prod, True)
            if (j - 1) not in self._partition.secret:
                e_prev = self.reveal(e_prev, BACKWARD_BOUNDARY)
            self.observe("e", j - 1, e_prev)
        return delta, dw, e_prev

    # ------------------------------------------------------------ local training
    def local_training(self, pm: PartyModel, data, partition: LayerPartition, cfg: nn.SgdConfig,
                       rng: np.random.Generator) -> PartyModel:
        if len(data) == 0:
            raise ValueError("empty local dataset")
        if cfg.batch_size > len(data):
            raise ValueError(f"batch size {cfg.batch_size} exceeds local dataset size {len(data)}")
        self._partition = partition
        self.leaked = set()
        pm = pm.copy()
        for _ in range(cfg.local_epochs):
            order = rng.permutation(len(data))
            for start in range(0, len(order), cfg.batch_size):
                idx = order[start:start + cfg.batch_size]
                results = [self.training_pass(pm, data.x[i], data.y[i], partition) for i in idx]
                pm = self.apply_update(pm, results, partition, cfg)
        return pm

    def _sum(self, items: list[MaybeEncrypted]):
        """Sum gradients: encrypted ones homomorphically, plaintext ones as arrays."""
        enc = [g.value.data for g in items if g.encrypted]
        acc_ct = None
        for d in enc:
            acc_ct = d if acc_ct is None else self.backend.add(acc_ct, d)
        pl = [g.value for g in items if not g.encrypted]
        return acc_ct, (fold_sum(pl) if pl else None)

    def _slots_of(self, j: int, v: np.ndarray, kind: str) -> np.ndarray:
        o = self.orientation(j)
        if kind == "w":
            return self.packer.matrix_slots(np.asarray(v), o)
        return self.packer.vector_slots(v, out_layout(o))

    def _update_secret(self, j: int, param: MaybeEncrypted, grads: list[MaybeEncrypted],
                       kind: str, cfg: nn.SgdConfig, batch: int) -> MaybeEncrypted:
        be = self.backend
        acc_ct, acc_pl = self._sum(grads)
        step = -cfg.lr / batch
        data = param.value.data
        decay = 1.0 - cfg.lr * cfg.weight_decay / batch
        if kind == "w" and decay != 1.0:
            data = be.mult_const(be.ensure_level(data, 1), decay)
        if acc_pl is not None:
            data = be.add_plain(data, step * self._slots_of(j, acc_pl, kind))
        if acc_ct is not None:
            scaled = be.mult_const(be.ensure_level(acc_ct, 1), step)
            data = be.add(data, scaled)
        # refresh once here rather than at every later use of the parameter
        return MaybeEncrypted(replace(param.value, data=be.ensure_level(data, 1)), True)

    def apply_update(self, pm: PartyModel, results: list[PassResult], partition: LayerPartition,
                     cfg: nn.SgdConfig) -> PartyModel:
        batch = len(results)
        pm = pm.copy()
        decay = 1.0 - cfg.lr * cfg.weight_decay / cfg.batch_size
        for j in range(1, self.L + 1):
            gws = [r.dw[j - 1] for r in results]
            gbs = [r.db[j - 1] for r in results]
            w, b = pm.w[j - 1], pm.b[j - 1]
            frozen_bias = self.omit_boundary_bias and j in omitted_bias_layers(partition)
            if w.encrypted and j not in self.leaked:
                pm.w[j - 1] = self._update_secret(j, w, gws, "w", cfg, batch)
                if not frozen_bias:
                    pm.b[j - 1] = self._update_secret(j, b, gbs, "b", cfg, batch)
                continue
            if w.encrypted:
                # faulty party: pulls the layer into the clear, without sanction
                w = self.reveal(w, "", sanctioned=False)
                b = self.reveal(b, "", sanctioned=False)
                gws = [self.reveal(g, "", sanctioned=False) if g.encrypted else g for g in gws]
                gbs = [self.reveal(g, "", sanctioned=False) if g.encrypted else g for g in gbs]
            gw = fold_sum([g.value for g in gws])
            gb = fold_sum([g.value for g in gbs])
            taint = w.tainted or any(g.tainted for g in gws + gbs)
            pm.w[j - 1] = plain(decay * np.asarray(w.value) - cfg.lr * (gw / batch), taint)
            if not frozen_bias:
                pm.b[j - 1] = plain(np.asarray(b.value) - cfg.lr * (gb / batch), taint or b.tainted)
        return pm

    # ------------------------------------------------------------ exchange and aggregation
    def _send_model(self, pm: PartyModel, sender: int, receiver: int, mtype: MsgType) -> None:
        for j in range(1, self.L + 1):
            for name, me in (("w", pm.w[j - 1]), ("b", pm.b[j - 1])):
                self.transport.send(Envelope(mtype, self.round_id, sender, receiver, me.nbytes(self.backend)),
                                    encrypted=me.encrypted, tainted=me.tainted,
                                    sanctioned=me.note or None, label=f"{name}{j}")

    def aggregate(self, locals_: list[PartyModel], partition: LayerPartition) -> PartyModel:
        if len(locals_) != self.n_parties:
            raise ValueError(f"aggregation needs {self.n_parties} local models, got {len(locals_)}")
        be = self.backend
        n = len(locals_)
        ws, bs = [], []
        for j in range(1, self.L + 1):
            for store, pick in ((ws, lambda m: m.w[j - 1]), (bs, lambda m: m.b[j - 1])):
                items = [pick(m) for m in locals_]
                enc = [m for m in items if m.encrypted]
                if enc:
                    acc = enc[0].value.data
                    for m in enc[1:]:
                        acc = be.add(acc, m.value.data)
                    kind = "w" if store is ws else "b"
                    for m in items:
                        if not m.encrypted:
                            acc = be.add_plain(acc, self._slots_of(j, m.value, kind))
                    acc = be.mult_const(be.ensure_level(acc, 1), 1.0 / n)
                    store.append(MaybeEncrypted(replace(enc[0].value, data=acc), True))
                else:
                    store.append(plain(fold_sum([m.value for m in items]) / n, any(m.tainted for m in items)))
        return PartyModel(ws, bs)

    # ------------------------------------------------------------ audit
    def status_violations(self, schedule: Schedule) -> list:
        out = []
        maps = {}
        for rnd, party, name, j, status in self.observed:
            part = schedule.at(max(rnd, 1))
            if part not in maps:
                maps[part] = enc_status_map(part, omit_bias=self.omit_boundary_bias)
            want = maps[part][(name, j)]
            if want != status:
                out.append({"round": rnd, "party": party, "quantity": f"{name}{j}",
                            "expected": want, "observed": status})
        return out

    # ------------------------------------------------------------ prediction
    def predict_internal(self, pm: PartyModel, x, partition: LayerPartition) -> np.ndarray:
        self._partition = partition
        _, trace_l, _ = self.forward(pm, x, partition, record=False)
        out = trace_l[self.L]
        if out.encrypted:
            out = self.reveal(out, OUTPUT_RELEASE)
        return np.asarray(out.value)

    def predict_external(self, pm: PartyModel, x) -> MaybeEncrypted:
        """Every layer under encryption: the querier's input never appears in the clear.

        Exposed layers are multiplied as plaintext matrices and use the
        polynomial activation. Returns the encrypted output scores.
        """
        pk, be = self.packer, self.backend
        o = self.orientation(1)
        l = pk.encode_vector(x, in_layout(o), next_pow2(self.arch.widths[1]), encrypt=True)
        for j in range(1, self.L + 1):
            o = self.orientation(j)
            cp = next_pow2(self.arch.widths[j])
            if j > 1:
                l = pk.to_input(l, o, cp)
            w, b = pm.w[j - 1], pm.b[j - 1]
            wm = w.value if isinstance(w.value, PackedMatrix) else pk.encode_matrix(w.value, o, encrypt=False)
            prod = pk.vm_mult(self._need(l, 1), self._need(wm, 1))
            if isinstance(b.value, PackedVector):
                u = replace(prod, data=be.add(prod.data, b.value.data))
            else:
                u = replace(prod, data=be.add_plain(prod.data, pk.vector_slots(b.value, out_layout(o))))
            if self.arch.activations[j - 1] == "sigmoid":
                l = pk.sigmoid(self._need(u, self.sig_levels), self.coeffs, self.bound)
            else:
                l = pk.clean(self._need(u, 1))
        return MaybeEncrypted(l, True)

    def release_to_querier(self, me: MaybeEncrypted) -> np.ndarray:
        return np.asarray(self.reveal(me, OUTPUT_RELEASE).value)


def fold_sum(arrays):
    """Left-to-right sum (fixed order keeps plaintext runs bit-reproducible)."""
    total = arrays[0]
    for a in arrays[1:]:
        total = total + a
    return total


def omitted_bias_layers(partition: LayerPartition) -> set[int]:
    """Last layer of an interior secret group: its bias gradient would be decrypted."""
    return {j for j in partition.secret if j < partition.depth and (j + 1) not in partition.secret}


# ---------------------------------------------------------------- orchestration

def _plain_flops(arch: nn.ModelArch, partition: LayerPartition) -> float:
    return sum(6.0 * arch.widths[j - 1] * arch.widths[j] for j in partition.exposed)


def evaluate(model: nn.Model, data) -> tuple[float, float]:
    pred = nn.predict(model, data.x)
    loss = float(0.5 * np.sum((pred - data.y) ** 2) / len(data))
    return loss, float(np.mean(np.argmax(pred, axis=1) == np.argmax(data.y, axis=1)))


def global_training(session: Session, parts, test, cfg: nn.SgdConfig, schedule: Schedule | LayerPartition,
                    init_scheme: str = "xavier", checkpoint_every: int = 10, dp=None,
                    dp_bounds=None, on_round=None) -> RunResult:
    """Setup, initial encryption, then E_g rounds of broadcast, local training and aggregation."""
    from .. import dp as dpmod

    arch = session.arch
    if isinstance(schedule, LayerPartition):
        schedule = constant_schedule(schedule, cfg.global_rounds)
    if len(parts) != session.n_parties:
        raise ValueError(f"{len(parts)} data shares for {session.n_parties} parties")
    for p in parts:
        if p.x.shape[1] != arch.widths[0] or p.y.shape[1] != arch.widths[-1]:
            raise ValueError("dataset dimensions do not match the architecture")
    be = session.backend
    tr = session.transport
    unit = seconds_per_unit(be.params)
    if any(schedule.per_epoch):
        session.setup_keys()
    init = nn.init_model(arch, init_scheme, cfg.seed)
    current = schedule.at(1)
    session.party = SERVER
    gm = session.encrypt_model(init, current)
    checkpoints = {0: init.copy()}
    metrics = []
    dp_rng = np.random.default_rng([cfg.seed, 99])
    for g in range(1, cfg.global_rounds + 1):
        session.round_id = g
        tr.begin_round(g)
        part = schedule.at(g)
        if part.secret - current.secret:
            # delayed encryption: the server encrypts layers entering the secret set
            session.party = SERVER
            before = be.meter.work
            plainm = session.peek_model(gm)
            for j in sorted(part.secret - current.secret):
                gm.w[j - 1], gm.b[j - 1] = session.encrypt_layer(j, plainm.layers[j - 1].w, plainm.layers[j - 1].b)
            tr.log.add_compute(g, SERVER, (be.meter.work - before) * unit)
        if current.secret - part.secret:
            raise ValueError(f"schedule removes layers {sorted(current.secret - part.secret)} at epoch {g}")
        current = part
        for q in range(session.n_parties):
            session._send_model(gm, SERVER, q, MsgType.MODEL_BROADCAST)
        locals_ = []
        for q in range(session.n_parties):
            session.party = q
            before = be.meter.work
            rng = np.random.default_rng([cfg.seed, g, q])
            lm = session.local_training(gm, parts[q], part, cfg, rng)
            if dp is not None and dp.enabled:
                lm = _apply_dp(session, gm, lm, part, cfg, dp, dp_rng, dpmod, dp_bounds)
            seconds = (be.meter.work - before) * unit
            seconds += _plain_flops(arch, part) * len(parts[q]) * cfg.local_epochs * SECONDS_PER_FLOP
            tr.log.add_compute(g, q, seconds)
            session._send_model(lm, q, SERVER, MsgType.LOCAL_UPDATE)
            locals_.append(lm)
        session.party = SERVER
        before = be.meter.work
        gm = session.aggregate(locals_, part)
        tr.log.add_compute(g, SERVER, (be.meter.work - before) * unit)
        view = session.peek_model(gm)
        loss, acc = evaluate(view, test)
        row = {"round": g, "loss": loss, "test_accuracy": acc,
               "secret": " ".join(str(j) for j in sorted(part.secret)),
               **{f"bytes_{k.replace('-', '_')}": v for k, v in tr.log.by_category().items()},
               "bytes_total": tr.log.total_sent(),
               "simulated_seconds": float(sum(tr.log.round_time(r) for r in tr.log.rounds)),
               "decrypts": session.collective_counts["decrypt"],
               "bootstraps": session.collective_counts["bootstrap"]}
        metrics.append(row)
        if checkpoint_every and g % checkpoint_every == 0:
            checkpoints[g] = view
        if on_round is not None:
            on_round(row)
    final = session.peek_model(gm)
    return RunResult(final, metrics, checkpoints, tr, session.status_violations(schedule),
                     taint_audit(tr.transcript), dict(be.meter.counts), dict(session.collective_counts),
                     float(sum(tr.log.round_time(r) for r in tr.log.rounds)))


def _apply_dp(session, gm, lm, part, cfg, dpc, rng, dpmod, bounds=None):
    """Noise the aggregated local gradient of exposed layers, (w_global - w_local) / lr."""
    grads = {}
    for j in sorted(part.exposed):
        grads[f"w{j}"] = (np.asarray(gm.w[j - 1].value) - np.asarray(lm.w[j - 1].value)) / cfg.lr
        grads[f"b{j}"] = (np.asarray(gm.b[j - 1].value) - np.asarray(lm.b[j - 1].value)) / cfg.lr
    noised = dpmod.perturb_exposed_gradients(grads, part, session.arch, dpc, rng, bounds)
    out = lm.copy()
    for j in sorted(part.exposed):
        out.w[j - 1] = plain(np.asarray(gm.w[j - 1].value) - cfg.lr * noised[f"w{j}"])
        out.b[j - 1] = plain(np.asarray(gm.b[j - 1].value) - cfg.lr * noised[f"b{j}"])
    return out

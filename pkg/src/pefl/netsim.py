"""In-process star-topology transport with byte-exact framing, traffic
accounting, a bandwidth/delay timing model and a taint audit over the
message transcript.

Every message travels over the link between the server and one party; its
cost (delay + bits / bandwidth) is charged to that party's link. A round's
time is the maximum over parties of link time plus local compute time, which
models synchronous rounds where everyone waits for the slowest party.
"""

from __future__ import annotations

import csv
import io
import json
import struct
from collections import defaultdict, deque
from dataclasses import dataclass, field
from enum import IntEnum

SERVER = 0xFFFF
PROTOCOL_VERSION = 1
_FRAME = struct.Struct("<IBHIHH")   # length, type, version, round, sender, receiver


class MsgType(IntEnum):
    MODEL_BROADCAST = 1
    LOCAL_UPDATE = 2
    DECRYPT_REQUEST = 3
    PARTIAL_DECRYPTION = 4
    BOOTSTRAP_REQUEST = 5
    BOOTSTRAP_SHARE = 6
    BOOTSTRAP_RESULT = 7
    KEYGEN = 8
    PLAINTEXT = 9


CATEGORY = {
    MsgType.MODEL_BROADCAST: "model-broadcast",
    MsgType.LOCAL_UPDATE: "local-update",
    MsgType.DECRYPT_REQUEST: "partial-decryption",
    MsgType.PARTIAL_DECRYPTION: "partial-decryption",
    MsgType.BOOTSTRAP_REQUEST: "bootstrap",
    MsgType.BOOTSTRAP_SHARE: "bootstrap",
    MsgType.BOOTSTRAP_RESULT: "bootstrap",
    MsgType.KEYGEN: "keygen",
    MsgType.PLAINTEXT: "model-broadcast",
}
CATEGORIES = ("model-broadcast", "local-update", "partial-decryption", "bootstrap", "keygen")


class TransportError(RuntimeError):
    pass


@dataclass(frozen=True)
class LinkParams:
    bandwidth: float = 1e9       # bits per second
    delay: float = 0.010         # one-way seconds

    def __post_init__(self):
        if self.bandwidth <= 0 or self.delay <= 0:
            raise ValueError("bandwidth and delay must be positive")

    def message_time(self, nbytes: int) -> float:
        return self.delay + nbytes * 8.0 / self.bandwidth


@dataclass
class Envelope:
    mtype: MsgType
    round_id: int
    sender: int
    receiver: int
    payload: bytes | int = b""   # real bytes, or a byte count for size-only payloads
    version: int = PROTOCOL_VERSION

    @property
    def payload_len(self) -> int:
        return self.payload if isinstance(self.payload, int) else len(self.payload)

    @property
    def wire_size(self) -> int:
        return _FRAME.size + self.payload_len

    def to_bytes(self) -> bytes:
        if isinstance(self.payload, int):
            raise TransportError("size-only payloads have no byte encoding")
        head = _FRAME.pack(len(self.payload), int(self.mtype), self.version,
                           self.round_id, self.sender, self.receiver)
        return head + self.payload

    @classmethod
    def from_bytes(cls, buf: bytes) -> "Envelope":
        if len(buf) < _FRAME.size:
            raise TransportError("truncated frame header")
        length, mtype, version, rid, snd, rcv = _FRAME.unpack_from(buf)
        if mtype not in MsgType._value2member_map_:
            raise TransportError(f"unknown message type {mtype}")
        if version != PROTOCOL_VERSION:
            raise TransportError(f"unsupported protocol version {version}")
        if len(buf) != _FRAME.size + length:
            raise TransportError(f"frame length {length} does not match payload {len(buf) - _FRAME.size}")
        return cls(MsgType(mtype), rid, snd, rcv, bytes(buf[_FRAME.size:]), version)


@dataclass
class TranscriptEntry:
    round_id: int
    sender: int
    receiver: int
    mtype: str
    nbytes: int
    encrypted: bool
    tainted: bool
    sanctioned: str | None
    label: str


@dataclass
class PartyTraffic:
    sent: dict = field(default_factory=lambda: defaultdict(int))
    received: dict = field(default_factory=lambda: defaultdict(int))
    messages_sent: int = 0
    messages_received: int = 0


@dataclass
class TrafficLog:
    n_parties: int
    parties: dict = field(default_factory=dict)
    # round -> party -> seconds
    comm_time: dict = field(default_factory=lambda: defaultdict(lambda: defaultdict(float)))
    compute_time: dict = field(default_factory=lambda: defaultdict(lambda: defaultdict(float)))
    server_compute: dict = field(default_factory=lambda: defaultdict(float))
    rounds: list = field(default_factory=list)

    def __post_init__(self):
        for p in list(range(self.n_parties)) + [SERVER]:
            self.parties.setdefault(p, PartyTraffic())

    def total_sent(self) -> int:
        return sum(sum(t.sent.values()) for t in self.parties.values())

    def total_received(self) -> int:
        return sum(sum(t.received.values()) for t in self.parties.values())

    def by_category(self) -> dict:
        out = {c: 0 for c in CATEGORIES}
        for t in self.parties.values():
            for c, v in t.sent.items():
                out[c] += v
        return out

    def add_compute(self, round_id: int, party: int, seconds: float) -> None:
        if party == SERVER:
            self.server_compute[round_id] += seconds
        else:
            self.compute_time[round_id][party] += seconds

    def round_time(self, round_id: int) -> float:
        parties = set(self.comm_time[round_id]) | set(self.compute_time[round_id])
        worst = max((self.comm_time[round_id][p] + self.compute_time[round_id][p] for p in parties), default=0.0)
        return worst + self.server_compute.get(round_id, 0.0)

    def comm_seconds(self) -> float:
        return sum(max(self.comm_time[r].values(), default=0.0) for r in self.rounds)

    def to_rows(self) -> list[dict]:
        rows = []
        for pid in sorted(self.parties):
            t = self.parties[pid]
            name = "server" if pid == SERVER else f"party{pid}"
            for c in CATEGORIES:
                rows.append({"endpoint": name, "category": c, "sent": t.sent.get(c, 0),
                             "received": t.received.get(c, 0)})
        return rows

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.DictWriter(buf, ["endpoint", "category", "sent", "received"], lineterminator="\n")
        w.writeheader()
        w.writerows(self.to_rows())
        return buf.getvalue()

    def to_json(self) -> str:
        return json.dumps({"rows": self.to_rows(), "by_category": self.by_category(),
                           "total": self.total_sent()}, sort_keys=True)


class Transport:
    """FIFO per directed link, with accounting and a transcript."""

    def __init__(self, n_parties: int, link: LinkParams | None = None, keep_payloads: bool = False):
        self.n_parties = n_parties
        self.link = link or LinkParams()
        self.log = TrafficLog(n_parties)
        self.transcript: list[TranscriptEntry] = []
        self.queues: dict[tuple[int, int], deque] = defaultdict(deque)
        self.keep_payloads = keep_payloads
        self.round_id = 0

    def _known(self, pid: int) -> bool:
        return pid == SERVER or 0 <= pid < self.n_parties

    def begin_round(self, round_id: int) -> None:
        self.round_id = round_id
        if round_id not in self.log.rounds:
            self.log.rounds.append(round_id)

    def send(self, env: Envelope, *, encrypted: bool = True, tainted: bool = False,
             sanctioned: str | None = None, label: str = "") -> None:
        if not (self._known(env.sender) and self._known(env.receiver)):
            raise TransportError(f"unknown peer in {env.sender}->{env.receiver}")
        if (env.sender == SERVER) == (env.receiver == SERVER):
            raise TransportError("star topology: every message has the server on one end")
        size = env.wire_size
        cat = CATEGORY[env.mtype]
        self.log.parties[env.sender].sent[cat] += size
        self.log.parties[env.sender].messages_sent += 1
        self.log.parties[env.receiver].received[cat] += size
        self.log.parties[env.receiver].messages_received += 1
        party = env.receiver if env.sender == SERVER else env.sender
        self.log.comm_time[env.round_id][party] += self.link.message_time(size)
        if env.round_id not in self.log.rounds:
            self.log.rounds.append(env.round_id)
        self.transcript.append(TranscriptEntry(env.round_id, env.sender, env.receiver, env.mtype.name,
                                               size, encrypted, tainted, sanctioned, label))
        if not self.keep_payloads and not isinstance(env.payload, int):
            env = Envelope(env.mtype, env.round_id, env.sender, env.receiver, len(env.payload), env.version)
        self.queues[(env.sender, env.receiver)].append(env)

    def recv(self, sender: int, receiver: int) -> Envelope:
        if not (self._known(sender) and self._known(receiver)):
            raise TransportError(f"unknown peer in {sender}->{receiver}")
        q = self.queues[(sender, receiver)]
        if not q:
            raise TransportError(f"no pending message {sender}->{receiver}")
        return q.popleft()

    def drain(self) -> None:
        self.queues.clear()


def simulated_time(log: TrafficLog) -> float:
    """Sum over rounds of the slowest party's link + compute time, plus server compute."""
    return sum(log.round_time(r) for r in log.rounds)


def transcript_time(transcript, link: LinkParams, compute: dict | None = None) -> float:
    """Recompute the round-barrier time of a transcript under another link."""
    per = defaultdict(lambda: defaultdict(float))
    for e in transcript:
        party = e.receiver if e.sender == SERVER else e.sender
        per[e.round_id][party] += link.message_time(e.nbytes)
    compute = compute or {}
    total = 0.0
    for r in sorted(set(per) | set(compute)):
        parties = set(per[r]) | set(compute.get(r, {}))
        total += max((per[r][p] + compute.get(r, {}).get(p, 0.0) for p in parties), default=0.0)
    return total


def taint_audit(transcript) -> list[TranscriptEntry]:
    """Plaintext messages carrying secret-derived values outside a sanctioned decryption."""
    return [e for e in transcript if e.tainted and not e.encrypted and e.sanctioned is None]

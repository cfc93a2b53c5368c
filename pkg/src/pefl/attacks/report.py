"""Attack results in a flat, serializable form."""

from __future__ import annotations

import csv
import io
import json
from dataclasses import asdict, dataclass, field

COLUMNS = ("attack", "layer", "kind", "epoch", "mean_acc", "max_acc", "runs")
SCHEMA_VERSION = 1


@dataclass
class AttackRow:
    attack: str
    layer: int | str
    kind: str
    epoch: int | str
    mean_acc: float | str
    max_acc: float | str
    runs: int


@dataclass
class AttackReport:
    rows: list[AttackRow] = field(default_factory=list)
    baseline: float = 0.5

    def add(self, attack, layer, kind, epoch, accs) -> AttackRow:
        accs = [float(a) for a in accs]
        for a in accs:
            if not 0.0 <= a <= 1.0:
                raise ValueError(f"accuracy {a} outside [0, 1]")
        row = AttackRow(attack, layer, kind, epoch, sum(accs) / len(accs), max(accs), len(accs))
        self.rows.append(row)
        return row

    def add_blocked(self, attack, layer, kind, epoch) -> AttackRow:
        row = AttackRow(attack, layer, kind, epoch, "blocked", "blocked", 0)
        self.rows.append(row)
        return row

    def extend(self, other: "AttackReport") -> None:
        self.rows.extend(other.rows)

    def get(self, **match) -> list[AttackRow]:
        return [r for r in self.rows if all(getattr(r, k) == v for k, v in match.items())]

    def mean(self, **match) -> float:
        rows = self.get(**match)
        if len(rows) != 1:
            raise KeyError(f"{len(rows)} rows match {match}")
        return float(rows[0].mean_acc)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.DictWriter(buf, COLUMNS, lineterminator="\n")
        w.writeheader()
        for r in self.rows:
            d = asdict(r)
            for k in ("mean_acc", "max_acc"):
                if isinstance(d[k], float):
                    d[k] = f"{d[k]:.6f}"
            w.writerow(d)
        return buf.getvalue()

    def to_json(self) -> str:
        return json.dumps({"version": SCHEMA_VERSION, "baseline": self.baseline,
                           "rows": [asdict(r) for r in self.rows]}, sort_keys=True)

    @classmethod
    def from_csv(cls, text: str) -> "AttackReport":
        rep = cls()
        for d in csv.DictReader(io.StringIO(text)):
            conv = {}
            for k in ("layer", "epoch"):
                conv[k] = int(d[k]) if d[k].lstrip("-").isdigit() else d[k]
            for k in ("mean_acc", "max_acc"):
                try:
                    conv[k] = float(d[k])
                except ValueError:
                    conv[k] = d[k]
            rep.rows.append(AttackRow(d["attack"], conv["layer"], d["kind"], conv["epoch"],
                                      conv["mean_acc"], conv["max_acc"], int(d["runs"])))
        return rep

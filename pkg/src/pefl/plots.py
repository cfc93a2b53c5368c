"""PNG renderings of the CSV outputs (headless matplotlib)."""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

_META = {"Software": None}   # keep PNG bytes free of version strings


def _save(fig, path) -> str:
    fig.tight_layout()
    fig.savefig(path, dpi=100, metadata=_META)
    plt.close(fig)
    return str(path)


def training_curves(rows: list[dict], path) -> str:
    fig, ax = plt.subplots(1, 2, figsize=(9, 3.5))
    r = [x["round"] for x in rows]
    ax[0].plot(r, [x["loss"] for x in rows])
    ax[0].set_xlabel("global epoch")
    ax[0].set_ylabel("test loss")
    ax[1].plot(r, [x["test_accuracy"] for x in rows])
    ax[1].set_xlabel("global epoch")
    ax[1].set_ylabel("test accuracy")
    return _save(fig, path)


def accuracy_by_layer(report, path, epoch=None) -> str:
    fig, ax = plt.subplots(figsize=(5, 3.5))
    rows = [r for r in report.rows if r.runs > 0 and r.attack == "membership"]
    if epoch is None and rows:
        epoch = max(int(r.epoch) for r in rows)
    for kind in ("output", "gradient"):
        pts = sorted((int(r.layer), float(r.mean_acc)) for r in rows
                     if r.kind == kind and int(r.epoch) == epoch)
        if pts:
            ax.plot(*zip(*pts), marker="o", label=kind)
    ax.axhline(report.baseline, color="grey", ls="--", lw=1)
    ax.set_xlabel("layer")
    ax.set_ylabel("attack accuracy")
    ax.set_title(f"membership, epoch {epoch}")
    ax.legend()
    return _save(fig, path)


def accuracy_by_epoch(report, path, kind: str = "output") -> str:
    fig, ax = plt.subplots(figsize=(5, 3.5))
    rows = [r for r in report.rows if r.runs > 0 and r.attack == "membership" and r.kind == kind]
    for layer in sorted({int(r.layer) for r in rows}):
        pts = sorted((int(r.epoch), float(r.mean_acc)) for r in rows if int(r.layer) == layer)
        ax.plot(*zip(*pts), marker=".", label=f"layer {layer}")
    ax.axhline(report.baseline, color="grey", ls="--", lw=1)
    ax.set_xlabel("global epoch")
    ax.set_ylabel("attack accuracy")
    ax.legend()
    return _save(fig, path)


def tradeoff(rows: list[dict], path) -> str:
    fig, ax = plt.subplots(figsize=(5, 3.5))
    ok = [r for r in rows if r.get("status") == "ok"]
    ax.plot([r["simulated_seconds"] for r in ok], [r["leakage"] for r in ok], marker="o")
    for r in ok:
        ax.annotate(f"T={r['T']}", (r["simulated_seconds"], r["leakage"]))
    ax.set_xscale("symlog")
    ax.set_xlabel("simulated training time (s)")
    ax.set_ylabel("membership accuracy")
    return _save(fig, path)


def microbench(rows, path) -> str:
    fig, ax = plt.subplots(figsize=(7, 4))
    names = [r.operation for r in rows]
    ax.barh(names, [r.computation_s for r in rows], label="computation")
    ax.barh(names, [r.communication_s for r in rows], left=[r.computation_s for r in rows], label="communication")
    ax.set_xlabel("seconds")
    ax.invert_yaxis()
    ax.legend()
    return _save(fig, path)


def schedule(sched, path) -> str:
    fig, ax = plt.subplots(figsize=(6, 2.5))
    for g, s in enumerate(sched.per_epoch, start=1):
        for j in s:
            ax.plot([g], [j], "s", color="tab:red", ms=2)
    ax.set_ylim(0.5, sched.depth + 0.5)
    ax.set_xlabel("global epoch")
    ax.set_ylabel("encrypted layer")
    return _save(fig, path)

"""Experiment driver.

    pefl train CONFIG            federated training, metrics, checkpoints, traffic
    pefl attack RUN_DIR          membership / inversion / property attacks on checkpoints
    pefl tradeoff CONFIG         one training + membership run per exposed prefix T
    pefl microbench              per-operation cost table
    pefl select-layers CSV...    per-epoch secret-layer schedule from attack curves
    pefl rerun MANIFEST          repeat a recorded command

Outputs land in --out, or in $PEFL_OUTPUT_ROOT/<name> (default ./runs/<name>).
Every output directory gets a manifest.json listing its files with sha256.
Exit codes: 0 ok, 2 configuration or usage error, 3 run failure.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import io
import json
import os
import subprocess
import sys
from pathlib import Path

import numpy as np

from . import __version__, config, data, dp, microbench, nn, plots
from .attacks import inversion, membership, property as prop
from .attacks.features import ExposureMask
from .attacks.report import AttackReport
from .backend import make_backend
from .ckks.params import preset as ckks_preset
from .netsim import LinkParams
from .protocol import efficiency
from .protocol.partition import LayerPartition, Schedule, delayed_encryption_schedule, select_secret_layers
from .protocol.training import Session, global_training
from .threshold import FloodConfig

OUTPUT_ROOT_ENV = "PEFL_OUTPUT_ROOT"
MANIFEST = "manifest.json"
RERUN_SNAPSHOT = "_rerun_config.toml"
MANIFEST_VERSION = 1
METRICS_VERSION = 1
EXIT_OK, EXIT_CONFIG, EXIT_RUN = 0, 2, 3
REFERENCE_RATIO = 3.1        # full-vs-last slowdown quoted for the original hardware


class UsageError(ValueError):
    """Bad command-line input that is not a config key (exit code 2)."""


class RunFailure(RuntimeError):
    """The run started but could not finish (exit code 3)."""


# ---------------------------------------------------------------- files

def _write(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as f:
        f.write(text)


def _csv_text(rows: list[dict], columns=None) -> str:
    buf = io.StringIO()
    columns = columns or (list(rows[0]) if rows else [])
    w = csv.DictWriter(buf, columns, lineterminator="\n")
    w.writeheader()
    w.writerows(rows)
    return buf.getvalue()


def _read_csv(path) -> list[dict]:
    with open(path, newline="") as f:
        return list(csv.DictReader(f))


def sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


def _git_stamp() -> str:
    try:
        out = subprocess.run(["git", "rev-parse", "HEAD"], cwd=Path(__file__).parent,
                             capture_output=True, text=True, timeout=10)
    except (OSError, subprocess.SubprocessError):
        return "unknown"
    return out.stdout.strip() if out.returncode == 0 else "unknown"


def write_manifest(out: Path, command: str, args: dict, cfg: config.RunConfig | None) -> dict:
    files = {}
    for p in sorted(out.rglob("*")):
        rel = p.relative_to(out).as_posix()
        if p.is_file() and rel not in (MANIFEST, RERUN_SNAPSHOT):
            files[rel] = sha256(p)
    man = {
        "version": MANIFEST_VERSION,
        "command": command,
        "args": args,
        "config": cfg.to_toml() if cfg is not None else None,
        "package_version": __version__,
        "git": _git_stamp(),
        "seeds": {} if cfg is None else {"run": cfg["run"]["seed"], "data": cfg["data"]["seed"]},
        "files": files,
    }
    _write(out / MANIFEST, json.dumps(man, indent=2, sort_keys=True) + "\n")
    return man


def output_dir(explicit, name: str) -> Path:
    if explicit:
        out = Path(explicit)
    else:
        out = Path(os.environ.get(OUTPUT_ROOT_ENV, "runs")) / name
    out.mkdir(parents=True, exist_ok=True)
    return out


# ---------------------------------------------------------------- config -> objects

def arch_of(cfg: config.RunConfig) -> nn.ModelArch:
    acts = cfg["model"]["activations"]
    return nn.ModelArch(tuple(cfg["model"]["widths"]), tuple(acts) if acts else None)


def sgd_of(cfg: config.RunConfig) -> nn.SgdConfig:
    t = cfg["training"]
    return nn.SgdConfig(lr=float(t["lr"]), batch_size=t["batch_size"], weight_decay=float(t["weight_decay"]),
                        local_epochs=t["local_epochs"], global_rounds=t["global_rounds"], seed=cfg["run"]["seed"])


def read_schedule(path, depth: int) -> Schedule:
    try:
        return Schedule.from_rows(depth, _read_csv(path))
    except (OSError, KeyError, ValueError) as exc:
        raise config.ConfigError("encryption.schedule", f"{path}: {exc}") from None


def schedule_of(cfg: config.RunConfig) -> Schedule:
    enc, rounds = cfg["encryption"], cfg["training"]["global_rounds"]
    if enc["schedule"] is not None:
        return read_schedule(enc["schedule"], cfg.depth)
    base = LayerPartition(cfg.depth, frozenset(cfg.secret_layers()))
    return delayed_encryption_schedule(base, enc["delayed_start"], rounds)


def session_of(cfg: config.RunConfig, arch: nn.ModelArch) -> Session:
    run, enc, net = cfg["run"], cfg["encryption"], cfg["network"]
    params = ckks_preset(run["ckks_preset"])
    parties = cfg["training"]["parties"]
    be = make_backend(run["backend"], params, parties, run["seed"], FloodConfig(kappa=run["kappa"]))
    return Session(arch, be, parties, LinkParams(float(net["bandwidth"]), float(net["delay"])),
                   bound=float(enc["sigmoid_bound"]), degree=enc["sigmoid_degree"],
                   omit_boundary_bias=enc["omit_boundary_bias"])


def load_dataset(cfg: config.RunConfig) -> data.Dataset:
    d = cfg["data"]
    if d["source"] == "digits":
        return data.load_digits_8x8()
    if d["source"] == "idx":
        return data.mnist_8x8(d["idx_images"], d["idx_labels"])
    if d["source"] == "csv":
        return data.load_tabular_csv(d["csv_path"], d["csv_features"], d["csv_label"])
    ds, _ = data.synth_dataset(d["synthetic_classes"], d["synthetic_dims"], float(d["synthetic_separation"]),
                               float(d["synthetic_noise"]), d["synthetic_size"], d["seed"])
    return ds


def build_data(cfg: config.RunConfig) -> dict:
    """Disjoint train / test / auxiliary pool; train is split over the parties.

    The pool never touches training, so attacks draw their non-members from it.
    """
    ds = load_dataset(cfg)
    d, parties = cfg["data"], cfg["training"]["parties"]
    widths = cfg["model"]["widths"]
    if ds.x.shape[1] != widths[0]:
        raise config.ConfigError("model.widths", f"input width {widths[0]} but data has {ds.x.shape[1]} features")
    if ds.classes != widths[-1]:
        raise config.ConfigError("model.widths", f"output width {widths[-1]} but data has {ds.classes} classes")
    n_train = d["train_size"] or d["per_party"] * parties
    rest = len(ds) - n_train - d["test_size"]
    if rest < 0:
        raise config.ConfigError("data.test_size", f"{n_train} train + {d['test_size']} test exceeds {len(ds)} examples")
    train, test, pool = data.split(ds, [n_train, d["test_size"], rest], d["seed"])
    return {"train": train, "test": test, "pool": pool, "parts": data.partition(train, parties, d["seed"])}


def dp_setup(cfg: config.RunConfig, arch, parts, sgd):
    c = cfg["dp"]
    if not c["enabled"]:
        return None, None
    gamma = c["gamma"]
    if gamma == "auto-pilot":
        bounds = dp.pilot_clip_bounds(arch, parts, sgd, c["pilot_rounds"], c["per_parameter"], cfg["model"]["init"])
        return dp.DpConfig(float(c["epsilon"]), None, True, c["per_parameter"]), bounds
    return dp.DpConfig(float(c["epsilon"]), gamma, True, c["per_parameter"]), None


# ---------------------------------------------------------------- train

def _fmt(v):
    return " ".join(str(x) for x in v) if isinstance(v, (list, tuple)) else v


def run_training(cfg: config.RunConfig, out: Path) -> dict:
    arch = arch_of(cfg)
    sets = build_data(cfg)
    sgd = sgd_of(cfg)
    sched = schedule_of(cfg)
    session = session_of(cfg, arch)
    dpc, bounds = dp_setup(cfg, arch, sets["parts"], sgd)
    out.mkdir(parents=True, exist_ok=True)
    jsonl = out / "metrics.jsonl"
    jsonl.unlink(missing_ok=True)

    def log_round(row):
        with open(jsonl, "a") as f:
            f.write(json.dumps(row, sort_keys=True) + "\n")

    res = global_training(session, sets["parts"], sets["test"], sgd, sched, init_scheme=cfg["model"]["init"],
                          checkpoint_every=cfg["training"]["checkpoint_every"], dp=dpc, dp_bounds=bounds,
                          on_round=log_round)
    _write(out / "metrics.csv", _csv_text(res.metrics))
    _write(out / "traffic.csv", res.transport.log.to_csv())
    _write(out / "traffic.json", res.transport.log.to_json() + "\n")
    _write(out / "schedule.csv", _csv_text(sched.to_rows(), ["epoch", "secret"]))
    _write(out / "config.toml", cfg.to_toml())
    ck = out / "checkpoints"
    if ck.exists():
        for old in ck.glob("epoch_*.json"):
            old.unlink()
    ck.mkdir(exist_ok=True)
    for g, m in sorted(res.checkpoints.items()):
        nn.save_model(m, ck / f"epoch_{g:04d}.json")
    encrypted = sum(e.nbytes for e in res.transport.transcript if e.encrypted)
    audit = {
        "version": METRICS_VERSION,
        "status_violations": res.status_violations,
        "taint_violations": [vars(e) for e in res.taint_violations],
        "collective_counts": res.collective_counts,
        "op_counts": {k: res.op_counts[k] for k in sorted(res.op_counts)},
        "simulated_seconds": res.simulated_seconds,
        "bytes_total": res.transport.log.total_sent(),
        "bytes_encrypted": encrypted,
    }
    _write(out / "audit.json", json.dumps(audit, indent=2, sort_keys=True) + "\n")
    if bounds is not None:
        _write(out / "dp_bounds.json",
               json.dumps({k: np.asarray(v).tolist() for k, v in bounds.items()}, sort_keys=True) + "\n")
    if res.metrics:
        plots.training_curves(res.metrics, out / "training.png")
    if any(sched.per_epoch):
        plots.schedule(sched, out / "schedule.png")
    final = res.metrics[-1] if res.metrics else {}
    return {"result": res, "data": sets, "audit": audit, "final": final, "arch": arch, "schedule": sched}


def cmd_train(args) -> int:
    cfg = config.load(args.config, config.merge_overrides(args.set))
    out = output_dir(args.out, f"train-{Path(args.config).stem if args.config else 'default'}")
    info = run_training(cfg, out)
    write_manifest(out, "train", {"set": list(args.set or [])}, cfg)
    f = info["final"]
    print(f"trained {cfg['training']['global_rounds']} rounds: test accuracy {f.get('test_accuracy', float('nan')):.4f}, "
          f"{len(info['result'].checkpoints)} checkpoints, {out}")
    a = info["audit"]
    if a["status_violations"] or a["taint_violations"]:
        print(f"audit: {len(a['status_violations'])} status and {len(a['taint_violations'])} taint violations",
              file=sys.stderr)
    return EXIT_OK


# ---------------------------------------------------------------- attack

def load_checkpoints(run_dir: Path) -> dict:
    ck = run_dir / "checkpoints"
    files = sorted(ck.glob("epoch_*.json")) if ck.is_dir() else []
    if not files:
        raise RunFailure(f"no checkpoints under {ck}")
    return {int(p.stem.split("_")[1]): nn.load_model(p) for p in files}


def attack_sets(cfg: config.RunConfig, sets: dict) -> tuple[data.Dataset, data.Dataset]:
    a = cfg["attack"]
    k = min(a["members"], a["nonmembers"], len(sets["train"]), len(sets["pool"]))
    if k < 4:
        raise RunFailure(f"only {k} members/non-members available for the membership attack")
    seed = cfg["run"]["seed"]
    return data.subsample(sets["train"], k, seed), data.subsample(sets["pool"], k, seed + 1)


def membership_at(model, g, members, nonmembers, cfg, mask, depth) -> AttackReport:
    a = cfg["attack"]
    wanted = set(a["layers"] or range(1, depth + 1))
    visible = ExposureMask(depth, frozenset(mask.exposed & wanted), mask.outputs, mask.gradients)
    rep = membership.eval_membership_per_layer(model, members, nonmembers, kinds=a["kinds"], runs=a["runs"],
                                               mask=visible, seed=cfg["run"]["seed"], epoch=g)
    for j in sorted(wanted - mask.exposed):
        for kind in a["kinds"]:
            rep.add_blocked(membership.MEMBERSHIP, j, kind, g)
    return rep


def _attack_epochs(cfg, checkpoints) -> list[int]:
    a = cfg["attack"]
    if a["epochs"] is not None:
        return list(a["epochs"])
    return [g for g in sorted(checkpoints) if g % a["cadence"] == 0]


def run_membership(cfg, checkpoints, sched: Schedule, sets, depth) -> AttackReport:
    members, nonmembers = attack_sets(cfg, sets)

    def attack(model, g):
        mask = ExposureMask.from_partition(sched.at(max(g, 1)))
        return membership_at(model, g, members, nonmembers, cfg, mask, depth)

    try:
        return membership.epoch_sweep(checkpoints, attack, epochs=_attack_epochs(cfg, checkpoints))
    except KeyError as exc:
        raise RunFailure(str(exc.args[0])) from None


def run_inversion(cfg, model, g, partition, sets, out: Path) -> AttackReport:
    rep = AttackReport()
    mask = ExposureMask.from_partition(partition)
    a = cfg["attack"]
    rows, images = [], []
    train = sets["train"]
    for c in range(model.arch.widths[-1]):
        try:
            r = inversion.model_inversion(model, c, a["inversion_steps"], float(a["inversion_step_size"]), mask)
        except inversion.InversionBlocked:
            rep.add_blocked("inversion", 1, "input", g)
            return rep
        sel = train.labels == c
        cos = inversion.cosine(r.x, train.x[sel].mean(axis=0)) if sel.any() else float("nan")
        rows.append({"class": c, "confidence": f"{r.confidence:.6f}", "cosine_to_class_mean": f"{cos:.6f}",
                     "steps": r.steps, "converged": int(r.converged)})
        images.append(r.x)
    rep.add("inversion", 1, "input", g, [float(r["converged"]) for r in rows])
    _write(out / "inversion.csv", _csv_text(rows))
    return rep


def run_property(cfg, model, g, partition, sets) -> AttackReport:
    """Property: even label. Auxiliary batches come from the pool."""
    a = cfg["attack"]
    aux = sets["pool"]
    mask = ExposureMask.from_partition(partition)
    rep = AttackReport()
    if not mask.exposed:
        rep.add_blocked(prop.PROPERTY, "all", "gradient", g)
        return rep
    rng = np.random.default_rng([cfg["run"]["seed"], 7])
    feats, labels = prop.batch_gradients(model, aux, aux.labels % 2 == 0, a["property_batches"], rng, mask=mask)
    rep.extend(prop.property_inference(feats, labels, a["property_trees"], cfg["run"]["seed"], epoch=g))
    for j in sorted(partition.secret):
        rep.add_blocked(prop.PROPERTY, j, "gradient", g)
    return rep


ATTACKS = ("membership", "inversion", "property")


def _series(report: AttackReport, out: Path) -> None:
    rows = [r for r in report.rows if r.attack == membership.MEMBERSHIP and r.runs > 0]
    if not rows:
        return
    last = max(int(r.epoch) for r in rows)
    by_layer = [{"kind": r.kind, "layer": r.layer, "accuracy": f"{float(r.mean_acc):.6f}"}
                for r in rows if int(r.epoch) == last]
    by_epoch = [{"kind": r.kind, "layer": r.layer, "epoch": r.epoch, "accuracy": f"{float(r.mean_acc):.6f}"}
                for r in sorted(rows, key=lambda r: (r.kind, int(r.layer), int(r.epoch)))]
    _write(out / "membership_by_layer.csv", _csv_text(by_layer, ["kind", "layer", "accuracy"]))
    _write(out / "membership_by_epoch.csv", _csv_text(by_epoch, ["kind", "layer", "epoch", "accuracy"]))
    plots.accuracy_by_layer(report, out / "membership_by_layer.png", last)
    for kind in sorted({r.kind for r in rows}):
        plots.accuracy_by_epoch(report, out / f"membership_by_epoch_{kind}.png", kind)


def cmd_attack(args) -> int:
    run_dir = Path(args.run_dir)
    if not (run_dir / "config.toml").is_file():
        raise RunFailure(f"{run_dir} is not a training output directory (config.toml missing)")
    over = config.merge_overrides(args.set)
    if args.config:
        table = dict(config.read_table(args.config).get("attack", {}))
        table.update(over.get("attack", {}))
        over["attack"] = table
    cfg = config.load(run_dir / "config.toml", over)
    wanted = args.attacks.split(",") if args.attacks else list(ATTACKS)
    bad = [w for w in wanted if w not in ATTACKS]
    if bad:
        raise UsageError(f"unknown attacks {bad}; choose from {list(ATTACKS)}")
    checkpoints = load_checkpoints(run_dir)
    sched = read_schedule(run_dir / "schedule.csv", cfg.depth)
    sets = build_data(cfg)
    out = output_dir(args.out, f"attack-{run_dir.name}")
    report = AttackReport()
    final = max(checkpoints)
    if "membership" in wanted:
        report.extend(run_membership(cfg, checkpoints, sched, sets, cfg.depth))
    if "inversion" in wanted:
        report.extend(run_inversion(cfg, checkpoints[final], final, sched.at(max(final, 1)), sets, out))
    if "property" in wanted:
        report.extend(run_property(cfg, checkpoints[final], final, sched.at(max(final, 1)), sets))
    _write(out / "attack_report.csv", report.to_csv())
    _write(out / "attack_report.json", report.to_json() + "\n")
    _write(out / "config.toml", cfg.to_toml())
    _series(report, out)
    write_manifest(out, "attack", {"run_dir": str(run_dir), "attacks": wanted, "set": list(args.set or [])}, cfg)
    print(f"{len(report.rows)} attack rows written to {out}")
    return EXIT_OK


# ---------------------------------------------------------------- tradeoff

def _leakage(report: AttackReport) -> float:
    accs = [float(r.mean_acc) for r in report.rows if r.runs > 0]
    return max(accs, default=report.baseline)


def cmd_tradeoff(args) -> int:
    base_over = config.merge_overrides(args.set)
    cfg = config.load(args.config, base_over)
    prefixes = [int(t) for t in args.prefixes.split(",")] if args.prefixes else cfg["tradeoff"]["prefixes"]
    rounds = cfg["tradeoff"]["rounds"] or cfg["training"]["global_rounds"]
    out = output_dir(args.out, f"tradeoff-{Path(args.config).stem if args.config else 'default'}")
    rows = []
    for T in prefixes:
        if not 0 <= T <= cfg.depth:
            raise config.ConfigError("tradeoff.prefixes", f"{T} outside 0..{cfg.depth}")
        sub = {**base_over,
               "encryption": {**base_over.get("encryption", {}), "exposed_prefix": T, "secret": None,
                              "schedule": None, "delayed_start": 1},
               "training": {**base_over.get("training", {}), "global_rounds": rounds}}
        sub_dir = out / f"T{T}"
        row = {"T": T, "secret": " ".join(str(j) for j in range(T + 1, cfg.depth + 1))}
        try:
            tcfg = config.load(args.config, sub)
            info = run_training(tcfg, sub_dir)
            last = info["result"].checkpoints[max(info["result"].checkpoints)]
            members, nonmembers = attack_sets(tcfg, info["data"])
            mask = ExposureMask.from_partition(LayerPartition.suffix(tcfg.depth, T))
            rep = membership_at(last, rounds, members, nonmembers, tcfg, mask, tcfg.depth)
            _write(sub_dir / "attack_report.csv", rep.to_csv())
            write_manifest(sub_dir, "train", {"set": [], "tradeoff_T": T}, tcfg)
            row.update(status="ok", simulated_seconds=info["audit"]["simulated_seconds"],
                       bytes_total=info["audit"]["bytes_total"], bytes_encrypted=info["audit"]["bytes_encrypted"],
                       test_accuracy=info["final"]["test_accuracy"], leakage=_leakage(rep), error="")
        except (RunFailure, ValueError, ArithmeticError, RuntimeError, OSError) as exc:
            row.update(status="failed", simulated_seconds="", bytes_total="", bytes_encrypted="",
                       test_accuracy="", leakage="", error=f"{type(exc).__name__}: {exc}")
            print(f"T={T} failed: {exc}", file=sys.stderr)
        rows.append(row)
    cols = ["T", "secret", "status", "simulated_seconds", "bytes_total", "bytes_encrypted",
            "test_accuracy", "leakage", "error"]
    _write(out / "tradeoff.csv", _csv_text(rows, cols))
    plots.tradeoff(rows, out / "tradeoff.png")

    L = cfg.depth
    ok = {r["T"]: r for r in rows if r["status"] == "ok"}
    ratio = {"reference_ratio": REFERENCE_RATIO}
    if 0 in ok and L - 1 in ok:
        ratio["measured_time_ratio"] = ok[0]["simulated_seconds"] / ok[L - 1]["simulated_seconds"]
        ratio["measured_bytes_ratio"] = ok[0]["bytes_total"] / ok[L - 1]["bytes_total"]
        sets = build_data(cfg)
        model = efficiency.LevelFlowModel(arch_of(cfg), ckks_preset(cfg["run"]["ckks_preset"]),
                                          cfg["training"]["parties"], degree=cfg["encryption"]["sigmoid_degree"],
                                          bound=float(cfg["encryption"]["sigmoid_bound"]))
        ratio["analytic_bytes_ratio"] = efficiency.full_vs_last_ratio(
            model, rounds, [len(p) for p in sets["parts"]], cfg["training"]["local_epochs"])
    _write(out / "ratio.csv", _csv_text([ratio], sorted(ratio)))
    write_manifest(out, "tradeoff", {"prefixes": prefixes, "set": list(args.set or [])}, cfg)
    for r in rows:
        print(f"T={r['T']} {r['status']} time={r['simulated_seconds']} leakage={r['leakage']}")
    return EXIT_OK if len(ok) == len(rows) else EXIT_RUN


# ---------------------------------------------------------------- microbench

def cmd_microbench(args) -> int:
    cfg = config.load(args.config, config.merge_overrides(args.set))
    preset = args.preset or cfg["run"]["ckks_preset"]
    backend = args.backend or cfg["run"]["backend"]
    net = cfg["network"]
    rows = microbench.microbench(preset, arch_of(cfg), cfg["training"]["parties"],
                                 LinkParams(float(net["bandwidth"]), float(net["delay"])),
                                 args.repetitions, backend, cfg["run"]["seed"])
    out = output_dir(args.out, f"microbench-{preset}")
    _write(out / "microbench.csv", microbench.to_csv(rows))
    if args.wall_clock:
        _write(out / "microbench_wall.csv", microbench.to_csv(rows, wall_clock=True))
    plots.microbench(rows, out / "microbench.png")
    write_manifest(out, "microbench", {"preset": preset, "backend": backend, "repetitions": args.repetitions,
                                       "wall_clock": bool(args.wall_clock), "set": list(args.set or [])}, cfg)
    print(microbench.to_csv(rows), end="")
    return EXIT_OK


# ---------------------------------------------------------------- select-layers

def _report_path(p: Path) -> Path:
    return p / "attack_report.csv" if p.is_dir() else p


def cmd_select_layers(args) -> int:
    sel_cfg = config.load(args.config, config.merge_overrides(args.set))["selection"]
    kind = args.kind or sel_cfg["kind"]
    combine = args.combine or sel_cfg["combine"]
    reports = []
    for p in args.curves:
        path = _report_path(Path(p))
        if not path.is_file():
            raise UsageError(f"curve file {path} not found")
        reports.append(AttackReport.from_csv(path.read_text()))
    layers = [int(r.layer) for rep in reports for r in rep.rows if str(r.layer).isdigit()]
    depth = args.depth or max(layers, default=0)
    if depth < 1:
        raise UsageError("curve files hold no per-layer rows")
    per_party, epochs = [], None
    for path, rep in zip(args.curves, reports):
        e, arr = membership.curves(rep, depth, kind)
        if not e:
            raise UsageError(f"{path}: no {kind} membership rows")
        if epochs is not None and e != epochs:
            raise UsageError(f"{path}: measured epochs differ from {args.curves[0]}")
        epochs = e
        per_party.append(arr)
    taus = args.tau or [float(sel_cfg["tau"])]
    if len(taus) not in (1, len(per_party)):
        raise UsageError(f"give one tau or one per curve file ({len(per_party)})")
    if any(not 0.5 <= t <= 1.0 for t in taus):
        raise config.ConfigError("selection.tau", "must lie in [0.5, 1]")
    if epochs[0] < 1:
        # the initial model's row governs nothing; training starts at epoch 1
        keep = [i for i, g in enumerate(epochs) if g >= 1]
        epochs = [epochs[i] for i in keep]
        per_party = [a[keep] for a in per_party]
    sel = select_secret_layers(np.stack(per_party), taus if len(taus) > 1 else taus[0], args.epochs,
                               combine, measured_at=epochs)
    out = output_dir(args.out, "select-layers")
    _write(out / "schedule.csv", _csv_text(sel.schedule.to_rows(), ["epoch", "secret"]))
    for i, s in enumerate(sel.per_party):
        _write(out / f"schedule_party{i}.csv", _csv_text(s.to_rows(), ["epoch", "secret"]))
    _write(out / "infeasible.csv", _csv_text([{"party": p, "epoch": g} for p, g in sel.infeasible],
                                             ["party", "epoch"]))
    if any(sel.schedule.per_epoch):
        plots.schedule(sel.schedule, out / "schedule.png")
    write_manifest(out, "select-layers", {"curves": [str(p) for p in args.curves], "tau": taus,
                                          "epochs": args.epochs, "combine": combine, "kind": kind,
                                          "depth": depth, "set": list(args.set or [])}, None)
    for j in range(1, depth + 1):
        g = sel.schedule.first_epoch(j)
        print(f"layer {j}: " + (f"encrypted from epoch {g}" if g else "never encrypted"))
    if sel.infeasible:
        print(f"warning: tau unreachable at {len(sel.infeasible)} (party, epoch) points", file=sys.stderr)
    return EXIT_OK


# ---------------------------------------------------------------- rerun

def cmd_rerun(args) -> int:
    man_path = Path(args.manifest)
    if man_path.is_dir():
        man_path = man_path / MANIFEST
    try:
        man = json.loads(man_path.read_text())
    except (OSError, ValueError) as exc:
        raise UsageError(f"cannot read manifest {man_path}: {exc}") from None
    out = output_dir(args.out, f"{man_path.parent.name}-rerun")
    snap = out / RERUN_SNAPSHOT
    cmd, a = man["command"], man["args"]
    argv: list[str] = [cmd]
    if man.get("config") is not None and cmd in ("train", "tradeoff", "microbench", "attack"):
        _write(snap, man["config"])
    if cmd == "train":
        argv += [str(snap)]
    elif cmd == "tradeoff":
        argv += [str(snap), "--prefixes", ",".join(str(t) for t in a["prefixes"])]
    elif cmd == "microbench":
        argv += ["--config", str(snap), "--preset", a["preset"], "--backend", a["backend"],
                 "--repetitions", str(a["repetitions"])] + (["--wall-clock"] if a["wall_clock"] else [])
    elif cmd == "attack":
        argv += [a["run_dir"], "--config", str(snap), "--attacks", ",".join(a["attacks"])]
    elif cmd == "select-layers":
        argv += list(a["curves"]) + ["--tau", *map(str, a["tau"]), "--combine", a["combine"], "--kind", a["kind"],
                                     "--depth", str(a["depth"])]
        if a["epochs"] is not None:
            argv += ["--epochs", str(a["epochs"])]
    else:
        raise UsageError(f"manifest command {cmd!r} cannot be rerun")
    for s in a.get("set", []):
        argv += ["--set", s]
    argv += ["--out", str(out)]
    code = main(argv)
    snap.unlink(missing_ok=True)
    if code != EXIT_OK:
        return code
    new = json.loads((out / MANIFEST).read_text())
    diffs = [f for f, h in man["files"].items() if f.endswith(".csv") and new["files"].get(f) != h]
    if diffs:
        print("differs from the recorded run: " + ", ".join(diffs), file=sys.stderr)
        return EXIT_RUN if args.check else EXIT_OK
    print(f"rerun matches the recorded CSV outputs ({out})")
    return EXIT_OK


# ---------------------------------------------------------------- entry

def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="pefl", description="Partially encrypted federated learning experiments.")
    sub = ap.add_subparsers(dest="command", required=True)

    def common(p, config_positional=True):
        if config_positional:
            p.add_argument("config", nargs="?", help="TOML config (defaults apply to missing keys)")
        p.add_argument("--set", action="append", metavar="SECTION.KEY=VALUE", help="override one config key")
        p.add_argument("--out", help="output directory (default: $PEFL_OUTPUT_ROOT/<name>)")

    p = sub.add_parser("train", help="run federated training")
    common(p)
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("attack", help="attack the checkpoints of a training run")
    p.add_argument("run_dir")
    p.add_argument("--attacks", help=f"comma list from {','.join(ATTACKS)} (default: all)")
    p.add_argument("--config", help="TOML whose [attack] table replaces the run's")
    common(p, config_positional=False)
    p.set_defaults(fn=cmd_attack)

    p = sub.add_parser("tradeoff", help="training + membership leakage per exposed prefix T")
    common(p)
    p.add_argument("--prefixes", help="comma list of T values (default: tradeoff.prefixes)")
    p.set_defaults(fn=cmd_tradeoff)

    p = sub.add_parser("microbench", help="per-operation cost table")
    p.add_argument("--config")
    p.add_argument("--preset", help="CKKS parameter preset (default: run.ckks_preset)")
    p.add_argument("--backend", choices=("simulated", "lattice"))
    p.add_argument("--repetitions", type=int, default=1)
    p.add_argument("--wall-clock", action="store_true", help="also write measured wall time")
    common(p, config_positional=False)
    p.set_defaults(fn=cmd_microbench)

    p = sub.add_parser("select-layers", help="secret-layer schedule from attack curves (one file per party)")
    p.add_argument("curves", nargs="+", help="attack_report.csv files or attack output directories")
    p.add_argument("--tau", type=float, nargs="+", help="threshold, or one per party (default: selection.tau)")
    p.add_argument("--epochs", type=int, help="schedule length (default: last measured epoch)")
    p.add_argument("--combine", choices=("union", "vote"), help="default: selection.combine")
    p.add_argument("--kind", choices=("output", "gradient"), help="default: selection.kind")
    p.add_argument("--depth", type=int, help="number of layers (default: largest layer in the curves)")
    p.add_argument("--config", help="TOML whose [selection] table supplies the defaults")
    common(p, config_positional=False)
    p.set_defaults(fn=cmd_select_layers)

    p = sub.add_parser("rerun", help="repeat the command recorded in a manifest")
    p.add_argument("manifest", help="manifest.json or its directory")
    p.add_argument("--out")
    p.add_argument("--check", action="store_true", help="exit 3 when a CSV output differs")
    p.set_defaults(fn=cmd_rerun)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except config.ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (RunFailure, data.DataError, membership.ImbalanceError, OSError) as exc:
        print(f"run failed: {exc}", file=sys.stderr)
        return EXIT_RUN


if __name__ == "__main__":
    sys.exit(main())

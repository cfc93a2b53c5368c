"""Run configuration: a TOML file with fixed sections, validated key by key.

Every key has a default matching the desk-scale MNIST-8x8 preset, so an empty
file is a valid plaintext run. Errors name the offending key path.
"""

from __future__ import annotations

import copy
import sys
from dataclasses import dataclass

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

DEFAULTS: dict = {
    "run": {
        "seed": 0,
        "backend": "simulated",        # simulated | lattice
        "ckks_preset": "desk",
        "kappa": 32,                   # flooding-noise bits for joint decryption
    },
    "model": {
        "widths": [64, 30, 20, 10],
        "activations": None,           # default: sigmoid everywhere
        "init": "xavier",              # xavier | normal | zeros
    },
    "training": {
        "parties": 3,
        "global_rounds": 300,
        "local_epochs": 1,
        "batch_size": 1,
        "lr": 0.1,
        "weight_decay": 0.0,
        "checkpoint_every": 10,
    },
    "encryption": {
        "secret": None,                # explicit list of secret layers, or
        "exposed_prefix": None,        # T: encrypt layers T+1..L (default: L, nothing encrypted)
        "schedule": None,              # path to a schedule CSV from select-layers
        "delayed_start": 1,            # first epoch with encryption
        "omit_boundary_bias": False,
        "sigmoid_bound": 10.0,
        "sigmoid_degree": 13,
    },
    "network": {
        "bandwidth": 1e9,              # bits per second
        "delay": 0.010,                # one-way seconds
    },
    "data": {
        "source": "digits",            # digits | idx | synthetic | csv
        "per_party": 30,
        "train_size": None,            # default: per_party * parties
        "test_size": 1000,
        "seed": 0,
        "idx_images": None,
        "idx_labels": None,
        "csv_path": None,
        "csv_features": None,
        "csv_label": "label",
        "synthetic_classes": 10,
        "synthetic_dims": 64,
        "synthetic_separation": 3.0,
        "synthetic_noise": 1.0,
        "synthetic_size": 2000,
    },
    "dp": {
        "enabled": False,
        "epsilon": 1.0,
        "gamma": "auto-pilot",         # float, or estimated from a plaintext pilot run
        "per_parameter": False,
        "pilot_rounds": 5,
    },
    "attack": {
        "kinds": ["output", "gradient"],
        "runs": 4,
        "members": 100,
        "nonmembers": 100,
        "cadence": 10,
        "epochs": None,                # default: every checkpoint at the cadence
        "layers": None,                # default: every exposed layer
        "inversion_steps": 500,
        "inversion_step_size": 0.1,
        "property_batches": 400,
        "property_trees": 50,
    },
    "selection": {
        "tau": 0.6,
        "combine": "union",            # union | vote
        "kind": "output",
    },
    "tradeoff": {
        "prefixes": [3, 2, 1, 0],
        "rounds": None,                # default: training.global_rounds
    },
}

_CHOICES = {
    ("run", "backend"): ("simulated", "lattice"),
    ("run", "ckks_preset"): ("desk", "large", "toy"),
    ("model", "init"): ("xavier", "normal", "zeros"),
    ("data", "source"): ("digits", "idx", "synthetic", "csv"),
    ("selection", "combine"): ("union", "vote"),
    ("selection", "kind"): ("output", "gradient"),
}
_POSITIVE = {("training", k) for k in ("parties", "global_rounds", "local_epochs", "batch_size")} | {
    ("network", "bandwidth"), ("network", "delay"), ("dp", "epsilon"), ("data", "per_party"),
    ("data", "test_size"), ("attack", "runs"), ("attack", "cadence"), ("encryption", "sigmoid_bound"),
}


class ConfigError(ValueError):
    def __init__(self, key: str, message: str):
        super().__init__(f"{key}: {message}")
        self.key = key


@dataclass
class RunConfig:
    raw: dict

    def __getitem__(self, section: str) -> dict:
        return self.raw[section]

    @property
    def depth(self) -> int:
        return len(self.raw["model"]["widths"]) - 1

    def secret_layers(self) -> set[int] | None:
        """Explicit secret set, or None when a schedule file drives encryption."""
        enc = self.raw["encryption"]
        if enc["schedule"] is not None:
            return None
        if enc["secret"] is not None:
            return set(enc["secret"])
        T = self.depth if enc["exposed_prefix"] is None else enc["exposed_prefix"]
        return set(range(T + 1, self.depth + 1))

    def to_toml(self) -> str:
        return dumps_toml(self.raw)


def _merge(base: dict, over: dict, path: str = "") -> dict:
    out = copy.deepcopy(base)
    for k, v in over.items():
        key = f"{path}.{k}" if path else k
        if k not in base:
            raise ConfigError(key, "unknown key")
        if isinstance(base[k], dict):
            if not isinstance(v, dict):
                raise ConfigError(key, "expected a table")
            out[k] = _merge(base[k], v, key)
        else:
            out[k] = v
    return out


def _check_type(key, value, default):
    if default is None or value is None:
        return
    if isinstance(default, bool):
        ok = isinstance(value, bool)
    elif isinstance(default, float):
        ok = isinstance(value, (int, float)) and not isinstance(value, bool)
    elif isinstance(default, int):
        ok = isinstance(value, int) and not isinstance(value, bool)
    elif isinstance(default, str):
        ok = isinstance(value, str) or (key == "dp.gamma" and isinstance(value, (int, float, dict)))
    elif isinstance(default, list):
        ok = isinstance(value, list)
    else:
        ok = True
    if not ok:
        raise ConfigError(key, f"expected {type(default).__name__}, got {type(value).__name__}")


def validate(raw: dict) -> RunConfig:
    for sec, keys in DEFAULTS.items():
        for k, d in keys.items():
            _check_type(f"{sec}.{k}", raw[sec][k], d)
    for (sec, k), allowed in _CHOICES.items():
        if raw[sec][k] not in allowed:
            raise ConfigError(f"{sec}.{k}", f"{raw[sec][k]!r} is not one of {list(allowed)}")
    for sec, k in _POSITIVE:
        if not raw[sec][k] > 0:
            raise ConfigError(f"{sec}.{k}", "must be positive")
    widths = raw["model"]["widths"]
    if len(widths) < 2 or any(not isinstance(w, int) or w < 1 for w in widths):
        raise ConfigError("model.widths", "need at least two positive integer widths")
    L = len(widths) - 1
    acts = raw["model"]["activations"]
    if acts is not None and (len(acts) != L or any(a not in ("sigmoid", "identity") for a in acts)):
        raise ConfigError("model.activations", f"need {L} entries from sigmoid/identity")
    enc = raw["encryption"]
    given = [k for k in ("secret", "exposed_prefix", "schedule") if enc[k] is not None]
    if len(given) > 1:
        raise ConfigError(f"encryption.{given[1]}", f"conflicts with encryption.{given[0]}")
    if enc["secret"] is not None:
        bad = [j for j in enc["secret"] if not isinstance(j, int) or not 1 <= j <= L]
        if bad:
            raise ConfigError("encryption.secret", f"layers {bad} outside 1..{L}")
    if enc["exposed_prefix"] is not None and not 0 <= enc["exposed_prefix"] <= L:
        raise ConfigError("encryption.exposed_prefix", f"must lie in 0..{L}")
    E = raw["training"]["global_rounds"]
    if not 1 <= enc["delayed_start"] <= E + 1:
        raise ConfigError("encryption.delayed_start", f"must lie in 1..{E + 1}")
    if raw["training"]["checkpoint_every"] < 0:
        raise ConfigError("training.checkpoint_every", "must be non-negative")
    if raw["training"]["lr"] < 0:
        raise ConfigError("training.lr", "must be non-negative")
    if not 0.5 <= raw["selection"]["tau"] <= 1.0:
        raise ConfigError("selection.tau", "must lie in [0.5, 1]")
    layers = raw["attack"]["layers"]
    if layers is not None and any(not isinstance(j, int) or not 1 <= j <= L for j in layers):
        raise ConfigError("attack.layers", f"layers must lie in 1..{L}")
    for T in raw["tradeoff"]["prefixes"]:
        if not isinstance(T, int) or not 0 <= T <= L:
            raise ConfigError("tradeoff.prefixes", f"{T!r} outside 0..{L}")
    g = raw["dp"]["gamma"]
    if isinstance(g, str) and g != "auto-pilot":
        raise ConfigError("dp.gamma", "must be a positive number, a per-tensor table or \"auto-pilot\"")
    if isinstance(g, (int, float)) and not g > 0:
        raise ConfigError("dp.gamma", "must be positive")
    d = raw["data"]
    if d["source"] == "idx" and not (d["idx_images"] and d["idx_labels"]):
        raise ConfigError("data.idx_images", "idx source needs idx_images and idx_labels")
    if d["source"] == "csv" and not (d["csv_path"] and d["csv_features"]):
        raise ConfigError("data.csv_path", "csv source needs csv_path and csv_features")
    if d["source"] in ("digits", "idx") and widths[0] != 64:
        raise ConfigError("model.widths", f"input width {widths[0]} does not match 64 image features")
    return RunConfig(raw)


def read_table(path) -> dict:
    with open(path, "rb") as f:
        try:
            return tomllib.load(f)
        except tomllib.TOMLDecodeError as exc:
            raise ConfigError(str(path), str(exc)) from None


def parse_override(text: str) -> dict:
    """'training.lr=0.5' -> {"training": {"lr": 0.5}}; the value is TOML, bare words are strings."""
    key, sep, value = text.partition("=")
    parts = key.strip().split(".")
    if not sep or len(parts) != 2 or not all(parts):
        raise ConfigError(key.strip() or text, "override must look like section.key=value")
    try:
        v = tomllib.loads(f"v = {value.strip()}")["v"]
    except tomllib.TOMLDecodeError:
        v = value.strip()
    return {parts[0]: {parts[1]: v}}


def merge_overrides(items) -> dict:
    out: dict = {}
    for text in items or ():
        for sec, kv in parse_override(text).items():
            out.setdefault(sec, {}).update(kv)
    return out


def load(path=None, overrides: dict | None = None) -> RunConfig:
    raw = {} if path is None else read_table(path)
    merged = _merge(DEFAULTS, raw)
    if overrides:
        merged = _merge(merged, overrides)
    return validate(merged)


def loads(text: str) -> RunConfig:
    try:
        raw = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError("<text>", str(exc)) from None
    return validate(_merge(DEFAULTS, raw))


def _toml_value(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, (int, float)):
        return repr(v)
    if isinstance(v, str):
        return '"' + v.replace("\\", "\\\\").replace('"', '\\"') + '"'
    if isinstance(v, list):
        return "[" + ", ".join(_toml_value(x) for x in v) + "]"
    if isinstance(v, dict):
        return "{ " + ", ".join(f"{k} = {_toml_value(x)}" for k, x in v.items()) + " }"
    raise TypeError(f"cannot write {type(v).__name__} to TOML")


def dumps_toml(raw: dict) -> str:
    """Snapshot writer for the manifest (None values are left out)."""
    lines = []
    for sec, keys in raw.items():
        lines.append(f"[{sec}]")
        for k, v in keys.items():
            if v is not None:
                lines.append(f"{k} = {_toml_value(v)}")
        lines.append("")
    return "\n".join(lines)

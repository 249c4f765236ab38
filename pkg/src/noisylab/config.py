"""Experiment configuration: a flat JSON document, optionally based on a preset.

Every key not given explicitly is filled from the preset (when ``preset`` is
set) and then from ``DEFAULTS``. Unknown keys are rejected with a spelling
suggestion.
"""

from __future__ import annotations

import difflib
import json
import os
import re
from dataclasses import dataclass, replace
from pathlib import Path

from .losses import LossWeights
from .noise import NOISE_KINDS
from .trainers import STRATEGIES, TrainConfig

OUTPUT_ROOT_ENV = "NOISYLAB_OUTPUT_ROOT"
MNIST_DIR_ENV = "NOISYLAB_MNIST_DIR"

DEFAULTS = {
    "preset": None,
    "dataset": "blobs",
    "mnist_dir": None,
    "mnist_protocol": "standard",
    "split_seed": 0,
    "blobs_num_per_class": 500,
    "blobs_num_classes": 4,
    "blobs_dim": 2,
    "blobs_spread": 0.3,
    "blobs_seed": 0,
    "blobs_train_fraction": 0.8,
    "noise_kind": "symmetric",
    "noise_ratio": 0.2,
    "noise_seed": 0,
    "strategy": "mlc",
    "epochs_total": 320,
    "epochs_warmup": 30,
    "epochs_finetune": 180,
    "batch_size": 128,
    "lr_schedule": [[0, 0.001], [140, 0.0001]],
    "forget_rate": None,
    "forget_horizon": 10,
    "alpha": 0.1,
    "beta": 0.4,
    "xi": 0.1,
    "mu": -1.0,
    "lambda_step": 1000.0,
    "K": 10.0,
    "hidden_dims": [256],
    "warmup_plain_ce": False,
    "eval_batch_size": 2048,
    "trials": [[1, 2, 3]],
    "output_dir": None,
}

_INT = "int"
_FLOAT = "float"
_STR = "str"
_BOOL = "bool"
TYPES = {
    "preset": (_STR, True), "dataset": (_STR, False), "mnist_dir": (_STR, True),
    "mnist_protocol": (_STR, False), "split_seed": (_INT, False),
    "blobs_num_per_class": (_INT, False), "blobs_num_classes": (_INT, False),
    "blobs_dim": (_INT, False), "blobs_spread": (_FLOAT, False), "blobs_seed": (_INT, False),
    "blobs_train_fraction": (_FLOAT, False), "noise_kind": (_STR, False),
    "noise_ratio": (_FLOAT, False), "noise_seed": (_INT, False), "strategy": (_STR, False),
    "epochs_total": (_INT, False), "epochs_warmup": (_INT, False),
    "epochs_finetune": (_INT, False), "batch_size": (_INT, False),
    "lr_schedule": ("schedule", False), "forget_rate": (_FLOAT, True),
    "forget_horizon": (_INT, False), "alpha": (_FLOAT, False), "beta": (_FLOAT, False),
    "xi": (_FLOAT, False), "mu": (_FLOAT, False), "lambda_step": (_FLOAT, False),
    "K": (_FLOAT, False), "hidden_dims": ("int_list", False), "warmup_plain_ce": (_BOOL, False),
    "eval_batch_size": (_INT, False), "trials": ("trials", False), "output_dir": (_STR, True),
}
CHOICES = {
    "dataset": ("blobs", "mnist"),
    "mnist_protocol": ("standard", "split"),
    "noise_kind": NOISE_KINDS,
    "strategy": STRATEGIES,
}

FIVE_TRIALS = [[1, 2, 3], [11, 12, 13], [21, 22, 23], [31, 32, 33], [41, 42, 43]]

# label-update step per MNIST noise setting
MNIST_LAMBDA = {
    ("symmetric", 0.2): 1000.0,
    ("symmetric", 0.4): 3000.0,
    ("symmetric", 0.8): 3000.0,
    ("pairflip", 0.2): 2000.0,
    ("pairflip", 0.45): 2500.0,
}
_NOISE_TAGS = {
    ("symmetric", 0.2): "sn02", ("symmetric", 0.4): "sn04", ("symmetric", 0.8): "sn08",
    ("pairflip", 0.2): "pair02", ("pairflip", 0.45): "pair045",
}


def _build_presets():
    presets = {}
    for (kind, ratio), tag in _NOISE_TAGS.items():
        base = {
            "dataset": "mnist",
            "noise_kind": kind,
            "noise_ratio": ratio,
            "epochs_total": 320,
            "epochs_warmup": 30,
            "epochs_finetune": 180,
            "batch_size": 128,
            "lr_schedule": [[0, 0.001], [140, 0.0001]],
            "lambda_step": MNIST_LAMBDA[(kind, ratio)],
            "hidden_dims": [256],
            "trials": FIVE_TRIALS,
        }
        presets[f"mnist_{tag}"] = dict(base, strategy="mlc")
        for strategy in STRATEGIES:
            presets[f"mnist_{tag}_{strategy}"] = dict(base, strategy=strategy)
    # separable blobs, 400 training points per class, schedule scaled to 120 epochs
    presets["blobs_sn04_mlc"] = {
        "dataset": "blobs", "blobs_num_per_class": 500, "blobs_num_classes": 4, "blobs_dim": 2,
        "blobs_spread": 0.3, "blobs_train_fraction": 0.8, "noise_kind": "symmetric",
        "noise_ratio": 0.4, "strategy": "mlc", "epochs_total": 120, "epochs_warmup": 11,
        "epochs_finetune": 68, "lr_schedule": [[0, 0.001], [52, 0.0001]], "lambda_step": 1000.0,
        "trials": [[1, 2, 3]],
    }
    return presets


PRESETS = _build_presets()


class ConfigError(ValueError):
    def __init__(self, message, key=None, line=None):
        where = ""
        if key is not None:
            where = f"{key}"
            if line is not None:
                where += f" (line {line})"
            where += ": "
        elif line is not None:
            where = f"line {line}: "
        super().__init__(where + message)
        self.key = key
        self.line = line


@dataclass(frozen=True)
class DatasetSpec:
    kind: str
    mnist_dir: str | None = None
    mnist_protocol: str = "standard"
    split_seed: int = 0
    blobs_num_per_class: int = 500
    blobs_num_classes: int = 4
    blobs_dim: int = 2
    blobs_spread: float = 0.3
    blobs_seed: int = 0
    blobs_train_fraction: float = 0.8


@dataclass(frozen=True)
class NoiseSpec:
    kind: str
    ratio: float
    seed: int


@dataclass(frozen=True)
class ExperimentSpec:
    dataset: DatasetSpec
    noise: NoiseSpec
    train: TrainConfig
    trials: tuple
    output_dir: Path
    resolved: dict

    def with_strategy(self, strategy):
        resolved = dict(self.resolved, strategy=strategy)
        return replace(self, train=replace(self.train, strategy=strategy), resolved=resolved)


def _line_of(text, key):
    if text is None:
        return None
    m = re.search(r'"%s"\s*:' % re.escape(key), text)
    if m is None:
        return None
    return text.count("\n", 0, m.start()) + 1


def _coerce(key, value, text):
    kind, nullable = TYPES[key]
    line = _line_of(text, key)

    def fail(msg):
        raise ConfigError(msg, key, line)

    if value is None:
        if nullable:
            return None
        fail("must not be null")
    if kind == _BOOL:
        if not isinstance(value, bool):
            fail(f"expected a boolean, got {type(value).__name__}")
        return value
    if kind == _INT:
        if isinstance(value, bool) or not isinstance(value, int):
            fail(f"expected an integer, got {value!r}")
        return value
    if kind == _FLOAT:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            fail(f"expected a number, got {value!r}")
        return float(value)
    if kind == _STR:
        if not isinstance(value, str):
            fail(f"expected a string, got {value!r}")
        if key in CHOICES and value not in CHOICES[key]:
            fail(f"must be one of {list(CHOICES[key])}, got {value!r}")
        return value
    if kind == "int_list":
        if not isinstance(value, list) or not all(
                isinstance(v, int) and not isinstance(v, bool) for v in value):
            fail("expected a list of integers")
        return list(value)
    if kind == "schedule":
        if not isinstance(value, list) or not value:
            fail("expected a non-empty list of [epoch, rate] pairs")
        out = []
        for i, pair in enumerate(value):
            if (not isinstance(pair, list) or len(pair) != 2 or isinstance(pair[0], bool)
                    or not isinstance(pair[0], int) or not isinstance(pair[1], (int, float))):
                raise ConfigError("expected [epoch, rate]", f"{key}[{i}]", line)
            out.append([pair[0], float(pair[1])])
        return out
    if kind == "trials":
        if not isinstance(value, list) or not value:
            fail("expected a non-empty list of [net1, net2, shuffle] seed triples")
        out = []
        for i, triple in enumerate(value):
            if (not isinstance(triple, list) or len(triple) != 3
                    or not all(isinstance(s, int) and not isinstance(s, bool) for s in triple)):
                raise ConfigError("expected three integer seeds", f"{key}[{i}]", line)
            out.append(list(triple))
        return out
    raise AssertionError(kind)


def resolve(doc, text=None, base_dir=None):
    """Merge a raw config mapping with its preset and the defaults, then validate."""
    if not isinstance(doc, dict):
        raise ConfigError("top level must be a JSON object")
    for key in doc:
        if key not in DEFAULTS:
            hint = difflib.get_close_matches(key, DEFAULTS, n=1)
            msg = "unknown key"
            if hint:
                msg += f"; did you mean {hint[0]!r}?"
            raise ConfigError(msg, key, _line_of(text, key))
    merged = dict(DEFAULTS)
    preset = doc.get("preset")
    if preset is not None:
        if preset not in PRESETS:
            hint = difflib.get_close_matches(str(preset), PRESETS, n=1)
            msg = f"unknown preset {preset!r}"
            if hint:
                msg += f"; did you mean {hint[0]!r}?"
            raise ConfigError(msg, "preset", _line_of(text, "preset"))
        merged.update(PRESETS[preset])
    merged.update(doc)
    resolved = {k: _coerce(k, merged[k], text if k in doc else None) for k in DEFAULTS}
    _check_constraints(resolved, text, doc)
    if resolved["dataset"] == "mnist" and resolved["mnist_dir"] is None:
        resolved["mnist_dir"] = os.environ.get(MNIST_DIR_ENV, "data/mnist")
    if resolved["mnist_dir"] is not None and base_dir is not None:
        p = Path(resolved["mnist_dir"])
        if not p.is_absolute() and "mnist_dir" in doc:
            resolved["mnist_dir"] = str(Path(base_dir) / p)
    if resolved["forget_rate"] is None:
        resolved["forget_rate"] = resolved["noise_ratio"]
    return resolved


def _check_constraints(r, text, doc):
    def fail(key, msg):
        raise ConfigError(msg, key, _line_of(text, key) if key in doc else None)

    if r["epochs_warmup"] + r["epochs_finetune"] > r["epochs_total"]:
        fail("epochs_warmup", "constraint epochs_warmup + epochs_finetune <= epochs_total violated "
             f"({r['epochs_warmup']} + {r['epochs_finetune']} > {r['epochs_total']})")
    for key in ("epochs_total", "epochs_warmup", "epochs_finetune", "split_seed"):
        if r[key] < 0:
            fail(key, "must be non-negative")
    for key in ("batch_size", "forget_horizon", "eval_batch_size", "blobs_num_per_class",
                "blobs_dim"):
        if r[key] < 1:
            fail(key, "must be positive")
    if r["blobs_num_classes"] < 2:
        fail("blobs_num_classes", "must be >= 2")
    if not r["blobs_spread"] > 0:
        fail("blobs_spread", "must be > 0")
    if not 0 < r["blobs_train_fraction"] < 1:
        fail("blobs_train_fraction", "must lie in (0, 1)")
    if not 0 <= r["noise_ratio"] < 1:
        fail("noise_ratio", "must lie in [0, 1)")
    if r["forget_rate"] is not None and not 0 <= r["forget_rate"] < 1:
        fail("forget_rate", "must lie in [0, 1)")
    for key in ("alpha", "beta", "xi", "K"):
        if r[key] < 0:
            fail(key, "must be non-negative")
    if r["xi"] > 0 and not r["mu"] < 0:
        fail("mu", "must be negative when xi > 0")
    if r["lr_schedule"][0][0] != 0:
        fail("lr_schedule", "first breakpoint must be at epoch 0")
    starts = [e for e, _ in r["lr_schedule"]]
    if starts != sorted(set(starts)):
        fail("lr_schedule", "breakpoints must be strictly increasing")
    if not r["hidden_dims"] or min(r["hidden_dims"]) < 1:
        fail("hidden_dims", "expected at least one positive width")
    seen = set()
    for triple in r["trials"]:
        t = tuple(triple)
        if t in seen:
            fail("trials", f"duplicate seed triple {list(t)}")
        seen.add(t)


def spec_from_resolved(r, output_dir):
    dataset = DatasetSpec(
        kind=r["dataset"], mnist_dir=r["mnist_dir"], mnist_protocol=r["mnist_protocol"],
        split_seed=r["split_seed"], blobs_num_per_class=r["blobs_num_per_class"],
        blobs_num_classes=r["blobs_num_classes"], blobs_dim=r["blobs_dim"],
        blobs_spread=r["blobs_spread"], blobs_seed=r["blobs_seed"],
        blobs_train_fraction=r["blobs_train_fraction"])
    noise = NoiseSpec(r["noise_kind"], r["noise_ratio"], r["noise_seed"])
    train = TrainConfig(
        strategy=r["strategy"], epochs_total=r["epochs_total"], epochs_warmup=r["epochs_warmup"],
        epochs_finetune=r["epochs_finetune"], batch_size=r["batch_size"],
        lr_schedule=tuple((e, rate) for e, rate in r["lr_schedule"]),
        forget_rate=r["forget_rate"], forget_horizon=r["forget_horizon"],
        weights=LossWeights(r["alpha"], r["beta"], r["xi"], r["mu"]),
        lambda_step=r["lambda_step"], K=r["K"], seeds=tuple(r["trials"][0]),
        hidden_dims=tuple(r["hidden_dims"]), warmup_plain_ce=r["warmup_plain_ce"],
        eval_batch_size=r["eval_batch_size"]).validate()
    trials = tuple(tuple(t) for t in r["trials"])
    return ExperimentSpec(dataset, noise, train, trials, Path(output_dir), r)


def default_output_dir(name):
    return Path(os.environ.get(OUTPUT_ROOT_ENV, "runs")) / name


def parse_config(path):
    path = Path(path)
    text = path.read_text()
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"invalid JSON: {exc.msg}", line=exc.lineno) from exc
    r = resolve(doc, text, base_dir=path.parent)
    out = r["output_dir"]
    if out is None:
        out_path = default_output_dir(path.stem)
    else:
        out_path = Path(out)
        if not out_path.is_absolute():
            out_path = path.parent / out_path
    return spec_from_resolved(r, out_path)


def preset_spec(name, output_dir=None, **overrides):
    """Build a spec straight from a preset name plus keyword overrides."""
    r = resolve(dict(overrides, preset=name))
    return spec_from_resolved(r, output_dir or default_output_dir(name))

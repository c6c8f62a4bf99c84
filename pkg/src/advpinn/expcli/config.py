"""Experiment configuration: JSON schema, presets and conversion to TrainConfig."""

from __future__ import annotations

import copy
import json
from dataclasses import dataclass
from pathlib import Path

import jsonschema

from .. import advobj as ao
from .. import netmod as nm
from ..pdebench import PROBLEMS
from ..rolltrain import AdamConfig, TrainConfig


class ConfigError(ValueError):
    """Invalid experiment configuration; ``messages`` holds one line per problem."""

    def __init__(self, messages):
        self.messages = list(messages)
        super().__init__("\n".join(self.messages))


_ADAM = {
    "type": "object",
    "additionalProperties": False,
    "properties": {
        "lr": {"type": "number", "exclusiveMinimum": 0},
        "beta1": {"type": "number", "minimum": 0, "exclusiveMaximum": 1},
        "beta2": {"type": "number", "minimum": 0, "exclusiveMaximum": 1},
        "eps": {"type": "number", "exclusiveMinimum": 0},
        "decay_gamma": {"type": ["number", "null"], "exclusiveMinimum": 0, "maximum": 1},
        "decay_step": {"type": ["integer", "null"], "minimum": 1},
    },
}

_NET = {
    "type": "object",
    "additionalProperties": False,
    "properties": {
        "widths": {"type": "array", "items": {"type": "integer", "minimum": 1}, "minItems": 1},
        "activation": {"enum": ["tanh"]},
        "residual_links": {"type": "boolean"},
        "spectral_norm": {"type": "boolean"},
        "sigmoid_output": {"type": "boolean"},
    },
}

SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "required": ["problem"],
    "properties": {
        "problem": {"enum": list(PROBLEMS)},
        "family": {"enum": list(ao.FAMILIES)},
        "input_mode": {"enum": list(ao.INPUT_MODES)},
        "gp_coefficient": {"type": "number", "minimum": 0},
        "generator": _NET,
        "discriminator": {"oneOf": [_NET, {"type": "null"}]},
        "grid": {"type": "integer", "minimum": 2},
        "validation_grid": {"type": ["integer", "null"], "minimum": 2},
        "jitter": {"type": "boolean"},
        "seed": {"type": "integer", "minimum": 0},
        "iterations": {"type": "integer", "minimum": 0},
        "mode": {"enum": ["rollback", "fixed"]},
        "g_steps": {"type": "integer", "minimum": 1},
        "d_steps": {"type": "integer", "minimum": 1},
        "gen_adam": _ADAM,
        "disc_adam": _ADAM,
        "include_noop_candidate": {"type": "boolean"},
        "restore_optimizer": {"type": "boolean"},
        "sn_iters": {"type": "integer", "minimum": 1},
        "spectrum_every": {"type": "integer", "minimum": 0},
        "log_wall_time": {"type": "boolean"},
        "output_dir": {"type": "string"},
        "metric_cadence": {"type": "integer", "minimum": 1},
        "checkpoint_every": {"type": "integer", "minimum": 0},
        "ma_window": {"type": "integer", "minimum": 1},
    },
}

DEFAULTS = {
    "family": "lsgan",
    "input_mode": "residual",
    "gp_coefficient": 10.0,
    "generator": {"widths": [20, 20, 20], "activation": "tanh", "residual_links": True},
    "discriminator": {"widths": [20, 20], "activation": "tanh"},
    "grid": 16,
    "validation_grid": None,
    "jitter": False,
    "seed": 0,
    "iterations": 100,
    "mode": "rollback",
    "g_steps": 20,
    "d_steps": 20,
    "gen_adam": {},
    "disc_adam": {},
    "include_noop_candidate": False,
    "restore_optimizer": True,
    "sn_iters": 1,
    "spectrum_every": 1,
    "log_wall_time": False,
    "output_dir": "runs/default",
    "metric_cadence": 1,
    "checkpoint_every": 0,
    "ma_window": 300,
}

# Per-benchmark DEQGAN tuning (laplace1/laplace2 share the Laplace column).
_DEQGAN = {
    "poisson": dict(it=3000, gw=50, gl=4, dw=30, dl=2, glr=0.019, dlr=0.021,
                    gb=(0.139, 0.369), db=(0.745, 0.759), decay=(0.957, 9)),
    "laplace": dict(it=3000, gw=50, gl=4, dw=50, dl=2, glr=0.012, dlr=0.088,
                    gb=(0.295, 0.358), db=(0.575, 0.133), decay=(0.953, 10)),
    "burgers": dict(it=3400, gw=50, gl=3, dw=20, dl=5, glr=0.012, dlr=0.005,
                    gb=(0.185, 0.594), db=(0.093, 0.184), decay=(0.954, 25)),
    "reaction_diffusion": dict(it=4500, gw=50, gl=3, dw=20, dl=5, glr=0.007, dlr=0.009,
                               gb=(0.185, 0.594), db=(0.093, 0.184), decay=(0.954, 10)),
    "klein_gordon": dict(it=4000, gw=50, gl=3, dw=20, dl=5, glr=0.012, dlr=0.005,
                         gb=(0.185, 0.594), db=(0.093, 0.184), decay=(0.954, 10)),
}

PRESETS = ("default-1e-3", "deqgan-table4")


def preset(name: str, problem: str) -> dict:
    """Settings overlaid on the defaults (user keys still win)."""
    if name == "default-1e-3":
        return {"gen_adam": {"lr": 1e-3, "beta1": 0.9, "beta2": 0.999},
                "disc_adam": {"lr": 1e-3, "beta1": 0.9, "beta2": 0.999}}
    if name == "deqgan-table4":
        p = _DEQGAN["laplace" if problem.startswith("laplace") else problem]
        g_decay, step = p["decay"]
        return {
            "family": "gan",
            "input_mode": "residual",
            "mode": "fixed",
            "g_steps": 1,
            "d_steps": 1,
            "iterations": p["it"],
            "grid": 32,
            "generator": {"widths": [p["gw"]] * p["gl"], "activation": "tanh", "residual_links": True},
            "discriminator": {"widths": [p["dw"]] * p["dl"], "activation": "tanh", "residual_links": True,
                              "spectral_norm": True, "sigmoid_output": True},
            "gen_adam": {"lr": p["glr"], "beta1": p["gb"][0], "beta2": p["gb"][1],
                         "decay_gamma": g_decay, "decay_step": step},
            "disc_adam": {"lr": p["dlr"], "beta1": p["db"][0], "beta2": p["db"][1],
                          "decay_gamma": g_decay, "decay_step": step},
        }
    raise ConfigError([f"unknown preset {name!r} (choose from {', '.join(PRESETS)})"])


def validate(doc) -> None:
    v = jsonschema.Draft202012Validator(SCHEMA)
    errs = sorted(v.iter_errors(doc), key=lambda e: list(e.absolute_path))
    if errs:
        msgs = []
        for e in errs:
            where = "/".join(str(p) for p in e.absolute_path) or "<root>"
            msgs.append(f"field {where}: {e.message}")
        raise ConfigError(msgs)


def _merge(base: dict, over: dict) -> dict:
    out = copy.deepcopy(base)
    for k, v in over.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v)
        else:
            out[k] = copy.deepcopy(v)
    return out


@dataclass
class ExperimentConfig:
    doc: dict

    @property
    def output_dir(self) -> Path:
        return Path(self.doc["output_dir"])

    @property
    def ma_window(self) -> int:
        return self.doc["ma_window"]

    @property
    def metric_cadence(self) -> int:
        return self.doc["metric_cadence"]

    @property
    def checkpoint_every(self) -> int:
        return self.doc["checkpoint_every"]

    def with_overrides(self, **kw) -> "ExperimentConfig":
        return resolve(_merge(self.doc, kw))

    def train_config(self) -> TrainConfig:
        d = self.doc
        g = d["generator"]
        gen = nm.NetworkSpec(2, tuple(g["widths"]), g.get("activation", "tanh"),
                             residual_links=g.get("residual_links", False),
                             spectral_norm=g.get("spectral_norm", False),
                             sigmoid_output=g.get("sigmoid_output", False))
        disc = None
        if d["discriminator"] is not None and d["family"] not in ao.MASK_FAMILIES:
            q = d["discriminator"]
            disc = nm.NetworkSpec(1, tuple(q["widths"]), q.get("activation", "tanh"),
                                  residual_links=q.get("residual_links", False),
                                  spectral_norm=q.get("spectral_norm", False),
                                  sigmoid_output=q.get("sigmoid_output", False))
        return TrainConfig(
            problem=d["problem"], gen_spec=gen, disc_spec=disc,
            variant=ao.GanVariant(d["family"], d["input_mode"], d["gp_coefficient"]),
            grid=d["grid"], validation_grid=d["validation_grid"], jitter=d["jitter"],
            seed=d["seed"], iterations=d["iterations"], mode=d["mode"],
            g_steps=d["g_steps"], d_steps=d["d_steps"],
            gen_adam=AdamConfig(**d["gen_adam"]), disc_adam=AdamConfig(**d["disc_adam"]),
            include_noop_candidate=d["include_noop_candidate"],
            restore_optimizer=d["restore_optimizer"], sn_iters=d["sn_iters"],
            spectrum_every=d["spectrum_every"], log_wall_time=d["log_wall_time"],
        )


def resolve(doc: dict, preset_name: str | None = None) -> ExperimentConfig:
    """Validate a raw document, then fill defaults (and an optional preset underneath user keys)."""
    validate(doc)
    base = DEFAULTS
    if preset_name:
        base = _merge(base, preset(preset_name, doc["problem"]))
    full = _merge(base, doc)
    validate(full)
    try:
        ExperimentConfig(full).train_config()
    except (ValueError, TypeError) as exc:
        raise ConfigError([f"config: {exc}"]) from exc
    return ExperimentConfig(full)


def load(path, preset_name: str | None = None) -> ExperimentConfig:
    text = Path(path).read_text()
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError([f"{path}: line {exc.lineno} column {exc.colno}: {exc.msg}"]) from exc
    return resolve(doc, preset_name)

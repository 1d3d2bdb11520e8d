"""Run configuration: one JSON file per run, validated against SCHEMA."""

from __future__ import annotations

import copy
import json
import os
from dataclasses import dataclass, field
from pathlib import Path

import jsonschema

MODES = ("pretrain", "finetune-speech", "finetune-sound", "finetune-unified", "bespoke", "jointembed",
         "sample", "eval")
NEEDS_INIT = ("finetune-speech", "finetune-sound", "finetune-unified", "bespoke", "sample", "eval")

_obj = {"type": "object"}
SCHEMA = {
    "type": "object",
    "required": ["mode", "seed"],
    "additionalProperties": False,
    "properties": {
        "mode": {"enum": list(MODES)},
        "seed": {"type": "integer", "minimum": 0},
        "run_id": {"type": "string"},
        "out_dir": {"type": "string"},
        "steps": {"type": "integer", "minimum": 0},
        "data": {
            "type": "object",
            "required": ["kind"],
            "properties": {
                "kind": {"enum": ["aligned", "mixture"]},
                "path": {"type": "string"},
                "name": {"enum": ["eight_gaussians", "gaussian_1d", "standard_normal"]},
                "n": {"type": "integer", "minimum": 2},
                "n_eval": {"type": "integer", "minimum": 2},
                "labels": {"type": "boolean"},
            },
        },
        "model": {
            "type": "object",
            "properties": {"kind": {"enum": ["mlp", "audio", "duration"]}},
        },
        "train": _obj,
        "mask": {"type": ["object", "null"]},
        "dropout": {"type": ["object", "null"]},
        "solver": _obj,
        "guidance": {"type": "object", "properties": {"weight": {"type": "number", "minimum": 0}}},
        "init_checkpoint": {"type": ["string", "null"]},
        "bespoke_checkpoint": {"type": ["string", "null"]},
        "lora_rank": {"type": ["integer", "null"], "minimum": 1},
        "bespoke": _obj,
        "jointembed": _obj,
        "sample": _obj,
        "eval": _obj,
    },
    "allOf": [
        {"if": {"properties": {"mode": {"enum": list(NEEDS_INIT)}}},
         "then": {"required": ["init_checkpoint"], "properties": {"init_checkpoint": {"type": "string"}}}},
        {"if": {"properties": {"mode": {"enum": ["pretrain", "jointembed"]}}},
         "then": {"required": ["data"]}},
    ],
}


class ConfigError(ValueError):
    def __init__(self, problems: list[str]):
        super().__init__("invalid run config:\n  " + "\n  ".join(problems))
        self.problems = problems


@dataclass
class RunConfig:
    raw: dict
    mode: str
    seed: int
    run_id: str
    out_dir: Path
    steps: int = 0
    sections: dict = field(default_factory=dict)

    def get(self, key, default=None):
        val = self.raw.get(key, default)
        return default if val is None else val

    def section(self, key) -> dict:
        return dict(self.raw.get(key) or {})


def validate(raw: dict) -> None:
    v = jsonschema.Draft202012Validator(SCHEMA)
    problems = []
    for err in sorted(v.iter_errors(raw), key=lambda e: list(e.path)):
        where = "/".join(str(p) for p in err.path) or "<root>"
        problems.append(f"{where}: {err.message}")
    if problems:
        raise ConfigError(problems)


def load_config(source, env: dict | None = None) -> RunConfig:
    """Accepts a path or a dict; FLOWBOX_SEED in ``env`` (default os.environ) overrides the seed."""
    raw = json.loads(Path(source).read_text()) if isinstance(source, (str, Path)) else copy.deepcopy(source)
    env = os.environ if env is None else env
    if env.get("FLOWBOX_SEED"):
        raw["seed"] = int(env["FLOWBOX_SEED"])
    validate(raw)
    run_id = raw.get("run_id") or f"{raw['mode']}-s{raw['seed']}"
    out = Path(raw.get("out_dir") or Path("runs") / run_id)
    return RunConfig(raw, raw["mode"], int(raw["seed"]), run_id, out, int(raw.get("steps", 0)))

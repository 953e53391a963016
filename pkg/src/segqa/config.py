"""Run configuration: defaults, JSON schema, merging and hashing."""

import copy
import hashlib
import json
import os
from pathlib import Path

import jsonschema

from .errors import ValidationError

DATA_ROOT_ENV = "SEGQA_DATA_ROOT"

DEFAULTS = {
    "seed": 0,
    "out": "runs/default",
    "data": {
        "source": "synthetic",
        "count": 500,
        "image_size": 64,
        "acdc_root": None,
        "structure": 2,
        "fractions": [0.7, 0.15, 0.15],
        "corpus": {
            "bins": 10,
            "per_bin": {"train": 100, "val": 30, "test": 30},
            "max_attempts": None,
            "undertrained_segmenter": False,
        },
    },
    "models": {
        "recnet": {"depth": 4, "base_width": 16},
        "regnet": {"widths": [16, 32, 64, 64, 64], "hidden": [128, 64]},
        "segmenter": {"depth": 2, "base_width": 8, "epochs": 2},
    },
    "train": {
        "recnet": {"epochs": 30, "batch_size": 16, "learning_rate": 1e-3, "optimizer": "adam",
                   "early_stop_patience": None},
        "regnet": {"epochs": 30, "batch_size": 16, "learning_rate": 1e-3, "optimizer": "adam",
                   "early_stop_patience": None},
    },
    "attack": {
        "epsilons": [0.0, 0.05, 0.1, 0.2, 0.3],
        "surfaces": ["input_image", "difference_image"],
        "modes": ["proposed", "baseline"],
        "batch_size": 64,
    },
    "eval": {"trend_tolerance": 0.01, "plots": True},
}


def _obj(props, required=None):
    return {"type": "object", "properties": props, "additionalProperties": False,
            "required": list(required if required is not None else props)}


_INT = {"type": "integer"}
_POS_INT = {"type": "integer", "minimum": 1}
_NUM = {"type": "number"}
_TRAIN = _obj({
    "epochs": _POS_INT, "batch_size": _POS_INT, "learning_rate": {"type": "number", "exclusiveMinimum": 0},
    "optimizer": {"enum": ["adam", "sgd"]}, "early_stop_patience": {"type": ["integer", "null"], "minimum": 1},
})

SCHEMA = _obj({
    "seed": _INT,
    "out": {"type": "string"},
    "data": _obj({
        "source": {"enum": ["synthetic", "acdc"]},
        "count": _POS_INT,
        "image_size": {"type": "integer", "minimum": 32},
        "acdc_root": {"type": ["string", "null"]},
        "structure": _INT,
        "fractions": {"type": "array", "items": _NUM, "minItems": 3, "maxItems": 3},
        "corpus": _obj({
            "bins": {"type": "integer", "minimum": 2},
            "per_bin": {"oneOf": [_POS_INT, _obj({s: {"type": "integer", "minimum": 0}
                                                  for s in ("train", "val", "test")})]},
            "max_attempts": {"type": ["integer", "null"], "minimum": 1},
            "undertrained_segmenter": {"type": "boolean"},
        }),
    }),
    "models": _obj({
        "recnet": _obj({"depth": {"type": "integer", "minimum": 2, "maximum": 5},
                        "base_width": {"type": "integer", "minimum": 4}}),
        "regnet": _obj({"widths": {"type": "array", "items": _POS_INT, "minItems": 1},
                        "hidden": {"type": "array", "items": _POS_INT}}),
        "segmenter": _obj({"depth": {"type": "integer", "minimum": 2, "maximum": 5},
                           "base_width": {"type": "integer", "minimum": 4}, "epochs": _POS_INT}),
    }),
    "train": _obj({"recnet": _TRAIN, "regnet": _TRAIN}),
    "attack": _obj({
        "epsilons": {"type": "array", "items": {"type": "number", "minimum": 0}, "minItems": 1},
        "surfaces": {"type": "array", "items": {"enum": ["input_image", "difference_image"]}, "minItems": 1},
        "modes": {"type": "array", "items": {"enum": ["proposed", "baseline"]}, "minItems": 1},
        "batch_size": _POS_INT,
    }),
    "eval": _obj({"trend_tolerance": {"type": "number", "minimum": 0}, "plots": {"type": "boolean"}}),
})


def merge(base, override):
    """Recursive dict merge; ``override`` wins. Unknown keys are kept so validation can reject them."""
    out = copy.deepcopy(base)
    for k, v in override.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict) and k != "per_bin":
            out[k] = merge(out[k], v)
        else:
            out[k] = copy.deepcopy(v)
    return out


def validate(cfg):
    try:
        jsonschema.validate(cfg, SCHEMA)
    except jsonschema.ValidationError as exc:
        where = "/".join(str(p) for p in exc.absolute_path) or "<root>"
        raise ValidationError(f"invalid config at {where}: {exc.message}") from None
    eps = cfg["attack"]["epsilons"]
    if eps != sorted(eps):
        raise ValidationError("attack.epsilons must be sorted ascending")
    return cfg


def load(path=None, overrides=None):
    """Defaults, then the JSON file at ``path``, then ``overrides``; validated."""
    cfg = copy.deepcopy(DEFAULTS)
    if path is not None:
        try:
            cfg = merge(cfg, json.loads(Path(path).read_text()))
        except json.JSONDecodeError as exc:
            raise ValidationError(f"{path}: not valid JSON ({exc})") from None
    if overrides:
        cfg = merge(cfg, overrides)
    env_root = os.environ.get(DATA_ROOT_ENV)
    if env_root:
        cfg["data"]["acdc_root"] = env_root
    return validate(cfg)


def canonical(cfg):
    return json.dumps(cfg, sort_keys=True, separators=(",", ":"))


def digest(cfg):
    """Hash of everything except the output location."""
    body = {k: v for k, v in cfg.items() if k != "out"}
    return hashlib.sha256(canonical(body).encode()).hexdigest()

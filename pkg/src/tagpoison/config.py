"""Config file parsing: a JSON document mapped onto ExperimentSpec."""
from __future__ import annotations

import json

from .attack import AttackConfig
from .defense import OdConfig, PruneConfig
from .errors import ConfigError
from .evaluation import ExperimentSpec
from .models import OptimizerConfig

_TOP_KEYS = {"dataset", "attack", "defense", "prune", "od", "target",
             "repetitions", "seed", "split", "model", "optimizer",
             "vocab_size", "lm_k", "selection", "gen_input"}


def _build(cls, d, section):
    if not isinstance(d, dict):
        raise ConfigError(f"section {section!r} must be an object")
    valid = {f.name for f in cls.__dataclass_fields__.values()}
    unknown = set(d) - valid
    if unknown:
        raise ConfigError(f"unknown field(s) in {section!r}: {sorted(unknown)}")
    return cls(**d)


def spec_from_dict(d):
    unknown = set(d) - _TOP_KEYS
    if unknown:
        raise ConfigError(f"unknown config field(s): {sorted(unknown)}")
    if "dataset" not in d:
        raise ConfigError("config field 'dataset' is required")
    dataset = d["dataset"]
    if not isinstance(dataset, dict) or not (
            set(dataset) == {"synthetic"} or set(dataset) == {"nodes", "edges"}):
        raise ConfigError("'dataset' must contain either 'synthetic' or "
                          "'nodes' and 'edges'")
    kwargs = {"dataset": dataset}
    if d.get("attack") is not None:
        kwargs["attack"] = _build(AttackConfig, d["attack"], "attack")
    kwargs["defense"] = d.get("defense", "none")
    if "prune" in d:
        kwargs["prune"] = _build(PruneConfig, d["prune"], "prune")
    if "od" in d:
        kwargs["od"] = _build(OdConfig, d["od"], "od")
    kwargs["target_kind"] = d.get("target", "gcn")
    kwargs["repetitions"] = int(d.get("repetitions", 5))
    if "seed" not in d:
        raise ConfigError("config field 'seed' is required")
    kwargs["base_seed"] = int(d["seed"])
    split = d.get("split", {})
    for key in split:
        if key not in ("test_fraction", "labeled_fraction", "val_fraction"):
            raise ConfigError(f"unknown field in 'split': {key!r}")
    kwargs.update(split)
    model = d.get("model", {})
    for key in model:
        if key not in ("hidden", "gen_hidden", "dropout"):
            raise ConfigError(f"unknown field in 'model': {key!r}")
    kwargs.update(model)
    if "optimizer" in d:
        kwargs["optimizer"] = _build(OptimizerConfig, d["optimizer"], "optimizer")
    if "vocab_size" in d:
        kwargs["vocab_size"] = int(d["vocab_size"])
    if "lm_k" in d:
        kwargs["lm_k"] = float(d["lm_k"])
    if "selection" in d:
        kwargs["selection"] = d["selection"]
    if "gen_input" in d:
        kwargs["gen_input"] = d["gen_input"]
    spec = ExperimentSpec(**kwargs)
    spec.validate()
    return spec


def load_config(path):
    try:
        with open(path, encoding="utf-8") as f:
            return json.load(f)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config {path} is not valid JSON: {exc}") from exc

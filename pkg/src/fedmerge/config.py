"""Experiment configuration: flat sectioned key-value files (INI dialect).

Unknown sections or keys are hard errors (a silently ignored typo would
invalidate an experiment). ``snapshot()`` emits a canonical file that fully
determines the run; re-running from a snapshot reproduces metrics.csv
byte for byte.
"""

import configparser
import os
from dataclasses import dataclass, fields, replace

from .data import FORMATS

DATA_ROOT_ENV = "FEDMERGE_DATA_ROOT"


class ConfigError(ValueError):
    pass


# section -> key -> (field name, parser)
def _bool(s: str) -> bool:
    s = s.strip().lower()
    if s in ("true", "1", "yes", "on"):
        return True
    if s in ("false", "0", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {s!r}")


def _int_list(s: str):
    return tuple(int(x) for x in s.replace(",", " ").split())


@dataclass(frozen=True)
class ExperimentConfig:
    # [dataset]
    name: str = "synthetic"
    path: str = ""
    format: str = "movielens-100k"
    min_interactions: int = 10
    # [model]
    dim: int = 16
    optimizer: str = "adam"
    init_std: float = 0.01
    adapter_layers: tuple = ()  # empty -> [2d, 16, 8, 1]
    # [training]
    rounds: int = 100
    local_epochs: int = 10
    batch_size: int = 256
    negatives: int = 4
    lr: float = 0.1
    adapter_lr: float = 0.1
    merge_schedule: str = "first_epoch"
    scheme: str = "EM"
    scheme_rho: float = 0.5
    participation: float = 1.0
    # [aggregation]
    aggregation: str = "similarity"
    alpha: float = 1.0
    normalize_weights: bool = True
    similarity: str = "auto"
    sketch_dim: int = 256
    # [privacy]
    ldp_enabled: bool = False
    ldp_delta: float = 0.3
    ldp_clip: float = 1.0
    # [evaluation]
    eval_k: tuple = (5, 10)
    # [run]
    seed: int = 0
    repeats: int = 5
    threads: int = 1
    out: str = "runs/out"

    def validate(self):
        errs = []
        if self.format not in FORMATS:
            errs.append(f"dataset.format: unknown format {self.format!r}")
        if self.min_interactions < 1:
            errs.append("dataset.min_interactions: must be >= 1")
        if self.dim < 1:
            errs.append("model.dim: must be >= 1")
        if self.optimizer not in ("sgd", "adam"):
            errs.append(f"model.optimizer: unknown {self.optimizer!r}")
        if self.init_std <= 0:
            errs.append("model.init_std: must be > 0")
        if self.adapter_layers and (
            len(self.adapter_layers) < 2
            or self.adapter_layers[0] != 2 * self.dim
            or self.adapter_layers[-1] != 1
        ):
            errs.append(
                "model.adapter_layers: need first width = 2*dim and last width = 1"
            )
        if self.rounds < 0:
            errs.append("training.rounds: must be >= 0")
        if self.local_epochs < 1:
            errs.append("training.local_epochs: must be >= 1")
        if self.batch_size < 1:
            errs.append("training.batch_size: must be >= 1")
        if self.negatives < 1:
            errs.append("training.negatives: must be >= 1")
        if self.lr <= 0:
            errs.append("training.lr: must be > 0")
        if self.adapter_lr <= 0:
            errs.append("training.adapter_lr: must be > 0")
        if self.merge_schedule not in ("first_epoch", "every_epoch"):
            errs.append(f"training.merge_schedule: unknown {self.merge_schedule!r}")
        if self.scheme not in ("SR", "SM", "DM", "EM"):
            errs.append(f"training.scheme: unknown {self.scheme!r}")
        if not 0.0 <= self.scheme_rho <= 1.0:
            errs.append("training.scheme_rho: must be in [0, 1]")
        if not 0.0 < self.participation <= 1.0:
            errs.append("training.participation: must be in (0, 1]")
        if self.aggregation not in ("fixed", "similarity"):
            errs.append(f"aggregation.mode: unknown {self.aggregation!r}")
        if self.alpha < 0:
            errs.append("aggregation.alpha: must be >= 0")
        if self.similarity not in ("auto", "exact", "sketch"):
            errs.append(f"aggregation.similarity: unknown {self.similarity!r}")
        if self.sketch_dim < 1:
            errs.append("aggregation.sketch_dim: must be >= 1")
        if self.ldp_delta < 0:
            errs.append("privacy.delta: must be >= 0")
        if self.ldp_clip <= 0:
            errs.append("privacy.clip: must be > 0")
        if not self.eval_k or any(k < 1 for k in self.eval_k):
            errs.append("evaluation.k: need at least one K >= 1")
        if self.seed < 0:
            errs.append("run.seed: must be >= 0")
        if self.repeats < 1:
            errs.append("run.repeats: must be >= 1")
        if self.threads < 1:
            errs.append("run.threads: must be >= 1")
        if errs:
            raise ConfigError("; ".join(errs))
        return self

    def resolved_path(self) -> str:
        """Dataset path, resolved against $FEDMERGE_DATA_ROOT if relative."""
        if os.path.isabs(self.path) or not self.path:
            return self.path
        root = os.environ.get(DATA_ROOT_ENV, "")
        return os.path.join(root, self.path) if root else self.path


_SCHEMA = {
    "dataset": {
        "name": ("name", str),
        "path": ("path", str),
        "format": ("format", str),
        "min_interactions": ("min_interactions", int),
    },
    "model": {
        "dim": ("dim", int),
        "optimizer": ("optimizer", str),
        "init_std": ("init_std", float),
        "adapter_layers": ("adapter_layers", _int_list),
    },
    "training": {
        "rounds": ("rounds", int),
        "local_epochs": ("local_epochs", int),
        "batch_size": ("batch_size", int),
        "negatives": ("negatives", int),
        "lr": ("lr", float),
        "adapter_lr": ("adapter_lr", float),
        "merge_schedule": ("merge_schedule", str),
        "scheme": ("scheme", str),
        "scheme_rho": ("scheme_rho", float),
        "participation": ("participation", float),
    },
    "aggregation": {
        "mode": ("aggregation", str),
        "alpha": ("alpha", float),
        "normalize_weights": ("normalize_weights", _bool),
        "similarity": ("similarity", str),
        "sketch_dim": ("sketch_dim", int),
    },
    "privacy": {
        "enabled": ("ldp_enabled", _bool),
        "delta": ("ldp_delta", float),
        "clip": ("ldp_clip", float),
    },
    "evaluation": {
        "k": ("eval_k", _int_list),
    },
    "run": {
        "seed": ("seed", int),
        "repeats": ("repeats", int),
        "threads": ("threads", int),
        "out": ("out", str),
    },
}

_FIELD_TO_KEY = {
    fname: (section, key)
    for section, keys in _SCHEMA.items()
    for key, (fname, _) in keys.items()
}


def load_config(path) -> ExperimentConfig:
    parser = configparser.ConfigParser(interpolation=None)
    read = parser.read(path)
    if not read:
        raise ConfigError(f"config file not found: {path}")
    return _from_parser(parser)


def parse_config_text(text: str) -> ExperimentConfig:
    parser = configparser.ConfigParser(interpolation=None)
    parser.read_string(text)
    return _from_parser(parser)


def _from_parser(parser) -> ExperimentConfig:
    values = {}
    for section in parser.sections():
        if section not in _SCHEMA:
            raise ConfigError(f"unknown config section [{section}]")
        for key, raw in parser.items(section):
            if key not in _SCHEMA[section]:
                raise ConfigError(f"unknown config key {section}.{key}")
            fname, parse = _SCHEMA[section][key]
            try:
                values[fname] = parse(raw)
            except ValueError as exc:
                raise ConfigError(f"bad value for {section}.{key}: {exc}") from exc
    return ExperimentConfig(**values).validate()


def apply_overrides(cfg: ExperimentConfig, overrides) -> ExperimentConfig:
    """Apply 'section.key=value' strings over a config."""
    updates = {}
    for item in overrides:
        if "=" not in item:
            raise ConfigError(f"override must look like section.key=value: {item!r}")
        dotted, raw = item.split("=", 1)
        if "." not in dotted:
            raise ConfigError(f"override key must be section.key: {dotted!r}")
        section, key = dotted.split(".", 1)
        if section not in _SCHEMA or key not in _SCHEMA[section]:
            raise ConfigError(f"unknown config key {dotted!r}")
        fname, parse = _SCHEMA[section][key]
        try:
            updates[fname] = parse(raw)
        except ValueError as exc:
            raise ConfigError(f"bad value for {dotted}: {exc}") from exc
    return replace(cfg, **updates).validate()


def snapshot(cfg: ExperimentConfig) -> str:
    """Canonical config text that fully determines the run."""
    lines = []
    for section, keys in _SCHEMA.items():
        lines.append(f"[{section}]")
        for key, (fname, parse) in keys.items():
            value = getattr(cfg, fname)
            if parse is _int_list:
                value = ",".join(str(v) for v in value)
            elif parse is _bool:
                value = "true" if value else "false"
            lines.append(f"{key} = {value}")
        lines.append("")
    return "\n".join(lines)


def field_names():
    return [f.name for f in fields(ExperimentConfig)]

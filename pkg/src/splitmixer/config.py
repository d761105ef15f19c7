"""Run configuration: defaults, flat key=value config files with section
headers, and CLI-flag overrides (defaults < file < flags).

The file grammar (see docs/config-format.md) is the INI subset configparser
reads: ``[section]`` headers, one ``key = value`` per line, ``#`` comments.
Sections are model / data / train / output; unknown sections or keys are
rejected so typos fail loudly.
"""

import configparser
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path

from . import models
from .errors import ConfigError, ParseError
from .training import TrainSettings

MODEL_KEYS = ("name", "variant", "h", "b", "p", "k", "alpha", "segments",
              "classes", "activation", "norm", "residual", "spatial", "channel")
DATA_KEYS = ("source", "test_source", "limit_per_class", "subset_seed")
TRAIN_KEYS = ("epochs", "batch", "max_lr", "weight_decay", "clip", "seed",
              "augment", "timing")
OUTPUT_KEYS = ("dir",)

_SECTIONS = {"model": MODEL_KEYS, "data": DATA_KEYS, "train": TRAIN_KEYS,
             "output": OUTPUT_KEYS}


@dataclass
class RunConfig:
    model: dict = field(default_factory=dict)
    data: dict = field(default_factory=dict)
    train: dict = field(default_factory=dict)
    output: dict = field(default_factory=dict)

    def model_config(self, **extra):
        return build_model_config({**self.model, **extra})

    def train_settings(self):
        t = self.train
        clip = t.get("clip", 1.0)
        return TrainSettings(
            epochs=int(t.get("epochs", 10)),
            batch_size=int(t.get("batch", 64)),
            max_lr=float(t.get("max_lr", 0.01)),
            weight_decay=float(t.get("weight_decay", 0.005)),
            clip_norm=None if clip in (None, "none", 0, "0") else float(clip),
            seed=int(t.get("seed", 0)),
            augment=_as_bool(t.get("augment", True)),
            timing=_as_bool(t.get("timing", False)),
        )


def _as_bool(v):
    if isinstance(v, bool):
        return v
    s = str(v).strip().lower()
    if s in ("1", "true", "yes", "on"):
        return True
    if s in ("0", "false", "no", "off"):
        return False
    raise ParseError(f"expected a boolean, got {v!r}")


def parse_fraction(text):
    """Accept '2/3', '0.6' or a number; returned as an exact Fraction."""
    if isinstance(text, Fraction):
        return text
    s = str(text).strip()
    try:
        if "/" in s:
            num, den = s.split("/")
            return Fraction(int(num), int(den))
        return Fraction(s)
    except (ValueError, ZeroDivisionError) as e:
        raise ParseError(f"cannot parse ratio {text!r}: {e}") from e


def build_model_config(fields):
    """Turn a flat model-section dict into a validated ModelConfig."""
    fields = {k: v for k, v in fields.items() if v is not None}
    overrides = {}
    for key, target in (("h", "h"), ("b", "b"), ("p", "p"), ("k", "k"),
                        ("classes", "classes"), ("segments", "s")):
        if key in fields:
            overrides[target] = int(fields[key])
    if "alpha" in fields:
        overrides["alpha"] = parse_fraction(fields["alpha"])
    for key, target in (("variant", "variant"), ("activation", "activation"),
                        ("norm", "norm"), ("residual", "residual"),
                        ("spatial", "spatial_mode"), ("channel", "channel_mode")):
        if key in fields:
            overrides[target] = str(fields[key])
    name = fields.get("name")
    if name:
        return models.config_from_name(str(name), **overrides)
    variant = overrides.pop("variant", "I")
    if variant in models.mixers.OVERLAP_VARIANTS:
        overrides.setdefault("alpha", Fraction(2, 3))
    elif variant in models.mixers.SEGMENT_VARIANTS:
        overrides.setdefault("s", 2)
    return models.ModelConfig(variant=variant, **overrides)


def read_config_file(path):
    """Parse a config file into {section: {key: str}}, validating every key."""
    parser = configparser.ConfigParser(inline_comment_prefixes=("#",))
    text = Path(path).read_text()
    try:
        parser.read_string(text, source=str(path))
    except configparser.Error as e:
        raise ParseError(f"bad config file {path}: {e}") from e
    out = {}
    for section in parser.sections():
        if section not in _SECTIONS:
            raise ConfigError(f"unknown config section [{section}] in {path}")
        known = _SECTIONS[section]
        vals = {}
        for key, value in parser.items(section):
            if key not in known:
                raise ConfigError(
                    f"unknown key {key!r} in [{section}] of {path}; "
                    f"known keys: {', '.join(known)}")
            vals[key] = value
        out[section] = vals
    return out


def merge_run_config(file_path=None, flags=None):
    """Defaults, overlaid by the config file, overlaid by CLI flags."""
    cfg = RunConfig()
    if file_path is not None:
        for section, vals in read_config_file(file_path).items():
            getattr(cfg, section).update(vals)
    for section, vals in (flags or {}).items():
        if section not in _SECTIONS:
            raise ConfigError(f"unknown override section {section!r}")
        getattr(cfg, section).update(
            {k: v for k, v in vals.items() if v is not None})
    return cfg

"""Resolved run configuration: an INI file with data/local/global/train/eval sections.

Every key is written out explicitly, so loading ``config.ini`` back gives the
same :func:`config_hash`.
"""
import configparser
from dataclasses import asdict, fields

from .duet import TrainConfig
from .evalkit import config_hash

SECTIONS = {
    "local": ("dim_word", "desc_len", "title_len", "history_len", "window"),
    "global": ("dim_entity", "sample_size", "eval_sample_cap", "gamma"),
    "train": ("epochs", "batch_size", "lr", "neg_ratio", "resample_negatives", "seed", "slope"),
}
EVAL_DEFAULTS = {"f1_threshold": 0.5}
DATA_KEYS = ("kcore", "threshold", "split", "neg_ratio", "seed", "min_count")

_TYPES = {f.name: f.type for f in fields(TrainConfig)}


class ConfigError(ValueError):
    pass


def _parse(kind, raw):
    kind = kind if isinstance(kind, type) else {"int": int, "float": float, "bool": bool}[kind]
    if kind is bool:
        low = str(raw).strip().lower()
        if low not in ("true", "false", "1", "0", "yes", "no"):
            raise ConfigError(f"not a boolean: {raw!r}")
        return low in ("true", "1", "yes")
    try:
        return kind(raw)
    except ValueError:
        raise ConfigError(f"not a {kind.__name__}: {raw!r}") from None


def resolve(train_cfg, data=None, eval_opts=None):
    """Nested dict of every setting, grouped by section."""
    flat = asdict(train_cfg)
    out = {"data": dict(sorted((data or {}).items()))}
    for section, keys in SECTIONS.items():
        out[section] = {k: flat[k] for k in keys}
    out["eval"] = {**EVAL_DEFAULTS, **(eval_opts or {})}
    return out


def train_config_from(resolved):
    flat = {}
    for section, keys in SECTIONS.items():
        for k in keys:
            if k in resolved.get(section, {}):
                flat[k] = resolved[section][k]
    return TrainConfig(**flat)


def read_ini(path):
    """Partial config (only the keys present) from an INI file."""
    parser = configparser.ConfigParser()
    parser.optionxform = str
    if not parser.read(path, encoding="utf-8"):
        raise ConfigError(f"cannot read config file {path}")
    out = {}
    for section in parser.sections():
        if section == "data":
            out["data"] = dict(parser.items(section))
            continue
        if section == "eval":
            known = EVAL_DEFAULTS
            out["eval"] = {}
            for k, v in parser.items(section):
                if k not in known:
                    raise ConfigError(f"unknown key [eval] {k}")
                out["eval"][k] = _parse(float, v)
            continue
        if section not in SECTIONS:
            raise ConfigError(f"unknown section [{section}]")
        out[section] = {}
        for k, v in parser.items(section):
            if k not in SECTIONS[section]:
                raise ConfigError(f"unknown key [{section}] {k}")
            out[section][k] = _parse(_TYPES[k], v)
    return out


def load_resolved(path):
    """Inverse of :func:`write_ini` for a fully resolved file."""
    partial = read_ini(path)
    data = {}
    for k, v in partial.get("data", {}).items():
        data[k] = _parse(int, v) if v.lstrip("-").isdigit() else _parse(float, v)
    return resolve(train_config_from(partial), data, partial.get("eval"))


def write_ini(resolved, path):
    parser = configparser.ConfigParser()
    parser.optionxform = str
    for section in ("data", "local", "global", "train", "eval"):
        if section not in resolved:
            continue
        parser[section] = {k: repr(v) if isinstance(v, float) else str(v)
                           for k, v in resolved.get(section, {}).items()}
    with open(path, "w", encoding="utf-8") as fh:
        parser.write(fh)


__all__ = ["ConfigError", "config_hash", "load_resolved", "read_ini", "resolve", "train_config_from", "write_ini"]

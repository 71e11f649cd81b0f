"""File formats: posterior JSON, vine JSON, config JSON and CSV tables.

JSON is written with a fixed key order and ``repr`` float formatting, so a
file read back and written again is byte-identical.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, fields

import numpy as np

from .cvi import Adam, CviConfig, RobbinsMonro, rule_from_dict
from .dist import CopulaVariationalDist
from .errors import DomainError
from .marginal import MarginalSet
from .vine import Vine

FORMAT_VERSION = "copula-vi/1"


class ConfigError(DomainError):
    """Malformed configuration; the message names the offending field path."""


def dumps(obj):
    return json.dumps(obj, indent=2) + "\n"


@dataclass
class PosteriorFile:
    dist: CopulaVariationalDist
    meta: dict = field(default_factory=dict)
    version: str = FORMAT_VERSION

    def to_dict(self):
        meta = {k: self.meta[k] for k in ("elbo", "elbo_std_err", "phases", "seed", "config_hash") if k in self.meta}
        meta.update({k: v for k, v in self.meta.items() if k not in meta})
        return {"version": self.version, "marginals": self.dist.marginals.to_list(),
                "vine": self.dist.vine.to_dict(), "meta": meta}

    @classmethod
    def from_dict(cls, data):
        if data.get("version") != FORMAT_VERSION:
            raise ConfigError(f"version: unsupported posterior format {data.get('version')!r}")
        try:
            dist = CopulaVariationalDist(MarginalSet.from_list(data["marginals"]), Vine.from_dict(data["vine"]))
        except KeyError as exc:
            raise ConfigError(f"{exc.args[0]}: missing field") from exc
        return cls(dist, dict(data.get("meta", {})), data["version"])

    def dumps(self):
        return dumps(self.to_dict())

    def save(self, path):
        with open(path, "w") as fh:
            fh.write(self.dumps())

    @classmethod
    def load(cls, path):
        with open(path) as fh:
            return cls.from_dict(json.load(fh))


def save_vine(vine, path):
    with open(path, "w") as fh:
        fh.write(dumps(vine.to_dict()))


def load_vine(path):
    with open(path) as fh:
        return Vine.from_dict(json.load(fh))


_RULE_FIELDS = {"adam": Adam, "robbins_monro": RobbinsMonro}


def _check_type(path, value, expected):
    if expected is bool:
        ok = isinstance(value, bool)
    elif expected is int:
        ok = isinstance(value, int) and not isinstance(value, bool)
    elif expected is float:
        ok = isinstance(value, (int, float)) and not isinstance(value, bool)
    else:
        ok = isinstance(value, expected)
    if not ok:
        raise ConfigError(f"{path}: expected {expected.__name__}, got {type(value).__name__}")


def config_from_dict(data, prefix="config"):
    """Validate a config mapping field by field and build a :class:`CviConfig`."""
    if not isinstance(data, dict):
        raise ConfigError(f"{prefix}: expected an object")
    defaults = CviConfig()
    kwargs = {}
    for f in fields(CviConfig):
        if f.name not in data:
            continue
        value = data[f.name]
        path = f"{prefix}.{f.name}"
        if f.name == "step_rule":
            if not isinstance(value, dict):
                raise ConfigError(f"{path}: expected an object")
            kind = value.get("kind", "adam")
            if kind not in _RULE_FIELDS:
                raise ConfigError(f"{path}.kind: unknown step rule {kind!r}")
            for k, v in value.items():
                if k == "kind":
                    continue
                if k not in {g.name for g in fields(_RULE_FIELDS[kind])}:
                    raise ConfigError(f"{path}.{k}: unknown field")
                _check_type(f"{path}.{k}", v, float)
            try:
                kwargs[f.name] = rule_from_dict(value)
            except DomainError as exc:
                raise ConfigError(f"{path}: {exc}") from exc
            continue
        _check_type(path, value, type(getattr(defaults, f.name)))
        kwargs[f.name] = value
    unknown = sorted(set(data) - {f.name for f in fields(CviConfig)})
    if unknown:
        raise ConfigError(f"{prefix}.{unknown[0]}: unknown field")
    try:
        return CviConfig(**kwargs)
    except DomainError as exc:
        raise ConfigError(f"{prefix}: {exc}") from exc


def load_config(path):
    if path is None:
        return CviConfig()
    with open(path) as fh:
        try:
            data = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config: invalid JSON ({exc})") from exc
    return config_from_dict(data)


def write_csv(path_or_fh, header, rows):
    """Write a numeric table with full-precision floats."""
    lines = [",".join(header)]
    lines += [",".join(repr(float(x)) for x in row) for row in np.atleast_2d(rows)]
    text = "\n".join(lines) + "\n"
    if hasattr(path_or_fh, "write"):
        path_or_fh.write(text)
    else:
        with open(path_or_fh, "w") as fh:
            fh.write(text)


def read_csv(path):
    """Read a numeric CSV with a header row; returns ``(header, array)``."""
    with open(path) as fh:
        header = fh.readline().strip().split(",")
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    return header, data

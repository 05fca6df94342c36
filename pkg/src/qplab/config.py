"""TOML run configuration: defaults, overrides, hashing and model construction."""

from __future__ import annotations

import copy
import hashlib
import json
import sys
from importlib import resources
from pathlib import Path

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .model import HoppingSpec, ModelConfig, PotentialSpec


class UsageError(ValueError):
    """Bad or missing configuration key; maps to exit status 2."""


def default_config() -> dict:
    text = resources.files("qplab").joinpath("data/default.toml").read_text()
    return tomllib.loads(text)


def _merge(base: dict, extra: dict, path: str = "") -> dict:
    out = copy.deepcopy(base)
    for k, v in extra.items():
        key = f"{path}{k}"
        if k not in out:
            raise UsageError(f"unknown configuration key {key!r}")
        if isinstance(out[k], dict):
            if not isinstance(v, dict):
                raise UsageError(f"{key!r} must be a table")
            out[k] = _merge(out[k], v, key + ".")
        else:
            out[k] = v
    return out


def parse_value(text: str):
    """TOML literal if it parses, else the raw string."""
    try:
        return tomllib.loads(f"v = {text}")["v"]
    except tomllib.TOMLDecodeError:
        return text


def apply_override(cfg: dict, assignment: str) -> dict:
    if "=" not in assignment:
        raise UsageError(f"override {assignment!r} is not of the form section.key=value")
    key, _, raw = assignment.partition("=")
    parts = key.strip().split(".")
    if len(parts) != 2:
        raise UsageError(f"override key {key!r} must be section.key")
    sec, k = parts
    return _merge(cfg, {sec: {k: parse_value(raw.strip())}})


def load_config(path: str | Path | None = None, overrides=()) -> dict:
    cfg = default_config()
    if path is not None:
        with open(path, "rb") as fh:
            cfg = _merge(cfg, tomllib.load(fh))
    for o in overrides:
        cfg = apply_override(cfg, o)
    return cfg


def config_hash(cfg: dict) -> str:
    blob = json.dumps(cfg, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode()).hexdigest()


def require(cfg: dict, dotted: str):
    sec, _, key = dotted.partition(".")
    try:
        v = cfg[sec][key]
    except KeyError:
        raise UsageError(f"missing configuration key {dotted!r}") from None
    if v is None or (isinstance(v, list) and not v):
        raise UsageError(f"missing configuration key {dotted!r}")
    return v


def _complex(v) -> complex:
    if isinstance(v, (list, tuple)):
        return complex(float(v[0]), float(v[1]) if len(v) > 1 else 0.0)
    return complex(v)


def model_config(cfg: dict) -> ModelConfig:
    m, f, p, h = cfg["model"], cfg["frequency"], cfg["potential"], cfg["hopping"]
    try:
        pot = PotentialSpec(kind=p["kind"], R=float(p["R"]), lam=tuple(p["lambda"]), eps_f=float(p["eps_f"]),
                            f_cos=tuple(p["f_cos"]))
        hop = HoppingSpec(kind=h["kind"], d=int(m["d"]), alpha_decay=float(h["alpha_decay"]),
                          alpha0=float(h["alpha0"]), alpha1=float(h["alpha1"]), radius=int(h["radius"]),
                          amp=float(h["amp"]), table=tuple(tuple(r) for r in h["table"]))
        th = _complex(m["theta"])
        E = _complex(m["energy"])
        return ModelConfig(d=int(m["d"]), tau=float(f["tau"]), gamma=float(f["gamma"]),
                           omega=tuple(float(w) for w in f["omega"]), epsilon=float(m["epsilon"]),
                           theta=th if th.imag else th.real, E=E if E.imag else E.real,
                           potential=pot, hopping=hop)
    except (TypeError, ValueError) as exc:
        raise UsageError(str(exc)) from exc

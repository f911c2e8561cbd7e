"""Typed INI configuration for the experiment runner.

Every key lives in a section named after the module that consumes it.
Values are validated against the schema below before any computation
starts; errors name the offending ``section.key``.  The config hash is a
digest of the canonical (sorted, typed) resolved configuration.
"""
from __future__ import annotations

import configparser
import hashlib
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Callable


class ConfigError(ValueError):
    pass


def _floats(text: str) -> list[float]:
    return [float(t) for t in text.replace(";", ",").split(",") if t.strip()]


def _complexes(text: str) -> list[complex]:
    return [complex(t.strip().replace(" ", "")) for t in text.replace(";", ",").split(",") if t.strip()]


def _words(text: str) -> list[str]:
    return [t.strip() for t in text.split(",") if t.strip()]


def _bool(text: str) -> bool:
    t = text.strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _opt(conv):
    def f(text: str):
        return None if text.strip().lower() in ("", "none") else conv(text)
    return f


@dataclass(frozen=True)
class Key:
    conv: Callable[[str], Any]
    default: str
    check: Callable[[Any], bool] | None = None
    rule: str = ""


positive = (lambda v: v > 0, "must be positive")
nonneg = (lambda v: v >= 0, "must be non-negative")


def _even(v):
    return v >= 4 and v % 2 == 0


SCHEMA: dict[str, dict[str, Key]] = {
    "run": {
        "seed": Key(int, "0", lambda v: v >= 0, "must be a non-negative integer"),
    },
    "grid": {
        "n": Key(int, "16", _even, "must be an even integer >= 4"),
        "L": Key(float, "8.0", *positive),
    },
    "potential": {
        "kind": Key(str, "zero", lambda v: v in ("zero", "gaussian-bump", "scaled-well"),
                    "must be one of zero, gaussian-bump, scaled-well"),
        "a": Key(_floats, "0,0,0", lambda v: len(v) == 3, "must have three components"),
        "w": Key(float, "2.0", *positive),
        "c": Key(_floats, "0,0,0", lambda v: len(v) == 3, "must have three components"),
        "v0": Key(float, "0.0"),
        "wV": Key(_opt(float), "none", lambda v: v is None or v > 0, "must be positive"),
        "g": Key(float, "1.0"),
        "m": Key(float, "1.0", *positive),
        "beta": Key(float, "3.5", lambda v: v > 3, "must exceed 3"),
    },
    "data": {
        "kind": Key(str, "gaussian", lambda v: v in ("gaussian", "random"),
                    "must be gaussian or random"),
        "width": Key(float, "3.0", *positive),
        "center": Key(_floats, "0,0,0", lambda v: len(v) == 3, "must have three components"),
    },
    "evolution": {
        "method": Key(str, "krylov", lambda v: v in ("krylov", "leapfrog"),
                      "must be krylov or leapfrog"),
        "dt": Key(float, "2.0", *positive),
        "krylov_tol": Key(float, "1e-10", *positive),
        "max_dim": Key(int, "400", lambda v: v >= 8, "must be >= 8"),
    },
    "decay": {
        "sigma": Key(_floats, "3.0", lambda v: len(v) > 0 and all(s > 0 for s in v),
                     "must list positive weights"),
        "split": Key(str, "none", lambda v: v in ("none", "low-high"), "must be none or low-high"),
        "t_lo": Key(float, "1.0", lambda v: v >= 1, "must be >= 1"),
        "t_max": Key(_opt(float), "none", lambda v: v is None or v > 1, "must exceed 1"),
        "per_decade": Key(int, "16", lambda v: v >= 4, "must be >= 4"),
        "window": Key(_opt(_floats), "none", lambda v: v is None or (len(v) == 2 and 1 <= v[0] < v[1]),
                      "must be two increasing times >= 1"),
        "expect_lo": Key(float, "-1.75"),
        "expect_hi": Key(float, "-1.25"),
        "r2_min": Key(float, "0.98", lambda v: 0 < v <= 1, "must lie in (0, 1]"),
    },
    "resolvent": {
        "tol": Key(float, "1e-10", *positive),
        "max_iter": Key(int, "2000", lambda v: v > 0, "must be positive"),
    },
    "scan": {
        "target": Key(_words, "H,0,0,0", lambda v: v[0] in ("H", "AA", "AA1", "bRV", "Zca"),
                      "must start with H, AA, AA1, bRV or Zca"),
        "ray": Key(str, "parabola", lambda v: v in ("negative", "imag1", "parabola", "imaginary"),
                   "must be negative, imag1, parabola or imaginary"),
        "r_min": Key(float, "10", *positive),
        "r_max": Key(float, "200", *positive),
        "samples": Key(int, "6", lambda v: v >= 3, "must be >= 3"),
        "sigma": Key(float, "1.0", *positive),
        "probes": Key(int, "8", lambda v: v >= 1, "must be >= 1"),
        "slope_tol": Key(float, "0.15", *positive),
        "r2_min": Key(float, "0.9", lambda v: 0 < v <= 1, "must lie in (0, 1]"),
    },
    "lap": {
        "omega": Key(float, "4.0", *positive),
        "side": Key(str, "+", lambda v: v in ("+", "-"), "must be + or -"),
        "eps0": Key(float, "0.2", *positive),
        "ratio": Key(float, "0.5", lambda v: 0 < v < 1, "must lie in (0, 1)"),
        "count": Key(int, "8", lambda v: v >= 3, "must be >= 3"),
        "sigma": Key(float, "1.0", *positive),
        "whole_space": Key(_bool, "false"),
        "ratio_max": Key(float, "0.9", *positive),
        "min_steps": Key(int, "4", lambda v: v >= 1, "must be >= 1"),
    },
    "born": {
        "z": Key(_complexes, "-50,-5,1+1j,3+0.5j", lambda v: len(v) > 0, "must list values"),
        "sigma": Key(float, "1.0", *positive),
        "tol_factor": Key(float, "10", *positive),
    },
    "rkg": {
        "omega": Key(_complexes, "2j", lambda v: len(v) > 0, "must list values"),
        "tol_factor": Key(float, "10", *positive),
        "oracle_tol": Key(float, "1e-8", *positive),
    },
    "mourre": {
        "lam": Key(float, "1.5", *positive),
        "mu": Key(float, "0.1", *positive),
        "delta": Key(float, "0.1", *nonneg),
        "nodes": Key(int, "96", lambda v: v >= 16, "must be >= 16"),
        "sqr_tol": Key(float, "1e-5", *positive),
        "k1_tol": Key(float, "1e-4", *positive),
        "a1_n": Key(int, "48", _even, "must be an even integer >= 4"),
        "a1_L": Key(float, "12.0", *positive),
        "a1_tol": Key(float, "1e-8", *positive),
    },
    "zero_mode": {
        "family": Key(str, "scaled-well", lambda v: v in ("scaled-well", "gaussian-bump"),
                      "must be scaled-well or gaussian-bump"),
        "g": Key(_floats, "0,1,2,3,4,5,6,7,8,9,10,11,12", lambda v: len(v) > 0, "must list values"),
        "sigma": Key(float, "0.51", lambda v: v > 0.5, "must exceed 1/2"),
        "threshold": Key(float, "0.05", *positive),
        "method": Key(str, "auto", lambda v: v in ("auto", "dense", "inverse"),
                      "must be auto, dense or inverse"),
    },
    "spectral_rep": {
        "t": Key(float, "2.0", *positive),
        "nodes": Key(int, "128", lambda v: v >= 8, "must be >= 8"),
        "sigma": Key(float, "1.0", *positive),
        "lo": Key(float, "1.2", *nonneg),
        "hi": Key(float, "2.4", *positive),
        "ramp": Key(float, "0.3", *positive),
        "tol": Key(float, "5e-2", *positive),
    },
    "oracle": {
        "kinds": Key(_words, "H0,H,B,K", lambda v: len(v) > 0, "must list operators"),
    },
}


class Config:
    """Resolved configuration: ``cfg["grid"]["n"]`` or ``cfg.get("grid.n")``."""

    def __init__(self, raw: dict[str, dict[str, str]]):
        self.raw = raw
        self.values: dict[str, dict[str, Any]] = {}
        for sec, keys in SCHEMA.items():
            self.values[sec] = {}
            for key, spec in keys.items():
                text = raw.get(sec, {}).get(key, spec.default)
                name = f"{sec}.{key}"
                try:
                    val = spec.conv(text)
                except (TypeError, ValueError) as exc:
                    raise ConfigError(f"{name}: cannot parse {text!r} ({exc})") from None
                if spec.check is not None and not spec.check(val):
                    raise ConfigError(f"{name}={text!r} {spec.rule}")
                self.values[sec][key] = val
        for sec, keys in raw.items():
            if sec not in SCHEMA:
                raise ConfigError(f"unknown section [{sec}]")
            for key in keys:
                if key not in SCHEMA[sec]:
                    raise ConfigError(f"unknown key {sec}.{key}")

    def __getitem__(self, section: str) -> dict[str, Any]:
        return self.values[section]

    def get(self, dotted: str):
        sec, key = dotted.split(".", 1)
        return self.values[sec][key]

    def canonical(self) -> dict:
        def enc(v):
            if isinstance(v, complex):
                return [v.real, v.imag]
            if isinstance(v, list):
                return [enc(t) for t in v]
            return v
        return {s: {k: enc(v) for k, v in sorted(d.items())} for s, d in sorted(self.values.items())}

    @property
    def hash(self) -> str:
        blob = json.dumps(self.canonical(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()[:16]

    def to_ini(self) -> str:
        lines = []
        for sec, keys in self.raw_resolved().items():
            lines.append(f"[{sec}]")
            lines.extend(f"{k} = {v}" for k, v in keys.items())
            lines.append("")
        return "\n".join(lines)

    def raw_resolved(self) -> dict[str, dict[str, str]]:
        return {sec: {k: self.raw.get(sec, {}).get(k, spec.default) for k, spec in keys.items()}
                for sec, keys in SCHEMA.items()}


def _parser() -> configparser.ConfigParser:
    cp = configparser.ConfigParser(interpolation=None)
    cp.optionxform = str  # keys are case-sensitive (grid.L)
    return cp


def load_config(path: str | Path | None = None, overrides: list[str] | None = None,
                seed: int | None = None) -> Config:
    """Read an INI file, apply ``section.key=value`` overrides, validate."""
    raw: dict[str, dict[str, str]] = {}
    if path is not None:
        cp = _parser()
        if not cp.read(path, encoding="utf-8"):
            raise ConfigError(f"cannot read config file {path}")
        raw = {s: dict(cp[s]) for s in cp.sections()}
    for item in overrides or []:
        if "=" not in item or "." not in item.split("=", 1)[0]:
            raise ConfigError(f"override {item!r} must look like section.key=value")
        k, v = item.split("=", 1)
        sec, key = k.strip().split(".", 1)
        raw.setdefault(sec, {})[key] = v.strip()
    if seed is not None:
        raw.setdefault("run", {})["seed"] = str(seed)
    return Config(raw)


def shipped_config(name: str) -> Path:
    """Path of a configuration shipped with the package (``configs/<name>.ini``)."""
    p = Path(__file__).with_name("configs") / f"{name}.ini"
    if not p.exists():
        raise ConfigError(f"no shipped config named {name!r}")
    return p


def schema_markdown() -> str:
    """Markdown table of every configuration key, its default and its rule."""
    rows = ["| key | default | rule |", "| --- | --- | --- |"]
    for sec, keys in SCHEMA.items():
        for key, spec in keys.items():
            rows.append(f"| `{sec}.{key}` | `{spec.default}` | {spec.rule or 'any value'} |")
    return "\n".join(rows)


if __name__ == "__main__":
    print(schema_markdown())

"""Run configuration: YAML file, defaults and command-line overrides.

Precedence, lowest first: built-in defaults, the config file, flags.
"""

from __future__ import annotations

import copy
import hashlib
import json
from dataclasses import dataclass

import numpy as np
import yaml

from .forward import Interval, Rectangle, SimConfig, SourceSpec, TimeProfile

__all__ = ["ConfigError", "RunConfig", "DEFAULTS", "load_config", "config_hash"]


class ConfigError(ValueError):
    """Invalid or inconsistent run configuration."""


DEFAULTS = {
    "alpha": 0.8,
    "hurst": 0.6,
    "T": 1.0,
    "n": 512,
    "K": 8,
    "paths": 10000,
    "seed": 1,
    "chunk": 1024,
    "domain": {"type": "interval", "L": 1.0},
    "source": {
        "f": {"profile": "power", "scale": 1.0, "decay": 1.0},
        "g": {"profile": "power", "scale": 1.0, "decay": 0.0},
        "h": {"kind": "constant", "value": 1.0},
        "c_h": 1.0,
    },
    "quadrature": {"tol": 1e-6},
    "inverse": {"gamma": 0.5, "kcut": None, "epsilon": 1e-3, "use_2gamma_h": False},
    "output_dir": "out",
}

# keys that do not change any number in the outputs
_UNHASHED = ("output_dir", "threads")


def _merge(base, over):
    out = copy.deepcopy(base)
    for key, val in (over or {}).items():
        if isinstance(val, dict) and isinstance(out.get(key), dict):
            out[key] = _merge(out[key], val)
        else:
            out[key] = val
    return out


def _coeffs(spec, K, name):
    if isinstance(spec, (list, tuple)):
        arr = np.asarray(spec, dtype=float)
        if arr.size < K:
            raise ConfigError(f"{name} lists {arr.size} coefficients but K = {K}")
        return arr[:K]
    if isinstance(spec, dict):
        prof = spec.get("profile", "power")
        k = np.arange(1, K + 1, dtype=float)
        scale = float(spec.get("scale", 1.0))
        if prof == "power":
            return scale * k ** (-float(spec.get("decay", 1.0)))
        if prof == "alternating":
            return scale * (-1.0) ** (k + 1) * k ** (-float(spec.get("decay", 1.0)))
        if prof == "geometric":
            return scale * float(spec.get("ratio", 0.5)) ** (k - 1)
        raise ConfigError(f"unknown coefficient profile {prof!r} for {name}")
    raise ConfigError(f"{name} must be a list of numbers or a profile mapping")


def _profile(spec):
    if not isinstance(spec, dict):
        raise ConfigError("source.h must be a mapping with a 'kind' key")
    spec = dict(spec)
    kind = spec.pop("kind", "constant")
    spec.pop("c_h", None)
    try:
        if kind == "samples":
            spec["times"] = tuple(float(t) for t in spec.get("times", ()))
            spec["values"] = tuple(float(v) for v in spec.get("values", ()))
        return TimeProfile(kind=kind, **spec)
    except TypeError as exc:
        raise ConfigError(f"bad h specification: {exc}") from None


@dataclass
class RunConfig:
    raw: dict
    sim: SimConfig
    source: SourceSpec
    domain: object
    f_true: np.ndarray
    g_true: np.ndarray

    @property
    def out_dir(self) -> str:
        return self.raw["output_dir"]

    @property
    def tol(self) -> float:
        return float(self.raw["quadrature"]["tol"])

    @property
    def gamma(self) -> float:
        return float(self.raw["inverse"]["gamma"])

    @property
    def kcut(self) -> int:
        k = self.raw["inverse"].get("kcut")
        return self.sim.K if k is None else int(k)

    @property
    def hash(self) -> str:
        return config_hash(self.raw)

    def echo(self) -> dict:
        return copy.deepcopy(self.raw)


def config_hash(raw: dict) -> str:
    clean = {k: v for k, v in raw.items() if k not in _UNHASHED}
    text = json.dumps(clean, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(text.encode()).hexdigest()


def load_config(path=None, overrides: dict | None = None) -> RunConfig:
    """Read, merge and validate a run configuration."""
    user = {}
    if path is not None:
        try:
            with open(path) as fh:
                user = yaml.safe_load(fh) or {}
        except OSError as exc:
            raise ConfigError(f"cannot read config file: {exc}") from None
        except yaml.YAMLError as exc:
            raise ConfigError(f"config file is not valid YAML: {exc}") from None
        if not isinstance(user, dict):
            raise ConfigError("config file must hold a mapping at the top level")
    unknown = set(user) - set(DEFAULTS)
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    raw = _merge(DEFAULTS, user)
    for key, val in (overrides or {}).items():
        if val is None:
            continue
        if key in ("gamma", "kcut"):
            raw["inverse"][key] = val
        else:
            raw[key] = val
    src = raw["source"]
    # the lower bound of h is mandatory: the inversion divides by it. A file
    # that defines its own h must state the bound too.
    user_src = user.get("source") or {}
    user_h = user_src.get("h") if isinstance(user_src.get("h"), dict) else {}
    if "h" in user_src or "c_h" in user_src:
        c_h = user_src.get("c_h", user_h.get("c_h"))
    else:
        c_h = src.get("c_h")
    if c_h is None:
        raise ConfigError("source.c_h (certified lower bound of h) is required and must be > 0")
    raw["source"]["c_h"] = c_h
    if isinstance(raw["source"].get("h"), dict):
        raw["source"]["h"].pop("c_h", None)
    try:
        sim = SimConfig(alpha=float(raw["alpha"]), hurst=float(raw["hurst"]), T=float(raw["T"]),
                        n=int(raw["n"]), K=int(raw["K"]), M=int(raw["paths"]),
                        seed=int(raw["seed"]), chunk=int(raw["chunk"]))
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from None
    dom = raw["domain"]
    try:
        if dom.get("type") == "interval":
            domain = Interval(float(dom.get("L", 1.0)))
        elif dom.get("type") == "rectangle":
            domain = Rectangle(float(dom.get("Lx", 1.0)), float(dom.get("Ly", 1.0)))
        else:
            raise ConfigError(f"domain.type must be 'interval' or 'rectangle', got {dom.get('type')!r}")
        f = _coeffs(src.get("f"), sim.K, "source.f")
        g = _coeffs(src.get("g"), sim.K, "source.g")
        h = _profile(src.get("h", {"kind": "constant", "value": 1.0}))
        source = SourceSpec(f, g, h, float(c_h))
        source.validate(sim.T)
    except ConfigError:
        raise
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from None
    kcut = raw["inverse"].get("kcut")
    if kcut is not None and not (1 <= int(kcut) <= sim.K):
        raise ConfigError(f"inverse.kcut must lie in [1, K={sim.K}]")
    if not 0.0 < float(raw["inverse"]["gamma"]) < 1.0:
        raise ConfigError("inverse.gamma must lie in (0, 1)")
    return RunConfig(raw, sim, source, domain, f, g)

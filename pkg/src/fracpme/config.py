"""Run configuration: a JSON tree with strictly validated blocks, plus the
registry of named initial data."""
from __future__ import annotations

import copy
import json
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

import numpy as np

from .errors import ConfigError

CHECK_NAMES = (
    "absolute_bound", "boundary_upper", "smoothing_weighted", "smoothing_l1",
    "backward_smoothing", "weighted_l1", "lower_bound", "harnack",
    "ordered_contraction", "green_pairing", "benilan_crandall", "balance_law",
    "linear_limit", "elliptic_sandwich",
)

_SCHEMA = {
    "name": str,
    "seed": int,
    "domain": {"dimension": int, "sides": list, "grid": int},
    "physics": {"m": float, "s": float, "modes": (int, type(None))},
    "datum": {"name": str, "params": dict},
    "time": {"output_times": list, "logspace": list, "linspace": list, "t0": float,
             "dt0": float, "max_dt": float, "growth": float, "min_dt": float,
             "method": str},
    "checks": {"names": list, "tolerances": dict, "training": list, "samples": int,
               "radii": list, "slope_window": list, "holdout_fraction": float},
    "elliptic": {"lam": (float, type(None)), "max_iterations": int, "tolerance": float},
    "green": {"pairs": int, "stride": int, "q": list},
    "sweep": {"m": list, "s": list, "datum": list},
    "output": {"directory": str, "formats": list},
}

_DEFAULTS = {
    "name": "run",
    "seed": 0,
    "domain": {"dimension": 1, "sides": [1.0], "grid": 128},
    "physics": {"m": 2.0, "s": 0.5, "modes": None},
    "datum": {"name": "bump", "params": {}},
    "time": {"logspace": [-4, -2, 9], "linspace": [0.02, 1.0, 50], "t0": 0.0,
             "dt0": 1e-6, "max_dt": 5e-3, "growth": 1.05, "min_dt": 1e-14,
             "method": "newton"},
    "checks": {"names": [], "tolerances": {}, "training": [], "samples": 50,
               "radii": [0.05, 0.1], "slope_window": [1e-4, 1e-2], "holdout_fraction": 0.5},
    "elliptic": {"lam": None, "max_iterations": 500, "tolerance": 1e-12},
    "green": {"pairs": 200, "stride": 8, "q": [1.0]},
    "output": {"directory": "fracpme-out", "formats": ["json", "csv"]},
}


def _check_type(path, value, typ):
    if typ is float and isinstance(value, int) and not isinstance(value, bool):
        return float(value)
    if isinstance(value, bool) or not isinstance(value, typ):
        names = typ.__name__ if isinstance(typ, type) else "/".join(t.__name__ for t in typ)
        raise ConfigError(f"{path}: expected {names}, got {type(value).__name__}")
    return value


def _validate(tree, schema, path, defaults):
    if not isinstance(tree, dict):
        raise ConfigError(f"{path or '<root>'}: expected an object")
    out = copy.deepcopy(defaults) if defaults is not None else {}
    for key, value in tree.items():
        sub = f"{path}.{key}" if path else key
        if key not in schema:
            raise ConfigError(f"{sub}: unknown key")
        typ = schema[key]
        if isinstance(typ, dict):
            out[key] = _validate(value, typ, sub, (defaults or {}).get(key))
        else:
            out[key] = _check_type(sub, value, typ)
    return out


@dataclass
class RunConfig:
    tree: dict

    @classmethod
    def from_tree(cls, tree: dict) -> "RunConfig":
        full = _validate(tree, _SCHEMA, "", _DEFAULTS)
        cfg = cls(full)
        cfg._check_semantics()
        return cfg

    @classmethod
    def load(cls, path) -> "RunConfig":
        p = Path(path)
        if not p.exists():
            bundled = bundled_config_path(str(path))
            if bundled is None:
                raise ConfigError(f"config not found: {path}")
            p = bundled
        try:
            tree = json.loads(p.read_text())
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{p}: invalid JSON ({exc})") from None
        return cls.from_tree(tree)

    def _check_semantics(self):
        t = self.tree
        for i, name in enumerate(t["checks"]["names"]):
            if name not in CHECK_NAMES:
                raise ConfigError(f"checks.names[{i}]: unknown check {name!r}")
        for name in t["checks"]["tolerances"]:
            if name not in CHECK_NAMES:
                raise ConfigError(f"checks.tolerances.{name}: unknown check")
        for i, d in enumerate(t["checks"]["training"]):
            _validate_datum(d, f"checks.training[{i}]")
        _validate_datum(t["datum"], "datum")
        if "sweep" in t:
            for key in ("m", "s", "datum"):
                if key in t["sweep"] and not t["sweep"][key]:
                    raise ConfigError(f"sweep.{key}: empty parameter list")
            if not t["sweep"]:
                raise ConfigError("sweep: empty parameter grid")
            for i, d in enumerate(t["sweep"].get("datum", [])):
                _validate_datum(d, f"sweep.datum[{i}]")
        if not t["physics"]["m"] >= 1:
            raise ConfigError("physics.m: must be >= 1")
        if not 0 < t["physics"]["s"] <= 1:
            raise ConfigError("physics.s: must lie in (0, 1]")

    def __getitem__(self, key):
        return self.tree[key]

    def with_overrides(self, **physics) -> "RunConfig":
        tree = copy.deepcopy(self.tree)
        datum = physics.pop("datum", None)
        tree["physics"].update(physics)
        if datum is not None:
            tree["datum"] = copy.deepcopy(datum)
        tree.pop("sweep", None)
        return RunConfig(tree)

    def output_times(self):
        t = self.tree["time"]
        if "output_times" in t:
            times = [float(v) for v in t["output_times"]]
        else:
            times = []
            if t.get("logspace"):
                a, b, n = t["logspace"]
                times += list(np.logspace(a, b, int(n)))
            if t.get("linspace"):
                a, b, n = t["linspace"]
                times += list(np.linspace(a, b, int(n)))
        t0 = t["t0"]
        return sorted({float(v) + t0 for v in times if v > 0})

    def canonical(self) -> str:
        return json.dumps(self.tree, sort_keys=True, separators=(",", ":"))


def bundled_config_path(name: str):
    stem = name[:-5] if name.endswith(".json") else name
    ref = resources.files("fracpme") / "configs" / f"{stem}.json"
    return Path(str(ref)) if ref.is_file() else None


def bundled_configs():
    root = resources.files("fracpme") / "configs"
    return sorted(p.name[:-5] for p in root.iterdir() if p.name.endswith(".json"))


# -- initial data ------------------------------------------------------------

def _sines(x, sides):
    out = np.ones(x.shape[0])
    for i, L in enumerate(sides):
        out *= np.sin(np.pi * x[:, i] / L)
    return out


def _center(params, sides):
    c = params.get("center")
    if c is None:
        return np.array([L / 2 for L in sides])
    return np.broadcast_to(np.asarray(c, dtype=float), (len(sides),))


def datum_bump(x, sides, m, center=None, width=0.1, amplitude=1.0, floor=0.1):
    """Gaussian bump times the boundary sine, on a floor ``floor * sine^(1/m)``."""
    c = _center({"center": center if center is not None else [0.4] * len(sides)}, sides)
    r2 = np.sum((x - c) ** 2, axis=1)
    sn = _sines(x, sides)
    return amplitude * np.exp(-r2 / width ** 2) * sn + floor * sn ** (1.0 / m)


def datum_compact_bump(x, sides, m, center=None, width=0.2, amplitude=1.0):
    """``(1 - |x - c|^2 / w^2)_+^2``: compact support, prone to Gibbs ripples."""
    c = _center({"center": center}, sides)
    r2 = np.sum((x - c) ** 2, axis=1) / width ** 2
    return amplitude * np.clip(1 - r2, 0.0, None) ** 2


def datum_hole(x, sides, m, center=None, radius=0.35, width=0.05, amplitude=1.0):
    """Ring of radius ``radius`` around ``center``; negligible at the center."""
    c = _center({"center": center}, sides)
    r = np.sqrt(np.sum((x - c) ** 2, axis=1))
    return amplitude * np.exp(-((r - radius) / width) ** 2) * _sines(x, sides)


def datum_phi1(x, sides, m, amplitude=1.0):
    norm = np.prod([np.sqrt(2.0 / L) for L in sides])
    return amplitude * norm * _sines(x, sides)


DATA = {
    "bump": datum_bump,
    "compact_bump": datum_compact_bump,
    "hole": datum_hole,
    "phi1": datum_phi1,
}
# handled by the orchestrator: they need the basis or an elliptic solve
SPECIAL_DATA = ("giant", "modes")


def _validate_datum(d, path):
    if not isinstance(d, dict):
        raise ConfigError(f"{path}: expected an object")
    for key in d:
        if key not in ("name", "params", "scale"):
            raise ConfigError(f"{path}.{key}: unknown key")
    name = d.get("name")
    if name not in DATA and name not in SPECIAL_DATA:
        raise ConfigError(f"{path}.name: unknown datum {name!r}")
    params = d.get("params", {})
    if not isinstance(params, dict):
        raise ConfigError(f"{path}.params: expected an object")
    if name in DATA:
        import inspect
        allowed = set(inspect.signature(DATA[name]).parameters) - {"x", "sides", "m"}
        for key in params:
            if key not in allowed:
                raise ConfigError(f"{path}.params.{key}: unknown parameter for {name!r}")
    elif name == "giant":
        for key in params:
            if key != "t0":
                raise ConfigError(f"{path}.params.{key}: unknown parameter for 'giant'")
    elif name == "modes":
        for key in params:
            if key != "coeffs":
                raise ConfigError(f"{path}.params.{key}: unknown parameter for 'modes'")


def datum_label(d) -> str:
    params = d.get("params", {})
    if not params and "scale" not in d:
        return d["name"]
    parts = [f"{k}={params[k]}" for k in sorted(params)]
    if "scale" in d:
        parts.append(f"scale={d['scale']}")
    return f"{d['name']}({','.join(parts)})"

"""Experiment descriptions, presets and noise injection.

A scenario is a nested mapping (read from YAML) validated into
:class:`Scenario`.  Unknown keys are rejected and every error names the
offending field path, e.g. ``recovery.iterations``.
"""
from __future__ import annotations

import copy
import hashlib
import math
import warnings
from dataclasses import dataclass, field

import numpy as np
import yaml

from .errors import ConfigError
from .levelset import Disc, Polygon, Square, Union
from .meshfem import Mesh
from .timefrac import BoundaryTrace, Excitation, StepProfile

__all__ = [
    "NoiseSpec",
    "add_noise",
    "Scenario",
    "CASES",
    "PRESETS",
    "default_config",
    "load_config",
    "scenario_from_dict",
    "build_shape",
    "u0_function",
    "f_function",
    "cosine_eta",
    "build_excitation",
    "content_hash",
]

CONCAVE_POLYGON = [[0.25, 0.25], [0.75, 0.25], [0.75, 0.75], [0.5, 0.5], [0.25, 0.75]]

CASES = {
    "i": {"type": "disc", "center": [0.5, 0.5], "r": 1.0 / 3.0},
    "ii": {"type": "square", "center": [0.5, 0.5], "side": 0.5},
    "iii": {"type": "polygon", "vertices": CONCAVE_POLYGON},
    "iv": {"type": "union", "parts": [
        {"type": "disc", "center": [0.25, 0.5], "r": 0.2},
        {"type": "disc", "center": [0.75, 0.5], "r": 0.2},
    ]},
}

# initial guesses: circles, one per true inclusion
INITIAL = {
    "i": {"type": "disc", "center": [0.5, 0.5], "r": 0.1},
    "ii": {"type": "disc", "center": [0.5, 0.5], "r": 0.1},
    "iii": {"type": "disc", "center": [0.5, 0.5], "r": 0.22},
    "iv": {"type": "union", "parts": [
        {"type": "disc", "center": [0.2, 0.5], "r": 0.08},
        {"type": "disc", "center": [0.8, 0.5], "r": 0.08},
    ]},
}

PRESETS = {
    "desk": {"mesh_n": 20, "N": 64, "recovery": {"iterations": 2000}, "order": {"mesh_n": 32}},
    "paper": {"mesh_n": 50, "N": 100, "recovery": {"iterations": 10000}, "order": {"mesh_n": 50}},
}


def default_config() -> dict:
    return {
        "case": "i",
        "inclusion": None,  # defaults to the case geometry
        "alpha": 0.8,
        "a1_true": 1.0,
        "a2_true": 10.0,
        "u0": "paper",
        "f": "paper",
        "excitation": {"family": "g1", "eta": None, "t_on": 0.5},
        "mesh_n": 20,
        "T": 1.0,
        "N": 64,
        "seed": 0,
        "noise": {"level": 0.0},
        "stages": ["forward", "order", "continuation", "recovery"],
        "order": {
            "t0_values": [1e-3, 1e-4, 1e-5, 1e-6, 1e-7, 1e-8, 1e-9],
            "alpha_values": [0.3, 0.5, 0.8],
            "samples": 30,
            "span": 100.0,
            "mesh_n": 32,
            "bounds": [0.01, 0.99],
        },
        "continuation": {"degree": 4, "t_min": 1e-3, "variable": "t^alpha", "tol": 1e-13},
        "recovery": {
            "data": "reduced",  # or "exact": excitation-only data, continuation bypassed
            "initial": None,  # defaults per case
            "a1": 0.9,
            "a2": 10.0,
            "beta": 1e-8,
            "gamma": 0.5,
            "gamma1": 0.0,
            "gamma2": 0.0,
            "iterations": 2000,
            "monotone": True,
            "normalize": True,
            "metric": "h1",
            "eps_factor": 0.02,
            "misfit": "nodal",
            "snapshot_every": 100,
            "reinit_threshold": 0.1,
            "grad_tol": 0.0,
        },
        "oracle": {"alphas": [0.3, 0.5, 0.8], "n_time": 32, "N_list": [32, 64, 128],
                   "n_list": [8, 16, 32], "N_space": 256},
    }


def _merge(base: dict, over: dict, path: str = "") -> dict:
    out = copy.deepcopy(base)
    for k, v in (over or {}).items():
        p = f"{path}.{k}" if path else k
        if k not in out:
            raise ConfigError(p, "unknown field")
        if isinstance(out[k], dict) and v is not None:
            if not isinstance(v, dict):
                raise ConfigError(p, "expected a mapping")
            out[k] = _merge(out[k], v, p)
        else:
            out[k] = copy.deepcopy(v)
    return out


@dataclass
class NoiseSpec:
    level: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if not (self.level >= 0.0):
            raise ConfigError("noise.level", "must be nonnegative")


def add_noise(h: BoundaryTrace, spec: NoiseSpec) -> BoundaryTrace:
    """``h + level * max|h| * xi`` with i.i.d. standard normal ``xi`` from ``spec.seed``."""
    if spec.level == 0.0:
        return BoundaryTrace(h.times.copy(), h.values.copy())
    rng = np.random.default_rng(spec.seed)
    xi = rng.standard_normal(h.values.shape)
    return BoundaryTrace(h.times.copy(), h.values + spec.level * np.max(np.abs(h.values)) * xi)


@dataclass
class Scenario:
    """Validated experiment description; ``raw`` keeps the resolved mapping."""

    raw: dict = field(repr=False)

    def __getattr__(self, name):
        raw = self.__dict__.get("raw", {})
        if name in raw:
            return raw[name]
        raise AttributeError(name)

    @property
    def shape(self):
        spec = self.raw["inclusion"] or CASES[self.raw["case"]]
        return build_shape(spec, "inclusion")

    @property
    def initial_shape(self):
        spec = self.raw["recovery"]["initial"] or INITIAL.get(self.raw["case"], INITIAL["i"])
        return build_shape(spec, "recovery.initial")

    @property
    def noise_spec(self) -> NoiseSpec:
        return NoiseSpec(float(self.raw["noise"]["level"]), int(self.raw["seed"]))

    def to_dict(self) -> dict:
        return copy.deepcopy(self.raw)


def build_shape(spec: dict, path: str = "shape"):
    if not isinstance(spec, dict) or "type" not in spec:
        raise ConfigError(path, "shape needs a 'type'")
    kind = spec["type"]
    try:
        if kind == "disc":
            return Disc(tuple(spec["center"]), float(spec["r"]))
        if kind == "square":
            return Square(tuple(spec["center"]), float(spec["side"]))
        if kind == "polygon":
            return Polygon(tuple(map(tuple, spec["vertices"])))
        if kind == "union":
            return Union(tuple(build_shape(p, f"{path}.parts[{i}]") for i, p in enumerate(spec["parts"])))
    except KeyError as exc:
        raise ConfigError(f"{path}.{exc.args[0]}", "missing field") from None
    except ValueError as exc:
        raise ConfigError(path, str(exc)) from None
    raise ConfigError(f"{path}.type", f"unknown shape {kind!r}")


def _check(cond, path, msg):
    if not cond:
        raise ConfigError(path, msg)


def scenario_from_dict(cfg: dict | None = None, preset: str | None = None) -> Scenario:
    """Merge ``cfg`` over the defaults (and a preset) and validate it."""
    base = default_config()
    if preset is not None:
        if preset not in PRESETS:
            raise ConfigError("preset", f"unknown preset {preset!r}")
        base = _merge(base, PRESETS[preset])
    raw = _merge(base, cfg or {})
    _check(raw["case"] in (*CASES, "custom"), "case", "must be one of i, ii, iii, iv, custom")
    _check(raw["case"] != "custom" or raw["inclusion"] is not None, "inclusion", "required for a custom case")
    _check(0.0 < float(raw["alpha"]) < 1.0, "alpha", "must lie in (0, 1)")
    for k in ("a1_true", "a2_true", "T"):
        _check(float(raw[k]) > 0, k, "must be positive")
    _check(int(raw["mesh_n"]) >= 2, "mesh_n", "must be at least 2")
    _check(int(raw["N"]) >= 1, "N", "must be positive")
    _check(raw["u0"] in ("paper", "zero"), "u0", "must be 'paper' or 'zero'")
    _check(raw["f"] in ("paper", "zero"), "f", "must be 'paper' or 'zero'")
    exc = raw["excitation"]
    _check(exc["family"] in ("g1", "g2", "g3", "none"), "excitation.family", "must be g1, g2, g3 or none")
    _check(exc["eta"] in (None, "cosine", "constant"), "excitation.eta", "must be cosine or constant")
    _check(0.0 < float(exc["t_on"]) < float(raw["T"]), "excitation.t_on", "must lie in (0, T)")
    _check(float(raw["noise"]["level"]) >= 0, "noise.level", "must be nonnegative")
    _check(isinstance(raw["seed"], int) and raw["seed"] >= 0, "seed", "must be a nonnegative integer")
    bad = set(raw["stages"]) - {"forward", "order", "continuation", "recovery", "oracle"}
    _check(not bad, "stages", f"unknown stages {sorted(bad)}")
    rec = raw["recovery"]
    _check(rec["data"] in ("reduced", "exact"), "recovery.data", "must be 'reduced' or 'exact'")
    _check(int(rec["iterations"]) >= 0, "recovery.iterations", "must be nonnegative")
    _check(float(rec["a1"]) > 0 and float(rec["a2"]) > 0, "recovery.a1", "a1 and a2 must be positive")
    _check(float(rec["beta"]) >= 0, "recovery.beta", "must be nonnegative")
    _check(rec["metric"] in ("l2", "h1"), "recovery.metric", "must be l2 or h1")
    _check(rec["misfit"] in ("l2", "nodal"), "recovery.misfit", "must be l2 or nodal")
    _check(float(rec["eps_factor"]) > 0, "recovery.eps_factor", "must be positive")
    _check(raw["continuation"]["variable"] in ("t", "t^alpha"), "continuation.variable", "must be t or t^alpha")
    _check(int(raw["continuation"]["degree"]) >= 0, "continuation.degree", "must be nonnegative")
    lo, hi = raw["order"]["bounds"]
    _check(0 < lo < hi < 1, "order.bounds", "must satisfy 0 < lo < hi < 1")
    sc = Scenario(raw)
    sc.shape  # validate geometry eagerly
    sc.initial_shape
    return sc


def load_config(path, preset: str | None = None, overrides: dict | None = None) -> Scenario:
    try:
        with open(path) as fh:
            cfg = yaml.safe_load(fh) or {}
    except yaml.YAMLError as exc:
        raise ConfigError(str(path), f"not valid YAML: {exc}") from None
    if not isinstance(cfg, dict):
        raise ConfigError(str(path), "top level must be a mapping")
    # a preset given by the caller wins over one named in the file
    file_preset = cfg.pop("preset", None)
    preset = preset or file_preset
    if overrides:
        cfg = _merge_loose(cfg, overrides)
    return scenario_from_dict(cfg, preset)


def _merge_loose(a: dict, b: dict) -> dict:
    out = copy.deepcopy(a)
    for k, v in b.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _merge_loose(out[k], v)
        else:
            out[k] = v
    return out


def content_hash(*chunks) -> str:
    """sha256 over the given byte strings / text, in order."""
    h = hashlib.sha256()
    for c in chunks:
        h.update(c if isinstance(c, bytes) else str(c).encode())
    return h.hexdigest()


# ------------------------------------------------------------ model data

def u0_function(kind: str):
    if kind == "zero":
        return lambda x, y: 0.0 * x
    return lambda x, y: x ** 2 * y ** 2 * (1 - x) ** 2 * (1 - y) ** 2


def f_function(kind: str):
    if kind == "zero":
        return lambda x, y: 0.0 * x
    return lambda x, y: 1.0 + x + y


def cosine_eta(mesh: Mesh, k: int = 1) -> np.ndarray:
    """``cos(2 pi k s)`` along each side, ``s`` the side's arc parameter."""
    p = mesh.nodes[mesh.boundary_nodes]
    side = mesh.edge_side
    s = np.where(side == 0, p[:, 0], np.where(side == 1, p[:, 1], np.where(side == 2, 1 - p[:, 0], 1 - p[:, 1])))
    return np.cos(2.0 * math.pi * k * s)


def build_excitation(mesh: Mesh, scenario: Scenario) -> Excitation:
    exc = scenario.raw["excitation"]
    eta_kind = exc["eta"] or ("constant" if scenario.raw["case"] == "iv" else "cosine")
    fam = exc["family"]
    if fam == "none":
        return Excitation([])

    def eta(k):
        return np.ones(len(mesh.boundary_nodes)) if eta_kind == "constant" else cosine_eta(mesh, k)

    if fam == "g1":
        terms = [(eta(1), StepProfile(float(exc["t_on"])))]
    elif fam == "g2":
        terms = [(eta(k), StepProfile(0.25 * k)) for k in (1, 2, 3)]
    else:
        terms = [(eta(k), StepProfile(k / 6.0)) for k in (1, 2, 3, 4, 5)]
    out = Excitation(terms)
    if eta_kind == "constant":
        with warnings.catch_warnings():
            warnings.simplefilter("always")
            out.check_compatibility(mesh)
    return out


def first_activation(scenario: Scenario) -> float:
    exc = scenario.raw["excitation"]
    return {"g1": float(exc["t_on"]), "g2": 0.25, "g3": 1.0 / 6.0}.get(exc["family"], float(scenario.raw["T"]))

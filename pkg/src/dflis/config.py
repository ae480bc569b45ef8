"""Experiment configuration: JSON schema, include merging, hashing and problem construction."""

from __future__ import annotations

import copy
import hashlib
import json
import math
from pathlib import Path

import jsonschema
import numpy as np

from .linalg import ValidationError
from .priors import GaussianPrior, ProductGGPrior
from .problems import (
    elliptic_problem,
    exp_toy_problem,
    linear_gaussian_problem,
    normalized_problem,
    pet_problem,
    poisson_toy_problem,
)

METHODS = ("OL", "PM", "OF", "DA", "PCN", "HMALA")
REDUCTION_KINDS = ("data_free", "data_dependent", "prior_based", "coordinate", "normalized")
PROBLEMS = ("linear_gaussian", "exp_toy", "poisson_toy", "elliptic", "pet")

FULL_SCALE = {
    "elliptic": {"n": 80, "obs_side": 6},
    "pet": {"n": 64, "n_src": 5, "n_ray": 30},
}


class ConfigError(ValidationError):
    pass


_number = {"type": "number"}
_posint = {"type": "integer", "minimum": 1}
_seed = {"type": "integer", "minimum": 0}

SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "required": ["problem"],
    "properties": {
        "include": {"type": "array", "items": {"type": "string"}},
        "name": {"type": "string"},
        "problem": {
            "type": "object",
            "additionalProperties": False,
            "required": ["type"],
            "properties": {
                "type": {"enum": list(PROBLEMS)},
                "params": {"type": "object"},
                "paper_scale": {"type": "boolean"},
            },
        },
        "prior": {
            "type": "object",
            "additionalProperties": False,
            "required": ["type"],
            "properties": {
                "type": {"enum": ["gaussian", "product_gg", "besov"]},
                "mean": {"oneOf": [_number, {"type": "array", "items": _number}]},
                "cov": {"type": "array", "items": {"type": "array", "items": _number}},
                "spde": {
                    "type": "object",
                    "additionalProperties": False,
                    "properties": {"gamma": {"type": "number", "exclusiveMinimum": 0}},
                },
                "gamma": {"type": "number", "exclusiveMinimum": 0},
                "p": {"type": "number", "minimum": 1},
                "smoothness": _number,
                "integrability": {"type": "number", "minimum": 1},
            },
        },
        "data": {
            "type": "object",
            "additionalProperties": False,
            "properties": {"seed": _seed},
        },
        "reduction": {
            "type": "object",
            "additionalProperties": False,
            "required": ["kind"],
            "properties": {
                "kind": {"enum": list(REDUCTION_KINDS)},
                "K": _posint,
                "epsilon": {"oneOf": [{"type": "number", "exclusiveMinimum": 0}, {"const": "inf"}]},
                "r_max": _posint,
                "rank": _posint,
                "base": {"enum": ["data_free", "forward_model"]},
                "workers": _posint,
                "seed": _seed,
            },
        },
        "sampler": {
            "type": "object",
            "additionalProperties": False,
            "required": ["method"],
            "properties": {
                "method": {"enum": list(METHODS)},
                "N": _posint,
                "K_steps": _posint,
                "kernel": {"enum": ["mala", "rw"]},
                "step": {"type": "number", "exclusiveMinimum": 0},
                "beta": {"type": "number", "exclusiveMinimum": 0, "maximum": 1},
                "mode": {"enum": ["reduced_likelihood", "reduced_forward"]},
                "init": {"enum": ["map", "prior_mean"]},
                "recycle": {"enum": ["stored", "online", "none"]},
                "replicates": _posint,
                "workers": _posint,
                "seed": _seed,
                "pm_probes": {"type": "integer", "minimum": 0},
                "pm_repeats": {"type": "integer", "minimum": 2},
            },
        },
        "output": {"type": "string"},
    },
}

DEFAULTS = {
    "data": {"seed": 0},
    "reduction": {"K": 1000, "epsilon": 0.1, "base": "data_free", "workers": 1, "seed": 1},
    "sampler": {
        "N": 5,
        "K_steps": 10000,
        "kernel": "mala",
        "step": 0.5,
        "beta": 0.2,
        "recycle": "online",
        "replicates": 1,
        "workers": 1,
        "seed": 2,
        "pm_probes": 0,
        "pm_repeats": 50,
    },
}


def deep_merge(base, over):
    out = copy.deepcopy(base)
    for k, v in over.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = deep_merge(out[k], v)
        else:
            out[k] = copy.deepcopy(v)
    return out


def _resolve(raw, here, seen):
    incs = raw.get("include", [])
    merged = {}
    for inc in incs:
        p = (here / inc).resolve()
        if p in seen:
            raise ConfigError(f"include cycle at {p}")
        merged = deep_merge(merged, _resolve(_read_json(p), p.parent, seen | {p}))
    rest = {k: v for k, v in raw.items() if k != "include"}
    return deep_merge(merged, rest)


def _read_json(path):
    try:
        with open(path) as fh:
            return json.load(fh)
    except FileNotFoundError as e:
        raise ConfigError(f"config file not found: {path}") from e
    except json.JSONDecodeError as e:
        raise ConfigError(f"{path}: invalid JSON ({e})") from e


def validate(cfg):
    try:
        jsonschema.validate(cfg, SCHEMA)
    except jsonschema.ValidationError as e:
        where = "/".join(str(p) for p in e.absolute_path) or "<root>"
        raise ConfigError(f"config invalid at {where}: {e.message}") from e
    return cfg


def load_config(source, base_dir=None):
    """Read (path) or accept (dict) a config, resolve includes, validate, fill defaults."""
    if isinstance(source, (str, Path)):
        path = Path(source).resolve()
        raw = _read_json(path)
        here = path.parent
        seen = {path}
    else:
        raw = copy.deepcopy(source)
        here = Path(base_dir or ".").resolve()
        seen = set()
    cfg = _resolve(raw, here, seen)
    validate(cfg)
    for key, d in DEFAULTS.items():
        if key in cfg or key == "data":
            cfg[key] = deep_merge(d, cfg.get(key, {}))
    return cfg


def canonical(obj):
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


def digest(obj):
    return hashlib.sha256(canonical(obj).encode()).hexdigest()[:16]


def problem_hash(cfg):
    return digest({"problem": cfg["problem"], "prior": cfg.get("prior")})


def data_hash(cfg):
    return digest({"problem": cfg["problem"], "prior": cfg.get("prior"), "data": cfg["data"]})


def subspace_hash(cfg):
    return digest({"problem": cfg["problem"], "prior": cfg.get("prior"), "reduction": cfg.get("reduction")})


def epsilon_value(red):
    e = red.get("epsilon", 0.1)
    return math.inf if e == "inf" else float(e)


def _prior_kwargs(ptype, prior):
    if prior is None:
        return {}
    if ptype == "elliptic":
        if prior["type"] != "gaussian" or set(prior) - {"type", "spde"}:
            raise ConfigError("elliptic problem takes only a gaussian spde prior")
        return {"gamma": prior.get("spde", {}).get("gamma", 10.0)}
    if ptype == "pet":
        if prior["type"] != "besov":
            raise ConfigError("pet problem takes a besov prior")
        return {k: prior[k] for k in ("gamma", "smoothness", "integrability") if k in prior}
    return {}


def _override_prior(problem, prior):
    if prior is None or problem.name in ("elliptic", "pet"):
        return problem
    d = problem.dim
    if prior["type"] == "gaussian":
        if "spde" in prior:
            raise ConfigError("spde priors are only available for the elliptic problem")
        mean = np.broadcast_to(np.asarray(prior.get("mean", 0.0), dtype=float), (d,)).copy()
        cov = np.asarray(prior["cov"], dtype=float) if "cov" in prior else problem.prior.cov.matrix
        if cov.shape != (d, d):
            raise ConfigError(f"prior cov must be {d}x{d}")
        problem.prior = GaussianPrior(mean, cov=cov)
    elif prior["type"] == "product_gg":
        problem.prior = ProductGGPrior(prior.get("gamma", 1.0), prior.get("p", 1.0), dim=d)
    else:
        raise ConfigError("besov priors are only available for the pet problem")
    return problem


def build_problem(cfg):
    pcfg = cfg["problem"]
    ptype = pcfg["type"]
    params = dict(FULL_SCALE.get(ptype, {})) if pcfg.get("paper_scale") else {}
    params.update(pcfg.get("params", {}))
    params.update(_prior_kwargs(ptype, cfg.get("prior")))
    ctor = {
        "linear_gaussian": linear_gaussian_problem,
        "exp_toy": exp_toy_problem,
        "poisson_toy": poisson_toy_problem,
        "elliptic": elliptic_problem,
        "pet": pet_problem,
    }[ptype]
    try:
        problem = ctor(**params)
    except TypeError as e:
        raise ConfigError(f"bad parameters for problem {ptype!r}: {e}") from e
    return _override_prior(problem, cfg.get("prior"))


def working_problem(cfg, problem=None):
    """The problem the sampler sees: normalized coordinates for the 'normalized' kind."""
    problem = build_problem(cfg) if problem is None else problem
    if cfg.get("reduction", {}).get("kind") == "normalized":
        if not isinstance(problem.prior, ProductGGPrior):
            raise ConfigError("normalized reduction needs a product prior")
        return normalized_problem(problem)
    return problem

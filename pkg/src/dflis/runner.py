"""Offline subspace construction and online sampling driven by a config dict.

These functions do no file I/O; the CLI wraps them.
"""

from __future__ import annotations

import logging
import time

import numpy as np

from .config import ConfigError, epsilon_value
from .diagnostics import pm_quality
from .linalg import ValidationError, projector_from_pairs
from .priors import GaussianPrior, ProductGGPrior, normalization_map
from .reduced import ReducedLikelihood
from .samplers import (
    delayed_acceptance_mh,
    gauss_newton_map,
    hmala,
    laplace_covariance,
    lift_chain,
    make_kernel,
    pcn_mh,
    pseudo_marginal_mh,
    recycle_exact,
    spawn_rngs,
    subspace_covariance,
    subspace_mh,
)
from .subspace import (
    SubspaceReport,
    build_coordinate_projector,
    build_projector,
    data_dependent_H,
    data_free_H,
    forward_model_H,
    kl_bound,
    prior_based_pairs,
    pullback_H,
    select_rank,
)

log = logging.getLogger(__name__)


def build_subspace(problem, red, samples=None, y=None):
    """Projector and report for the reduction settings ``red``.

    ``problem`` is the original (un-normalized) problem. Only the data-dependent kind
    uses ``samples`` and ``y``.
    """
    kind = red["kind"]
    eps = epsilon_value(red)
    r_max, rank = red.get("r_max"), red.get("rank")
    K, workers = int(red.get("K", 1000)), int(red.get("workers", 1))
    rng = np.random.default_rng(red.get("seed", 1))
    prior, lik = problem.prior, problem.likelihood
    extra = {}
    if kind == "prior_based":
        if not isinstance(prior, GaussianPrior):
            raise ConfigError("prior_based reduction needs a Gaussian prior")
        pairs = prior_based_pairs(prior)
        r = int(rank) if rank is not None else select_rank(pairs.eigenvalues, 1.0, eps, r_max)[0]
        proj = projector_from_pairs(pairs, r, kind="prior_based")
        rep = SubspaceReport("prior_based", r, kl_bound(pairs.eigenvalues, r), pairs.eigenvalues, True, False)
        return proj, rep, extra
    if kind == "normalized":
        if not isinstance(prior, ProductGGPrior):
            raise ConfigError("normalized reduction needs a product prior")
        est = pullback_H(normalization_map(prior), lik, K, rng, base=red.get("base", "data_free"), workers=workers)
        proj, rep = build_projector(est.matrix, GaussianPrior(np.zeros(prior.dim), cov=np.eye(prior.dim)),
                                    eps, r_max, rank, kind="normalized", estimate=est)
        return proj, rep, extra
    if kind == "data_dependent":
        if samples is None or y is None:
            raise ConfigError("data_dependent reduction needs posterior samples and data")
        est = data_dependent_H(samples, lik, y, workers=workers)
    elif red.get("base") == "forward_model":
        est = forward_model_H(prior, lik, K, rng, workers=workers)
    else:
        est = data_free_H(prior, lik, K, rng, workers=workers)
    if kind == "coordinate":
        proj, rep, scores = build_coordinate_projector(est.matrix, prior, eps, r_max, rank)
        rep.K = est.n_samples
        rep.trace_history_tail = est.trace_history_tail()
        rep.trace_drift = est.relative_trace_drift()
        extra["scores"] = scores
        return proj, rep, extra
    proj, rep = build_projector(est.matrix, prior, eps, r_max, rank, kind=kind, estimate=est)
    return proj, rep, extra


def _initial_state(problem, y, scfg):
    prior, lik = problem.prior, problem.likelihood
    x0 = np.array(prior.mean if isinstance(prior, GaussianPrior) else np.zeros(prior.dim), dtype=float)
    info = {}
    # Gauss-Newton needs a smooth prior, so product priors default to their mean
    how = scfg.get("init") or ("map" if isinstance(prior, GaussianPrior) else "prior_mean")
    if how == "map":
        x0, info = gauss_newton_map(prior, lik, y, x0)
    return x0, info


def default_mode(method, lik):
    if method in ("OF", "DA") and lik.family == "gaussian":
        return "reduced_forward"
    return "reduced_likelihood"


def run_method(problem, proj, y, scfg, seed, init=None):
    """Run one chain. Returns ({name: ChainRecord}, manifest dict)."""
    method = scfg["method"]
    prior, lik = problem.prior, problem.likelihood
    y = lik.check_data(y)
    K = int(scfg.get("K_steps", 10000))
    N = int(scfg.get("N", 5))
    step = float(scfg.get("step", 0.5))
    r_frozen, r_chain, r_lift, r_probe = spawn_rngs(seed, 4)
    t0 = time.perf_counter()
    if init is None:
        x0, map_info = _initial_state(problem, y, scfg)
    else:
        x0, map_info = np.asarray(init, dtype=float), {"from_chain": True}
    t_map = time.perf_counter() - t0
    manifest = {"method": method, "seed": seed, "K_steps": K, "map": {k: v for k, v in map_info.items() if k != "history"}}
    out = {}
    if method in ("PCN", "HMALA"):
        if not isinstance(prior, GaussianPrior):
            raise ConfigError(f"{method} needs a Gaussian prior; use the normalized reduction for product priors")
        if method == "PCN":
            rec = pcn_mh(prior, lik, y, float(scfg.get("beta", 0.2)), K, x0, r_chain)
        else:
            rec = hmala(prior, lik, y, step, K, x0, r_chain, cov=laplace_covariance(prior, lik, x0))
        out["chain"] = rec
    else:
        if proj is None:
            raise ConfigError(f"{method} needs a projector")
        mode = scfg.get("mode") or default_mode(method, lik)
        if method == "PM" and mode != "reduced_likelihood":
            raise ConfigError("PM runs in reduced_likelihood mode")
        frozen = r_frozen if method in ("OL", "OF", "DA") else None
        reduced = ReducedLikelihood(proj, lik, prior, mode, N, rng=frozen)
        cov_reduced = reduced if frozen is not None else ReducedLikelihood(proj, lik, prior, mode, N, rng=r_frozen)
        cov = subspace_covariance(cov_reduced, x0)
        kernel = make_kernel(scfg.get("kernel", "mala"), step, cov)
        c0 = proj.coords(x0)
        if method in ("OL", "OF"):
            rec = subspace_mh(reduced, y, kernel, K, c0, r_chain)
            out["chain"] = rec
            out["lifted"] = lift_chain(rec, prior, proj, r_lift)
        elif method == "PM":
            how = scfg.get("recycle", "online")
            rec = pseudo_marginal_mh(reduced, y, kernel, K, c0, r_chain, N=N,
                                     keep_sets=how == "stored", recycle_online=how == "online")
            out["chain"] = rec
            if how != "none":
                out["recycled"] = recycle_exact(rec, r_lift)
            if N == 1:
                manifest["estimator_note"] = "N=1: single-sample estimator; joint chain targets the exact posterior"
            n_probe = int(scfg.get("pm_probes", 0))
            if n_probe:
                pick = np.linspace(K // 10, K - 1, n_probe).astype(int)
                sd = pm_quality(reduced, y, rec.states[pick], int(scfg.get("pm_repeats", 50)), r_probe)
                manifest["sd_logL"] = float(np.mean(sd))
        elif method == "DA":
            rec = delayed_acceptance_mh(reduced, y, kernel, K, x0, r_chain)
            out["chain"] = rec
            manifest["E_beta"] = rec.info["mean_stage2_beta"]
        else:
            raise ValidationError(f"unknown method {method!r}")
        manifest["mode"] = mode
    rec = out["chain"]
    manifest.update(
        rank=None if proj is None or method in ("PCN", "HMALA") else proj.rank,
        N=N if method in ("OL", "OF", "PM", "DA") else None,
        acceptance_rate=rec.acceptance_rate,
        info=rec.info,
        timings={"map_s": t_map, "total_s": time.perf_counter() - t0},
    )
    log.info("%s: %d steps, acceptance %.3f", method, K, rec.acceptance_rate)
    return out, manifest


def exact_chain_name(records):
    """Which record holds full-space samples for the quantity of interest."""
    for key in ("recycled", "lifted", "chain"):
        if key in records and records[key].space == "full":
            return key
    return "chain"

"""MCMC on the reduced subspace and in full space.

All acceptance tests are done in log space. Subspace chains live on coefficients c
with x_r = V c; ``ChainRecord.projector`` maps them back.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla

from .linalg import RankRProjector, ValidationError
from .reduced import ReducedLikelihood


class MapDivergenceError(RuntimeError):
    """Gauss-Newton MAP search failed."""


def spawn_rngs(seed, n):
    """Independent generators for n chains from one master seed."""
    return [np.random.default_rng(s) for s in np.random.SeedSequence(seed).spawn(n)]


# ---------------------------------------------------------------------------
# proposal kernels


class _GaussianKernelBase:
    def __init__(self, step, cov=None, dim=None):
        if step <= 0:
            raise ValidationError("step size must be positive")
        self.step = float(step)
        if cov is None:
            if dim is None:
                raise ValidationError("kernel needs cov or dim")
            self.dim = int(dim)
            self.chol = None
            self.cov = None
            self.chol_inv = None
        else:
            cov = np.atleast_2d(np.asarray(cov, dtype=float))
            self.dim = cov.shape[0]
            self.cov = 0.5 * (cov + cov.T)
            self.chol = np.linalg.cholesky(self.cov)
            self.chol_inv = sla.solve_triangular(self.chol, np.eye(self.dim), lower=True)

    def _noise(self, rng):
        z = rng.standard_normal(self.dim)
        return z if self.chol is None else self.chol @ z

    def _whiten(self, r):
        return r if self.chol_inv is None else self.chol_inv @ r

    def describe(self):
        return {"kernel": self.name, "step": self.step}


class RandomWalkKernel(_GaussianKernelBase):
    """c' = c + step * C^{1/2} xi."""

    name = "rw"
    needs_grad = False

    def propose(self, x, grad, rng):
        return x + self.step * self._noise(rng)

    def log_q(self, to, frm, grad_frm):
        u = self._whiten(to - frm) / self.step
        return -0.5 * float(u @ u)


class MalaKernel(_GaussianKernelBase):
    """Preconditioned Langevin: c' = c + (h/2) C grad + sqrt(h) C^{1/2} xi."""

    name = "mala"
    needs_grad = True

    _memo = ()

    def _drift(self, x, grad):
        # each step needs the drift at x twice (proposal and reverse density); chains
        # never mutate states in place, so identity is a safe key
        for mx, mg, d in self._memo:
            if mx is x and mg is grad:
                return d
        g = grad if self.cov is None else self.cov @ grad
        d = x + 0.5 * self.step * g
        self._memo = ((x, grad, d),) + self._memo[:1]
        return d

    def propose(self, x, grad, rng):
        return self._drift(x, grad) + np.sqrt(self.step) * self._noise(rng)

    def log_q(self, to, frm, grad_frm):
        u = self._whiten(to - self._drift(frm, grad_frm))
        return -0.5 * float(u @ u) / self.step


def make_kernel(kind, step, cov=None, dim=None):
    if kind == "mala":
        return MalaKernel(step, cov, dim)
    if kind == "rw":
        return RandomWalkKernel(step, cov, dim)
    raise ValidationError(f"unknown kernel {kind!r}")


# ---------------------------------------------------------------------------


@dataclass
class ChainRecord:
    states: np.ndarray
    log_target: np.ndarray
    accepted: np.ndarray
    method: str
    seed: object = None
    space: str = "full"
    info: dict = field(default_factory=dict)
    aux: dict = field(default_factory=dict, repr=False)
    projector: RankRProjector | None = field(default=None, repr=False)

    @property
    def n_steps(self):
        return self.states.shape[0]

    @property
    def dim(self):
        return self.states.shape[1]

    @property
    def acceptance_rate(self):
        return float(np.mean(self.accepted)) if self.accepted.size else 0.0

    def full_states(self):
        if self.space == "full":
            return self.states
        if self.projector is None:
            raise ValidationError("coefficient chain has no projector attached")
        return self.projector.embed(self.states)


def _coeff_init(projector, init):
    x = np.asarray(init, dtype=float)
    if x.shape == (projector.dim,):
        if not projector.contains(x):
            raise ValidationError("initial state must lie in Im(P_r)")
        return projector.coords(x)
    if x.shape == (projector.rank,):
        return x.copy()
    raise ValidationError(f"initial state has shape {x.shape}")


def _mh_loop(evaluate, kernel, x0, n_steps, rng, on_step=None):
    """Generic Metropolis-Hastings; ``evaluate(x) -> (log_target, grad, aux)``.

    ``on_step(k, accepted, aux)`` sees the aux of the current state; k = -1 is the start.
    """
    x = np.array(x0, dtype=float)
    lp, g, aux = evaluate(x)
    if not np.isfinite(lp):
        raise ValidationError("initial state has non-finite log target")
    if on_step is not None:
        on_step(-1, True, aux)
    states = np.empty((n_steps, x.size))
    lps = np.empty(n_steps)
    acc = np.zeros(n_steps, dtype=bool)
    for k in range(n_steps):
        xp = kernel.propose(x, g, rng)
        lpp, gp, auxp = evaluate(xp)
        log_a = -np.inf
        if np.isfinite(lpp):
            log_a = lpp - lp
            if kernel.needs_grad:
                log_a += kernel.log_q(x, xp, gp) - kernel.log_q(xp, x, g)
        if np.log(rng.random()) < log_a:
            x, lp, g, aux = xp, lpp, gp, auxp
            acc[k] = True
        states[k] = x
        lps[k] = lp
        if on_step is not None:
            on_step(k, acc[k], aux)
    return states, lps, acc


def subspace_mh(reduced: ReducedLikelihood, y, kernel, K, init, rng):
    """MH on the coefficients of Im(P_r) targeting L_N(x_r) pi(x_r) with a frozen set."""
    y = reduced.likelihood.check_data(y)
    fac = reduced.factor
    c0 = _coeff_init(reduced.projector, init)

    def evaluate(c):
        if kernel.needs_grad:
            val, gl = reduced.value_and_grad_coeffs(y, c)
            return val + fac.log_marginal(c), gl + fac.grad_log_marginal(c), None
        return reduced.log_likelihood_coeffs(y, c) + fac.log_marginal(c), None, None

    states, lps, acc = _mh_loop(evaluate, kernel, c0, int(K), rng)
    info = {"mode": reduced.mode, "N": reduced.n_samples, "rank": reduced.rank, **kernel.describe()}
    return ChainRecord(states, lps, acc, "subspace_mh", space="coefficients", info=info, projector=reduced.projector)


def lift_chain(chain: ChainRecord, prior, projector, rng):
    """Append independent prior-conditional complements to a coefficient chain."""
    fac = prior.subspace_factor(projector)
    xs = projector.embed(chain.states) + fac.sample_complement(rng, chain.n_steps)
    info = dict(chain.info, lifted_from=chain.method)
    return ChainRecord(xs, chain.log_target.copy(), chain.accepted.copy(), chain.method + "+lift", chain.seed, "full", info)


def pseudo_marginal_mh(reduced: ReducedLikelihood, y, kernel, K, init, rng, N=None, keep_sets=True, recycle_online=False):
    """Pseudo-marginal MH with fresh complement sets redrawn at every proposal.

    With ``keep_sets`` the accepted sets and their per-sample log-likelihoods are kept
    for :func:`recycle_exact`. With ``recycle_online`` one member of the current set is
    chosen with probability proportional to its likelihood at each step, which avoids
    storing the sets.
    """
    y = reduced.likelihood.check_data(y)
    fac = reduced.factor
    n = reduced.n_samples if N is None else int(N)
    c0 = _coeff_init(reduced.projector, init)
    steps = int(K)
    # child streams leave the proposal/accept stream untouched, so with an exact
    # estimator the chain coincides with subspace_mh under the same seed
    draw_rng, rec_rng = rng.spawn(2)

    def evaluate(c):
        ev = reduced.fresh(y, c, draw_rng, grad=kernel.needs_grad, n=n)
        lp = ev.value + fac.log_marginal(c)
        g = None if ev.grad is None else ev.grad + fac.grad_log_marginal(c)
        return lp, g, (ev.samples, ev.per_sample)

    if reduced.mode != "reduced_likelihood" and (keep_sets or recycle_online):
        raise ValidationError("recycling needs reduced_likelihood mode")
    sets, set_ll = [], []
    set_index = np.empty(steps, dtype=np.int64)
    recycled = np.empty((steps, reduced.dim)) if recycle_online else None
    current = [None]

    def on_step(k, accepted, aux):
        if accepted:
            current[0] = aux
            if keep_sets:
                sets.append(aux[0])
                set_ll.append(aux[1])
        if k < 0:
            return
        if keep_sets:
            set_index[k] = len(sets) - 1
        if recycle_online:
            samples, ell = current[0]
            recycled[k] = samples[_categorical(ell, rec_rng)]

    states, lps, acc = _mh_loop(evaluate, kernel, c0, steps, rng, on_step)
    aux = {}
    if keep_sets:
        aux["sets"] = np.stack(sets)
        aux["set_loglik"] = np.stack(set_ll)
        aux["set_index"] = set_index
    if recycle_online:
        aux["recycled"] = reduced.projector.embed(states) + recycled
    info = {"mode": reduced.mode, "N": n, "rank": reduced.rank, **kernel.describe()}
    return ChainRecord(states, lps, acc, "pseudo_marginal", space="coefficients", info=info, aux=aux, projector=reduced.projector)


def _categorical(log_w, rng):
    p = np.exp(log_w - np.max(log_w))
    cdf = np.cumsum(p)
    return min(int(np.searchsorted(cdf, rng.random() * cdf[-1], side="right")), p.size - 1)


def recycle_exact(pm_chain: ChainRecord, rng=None, method="categorical"):
    """Exact full-space samples from a pseudo-marginal chain.

    At each step one member of the current complement set is selected with
    probability proportional to its likelihood (categorical draw or Gumbel-max).
    """
    if "recycled" in pm_chain.aux and "sets" not in pm_chain.aux:
        xs = pm_chain.aux["recycled"]
    else:
        if "sets" not in pm_chain.aux:
            raise ValidationError("chain carries no complement sets to recycle")
        rng = np.random.default_rng(rng)
        sets = pm_chain.aux["sets"]
        ll = pm_chain.aux["set_loglik"]
        idx = pm_chain.aux["set_index"]
        lw = ll[idx]
        if method == "gumbel":
            j = np.argmax(lw + rng.gumbel(size=lw.shape), axis=1)
        elif method == "categorical":
            p = np.exp(lw - lw.max(axis=1, keepdims=True))
            cdf = np.cumsum(p, axis=1)
            u = rng.random(len(idx))[:, None] * cdf[:, -1:]
            j = np.minimum((cdf <= u).sum(axis=1), lw.shape[1] - 1)
        else:
            raise ValidationError(f"unknown selection method {method!r}")
        xs = pm_chain.projector.embed(pm_chain.states) + sets[idx, j]
    info = dict(pm_chain.info, recycled=True)
    return ChainRecord(xs, pm_chain.log_target.copy(), pm_chain.accepted.copy(), "pseudo_marginal+recycle", pm_chain.seed, "full", info)


def delayed_acceptance_mh(reduced: ReducedLikelihood, y, kernel, K, init, rng):
    """Two-stage MH: screen with the frozen reduced likelihood, then correct with the full one."""
    lik = reduced.likelihood
    y = lik.check_data(y)
    proj = reduced.projector
    fac = reduced.factor
    x0 = np.asarray(init, dtype=float)
    if x0.shape != (proj.dim,):
        raise ValidationError("delayed acceptance needs a full-space initial state")
    c, xp = proj.coords(x0), x0 - proj.apply(x0)

    def surrogate(c):
        if kernel.needs_grad:
            v, g = reduced.value_and_grad_coeffs(y, c)
            return v, v + fac.log_marginal(c), g + fac.grad_log_marginal(c)
        v = reduced.log_likelihood_coeffs(y, c)
        return v, v + fac.log_marginal(c), None

    lt, st, g = surrogate(c)
    lf = lik.log_likelihood(y, proj.embed(c) + xp)
    if not (np.isfinite(st) and np.isfinite(lf)):
        raise ValidationError("initial state has non-finite log target")
    steps = int(K)
    states = np.empty((steps, proj.dim))
    lps = np.empty(steps)
    acc = np.zeros(steps, dtype=bool)
    betas = []
    n_stage1 = 0
    for k in range(steps):
        cp = kernel.propose(c, g, rng)
        ltp, stp, gp = surrogate(cp)
        log_a = -np.inf
        if np.isfinite(stp):
            log_a = stp - st
            if kernel.needs_grad:
                log_a += kernel.log_q(c, cp, gp) - kernel.log_q(cp, c, g)
        if np.log(rng.random()) < log_a:
            n_stage1 += 1
            xpp = fac.sample_complement(rng, 1)[0]
            lfp = lik.log_likelihood(y, proj.embed(cp) + xpp)
            log_b = (lfp - lf) + (lt - ltp) if np.isfinite(lfp) else -np.inf
            betas.append(min(1.0, float(np.exp(min(log_b, 0.0)))))
            if np.log(rng.random()) < log_b:
                c, xp, lt, st, g, lf = cp, xpp, ltp, stp, gp, lfp
                acc[k] = True
        states[k] = proj.embed(c) + xp
        lps[k] = lf + st - lt
    info = {
        "mode": reduced.mode,
        "N": reduced.n_samples,
        "rank": reduced.rank,
        "stage1_rate": n_stage1 / max(steps, 1),
        "mean_stage2_beta": float(np.mean(betas)) if betas else float("nan"),
        **kernel.describe(),
    }
    return ChainRecord(states, lps, acc, "delayed_acceptance", space="full", info=info)


def pcn_mh(prior, likelihood, y, beta, K, init, rng, block=256):
    """Preconditioned Crank-Nicolson for a Gaussian prior; accepts on the likelihood ratio."""
    if not 0 < beta <= 1:
        raise ValidationError("pCN beta must lie in (0, 1]")
    y = likelihood.check_data(y)
    x = np.array(init, dtype=float)
    m = prior.mean
    rho = np.sqrt(1.0 - beta * beta)
    ll = likelihood.log_likelihood(y, x)
    if not np.isfinite(ll):
        raise ValidationError("initial state has non-finite log-likelihood")
    steps = int(K)
    states = np.empty((steps, x.size))
    lls = np.empty(steps)
    acc = np.zeros(steps, dtype=bool)
    noise = None
    for k in range(steps):
        j = k % block
        if j == 0:
            noise = prior.sample(rng, min(block, steps - k)) - m
        xp = m + rho * (x - m) + beta * noise[j]
        llp = likelihood.log_likelihood(y, xp)
        if np.log(rng.random()) < (llp - ll if np.isfinite(llp) else -np.inf):
            x, ll = xp, llp
            acc[k] = True
        states[k] = x
        lls[k] = ll
    # chunked so long high-dimensional chains do not double their footprint
    lps = lls + np.concatenate([prior.log_density(states[i : i + 4096]) for i in range(0, max(steps, 1), 4096)])
    return ChainRecord(states, lps, acc, "pcn", space="full", info={"kernel": "pcn", "beta": beta})


def _full_target(prior, likelihood, y):
    def evaluate(x):
        v, g = likelihood.value_and_grad(y, x)
        return v + float(prior.log_density(x)), g + prior.grad_log_density(x), None

    return evaluate


def gauss_newton_map(prior, likelihood, y, x0=None, tol=1e-8, maxiter=100):
    """MAP point by Gauss-Newton (Fisher scoring) with backtracking.

    Converged when the gradient norm drops below ``tol * max(1, |g_0|)``.
    """
    y = likelihood.check_data(y)
    x = prior.mean.copy() if x0 is None else np.array(x0, dtype=float)
    gam = prior.metric.matrix
    target = _full_target(prior, likelihood, y)
    f, g, _ = target(x)
    if not np.isfinite(f):
        raise MapDivergenceError("non-finite objective at the starting point")
    g0 = np.linalg.norm(g)
    thresh = tol * max(1.0, g0)
    history = [float(np.linalg.norm(g))]
    for it in range(maxiter):
        if np.linalg.norm(g) <= thresh:
            return x, {"iterations": it, "grad_norm": history[-1], "history": history}
        hess = gam + likelihood.fisher_information(x)
        step = np.linalg.solve(hess, g)
        t = 1.0
        for _ in range(40):
            xn = x + t * step
            fn, gn, _ = target(xn)
            if np.isfinite(fn) and fn >= f - 1e-12 * abs(f):
                break
            t *= 0.5
        else:
            raise MapDivergenceError(f"line search failed at iteration {it}; grad norm {history[-1]:.3g}")
        if np.linalg.norm(xn - x) <= 1e-14 * (1.0 + np.linalg.norm(x)):
            x, f, g = xn, fn, gn
            history.append(float(np.linalg.norm(g)))
            return x, {"iterations": it + 1, "grad_norm": history[-1], "history": history, "stalled": True}
        x, f, g = xn, fn, gn
        history.append(float(np.linalg.norm(g)))
    if np.linalg.norm(g) <= thresh:
        return x, {"iterations": maxiter, "grad_norm": history[-1], "history": history}
    raise MapDivergenceError(f"no convergence after {maxiter} iterations; grad norm {history[-1]:.3g}")


def laplace_covariance(prior, likelihood, x):
    """(Gamma + I(x))^{-1}."""
    h = prior.metric.matrix + likelihood.fisher_information(x)
    c = np.linalg.inv(0.5 * (h + h.T))
    return 0.5 * (c + c.T)


def subspace_covariance(reduced: ReducedLikelihood, x):
    """Inverse of the projected Hessian in coefficient space at x."""
    v = reduced.projector.basis
    h = reduced.factor.coeff_precision + v.T @ reduced.likelihood.fisher_information(x) @ v
    c = np.linalg.inv(0.5 * (h + h.T))
    return 0.5 * (c + c.T)


def hmala(prior, likelihood, y, step, K, init, rng, x_map=None, cov=None):
    """Langevin proposals preconditioned by the Hessian at the MAP point."""
    y = likelihood.check_data(y)
    info = {}
    if cov is None:
        if x_map is None:
            x_map, info = gauss_newton_map(prior, likelihood, y, init)
        cov = laplace_covariance(prior, likelihood, x_map)
    kernel = MalaKernel(step, cov)
    states, lps, acc = _mh_loop(_full_target(prior, likelihood, y), kernel, init, int(K), rng)
    meta = {"kernel": "hmala", "step": float(step), "map_iterations": info.get("iterations")}
    return ChainRecord(states, lps, acc, "hmala", space="full", info=meta)

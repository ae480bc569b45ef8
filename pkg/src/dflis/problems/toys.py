"""Small problems with closed forms or cheap quadrature."""

from __future__ import annotations

import numpy as np

from ..models import CallableForwardModel, GaussianLikelihood, LinearForwardModel, PoissonLikelihood
from ..priors import GaussianPrior
from .base import Problem


def random_spd(d, rng, spread=1.0):
    q, _ = np.linalg.qr(rng.standard_normal((d, d)))
    ev = np.exp(spread * rng.uniform(-1.0, 1.0, d))
    s = (q * ev) @ q.T
    return 0.5 * (s + s.T)


def linear_gaussian_problem(d=8, m=4, seed=0, sigma=0.5):
    rng = np.random.default_rng(seed)
    A = rng.standard_normal((m, d))
    mean = 0.5 * rng.standard_normal(d)
    cov = random_spd(d, rng)
    noise = sigma**2 * np.diag(np.exp(rng.uniform(-0.5, 0.5, m)))
    prior = GaussianPrior(mean, cov=cov)
    lik = GaussianLikelihood(LinearForwardModel(A), noise)
    meta = {"problem": "linear_gaussian", "d": d, "m": m, "seed": seed, "sigma": sigma}
    return Problem("linear_gaussian", prior, lik, meta, extras={"A": A})


def linear_gaussian_posterior(problem, y):
    """Conjugate posterior (mean, cov)."""
    A = problem.extras["A"]
    prior, noise = problem.prior, problem.likelihood.noise
    prec = prior.precision.matrix + A.T @ noise.solve(A)
    cov = np.linalg.inv(0.5 * (prec + prec.T))
    cov = 0.5 * (cov + cov.T)
    mean = cov @ (prior.precision.matrix @ prior.mean + A.T @ noise.solve(y))
    return mean, cov


def exp_toy_problem(d=3, m=None, seed=0, sigma=0.3, rate=0.6, cov=None):
    """G(x) = M exp(w * x) with a fixed mixing matrix M and rates w."""
    rng = np.random.default_rng(seed)
    m = d if m is None else m
    M = rng.standard_normal((m, d))
    w = rate * np.linspace(1.5, 0.5, d)
    cov = random_spd(d, rng, 0.5) if cov is None else np.asarray(cov, dtype=float)

    def fun(x):
        return M @ np.exp(w * x)

    def jac(x):
        return M * (w * np.exp(w * x))[None, :]

    def batch(xs):
        return np.exp(xs * w) @ M.T

    model = CallableForwardModel(fun, d, m, jac=jac, batch_fun=batch)
    prior = GaussianPrior(np.zeros(d), cov=cov)
    lik = GaussianLikelihood.isotropic(model, sigma)
    meta = {"problem": "exp_toy", "d": d, "m": m, "seed": seed, "sigma": sigma}
    return Problem("exp_toy", prior, lik, meta, extras={"M": M, "w": w})


def poisson_toy_problem(seed=0, m=6, scale=3.0):
    """Two parameters, m log-linear Poisson rates G(x) = scale * exp(C x)."""
    rng = np.random.default_rng(seed)
    C = 0.7 * rng.standard_normal((m, 2))

    def fun(x):
        return scale * np.exp(C @ x)

    def jac(x):
        return fun(x)[:, None] * C

    def batch(xs):
        return scale * np.exp(np.atleast_2d(xs) @ C.T)

    model = CallableForwardModel(fun, 2, m, jac=jac, batch_fun=batch)
    prior = GaussianPrior(np.zeros(2), cov=np.eye(2))
    meta = {"problem": "poisson_toy", "m": m, "seed": seed}
    return Problem("poisson_toy", prior, PoissonLikelihood(model), meta, extras={"C": C})

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass
class Problem:
    name: str
    prior: object
    likelihood: object
    metadata: dict = field(default_factory=dict)
    extras: dict = field(default_factory=dict, repr=False)

    @property
    def dim(self):
        return self.prior.dim

    @property
    def model(self):
        return self.likelihood.model


def make_truth_and_data(problem: Problem, rng):
    """Draw a truth from the prior and simulate data from it."""
    rng = np.random.default_rng(rng)
    x_true = problem.prior.sample(rng)
    y = problem.likelihood.simulate(x_true, rng)
    g = problem.model.eval(x_true)
    meta = dict(problem.metadata)
    meta["noise_family"] = problem.likelihood.family
    if problem.likelihood.family == "gaussian":
        sigma = float(np.sqrt(np.mean(np.diag(problem.likelihood.noise.matrix))))
        meta["sigma"] = sigma
        meta["snr"] = float(np.max(np.abs(g)) / sigma)
    else:
        meta["mean_count"] = float(np.mean(g))
    return x_true, y, meta


def with_model(likelihood, model):
    """Same noise model on a different forward map."""
    from ..models import GaussianLikelihood, PoissonLikelihood

    if isinstance(likelihood, GaussianLikelihood):
        return GaussianLikelihood(model, likelihood.noise)
    if isinstance(likelihood, PoissonLikelihood):
        return PoissonLikelihood(model)
    raise TypeError(f"cannot rebuild {type(likelihood).__name__}")


def normalized_problem(problem: Problem):
    """Pull a product-prior problem back to standard-normal coordinates z, x = T(z)."""
    from ..models import ComposedForwardModel
    from ..priors import GaussianPrior, normalization_map

    nmap = normalization_map(problem.prior)
    lik = with_model(problem.likelihood, ComposedForwardModel(problem.model, nmap))
    prior = GaussianPrior(np.zeros(problem.dim), cov=np.eye(problem.dim))
    meta = dict(problem.metadata, normalized=True)
    return Problem(problem.name + "_normalized", prior, lik, meta, extras=dict(problem.extras, nmap=nmap, base=problem))

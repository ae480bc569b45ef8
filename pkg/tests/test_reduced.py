import numpy as np
import pytest
from scipy.special import logsumexp
from scipy.stats import multivariate_normal

from dflis.linalg import ValidationError, generalized_eig, projector_from_pairs
from dflis.models import GaussianLikelihood, LinearForwardModel, PoissonLikelihood
from dflis.priors import GaussianPrior
from dflis.problems import exp_toy_problem, poisson_toy_problem
from dflis.reduced import ReducedLikelihood, log_mean_exp

from conftest import random_spd


def _setup(rng, d=4, m=3, r=2):
    A = rng.standard_normal((m, d))
    S = np.diag(rng.uniform(0.3, 1.0, m))
    prior = GaussianPrior(0.2 * rng.standard_normal(d), cov=random_spd(rng, d))
    lik = GaussianLikelihood(LinearForwardModel(A), S)
    H = A.T @ np.linalg.solve(S, A)
    proj = projector_from_pairs(generalized_eig(H, prior.precision), r)
    return prior, lik, proj, A, S


def test_log_mean_exp():
    v = np.array([1000.0, 1000.0 + np.log(3.0)])
    assert np.isclose(log_mean_exp(v), 1000.0 + np.log(2.0))
    lw = np.log([0.25, 0.75])
    assert np.isclose(log_mean_exp(v, lw), logsumexp(v + lw))


def test_N1_is_likelihood_at_sample(rng):
    prior, lik, proj, _, _ = _setup(rng)
    y = rng.standard_normal(3)
    red = ReducedLikelihood(proj, lik, prior, n_samples=1, rng=np.random.default_rng(1))
    c = rng.standard_normal(proj.rank)
    x = proj.embed(c) + red.samples[0]
    assert np.isclose(red.log_likelihood_coeffs(y, c), lik.log_likelihood(y, x))


def test_sample_average_matches_manual(rng):
    prior, lik, proj, _, _ = _setup(rng)
    y = rng.standard_normal(3)
    red = ReducedLikelihood(proj, lik, prior, n_samples=6, rng=np.random.default_rng(2))
    c = rng.standard_normal(proj.rank)
    ell = [lik.log_likelihood(y, proj.embed(c) + s) for s in red.samples]
    assert np.isclose(red.log_likelihood_coeffs(y, c), logsumexp(ell) - np.log(6))
    w = rng.uniform(0.5, 2.0, 6)
    red.freeze(red.samples, w)
    assert np.isclose(red.log_likelihood_coeffs(y, c), logsumexp(np.array(ell) + np.log(w / w.sum())))


def test_reduced_forward_averages_output(rng):
    prior, lik, proj, A, _ = _setup(rng)
    y = rng.standard_normal(3)
    red = ReducedLikelihood(proj, lik, prior, "reduced_forward", n_samples=5, rng=np.random.default_rng(3))
    c = rng.standard_normal(proj.rank)
    gbar = A @ (proj.embed(c) + red.samples.mean(axis=0))
    assert np.allclose(red.reduced_forward(c), gbar)
    assert np.isclose(red.log_likelihood_coeffs(y, c), lik.log_likelihood_from_output(y, gbar))


@pytest.mark.parametrize("mode", ["reduced_likelihood", "reduced_forward"])
def test_gradient_finite_difference(mode):
    prob = exp_toy_problem(d=4, seed=3)
    prior, lik = prob.prior, prob.likelihood
    H = np.eye(4) + np.diag([3.0, 2.0, 0.0, 0.0])
    proj = projector_from_pairs(generalized_eig(H, prior.precision), 2)
    red = ReducedLikelihood(proj, lik, prior, mode, n_samples=4, rng=np.random.default_rng(5))
    y = lik.model.eval(np.zeros(4)) + 0.1
    c = np.array([0.2, -0.3])
    _, g = red.value_and_grad_coeffs(y, c)
    h = 1e-6
    fd = [(red.log_likelihood_coeffs(y, c + h * e) - red.log_likelihood_coeffs(y, c - h * e)) / (2 * h) for e in np.eye(2)]
    assert np.allclose(g, fd, rtol=1e-5, atol=1e-7)


def test_full_rank_is_exact(rng):
    prior, lik, _, A, S = _setup(rng)
    y = rng.standard_normal(3)
    H = A.T @ np.linalg.solve(S, A) + np.eye(4)
    proj = projector_from_pairs(generalized_eig(H, prior.precision), 4)
    red = ReducedLikelihood(proj, lik, prior, n_samples=3, rng=rng)
    x = rng.standard_normal(4)
    assert np.isclose(red.log_likelihood_coeffs(y, proj.coords(x)), lik.log_likelihood(y, x))


def test_fresh_estimator_unbiased(rng):
    # E_perp[L(x_r + x_perp)] has a closed form for a linear Gaussian model
    prior, lik, proj, A, S = _setup(rng, r=1)
    y = A @ prior.mean + 0.3
    red = ReducedLikelihood(proj, lik, prior, n_samples=1)
    c = proj.coords(prior.mean) + 0.1
    x_r = proj.embed(c)
    Q = np.eye(4) - proj.matrix
    C_perp = Q @ prior.cov.matrix @ Q.T
    m_perp = Q @ prior.mean
    exact = multivariate_normal(A @ (x_r + m_perp), S + A @ C_perp @ A.T).pdf(y)
    draws = np.exp([red.fresh(y, c, rng).value for _ in range(40_000)])
    assert abs(draws.mean() - exact) <= 4 * draws.std() / np.sqrt(draws.size)


def test_rejections(rng):
    prior, lik, proj, _, _ = _setup(rng)
    with pytest.raises(ValidationError):
        ReducedLikelihood(proj, lik, prior, mode="bogus")
    with pytest.raises(ValidationError):
        ReducedLikelihood(proj, lik, prior, n_samples=0)
    with pytest.raises(ValidationError):
        ReducedLikelihood(proj, lik, prior, complement_samples=rng.standard_normal((3, 4)))
    red = ReducedLikelihood(proj, lik, prior, n_samples=2)
    with pytest.raises(ValidationError):
        red.log_likelihood_coeffs(np.zeros(3), np.zeros(2))
    with pytest.raises(ValidationError):
        red.reduced_log_likelihood(np.zeros(3), np.ones(4))
    toy = poisson_toy_problem()
    pproj = projector_from_pairs(generalized_eig(np.diag([2.0, 1.0]), toy.prior.precision), 1)
    with pytest.raises(ValidationError):
        ReducedLikelihood(pproj, toy.likelihood, toy.prior, "reduced_forward")
    assert isinstance(toy.likelihood, PoissonLikelihood)

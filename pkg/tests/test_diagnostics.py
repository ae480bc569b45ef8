
import numpy as np
import pytest

from dflis.diagnostics import (
    DegenerateSeriesWarning,
    batch_means_se,
    empirical_flux,
    ess,
    iact,
    iact_components,
    kl_estimate,
    mean_iact,
    pm_quality,
    summarize_chain,
)
from dflis.linalg import ValidationError, coordinate_projector
from dflis.models import GaussianLikelihood, LinearForwardModel
from dflis.priors import GaussianPrior
from dflis.reduced import ReducedLikelihood
from dflis.samplers import ChainRecord

from oracles import Y2D, grid, posterior_log_density, toy2d, toy_projector


def ar1(phi, n, seed):
    rng = np.random.default_rng(seed)
    e = rng.standard_normal(n)
    x = np.empty(n)
    x[0] = e[0] / np.sqrt(1 - phi * phi)
    for i in range(1, n):
        x[i] = phi * x[i - 1] + e[i]
    return x


def test_iact_iid():
    assert abs(iact(np.random.default_rng(0).standard_normal(100_000)) - 1.0) <= 0.1


@pytest.mark.parametrize("phi,tol", [(0.5, 0.10), (0.9, 0.15)])
def test_iact_ar1(phi, tol):
    truth = (1 + phi) / (1 - phi)
    assert abs(iact(ar1(phi, 200_000, 1)) / truth - 1) <= tol


def test_iact_affine_invariant():
    x = ar1(0.7, 20_000, 2)
    assert np.isclose(iact(x), iact(3.0 * x - 7.0), rtol=1e-10)


def test_iact_constant_series():
    with pytest.warns(DegenerateSeriesWarning):
        assert iact(np.ones(1000)) == 1000.0
    with pytest.warns(DegenerateSeriesWarning):
        assert iact_components(np.ones((500, 2)))[0] == 500.0


def test_components_match_scalar():
    xs = np.stack([ar1(0.5, 5000, 3), ar1(0.8, 5000, 4)], axis=1)
    taus = iact_components(xs)
    assert np.allclose(taus, [iact(xs[:, 0]), iact(xs[:, 1])])
    assert np.isclose(mean_iact(xs), taus.mean())
    assert np.allclose(ess(xs), 5000 / taus)


def test_batch_means_se_iid():
    x = np.random.default_rng(5).standard_normal(100_000)
    assert abs(batch_means_se(x)[0] / (1 / np.sqrt(1e5)) - 1) < 0.3
    with pytest.raises(ValidationError):
        batch_means_se(np.ones(10))


def test_kl_trivial_cases(rng):
    ll = rng.standard_normal(1000)
    assert kl_estimate(ll, ll).value == 0.0
    assert kl_estimate(ll, ll + 3.25).value == pytest.approx(0.0, abs=1e-12)
    approx = ll + 0.3 * rng.standard_normal(1000)
    a, b = kl_estimate(ll, approx).value, kl_estimate(ll + 5.0, approx - 2.0).value
    assert a == pytest.approx(b, abs=1e-12)
    with pytest.raises(ValidationError):
        kl_estimate(np.array([]), np.array([]))


def test_kl_against_quadrature():
    p = toy2d()
    proj = toy_projector(p)
    red = ReducedLikelihood(proj, p.likelihood, p.prior, n_samples=2, rng=np.random.default_rng(3))
    lik = p.likelihood
    _, pts, cell = grid(n=401)
    lp = posterior_log_density(p, Y2D)(pts)
    la = np.array([red.log_likelihood_coeffs(Y2D, c) for c in proj.coords(pts)]) + p.prior.log_density(pts)
    lp_n = lp - np.log(np.sum(np.exp(lp - lp.max())) * cell) - lp.max()
    la_n = la - np.log(np.sum(np.exp(la - la.max())) * cell) - la.max()
    w = np.exp(lp_n) * cell
    exact = float(np.sum(w * (lp_n - la_n)))
    rng = np.random.default_rng(4)
    h = np.sqrt(cell)
    idx = rng.choice(len(pts), size=100_000, p=w / w.sum())
    xs = pts[idx] + h * (rng.random((100_000, 2)) - 0.5)
    full = lik.log_likelihood_from_output(Y2D, lik.model.eval_batch(xs))
    approx = np.array([red.log_likelihood_coeffs(Y2D, c) for c in proj.coords(xs)])
    est = kl_estimate(full, approx)
    assert abs(est.value - exact) < 1e-2


def test_pm_quality_ridge_is_zero():
    prior = GaussianPrior(np.zeros(2), cov=np.eye(2))
    lik = GaussianLikelihood.isotropic(LinearForwardModel(np.array([[1.0, 0.0]])), 0.5)
    red = ReducedLikelihood(coordinate_projector([0], 2), lik, prior, n_samples=3)
    sd = pm_quality(red, np.array([0.2]), np.array([[0.0], [1.0]]), R=20, rng=0)
    assert np.all(sd < 1e-12)


def test_pm_quality_clt_scaling():
    prior = GaussianPrior(np.zeros(2), cov=np.eye(2))
    lik = GaussianLikelihood.isotropic(LinearForwardModel(np.array([[1.0, 0.4]])), 1.0)
    proj = coordinate_projector([0], 2)
    y = np.array([0.3])
    sd1 = pm_quality(ReducedLikelihood(proj, lik, prior, n_samples=4), y, [[0.0]], R=4000, rng=1)[0]
    sd4 = pm_quality(ReducedLikelihood(proj, lik, prior, n_samples=16), y, [[0.0]], R=4000, rng=2)[0]
    assert abs(sd4 / sd1 - 0.5) <= 0.2 * 0.5


def test_empirical_flux_and_summary():
    f = empirical_flux(np.array([0, 1, 1, 2, 0]), 3)
    assert np.isclose(f.sum(), 1.0) and f[1, 1] == 0.25
    rec = ChainRecord(np.stack([ar1(0.5, 4000, 6)], axis=1), np.zeros(4000), np.ones(4000, bool), "ar1",
                      info={"kernel": "rw", "nested": {"a": 1}})
    s = summarize_chain(rec, burn_in=100).to_json()
    assert s["n_steps"] == 4000 and s["kernel"] == "rw" and "nested" not in s
    assert 2.0 < s["mean_iact"] < 4.0

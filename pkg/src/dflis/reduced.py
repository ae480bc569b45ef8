"""Sample-average reduced likelihoods on the image of a projector.

Two modes:

* ``reduced_likelihood``: log of (1/N) sum_i L(x_r + x_perp_i), computed by log-sum-exp.
* ``reduced_forward``: Gaussian misfit of the averaged forward output (Gaussian noise only).

The complement samples are either frozen at construction or redrawn on each call.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .linalg import ValidationError

MODES = ("reduced_likelihood", "reduced_forward")


def _lse(v):
    # scipy's logsumexp costs ~100us per call on tiny arrays, which dominates MCMC steps
    top = np.max(v)
    if not np.isfinite(top):
        return float(top)
    return float(top + np.log(np.sum(np.exp(v - top))))


def log_mean_exp(values, log_weights=None):
    """log sum_i w_i exp(values_i) with weights summing to one (uniform by default)."""
    v = np.asarray(values, dtype=float)
    if log_weights is None:
        return _lse(v) - np.log(v.size)
    return _lse(v + log_weights)


@dataclass
class FreshEvaluation:
    value: float
    samples: np.ndarray
    per_sample: np.ndarray
    grad: np.ndarray | None = None


class ReducedLikelihood:
    def __init__(
        self,
        projector,
        likelihood,
        prior,
        mode="reduced_likelihood",
        n_samples=5,
        rng=None,
        complement_samples=None,
        weights=None,
    ):
        if mode not in MODES:
            raise ValidationError(f"mode must be one of {MODES}, got {mode!r}")
        if mode == "reduced_forward" and likelihood.family != "gaussian":
            raise ValidationError("reduced_forward mode needs a Gaussian likelihood")
        if projector.dim != likelihood.input_dim or prior.dim != projector.dim:
            raise ValidationError("projector, prior and likelihood dimensions differ")
        self.projector = projector
        self.likelihood = likelihood
        self.prior = prior
        self.mode = mode
        self.factor = prior.subspace_factor(projector)
        self.n_samples = int(n_samples)
        if self.n_samples < 1:
            raise ValidationError("N must be at least 1")
        self.samples = None
        self.log_weights = None
        if complement_samples is not None:
            self.freeze(complement_samples, weights)
        elif rng is not None:
            self.freeze(self.factor.sample_complement(rng, self.n_samples))

    @property
    def rank(self):
        return self.projector.rank

    @property
    def dim(self):
        return self.projector.dim

    def freeze(self, samples, weights=None):
        xs = np.atleast_2d(np.asarray(samples, dtype=float))
        if xs.shape[1] != self.dim:
            raise ValidationError("complement samples have the wrong dimension")
        resid = np.abs(self.projector.apply(xs)).max() if xs.size else 0.0
        if resid > 1e-8 * max(1.0, np.abs(xs).max()):
            raise ValidationError("complement samples must lie in Ker(P)")
        self.samples = xs
        self.n_samples = xs.shape[0]
        if weights is None:
            self.log_weights = None
        else:
            w = np.asarray(weights, dtype=float)
            if w.shape != (xs.shape[0],) or np.any(w <= 0):
                raise ValidationError("weights must be positive, one per sample")
            self.log_weights = np.log(w) - np.log(np.sum(w))
        return self

    def _weights(self, log_weights, n):
        if log_weights is None:
            return np.full(n, 1.0 / n)
        return np.exp(log_weights)

    def evaluate(self, y, c, samples, log_weights=None, grad=False):
        """(value, per-sample log-likelihoods, grad wrt c or None) on a given complement set."""
        lik = self.likelihood
        xs = self.projector.embed(np.asarray(c, dtype=float))[None, :] + samples
        n = xs.shape[0]
        if not grad:
            g = lik.model.eval_batch(xs)
            if self.mode == "reduced_forward":
                gbar = self._weights(log_weights, n) @ g
                return float(lik.log_likelihood_from_output(y, gbar)), None, None
            ell = lik.log_likelihood_from_output(y, g)
            return log_mean_exp(ell, log_weights), ell, None
        outs, vjps = [], []
        for x in xs:
            gi, vjp = lik.model.linearize(x)
            outs.append(gi)
            vjps.append(vjp)
        g = np.stack(outs)
        v = self.projector.basis
        if self.mode == "reduced_forward":
            w = self._weights(log_weights, n)
            gbar = w @ g
            s = lik.output_score(y, gbar)
            full = sum(wi * vjp(s) for wi, vjp in zip(w, vjps))
            return float(lik.log_likelihood_from_output(y, gbar)), None, v.T @ full
        ell = lik.log_likelihood_from_output(y, g)
        lw = np.log(np.full(n, 1.0 / n)) if log_weights is None else log_weights
        a = ell + lw
        p = np.exp(a - _lse(a))
        full = sum(pi * vjp(lik.output_score(y, gi)) for pi, vjp, gi in zip(p, vjps, g))
        return log_mean_exp(ell, log_weights), ell, v.T @ full

    # frozen ---------------------------------------------------------------

    def _require_frozen(self):
        if self.samples is None:
            raise ValidationError("reduced likelihood has no frozen complement samples")

    def log_likelihood_coeffs(self, y, c):
        self._require_frozen()
        return self.evaluate(y, c, self.samples, self.log_weights)[0]

    def value_and_grad_coeffs(self, y, c):
        self._require_frozen()
        val, _, g = self.evaluate(y, c, self.samples, self.log_weights, grad=True)
        return val, g

    def reduced_log_likelihood(self, y, x_r):
        if not self.projector.contains(x_r):
            raise ValidationError("x_r is not in the image of the projector")
        return self.log_likelihood_coeffs(y, self.projector.coords(x_r))

    def reduced_forward(self, c):
        """Weighted average of G over the frozen complement set at coefficients c."""
        self._require_frozen()
        xs = self.projector.embed(np.asarray(c, dtype=float))[None, :] + self.samples
        g = self.likelihood.model.eval_batch(xs)
        return self._weights(self.log_weights, xs.shape[0]) @ g

    def log_likelihood_coeffs_batch(self, y, cs):
        cs = np.atleast_2d(np.asarray(cs, dtype=float))
        return np.array([self.log_likelihood_coeffs(y, c) for c in cs])

    def approx_posterior_log_density(self, y, x):
        """log L_N(P x) + log pi(x), up to the normalizing constant."""
        x = np.asarray(x, dtype=float)
        return self.log_likelihood_coeffs(y, self.projector.coords(x)) + float(self.prior.log_density(x))

    # fresh ----------------------------------------------------------------

    def fresh(self, y, c, rng, grad=False, n=None):
        samples = self.factor.sample_complement(rng, self.n_samples if n is None else int(n))
        val, ell, g = self.evaluate(y, c, samples, None, grad=grad)
        return FreshEvaluation(val, samples, ell, g)

    def fresh_reduced_log_likelihood(self, y, x_r, rng):
        if not self.projector.contains(x_r):
            raise ValidationError("x_r is not in the image of the projector")
        ev = self.fresh(y, self.projector.coords(x_r), rng)
        return ev.value, ev.samples

"""Forward models and likelihoods (Gaussian, Poisson) with Fisher information."""

from __future__ import annotations

import math
import warnings

import numpy as np
import scipy.special as sps

from .linalg import ValidationError, as_spd

LOG2PI = math.log(2.0 * math.pi)


class DomainError(ValueError):
    """Model output outside the support of the likelihood (e.g. non-positive Poisson rate)."""


class DimensionError(ValidationError):
    pass


class ForwardModel:
    """x in R^d -> G(x) in R^m.

    Subclasses implement ``eval`` and either ``jacobian`` or ``linearize``.
    ``linearize(x)`` returns ``(G, vjp)`` where ``vjp(w) = J(x)^T w``; it lets models
    share one solve between the output and any number of adjoint products.
    """

    input_dim: int
    output_dim: int

    def _check(self, x):
        x = np.asarray(x, dtype=float)
        if x.shape != (self.input_dim,):
            raise DimensionError(f"expected input of shape ({self.input_dim},), got {x.shape}")
        return x

    def eval(self, x):
        raise NotImplementedError

    def jacobian(self, x):
        g, vjp = self.linearize(x)
        return vjp(np.eye(self.output_dim)).T

    def eval_and_jacobian(self, x):
        return self.eval(x), self.jacobian(x)

    def linearize(self, x):
        g, j = self.eval_and_jacobian(x)
        return g, lambda w: j.T @ w

    def eval_batch(self, xs):
        xs = np.atleast_2d(np.asarray(xs, dtype=float))
        return np.stack([self.eval(x) for x in xs]) if len(xs) else np.zeros((0, self.output_dim))


class LinearForwardModel(ForwardModel):
    def __init__(self, matrix, offset=None):
        self.matrix = np.atleast_2d(np.asarray(matrix, dtype=float))
        self.output_dim, self.input_dim = self.matrix.shape
        self.offset = np.zeros(self.output_dim) if offset is None else np.asarray(offset, dtype=float)

    def eval(self, x):
        return self.matrix @ self._check(x) + self.offset

    def jacobian(self, x):
        self._check(x)
        return self.matrix

    def eval_and_jacobian(self, x):
        return self.eval(x), self.matrix

    def eval_batch(self, xs):
        return np.atleast_2d(xs) @ self.matrix.T + self.offset


class CallableForwardModel(ForwardModel):
    """Wrap ``fun`` (and optionally ``jac``). Without ``jac`` a central difference is used."""

    def __init__(self, fun, input_dim, output_dim, jac=None, fd_step=1e-6, batch_fun=None):
        self.fun = fun
        self.jac = jac
        self.batch_fun = batch_fun
        self.input_dim = int(input_dim)
        self.output_dim = int(output_dim)
        self.fd_step = fd_step
        self._warned = False

    def eval(self, x):
        out = np.asarray(self.fun(self._check(x)), dtype=float)
        if out.shape != (self.output_dim,):
            raise DimensionError(f"model returned shape {out.shape}, expected ({self.output_dim},)")
        return out

    def eval_batch(self, xs):
        if self.batch_fun is not None:
            return np.asarray(self.batch_fun(np.atleast_2d(xs)), dtype=float)
        return super().eval_batch(xs)

    def jacobian(self, x):
        x = self._check(x)
        if self.jac is not None:
            return np.asarray(self.jac(x), dtype=float).reshape(self.output_dim, self.input_dim)
        if not self._warned:
            warnings.warn("no Jacobian supplied; using central finite differences (slow)", stacklevel=2)
            self._warned = True
        h = self.fd_step * np.maximum(1.0, np.abs(x))
        cols = []
        for i in range(self.input_dim):
            e = np.zeros_like(x)
            e[i] = h[i]
            cols.append((self.fun(x + e) - self.fun(x - e)) / (2 * h[i]))
        return np.column_stack(cols)

    def eval_and_jacobian(self, x):
        return self.eval(x), self.jacobian(x)


class ComposedForwardModel(ForwardModel):
    """z -> G(T(z)) for a diagonal normalization map T."""

    def __init__(self, model: ForwardModel, nmap):
        if nmap.dim != model.input_dim:
            raise DimensionError("map and model dimensions differ")
        self.model = model
        self.nmap = nmap
        self.input_dim = model.input_dim
        self.output_dim = model.output_dim

    def eval(self, z):
        return self.model.eval(self.nmap.forward(self._check(z)))

    def eval_batch(self, zs):
        return self.model.eval_batch(self.nmap.forward(np.atleast_2d(zs)))

    def eval_and_jacobian(self, z):
        z = self._check(z)
        g, j = self.model.eval_and_jacobian(self.nmap.forward(z))
        return g, j * self.nmap.derivative(z)

    def linearize(self, z):
        z = self._check(z)
        g, vjp = self.model.linearize(self.nmap.forward(z))
        dt = self.nmap.derivative(z)
        return g, lambda w: (vjp(w).T * dt).T


# ---------------------------------------------------------------------------
# likelihoods


class Likelihood:
    """log L(y | x) built on a forward model. ``family`` names the noise model."""

    family = "generic"
    model: ForwardModel

    @property
    def input_dim(self):
        return self.model.input_dim

    @property
    def output_dim(self):
        return self.model.output_dim

    def check_data(self, y):
        y = np.asarray(y, dtype=float)
        if y.shape != (self.output_dim,):
            raise DimensionError(f"data has shape {y.shape}, expected ({self.output_dim},)")
        return y

    # per-output pieces, vectorized over leading axes of g
    def log_likelihood_from_output(self, y, g):
        raise NotImplementedError

    def output_score(self, y, g):
        """d log L / d G."""
        raise NotImplementedError

    def output_fisher(self, g):
        """Fisher information of the noise model in output space (diagonal or full)."""
        raise NotImplementedError

    def log_likelihood(self, y, x):
        return float(self.log_likelihood_from_output(y, self.model.eval(x)))

    def log_likelihood_batch(self, y, xs):
        return self.log_likelihood_from_output(y, self.model.eval_batch(xs))

    def value_and_grad(self, y, x):
        g, vjp = self.model.linearize(x)
        return float(self.log_likelihood_from_output(y, g)), vjp(self.output_score(y, g))

    def grad_log_likelihood(self, y, x):
        return self.value_and_grad(y, x)[1]

    score = grad_log_likelihood

    def fisher_information(self, x):
        g, j = self.model.eval_and_jacobian(x)
        return self.fisher_from_jacobian(g, j)

    def fisher_from_jacobian(self, g, j):
        f = self.output_fisher(g)
        if f.ndim == 1 and np.all(f >= 0):
            # Gram form goes through syrk and is symmetric without a d x d transpose pass
            b = np.sqrt(f)[:, None] * j
            return b.T @ b
        out = j.T @ ((f[:, None] * j) if f.ndim == 1 else f @ j)
        return 0.5 * (out + out.T)

    def simulate(self, x, rng):
        raise NotImplementedError


class GaussianLikelihood(Likelihood):
    family = "gaussian"

    def __init__(self, model: ForwardModel, noise_cov):
        self.model = model
        if np.isscalar(noise_cov):
            noise_cov = float(noise_cov) * np.eye(model.output_dim)
        self.noise = as_spd(noise_cov)
        if self.noise.dim != model.output_dim:
            raise DimensionError("noise covariance does not match model output")
        self._diag = np.allclose(self.noise.matrix, np.diag(np.diag(self.noise.matrix)), rtol=0, atol=0)
        self._inv_diag = 1.0 / np.diag(self.noise.matrix) if self._diag else None
        self.log_normalizer = -0.5 * model.output_dim * LOG2PI - 0.5 * self.noise.logdet

    @classmethod
    def isotropic(cls, model, sigma):
        return cls(model, float(sigma) ** 2 * np.eye(model.output_dim))

    def _prec_apply(self, r):
        if self._diag:
            return r * self._inv_diag
        return self.noise.solve(r.T).T

    def log_likelihood_from_output(self, y, g):
        r = np.asarray(g, dtype=float) - y
        return self.log_normalizer - 0.5 * np.sum(r * self._prec_apply(r), axis=-1)

    def output_score(self, y, g):
        return self._prec_apply(np.asarray(y, dtype=float) - g)

    def output_fisher(self, g):
        return self._inv_diag if self._diag else self.noise.inverse

    def simulate(self, x, rng):
        g = self.model.eval(x)
        return g + self.noise.factor @ rng.standard_normal(self.output_dim)


class PoissonLikelihood(Likelihood):
    family = "poisson"

    def __init__(self, model: ForwardModel):
        self.model = model

    def check_data(self, y):
        y = super().check_data(y)
        if np.any(y < 0) or np.any(y != np.round(y)):
            raise ValidationError("Poisson data must be non-negative integers")
        return y

    @staticmethod
    def _rate(g):
        g = np.asarray(g, dtype=float)
        if np.any(~(g > 0)):
            raise DomainError("Poisson rate must be strictly positive")
        return g

    def log_likelihood_from_output(self, y, g):
        g = self._rate(g)
        return np.sum(y * np.log(g) - g - sps.gammaln(np.asarray(y, dtype=float) + 1.0), axis=-1)

    def output_score(self, y, g):
        g = self._rate(g)
        return y / g - 1.0

    def output_fisher(self, g):
        return 1.0 / self._rate(g)

    def simulate(self, x, rng):
        return rng.poisson(self._rate(self.model.eval(x))).astype(float)

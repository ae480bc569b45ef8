"""Priors with subspace factorizations, the generalized-Gaussian CDF, Knothe-Rosenblatt
normalization maps and Haar-wavelet Besov expansions."""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import cached_property
from typing import Callable

import numpy as np
import scipy.special as sps

from .linalg import RankRProjector, SpdMatrix, ValidationError, as_spd

LOG2PI = math.log(2.0 * math.pi)


class UnsupportedFactorization(ValueError):
    """The prior does not factorize over the requested projector."""


class Prior:
    """Common interface. ``metric`` is the matrix Gamma used for the eigenproblem."""

    dim: int
    kappa: float | None = 1.0

    @property
    def bound_is_certified(self):
        return self.kappa is not None

    def subspace_factor(self, projector):
        raise NotImplementedError

    def marginal_log_density(self, projector, x_r):
        _require_in_image(projector, x_r)
        return self.subspace_factor(projector).log_marginal(projector.coords(x_r))

    def conditional_log_density(self, projector, x_perp, x_r=None):
        return self.subspace_factor(projector).log_conditional(x_perp)

    def conditional_sample(self, projector, x_r, rng, n=None):
        """Draw x_perp from pi(x_perp | x_r); independent of x_r when the prior factorizes."""
        fac = self.subspace_factor(projector)
        out = fac.sample_complement(rng, 1 if n is None else n)
        return out[0] if n is None else out


def _require_in_image(projector, x_r):
    if not projector.contains(x_r):
        raise ValidationError("point is not in the image of the projector")


# ---------------------------------------------------------------------------
# Gaussian


class GaussianPrior(Prior):
    """N(mean, cov). ``sqrt_cov`` is any S with S S^T = cov used for sampling."""

    kappa = 1.0

    def __init__(self, mean, cov=None, precision=None, sqrt_cov=None):
        self.mean = np.asarray(mean, dtype=float).copy()
        self.dim = self.mean.shape[0]
        if cov is None and precision is None:
            raise ValidationError("GaussianPrior needs cov or precision")
        self._cov = None if cov is None else as_spd(cov)
        self._prec = None if precision is None else as_spd(precision)
        self._sqrt = None if sqrt_cov is None else np.asarray(sqrt_cov, dtype=float)
        self._factors = {}

    @classmethod
    def from_precision_factor(cls, mean, a):
        """Prior with cov = A^{-1} A^{-T}, i.e. A (x - mean) is standard normal."""
        a = np.asarray(a, dtype=float)
        ainv = np.linalg.inv(a)
        cov = ainv @ ainv.T
        prec = a.T @ a
        return cls(mean, cov=0.5 * (cov + cov.T), precision=0.5 * (prec + prec.T), sqrt_cov=ainv)

    @property
    def cov(self) -> SpdMatrix:
        if self._cov is None:
            self._cov = SpdMatrix(self._prec.inverse)
        return self._cov

    @property
    def precision(self) -> SpdMatrix:
        if self._prec is None:
            self._prec = SpdMatrix(self.cov.inverse)
        return self._prec

    @property
    def metric(self):
        return self.precision

    @cached_property
    def sqrt_cov(self):
        return self.cov.factor if self._sqrt is None else self._sqrt

    @cached_property
    def _log_norm(self):
        return -0.5 * self.dim * LOG2PI + 0.5 * self.precision.logdet

    def log_density(self, x):
        dx = np.asarray(x, dtype=float) - self.mean
        g = dx @ self.precision.matrix
        return self._log_norm - 0.5 * np.sum(g * dx, axis=-1)

    def grad_log_density(self, x):
        return -(np.asarray(x, dtype=float) - self.mean) @ self.precision.matrix

    def sample(self, rng, n=None):
        z = rng.standard_normal((1 if n is None else n, self.dim))
        out = self.mean + z @ self.sqrt_cov.T
        return out[0] if n is None else out

    def subspace_factor(self, projector):
        key = id(projector)
        hit = self._factors.get(key)
        if hit is None or hit[0] is not projector:
            hit = (projector, GaussianSubspaceFactor(self, projector))
            self._factors[key] = hit
        return hit[1]


class GaussianSubspaceFactor:
    """Coefficient-space view of a Gaussian prior split by P into Im(P) and Ker(P)."""

    def __init__(self, prior: GaussianPrior, projector: RankRProjector, tol=1e-8):
        if projector.dim != prior.dim:
            raise ValidationError("projector and prior dimensions differ")
        self.prior = prior
        self.projector = projector
        v, w = projector.basis, projector.cobasis
        sig = prior.cov.matrix
        m = w.T @ sig
        cross = m - (m @ w) @ v.T
        scale = max(np.max(np.abs(sig)), np.finfo(float).tiny)
        if np.max(np.abs(cross)) > tol * scale:
            raise UnsupportedFactorization(
                "P Sigma (I - P)^T is not zero: the Gaussian prior does not factorize over this projector"
            )
        self.rank = projector.rank
        self.coeff_mean = w.T @ prior.mean
        self.coeff_precision = v.T @ prior.precision.matrix @ v
        self.coeff_precision = 0.5 * (self.coeff_precision + self.coeff_precision.T)
        self.perp_mean = prior.mean - v @ self.coeff_mean

    @cached_property
    def _perp(self):
        q = self.projector.kernel_basis
        if q.shape[1] == 0:
            return q, None, 0.0
        v, w = self.projector.basis, self.projector.cobasis
        b = q - w @ (v.T @ q)
        c = b.T @ self.prior.cov.matrix @ b
        c = SpdMatrix(0.5 * (c + c.T), rtol=1e-8)
        return q, c, c.logdet

    @cached_property
    def log_const(self):
        _, _, logdet_c = self._perp
        return -0.5 * self.rank * LOG2PI + 0.5 * self.prior.precision.logdet + 0.5 * logdet_c

    def log_marginal(self, c):
        dc = np.asarray(c, dtype=float) - self.coeff_mean
        return self.log_const - 0.5 * np.sum((dc @ self.coeff_precision) * dc, axis=-1)

    def grad_log_marginal(self, c):
        return -(np.asarray(c, dtype=float) - self.coeff_mean) @ self.coeff_precision

    def log_conditional(self, x_perp):
        q, cm, logdet_c = self._perp
        if cm is None:
            return 0.0
        b = (np.asarray(x_perp, dtype=float) - self.perp_mean) @ q
        sol = cm.solve(b.T).T
        k = q.shape[1]
        return -0.5 * np.sum(b * sol, axis=-1) - 0.5 * k * LOG2PI - 0.5 * logdet_c

    def sample_complement(self, rng, n):
        x = self.prior.sample(rng, n)
        return x - self.projector.apply(x)


# ---------------------------------------------------------------------------
# product generalized Gaussian


def gg_log_norm(gamma, p):
    """log of the normalizing constant 2 Gamma(1/p) / (p gamma^{1/p})."""
    gamma = np.asarray(gamma, dtype=float)
    p = np.asarray(p, dtype=float)
    return math.log(2.0) + sps.gammaln(1.0 / p) - np.log(p) - np.log(gamma) / p


def gg_logpdf(x, gamma, p):
    x = np.asarray(x, dtype=float)
    return -gamma * np.abs(x) ** p - gg_log_norm(gamma, p)


def _upper_tail(x, gamma, p):
    """Q(1/p, gamma |x|^p) = 2 * min(Phi(x), 1 - Phi(x))."""
    t = gamma * np.abs(x) ** p
    p = np.broadcast_to(p, t.shape)
    return np.where(p == 1.0, np.exp(-t), sps.gammaincc(1.0 / p, t))


def _check_gg(gamma, p):
    if np.any(~(np.asarray(gamma) > 0)) or np.any(~(np.asarray(p) > 0)):
        raise ValidationError("generalized Gaussian needs gamma > 0 and p > 0")


def gg_cdf(x, gamma, p):
    """CDF of the density proportional to exp(-gamma |x|^p)."""
    x = np.asarray(x, dtype=float)
    gamma, p = np.broadcast_arrays(np.asarray(gamma, float), np.asarray(p, float))
    _check_gg(gamma, p)
    half_q = 0.5 * _upper_tail(x, gamma, p)
    return np.where(x >= 0, 1.0 - half_q, half_q)


def _gg_xmax(gamma, p, tail=1e-15):
    return (sps.gammainccinv(1.0 / p, 2.0 * tail) / gamma) ** (1.0 / p)


def gg_cdf_inv(u, gamma, p, tol=1e-14, maxiter=60):
    """Inverse CDF by a closed-form incomplete-gamma guess, bracketing and safeguarded Newton.

    Outputs are clamped to +/- x_max where the upper tail mass equals 1e-15.
    """
    u = np.asarray(u, dtype=float)
    gamma, p, u = np.broadcast_arrays(np.asarray(gamma, float), np.asarray(p, float), u)
    _check_gg(gamma, p)
    if np.any(~((u > 0) & (u < 1))):
        raise ValidationError("gg_cdf_inv requires u in (0, 1)")
    a = 1.0 / p
    xmax = _gg_xmax(gamma, p)
    with np.errstate(divide="ignore", over="ignore"):
        tail = np.clip(2.0 * np.minimum(u, 1.0 - u), 1e-300, 1.0)
        mag = (sps.gammainccinv(a, tail) / gamma) ** a
    x = np.clip(np.where(u >= 0.5, mag, -mag), -xmax, xmax)
    lo = -xmax.copy()
    hi = xmax.copy()
    for _ in range(maxiter):
        f = gg_cdf(x, gamma, p) - u
        lo = np.where(f < 0, x, lo)
        hi = np.where(f > 0, x, hi)
        done = np.abs(f) <= tol
        if np.all(done):
            break
        dens = np.exp(gg_logpdf(x, gamma, p))
        with np.errstate(divide="ignore", invalid="ignore"):
            step = x - f / dens
        bad = ~np.isfinite(step) | (step <= lo) | (step >= hi)
        x = np.where(done, x, np.where(bad, 0.5 * (lo + hi), step))
    return np.clip(x, -xmax, xmax)


def _gg_grad(x, gamma, p):
    ax = np.abs(x)
    with np.errstate(divide="ignore", invalid="ignore"):
        g = -gamma * p * np.where(ax > 0, ax, 1.0) ** (p - 1.0) * np.sign(x)
    return np.where(ax > 0, g, 0.0)


class ProductGGPrior(Prior):
    """Product of densities proportional to exp(-gamma_i |x_i|^{p_i}).

    Only coordinate projectors factorize. kappa is unknown here, so bounds computed
    with kappa = 1 are heuristic.
    """

    kappa = None

    def __init__(self, gamma, p, dim=None):
        gamma = np.atleast_1d(np.asarray(gamma, dtype=float))
        p = np.atleast_1d(np.asarray(p, dtype=float))
        n = dim if dim is not None else max(gamma.size, p.size)
        self.gamma = np.broadcast_to(gamma, (n,)).copy()
        self.p = np.broadcast_to(p, (n,)).copy()
        if np.any(self.gamma <= 0) or np.any(self.p <= 0):
            raise ValidationError("gamma and p must be positive")
        self.dim = n
        self.mean = np.zeros(n)
        self._log_c = gg_log_norm(self.gamma, self.p)

    @cached_property
    def metric(self):
        return SpdMatrix.identity(self.dim)

    def log_density(self, x):
        x = np.asarray(x, dtype=float)
        return np.sum(-self.gamma * np.abs(x) ** self.p - self._log_c, axis=-1)

    def grad_log_density(self, x):
        return _gg_grad(np.asarray(x, dtype=float), self.gamma, self.p)

    def sample(self, rng, n=None):
        k = 1 if n is None else n
        g = rng.gamma(1.0 / self.p, 1.0, size=(k, self.dim))
        s = np.where(rng.random((k, self.dim)) < 0.5, -1.0, 1.0)
        out = s * (g / self.gamma) ** (1.0 / self.p)
        return out[0] if n is None else out

    def subspace_factor(self, projector):
        if projector.indices is None:
            raise UnsupportedFactorization("product priors only factorize over coordinate projectors")
        if projector.dim != self.dim:
            raise ValidationError("projector and prior dimensions differ")
        return ProductSubspaceFactor(self, projector)


class ProductSubspaceFactor:
    def __init__(self, prior: ProductGGPrior, projector: RankRProjector):
        self.prior = prior
        self.projector = projector
        self.idx = np.asarray(projector.indices, dtype=int)
        self.rest = np.setdiff1d(np.arange(prior.dim), self.idx)
        self.rank = self.idx.size
        self.coeff_mean = np.zeros(self.rank)
        # moment-matched Gaussian precision; only used to scale proposals
        g, p = prior.gamma[self.idx], prior.p[self.idx]
        var = np.exp(sps.gammaln(3.0 / p) - sps.gammaln(1.0 / p)) * g ** (-2.0 / p)
        self.coeff_precision = np.diag(1.0 / var)

    def log_marginal(self, c):
        g, p = self.prior.gamma[self.idx], self.prior.p[self.idx]
        c = np.asarray(c, dtype=float)
        return np.sum(-g * np.abs(c) ** p - self.prior._log_c[self.idx], axis=-1)

    def grad_log_marginal(self, c):
        g, p = self.prior.gamma[self.idx], self.prior.p[self.idx]
        return _gg_grad(np.asarray(c, dtype=float), g, p)

    def log_conditional(self, x_perp):
        x = np.asarray(x_perp, dtype=float)[..., self.rest]
        g, p = self.prior.gamma[self.rest], self.prior.p[self.rest]
        return np.sum(-g * np.abs(x) ** p - self.prior._log_c[self.rest], axis=-1)

    def sample_complement(self, rng, n):
        x = self.prior.sample(rng, n)
        x[:, self.idx] = 0.0
        return x


# ---------------------------------------------------------------------------
# normalization maps


@dataclass(frozen=True)
class NormalizationMap:
    """Diagonal map T with T'(z) > 0 pushing N(0, I) forward to a product prior."""

    dim: int
    forward: Callable
    inverse: Callable
    derivative: Callable

    def __call__(self, z):
        return self.forward(z)


def normalization_map(prior: ProductGGPrior) -> NormalizationMap:
    gamma, p = prior.gamma, prior.p
    a = 1.0 / p
    tiny = 1e-300

    def forward(z):
        z = np.asarray(z, dtype=float)
        q = np.maximum(sps.erfc(np.abs(z) / math.sqrt(2.0)), tiny)
        return np.sign(z) * (sps.gammainccinv(a, q) / gamma) ** a

    def inverse(x):
        x = np.asarray(x, dtype=float)
        q = np.maximum(_upper_tail(x, gamma, p), tiny)
        return np.sign(x) * math.sqrt(2.0) * sps.erfcinv(q)

    def derivative(z):
        z = np.asarray(z, dtype=float)
        return np.exp(-0.5 * z * z - 0.5 * LOG2PI - gg_logpdf(forward(z), gamma, p))

    return NormalizationMap(prior.dim, forward, inverse, derivative)


def affine_map(scale, shift=0.0, dim=None):
    """Diagonal affine map, handy as a reference normalization."""
    scale = np.atleast_1d(np.asarray(scale, dtype=float))
    n = dim if dim is not None else scale.size
    s = np.broadcast_to(scale, (n,)).copy()
    b = np.broadcast_to(np.asarray(shift, dtype=float), (n,)).copy()
    if np.any(s <= 0):
        raise ValidationError("affine normalization needs positive scales")
    return NormalizationMap(n, lambda z: s * z + b, lambda x: (x - b) / s, lambda z: s + 0.0 * np.asarray(z))


# ---------------------------------------------------------------------------
# Haar wavelets


def haar_1d(max_level):
    """Function values of the periodic Haar system on 2^{D+1} cell centres.

    Returns (values, levels); column 0 is the scaling function with level -1.
    """
    n = 2 ** (max_level + 1)
    s = (np.arange(n) + 0.5) / n
    cols = [np.ones(n)]
    levels = [-1]
    for j in range(max_level + 1):
        for k in range(2 ** j):
            t = (2.0 ** j) * s - k
            psi = np.where((t >= 0) & (t < 0.5), 1.0, 0.0) - np.where((t >= 0.5) & (t < 1.0), 1.0, 0.0)
            cols.append(2.0 ** (j / 2.0) * psi)
            levels.append(j)
    return np.column_stack(cols), np.asarray(levels)


class BesovExpansion:
    """Weighted Haar expansion f = B x with Besov weights 2^{-j (s + 1/2 - 1/p)}.

    ``matrix`` holds function values at cell centres, so ``unweighted / sqrt(d)``
    has orthonormal columns. In 2-D the basis is the tensor square of the 1-D one and
    the field index is ``i1 * n + i2``.
    """

    def __init__(self, max_level, smoothness=2.0, integrability=1.0, ndim=1):
        if ndim not in (1, 2):
            raise ValidationError("ndim must be 1 or 2")
        self.max_level = int(max_level)
        self.smoothness = float(smoothness)
        self.integrability = float(integrability)
        self.ndim = ndim
        vals, lev = haar_1d(self.max_level)
        expo = self.smoothness + 0.5 - 1.0 / self.integrability
        w = 2.0 ** (-np.maximum(lev, 0) * expo)
        self.side = vals.shape[0]
        if ndim == 1:
            self.unweighted = vals
            self.weights = w
            self.levels = lev[:, None]
        else:
            self.unweighted = np.kron(vals, vals)
            self.weights = np.kron(w, w)
            self.levels = np.column_stack([np.repeat(lev, lev.size), np.tile(lev, lev.size)])
        self.dim = self.unweighted.shape[1]
        self.matrix = self.unweighted * self.weights

    def orthonormal_basis(self):
        return self.unweighted / math.sqrt(self.dim)

    def field(self, x):
        return np.asarray(x, dtype=float) @ self.matrix.T

    def coarse_first_order(self):
        """Coefficient indices sorted by coarsest level, ties by index."""
        return np.argsort(self.levels.max(axis=1), kind="stable")

    def prior(self, gamma=1.0):
        return ProductGGPrior(gamma, self.integrability, dim=self.dim)

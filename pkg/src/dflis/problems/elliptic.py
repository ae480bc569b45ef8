"""Log-conductivity inversion for -div(kappa grad p) = f on the unit square.

Cell-centred finite volumes with harmonic face conductivities, p = 0 on s1 = 0 and
s1 = 1, no flux on s2 = 0 and s2 = 1. Cell (i, j) sits at ((i + 1/2) h, (j + 1/2) h)
and has index i * n + j.
"""

from __future__ import annotations

import numpy as np
import scipy.linalg as sla

from ..kernels import fv_adjoint, fv_band
from ..models import ForwardModel, GaussianLikelihood
from ..priors import GaussianPrior
from .base import Problem

DEFAULT_SIGMA = 0.0415
DEFAULT_CENTERS = ((0.5, 0.5), (2.5, 0.5))
DEFAULT_WIDTH = 0.05


def cell_centres(n):
    s = (np.arange(n) + 0.5) / n
    s1, s2 = np.meshgrid(s, s, indexing="ij")
    return np.column_stack([s1.ravel(), s2.ravel()])


def forcing(n, scale, centers=DEFAULT_CENTERS, width=DEFAULT_WIDTH):
    pts = cell_centres(n)
    a, b = np.asarray(centers[0]), np.asarray(centers[1])
    ga = np.exp(-np.sum((pts - a) ** 2, axis=1) / (2 * width**2))
    gb = np.exp(-np.sum((pts - b) ** 2, axis=1) / (2 * width**2))
    return scale * (ga - gb)


def observation_cells(n, side):
    t = (np.arange(side) + 0.5) / side
    idx = np.minimum((t * n).astype(int), n - 1)
    i, j = np.meshgrid(idx, idx, indexing="ij")
    return (i * n + j).ravel()


class EllipticForwardModel(ForwardModel):
    def __init__(self, n=32, obs_side=5, forcing_scale=1.0, centers=DEFAULT_CENTERS, width=DEFAULT_WIDTH, obs_cells=None):
        self.n = int(n)
        self.h = 1.0 / self.n
        self.input_dim = self.n * self.n
        self.obs = observation_cells(self.n, obs_side) if obs_cells is None else np.asarray(obs_cells, dtype=int)
        self.output_dim = self.obs.size
        self.source = forcing(self.n, forcing_scale, centers, width)
        self.rhs = self.source * self.h * self.h

    def _factor(self, x):
        kappa = np.exp(x)
        ab = fv_band(kappa, self.n)
        return kappa, sla.cholesky_banded(ab, lower=True)

    def solve(self, x):
        """Potential in every cell."""
        x = self._check(x)
        _, cb = self._factor(x)
        return sla.cho_solve_banded((cb, True), self.rhs)

    def eval(self, x):
        return self.solve(x)[self.obs]

    def linearize(self, x):
        x = self._check(x)
        kappa, cb = self._factor(x)
        p = sla.cho_solve_banded((cb, True), self.rhs)

        def vjp(w):
            w = np.asarray(w, dtype=float)
            rhs = np.zeros((self.input_dim,) + w.shape[1:])
            rhs[self.obs] = w
            lam = sla.cho_solve_banded((cb, True), rhs)
            out = fv_adjoint(kappa, p, lam.T if lam.ndim == 2 else lam[None, :], self.n)
            return out.T if w.ndim == 2 else out[0]

        return p[self.obs], vjp

    def eval_and_jacobian(self, x):
        g, vjp = self.linearize(x)
        return g, vjp(np.eye(self.output_dim)).T

    def jacobian(self, x):
        return self.eval_and_jacobian(x)[1]


def spde_operator(n, gamma):
    """gamma M + K with lumped mass h^2 and the 5-point no-flux stiffness matrix."""
    h = 1.0 / n
    d = n * n
    a = np.zeros((d, d))
    idx = np.arange(d).reshape(n, n)
    for di, dj in ((1, 0), (0, 1)):
        p = idx[: n - di, : n - dj].ravel()
        q = idx[di:, dj:].ravel()
        a[p, q] -= 1.0
        a[q, p] -= 1.0
        a[p, p] += 1.0
        a[q, q] += 1.0
    a[np.diag_indices(d)] += gamma * h * h
    return a


def elliptic_prior(n=32, gamma=10.0):
    """Gaussian prior with covariance A^{-1} M A^{-T}, A = gamma M + K.

    The mass matrix in the middle is the covariance of cell-averaged white noise, so
    pointwise variances stay bounded under refinement.
    """
    return GaussianPrior.from_precision_factor(np.zeros(n * n), spde_operator(n, gamma) * n)


def default_forcing_scale(n=32, obs_side=5, sigma=DEFAULT_SIGMA, snr=20.0, centers=DEFAULT_CENTERS, width=DEFAULT_WIDTH):
    """Scale c making max |G(0)| / sigma equal ``snr`` at unit conductivity."""
    unit = EllipticForwardModel(n, obs_side, 1.0, centers, width)
    return snr * sigma / float(np.max(np.abs(unit.eval(np.zeros(n * n)))))


def elliptic_problem(n=32, obs_side=5, gamma=10.0, sigma=DEFAULT_SIGMA, forcing_scale=None, snr=20.0,
                     centers=DEFAULT_CENTERS, width=DEFAULT_WIDTH):
    c = default_forcing_scale(n, obs_side, sigma, snr, centers, width) if forcing_scale is None else float(forcing_scale)
    model = EllipticForwardModel(n, obs_side, c, centers, width)
    prior = elliptic_prior(n, gamma)
    lik = GaussianLikelihood.isotropic(model, sigma)
    meta = {
        "problem": "elliptic",
        "n": n,
        "obs_side": obs_side,
        "gamma": gamma,
        "sigma": sigma,
        "forcing_scale": c,
        "centers": [list(map(float, p)) for p in centers],
        "width": width,
    }
    return Problem("elliptic", prior, lik, meta)

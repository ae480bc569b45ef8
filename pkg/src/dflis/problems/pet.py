"""Transmission tomography with Beer's law and a Haar-wavelet Besov prior.

G(x) = I_s exp(-A exp(f0 + B x)) where A holds ray/cell intersection lengths, B maps
wavelet coefficients to log-density values on the grid and f0 is a constant
log-density offset.
"""

from __future__ import annotations

import math

import numpy as np

from ..kernels import ray_matrix
from ..models import ForwardModel, PoissonLikelihood
from ..priors import BesovExpansion
from .base import Problem

# keeps G strictly positive when exp(-A u) underflows
_FLOOR = 1e-300


def pet_geometry(n=16, lo=-10.0, hi=10.0, n_src=3, n_ray=10, source_radius=15.0,
                 detector_radius=15.0, source_arc_deg=90.0, fan_deg=120.0, source_centre_deg=270.0):
    """Sources on one side of a circle; each source fires a fan of rays at detectors opposite.

    Returns ``(A, sources, detectors)`` with one row of A per ray.
    """
    if n_src == 1:
        src_ang = np.array([math.radians(source_centre_deg)])
    else:
        half = 0.5 * math.radians(source_arc_deg)
        src_ang = math.radians(source_centre_deg) + np.linspace(-half, half, n_src)
    fan = np.zeros(1) if n_ray == 1 else np.radians(np.linspace(-0.5 * fan_deg, 0.5 * fan_deg, n_ray))
    srcs, dets = [], []
    for a in src_ang:
        s = source_radius * np.array([math.cos(a), math.sin(a)])
        for phi in fan:
            b = a + math.pi + phi
            srcs.append(s)
            dets.append(detector_radius * np.array([math.cos(b), math.sin(b)]))
    srcs = np.array(srcs)
    dets = np.array(dets)
    h = (hi - lo) / n
    return ray_matrix(srcs, dets, lo, h, n), srcs, dets


class PetForwardModel(ForwardModel):
    def __init__(self, A, B, intensity=10.0, offset=0.0):
        self.A = np.asarray(A, dtype=float)
        self.B = np.asarray(B, dtype=float)
        self.intensity = float(intensity)
        self.offset = float(offset)
        self.output_dim = self.A.shape[0]
        self.input_dim = self.B.shape[1]

    def density(self, x):
        return np.exp(np.minimum(self.offset + np.asarray(x) @ self.B.T, 700.0))

    def eval(self, x):
        return np.maximum(self.intensity * np.exp(-self.A @ self.density(self._check(x))), _FLOOR)

    def eval_batch(self, xs):
        u = self.density(np.atleast_2d(xs))
        return np.maximum(self.intensity * np.exp(-u @ self.A.T), _FLOOR)

    def eval_and_jacobian(self, x):
        u = self.density(self._check(x))
        g = np.maximum(self.intensity * np.exp(-self.A @ u), _FLOOR)
        return g, -(g[:, None] * (self.A * u[None, :])) @ self.B

    def jacobian(self, x):
        return self.eval_and_jacobian(x)[1]

    def linearize(self, x):
        u = self.density(self._check(x))
        g = np.maximum(self.intensity * np.exp(-self.A @ u), _FLOOR)

        def vjp(w):
            w = np.asarray(w, dtype=float)
            t = self.A.T @ (-(g * w.T).T)
            return self.B.T @ (u * t.T).T

        return g, vjp


def pet_problem(n=16, n_src=3, n_ray=10, intensity=10.0, log_density_offset=-3.0, gamma=1.0,
                smoothness=2.0, integrability=1.0, **geometry):
    if n & (n - 1) or n < 2:
        raise ValueError("PET grid side must be a power of two")
    expansion = BesovExpansion(int(math.log2(n)) - 1, smoothness, integrability, ndim=2)
    A, srcs, dets = pet_geometry(n=n, n_src=n_src, n_ray=n_ray, **geometry)
    model = PetForwardModel(A, expansion.matrix, intensity, log_density_offset)
    prior = expansion.prior(gamma)
    meta = {
        "problem": "pet",
        "n": n,
        "n_src": n_src,
        "n_ray": n_ray,
        "intensity": intensity,
        "log_density_offset": log_density_offset,
        "gamma": gamma,
        **{k: float(v) for k, v in geometry.items()},
    }
    return Problem("pet", prior, PoissonLikelihood(model), meta,
                   extras={"expansion": expansion, "sources": srcs, "detectors": dets})

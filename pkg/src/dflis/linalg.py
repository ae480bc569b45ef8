"""SPD matrices, the generalized eigenproblem (H, Gamma) and rank-r projectors."""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
import scipy.linalg as sla


class ValidationError(ValueError):
    """Input does not satisfy a structural precondition."""


class FactorizationError(np.linalg.LinAlgError):
    """A matrix expected to be SPD could not be Cholesky factorized."""


def _check_symmetric(a, rtol, what):
    a = np.asarray(a, dtype=float)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ValidationError(f"{what} must be square, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise ValidationError(f"{what} has non-finite entries")
    scale = max(np.max(np.abs(a)), np.finfo(float).tiny)
    asym = np.max(np.abs(a - a.T)) / scale
    if asym > rtol:
        raise ValidationError(f"{what} is not symmetric (relative asymmetry {asym:.3g})")
    return a


@dataclass(frozen=True, eq=False)
class SpdMatrix:
    """Symmetric positive-definite matrix with a lazily cached Cholesky factor."""

    matrix: np.ndarray
    rtol: float = 1e-12

    def __post_init__(self):
        a = _check_symmetric(self.matrix, self.rtol, "SPD matrix")
        object.__setattr__(self, "matrix", 0.5 * (a + a.T))

    @classmethod
    def identity(cls, d):
        return cls(np.eye(d))

    @property
    def dim(self):
        return self.matrix.shape[0]

    @cached_property
    def factor(self):
        """Lower-triangular L with ``matrix = L L^T``."""
        try:
            return np.linalg.cholesky(self.matrix)
        except np.linalg.LinAlgError as exc:
            raise FactorizationError(f"matrix is not positive definite: {exc}") from None

    @cached_property
    def is_identity(self):
        return bool(np.array_equal(self.matrix, np.eye(self.dim)))

    @cached_property
    def logdet(self):
        return 2.0 * float(np.sum(np.log(np.diag(self.factor))))

    @cached_property
    def inverse(self):
        inv = sla.cho_solve((self.factor, True), np.eye(self.dim))
        return 0.5 * (inv + inv.T)

    @cached_property
    def digest(self):
        return hashlib.sha256(np.ascontiguousarray(self.matrix, dtype="<f8").tobytes()).hexdigest()[:16]

    def apply(self, x):
        return self.matrix @ x

    def solve(self, b):
        return sla.cho_solve((self.factor, True), b)

    def solve_lower(self, b):
        """L^{-1} b."""
        return sla.solve_triangular(self.factor, b, lower=True)

    def solve_upper(self, b):
        """L^{-T} b."""
        return sla.solve_triangular(self.factor, b, lower=True, trans="T")


def as_spd(a):
    return a if isinstance(a, SpdMatrix) else SpdMatrix(np.asarray(a, dtype=float))


@dataclass(frozen=True, eq=False)
class GeneralizedEigenPairs:
    """Eigenpairs of H v = lambda Gamma v, eigenvalues descending, ``V^T Gamma V = I``."""

    eigenvalues: np.ndarray
    eigenvectors: np.ndarray
    metric: SpdMatrix

    @property
    def dim(self):
        return self.eigenvalues.shape[0]


def generalized_eig(H, gamma, clamp=1e-14, sym_rtol=1e-10):
    """Solve the symmetric-definite problem by Cholesky whitening of ``gamma``."""
    gamma = as_spd(gamma)
    H = _check_symmetric(H, sym_rtol, "H")
    H = 0.5 * (H + H.T)
    if H.shape != gamma.matrix.shape:
        raise ValidationError(f"H shape {H.shape} does not match metric {gamma.matrix.shape}")
    if gamma.is_identity:
        lam, u = np.linalg.eigh(H)
        v = u
    else:
        a = gamma.solve_lower(gamma.solve_lower(H).T)
        a = 0.5 * (a + a.T)
        lam, u = np.linalg.eigh(a)
        v = gamma.solve_upper(u)
    order = np.argsort(-lam, kind="stable")
    lam = lam[order]
    v = v[:, order]
    top = lam[0] if lam.size else 0.0
    lam = np.where(lam < clamp * max(top, 0.0), 0.0, lam)
    return GeneralizedEigenPairs(lam, v, gamma)


@dataclass(frozen=True, eq=False)
class RankRProjector:
    """Oblique projector ``P = V W^T`` with ``W^T V = I_r``.

    ``basis`` spans Im(P); ``cobasis`` spans Ker(P)^perp. For projectors built from
    eigenpairs, ``cobasis = Gamma basis`` and P is Gamma-orthogonal.
    """

    basis: np.ndarray
    cobasis: np.ndarray
    kind: str = "generic"
    eigenvalues: np.ndarray | None = None
    metric_hash: str | None = None
    indices: tuple | None = None
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        v = np.atleast_2d(np.asarray(self.basis, dtype=float))
        w = np.atleast_2d(np.asarray(self.cobasis, dtype=float))
        if v.shape != w.shape or v.shape[1] > v.shape[0]:
            raise ValidationError(f"basis {v.shape} and cobasis {w.shape} are incompatible")
        object.__setattr__(self, "basis", v)
        object.__setattr__(self, "cobasis", w)
        gram = w.T @ v
        if v.shape[1] and np.max(np.abs(gram - np.eye(v.shape[1]))) > 1e-8:
            raise ValidationError("cobasis^T basis must be the identity")

    @property
    def dim(self):
        return self.basis.shape[0]

    @property
    def rank(self):
        return self.basis.shape[1]

    @cached_property
    def matrix(self):
        return self.basis @ self.cobasis.T

    def coords(self, x):
        """Subspace coefficients of P x; rows of a 2-D input are treated as points."""
        x = np.asarray(x, dtype=float)
        return x @ self.cobasis if x.ndim == 2 else self.cobasis.T @ x

    def embed(self, c):
        c = np.asarray(c, dtype=float)
        return c @ self.basis.T if c.ndim == 2 else self.basis @ c

    def apply(self, x):
        return self.embed(self.coords(x))

    def split(self, x):
        x = np.asarray(x, dtype=float)
        xr = self.apply(x)
        return xr, x - xr

    def contains(self, x, tol=1e-8):
        x = np.asarray(x, dtype=float)
        return bool(np.linalg.norm(self.apply(x) - x) <= tol * max(1.0, np.linalg.norm(x)))

    @cached_property
    def kernel_basis(self):
        """Orthonormal columns spanning Ker(P) = null(cobasis^T)."""
        d, r = self.basis.shape
        if r == d:
            return np.zeros((d, 0))
        if self.indices is not None:
            rest = np.setdiff1d(np.arange(d), np.asarray(self.indices, dtype=int))
            return np.eye(d)[:, rest]
        q, _ = np.linalg.qr(self.cobasis, mode="complete")
        return q[:, r:]

    def tag(self):
        return {"kind": self.kind, "dim": self.dim, "rank": self.rank, "metric_hash": self.metric_hash}


def projector_from_pairs(pairs: GeneralizedEigenPairs, r, kind="eigen"):
    d = pairs.dim
    if not 1 <= r <= d:
        raise ValidationError(f"rank must lie in [1, {d}], got {r}")
    v = pairs.eigenvectors[:, :r]
    w = pairs.metric.apply(v)
    return RankRProjector(
        v, w, kind=kind, eigenvalues=pairs.eigenvalues.copy(), metric_hash=pairs.metric.digest
    )


def coordinate_projector(indices, d, kind="coordinate"):
    idx = [int(i) for i in indices]
    if not idx:
        raise ValidationError("coordinate projector needs at least one index")
    if len(set(idx)) != len(idx):
        raise ValidationError("coordinate indices must be distinct")
    if min(idx) < 0 or max(idx) >= d:
        raise ValidationError(f"coordinate indices must lie in [0, {d})")
    e = np.eye(d)[:, idx]
    return RankRProjector(e, e.copy(), kind=kind, indices=tuple(idx), metric_hash=SpdMatrix.identity(d).digest)

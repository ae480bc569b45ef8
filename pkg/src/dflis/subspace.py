"""Estimators of the matrices H, rank selection, coordinate scores and KL bounds."""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .linalg import (
    GeneralizedEigenPairs,
    SpdMatrix,
    ValidationError,
    coordinate_projector,
    generalized_eig,
    projector_from_pairs,
)
from .models import GaussianLikelihood

H_KINDS = ("data_free", "forward_model", "data_dependent", "pullback")


@dataclass
class HMatrixEstimate:
    matrix: np.ndarray
    n_samples: int
    kind: str
    trace_history: np.ndarray = field(repr=False)

    @property
    def trace(self):
        return float(np.trace(self.matrix))

    def trace_history_tail(self, n=10):
        return [float(t) for t in self.trace_history[-n:]]

    def relative_trace_drift(self, frac=0.2):
        """|tr H_K - tr H_{(1-frac)K}| / tr H_K; small values mean the estimate has settled."""
        k = len(self.trace_history)
        if k < 2:
            return float("inf")
        ref = self.trace_history[max(0, int((1 - frac) * k) - 1)]
        last = self.trace_history[-1]
        return float(abs(last - ref) / max(abs(last), np.finfo(float).tiny))


class _TreeSum:
    """Pairwise (binary-counter) summation; the result depends only on term order."""

    def __init__(self):
        self._stack = []

    def add(self, term):
        level = 0
        while self._stack and self._stack[-1][0] == level:
            _, prev = self._stack.pop()
            term = prev + term
            level += 1
        self._stack.append((level, term))

    def total(self):
        if not self._stack:
            raise ValidationError("no terms to sum")
        acc = self._stack[-1][1]
        for _, t in reversed(self._stack[:-1]):
            acc = t + acc
        return acc


def _accumulate(points, term_fn, kind, workers=1, chunk=16):
    k = len(points)
    if k == 0:
        raise ValidationError("K must be at least 1")
    tree = _TreeSum()
    traces = np.empty(k)

    def run(i):
        # terms are symmetric up to round-off; the mean is symmetrized once below
        return term_fn(points[i])

    if workers and workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            terms = pool.map(run, range(k), chunksize=chunk)
            for i, t in enumerate(terms):
                traces[i] = np.trace(t)
                tree.add(t)
    else:
        for i in range(k):
            t = run(i)
            traces[i] = np.trace(t)
            tree.add(t)
    h = tree.total() / k
    h = 0.5 * (h + h.T)
    history = np.cumsum(traces) / np.arange(1, k + 1)
    return HMatrixEstimate(h, k, kind, history)


def data_free_H(prior, likelihood, K=1000, rng=None, workers=1):
    """Mean Fisher information over K prior draws."""
    rng = np.random.default_rng(rng)
    xs = prior.sample(rng, int(K))
    return _accumulate(xs, likelihood.fisher_information, "data_free", workers)


def forward_model_H(prior, likelihood, K=1000, rng=None, workers=1):
    """Mean of J^T Sigma_obs^{-1} J over prior draws (Gaussian noise only)."""
    if not isinstance(likelihood, GaussianLikelihood):
        raise ValidationError("forward_model_H requires a Gaussian likelihood")
    rng = np.random.default_rng(rng)
    xs = prior.sample(rng, int(K))
    return _accumulate(xs, likelihood.fisher_information, "forward_model", workers)


def data_dependent_H(samples, likelihood, y, workers=1):
    """Mean outer product of the score over posterior samples (rows of ``samples``)."""
    xs = np.atleast_2d(np.asarray(samples, dtype=float))
    y = likelihood.check_data(y)

    def term(x):
        g = likelihood.grad_log_likelihood(y, x)
        return np.outer(g, g)

    return _accumulate(xs, term, "data_dependent", workers)


def pullback_H(nmap, likelihood, K=1000, rng=None, base="data_free", y=None, z_samples=None, workers=1):
    """H for the pulled-back problem in the standard-normal coordinates z.

    ``likelihood`` acts on the original parameter x = T(z). For ``base='data_dependent'``
    pass posterior samples in z coordinates.
    """
    if base in ("data_free", "forward_model"):
        if base == "forward_model" and not isinstance(likelihood, GaussianLikelihood):
            raise ValidationError("forward_model base requires a Gaussian likelihood")
        rng = np.random.default_rng(rng)
        zs = rng.standard_normal((int(K), nmap.dim))

        def term(z):
            dt = nmap.derivative(z)
            f = likelihood.fisher_information(nmap.forward(z))
            return dt[:, None] * f * dt[None, :]

    elif base == "data_dependent":
        if z_samples is None or y is None:
            raise ValidationError("data_dependent pullback needs y and z_samples")
        zs = np.atleast_2d(np.asarray(z_samples, dtype=float))
        y = likelihood.check_data(y)

        def term(z):
            g = likelihood.grad_log_likelihood(y, nmap.forward(z)) * nmap.derivative(z)
            return np.outer(g, g)

    else:
        raise ValidationError(f"unknown base kind {base!r}")
    return _accumulate(zs, term, f"pullback_{base}", workers)


# ---------------------------------------------------------------------------


def select_rank(eigenvalues, kappa=1.0, epsilon=0.1, r_max=None):
    """Smallest r >= 1 with (kappa / 2) * sum_{i > r} lambda_i <= epsilon, capped at r_max.

    Returns ``(r, reached)``; ``reached`` is False when the cap stopped the search.
    """
    lam = np.clip(np.asarray(eigenvalues, dtype=float), 0.0, None)
    d = lam.size
    cap = d if r_max is None else max(1, min(int(r_max), d))
    k = 1.0 if kappa is None else float(kappa)
    tails = np.concatenate([np.cumsum(lam[::-1])[::-1], [0.0]])
    for r in range(1, cap + 1):
        if 0.5 * k * tails[r] <= epsilon:
            return r, True
    return cap, False


def kl_bound(eigenvalues, r, kappa=1.0):
    lam = np.clip(np.asarray(eigenvalues, dtype=float), 0.0, None)
    k = 1.0 if kappa is None else float(kappa)
    return 0.5 * k * float(np.sum(lam[int(r):]))


def coordinate_scores(H, gamma=None):
    """s_i = (Gamma^{-1})_{ii} H_{ii}."""
    H = np.asarray(H, dtype=float)
    if gamma is None:
        return np.diag(H).copy()
    g = gamma if isinstance(gamma, SpdMatrix) else SpdMatrix(np.asarray(gamma, dtype=float))
    return np.diag(g.inverse) * np.diag(H)


def top_coordinates(scores, r):
    """Indices of the r largest scores; ties go to the lower index."""
    s = np.asarray(scores, dtype=float)
    # round-off from the inverse should not break ties
    scale = np.max(np.abs(s)) if s.size else 1.0
    key = np.round(s / (scale or 1.0), 12)
    order = np.argsort(-key, kind="stable")
    return [int(i) for i in order[: int(r)]]


def coordinate_bound(scores, indices, kappa=1.0):
    s = np.asarray(scores, dtype=float)
    rest = np.setdiff1d(np.arange(s.size), np.asarray(indices, dtype=int))
    k = 1.0 if kappa is None else float(kappa)
    return 0.5 * k * float(np.sum(s[rest]))


def prior_based_pairs(prior) -> GeneralizedEigenPairs:
    """Leading directions of the prior covariance: eigenpairs of (I, Gamma)."""
    return generalized_eig(np.eye(prior.dim), prior.metric)


@dataclass
class SubspaceReport:
    kind: str
    rank: int
    bound_at_rank: float
    eigenvalues: np.ndarray
    reached_tolerance: bool
    bound_certified: bool
    K: int | None = None
    trace_history_tail: list | None = None
    trace_drift: float | None = None

    def to_json(self):
        return {
            "K": self.K,
            "kind": self.kind,
            "selected_rank": self.rank,
            "bound_at_rank": self.bound_at_rank,
            "reached_tolerance": self.reached_tolerance,
            "bound_certified": self.bound_certified,
            "trace_history_tail": self.trace_history_tail,
            "trace_drift": self.trace_drift,
            "trace_settled": None if self.trace_drift is None else bool(self.trace_drift < 1e-3),
        }


def build_projector(H, prior, epsilon=0.1, r_max=None, rank=None, kind="data_free", estimate=None):
    """Eigen-projector for (H, Gamma) with rank from ``rank`` or from the KL tolerance."""
    pairs = generalized_eig(H, prior.metric)
    if rank is None:
        r, ok = select_rank(pairs.eigenvalues, prior.kappa, epsilon, r_max)
    else:
        r, ok = int(rank), True
    proj = projector_from_pairs(pairs, r, kind=kind)
    rep = SubspaceReport(
        kind=kind,
        rank=r,
        bound_at_rank=kl_bound(pairs.eigenvalues, r, prior.kappa),
        eigenvalues=pairs.eigenvalues,
        reached_tolerance=ok,
        bound_certified=prior.bound_is_certified,
        K=None if estimate is None else estimate.n_samples,
        trace_history_tail=None if estimate is None else estimate.trace_history_tail(),
        trace_drift=None if estimate is None else estimate.relative_trace_drift(),
    )
    return proj, rep


def build_coordinate_projector(H, prior, epsilon=0.1, r_max=None, rank=None, kind="coordinate"):
    scores = coordinate_scores(H, prior.metric)
    order = np.sort(scores)[::-1]
    if rank is None:
        r, ok = select_rank(order, prior.kappa, epsilon, r_max)
    else:
        r, ok = int(rank), True
    idx = top_coordinates(scores, r)
    proj = coordinate_projector(idx, prior.dim, kind=kind)
    rep = SubspaceReport(
        kind=kind,
        rank=r,
        bound_at_rank=coordinate_bound(scores, idx, prior.kappa),
        eigenvalues=order,
        reached_tolerance=ok,
        bound_certified=prior.bound_is_certified,
    )
    return proj, rep, scores

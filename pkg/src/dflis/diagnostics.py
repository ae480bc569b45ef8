"""KL estimates, autocorrelation times, ESS and pseudo-marginal noise."""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp

from .kernels import sokal_window, transition_counts
from .linalg import ValidationError


class DegenerateSeriesWarning(UserWarning):
    pass


@dataclass
class KLEstimate:
    """D_KL(pi || pi_tilde) ~ mean(l - l_tilde) + log mean exp(l_tilde - l)."""

    value: float
    misfit_term: float
    normalizer_term: float
    std_error: float
    n: int


def kl_estimate(full_loglik, approx_loglik, samples=None):
    """Estimate the KL divergence from the exact to an approximate posterior.

    Pass arrays of log-likelihood values at posterior samples, or callables together
    with ``samples``. Both posteriors share the prior, so only likelihoods enter.
    """
    if samples is not None:
        xs = np.atleast_2d(np.asarray(samples, dtype=float))
        full = np.array([full_loglik(x) for x in xs])
        approx = np.array([approx_loglik(x) for x in xs])
    else:
        full = np.asarray(full_loglik, dtype=float)
        approx = np.asarray(approx_loglik, dtype=float)
    if full.shape != approx.shape or full.ndim != 1 or full.size == 0:
        raise ValidationError("log-likelihood arrays must be 1-D and of equal length")
    d = full - approx
    n = d.size
    t1 = float(np.mean(d))
    t2 = float(logsumexp(-d) - np.log(n))
    # delta-method standard error
    w = np.exp(-d - logsumexp(-d)) * n
    infl = d + w
    se = float(np.std(infl, ddof=1) / np.sqrt(n)) if n > 1 else float("nan")
    return KLEstimate(t1 + t2, t1, t2, se, n)


def autocorrelation(series):
    """Normalized autocorrelation by FFT (biased autocovariance)."""
    x = np.asarray(series, dtype=float)
    n = x.size
    x = x - x.mean()
    size = 1 << (2 * n - 1).bit_length()
    f = np.fft.rfft(x, size)
    acov = np.fft.irfft(f * np.conj(f), size)[:n] / n
    if acov[0] <= 0:
        return None
    return acov / acov[0]


def iact(series, c=5.0, return_window=False):
    """Integrated autocorrelation time with Sokal's self-consistent window.

    A constant series has IACT equal to its length and raises a warning.
    """
    x = np.asarray(series, dtype=float)
    if x.ndim != 1 or x.size < 2:
        raise ValidationError("IACT needs a 1-D series of length >= 2")
    rho = autocorrelation(x)
    if rho is None or not np.all(np.isfinite(rho)):
        warnings.warn("constant series: IACT set to the series length", DegenerateSeriesWarning, stacklevel=2)
        tau, w = float(x.size), x.size - 1
    else:
        tau, w = sokal_window(rho, c)
        tau = max(tau, 1.0 / x.size)
    return (tau, w) if return_window else tau


def iact_components(states, c=5.0, block=64):
    """Per-component IACT of a (K, d) chain."""
    xs = np.asarray(states, dtype=float)
    k, d = xs.shape
    out = np.empty(d)
    size = 1 << (2 * k - 1).bit_length()
    for s in range(0, d, block):
        blk = xs[:, s : s + block]
        blk = blk - blk.mean(axis=0)
        f = np.fft.rfft(blk, size, axis=0)
        acov = np.fft.irfft(f * np.conj(f), size, axis=0)[:k] / k
        for j in range(blk.shape[1]):
            if acov[0, j] <= 0 or not np.isfinite(acov[0, j]):
                warnings.warn("constant component: IACT set to the series length", DegenerateSeriesWarning, stacklevel=2)
                out[s + j] = float(k)
            else:
                out[s + j] = max(sokal_window(acov[:, j] / acov[0, j], c)[0], 1.0 / k)
    return out


def mean_iact(states, c=5.0):
    return float(np.mean(iact_components(states, c)))


def ess(series_or_states, c=5.0):
    x = np.asarray(series_or_states, dtype=float)
    if x.ndim == 1:
        return x.size / iact(x, c)
    return x.shape[0] / iact_components(x, c)


def batch_means_se(series, n_batches=50):
    """Standard error of the mean by non-overlapping batch means, per column."""
    x = np.asarray(series, dtype=float)
    if x.ndim == 1:
        x = x[:, None]
    k = x.shape[0] // n_batches
    if k < 1:
        raise ValidationError("series too short for the requested number of batches")
    b = x[: k * n_batches].reshape(n_batches, k, -1).mean(axis=1)
    return np.std(b, axis=0, ddof=1) / np.sqrt(n_batches)


def pm_quality(reduced, y, probes, R=100, rng=None):
    """Standard deviation of the fresh log reduced likelihood over R redraws at each probe.

    ``probes`` are subspace coefficients (rows).
    """
    rng = np.random.default_rng(rng)
    probes = np.atleast_2d(np.asarray(probes, dtype=float))
    y = reduced.likelihood.check_data(y)
    out = np.empty(len(probes))
    for i, c in enumerate(probes):
        vals = np.array([reduced.fresh(y, c, rng).value for _ in range(int(R))])
        out[i] = np.std(vals, ddof=1)
    return out


def empirical_flux(labels, k):
    """Transition counts between k discrete states divided by the number of transitions."""
    counts = transition_counts(labels, k)
    return counts / max(len(labels) - 1, 1)


@dataclass
class ChainSummary:
    method: str
    n_steps: int
    acceptance_rate: float
    mean_iact: float
    min_ess: float
    extra: dict

    def to_json(self):
        return {
            "method": self.method,
            "n_steps": self.n_steps,
            "acceptance_rate": self.acceptance_rate,
            "mean_iact": self.mean_iact,
            "min_ess": self.min_ess,
            **self.extra,
        }


def summarize_chain(record, burn_in=0, c=5.0):
    xs = record.full_states()[burn_in:]
    taus = iact_components(xs, c)
    extra = {k: v for k, v in record.info.items() if isinstance(v, (int, float, str)) or v is None}
    return ChainSummary(
        record.method,
        int(record.n_steps),
        record.acceptance_rate,
        float(np.mean(taus)),
        float(xs.shape[0] / np.max(taus)),
        extra,
    )

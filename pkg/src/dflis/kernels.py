"""Hot loops, each in a numba flavour (``*_loop``) and a numpy flavour (``*_vec``).

The public names pick one according to :data:`dflis._jit.USE_NUMBA`. Both
flavours are kept importable so tests and benchmarks can compare them.
"""

import numpy as np

from ._jit import USE_NUMBA, njit

# ---------------------------------------------------------------------------
# ray / grid intersection lengths


@njit
def _ray_matrix_loop(src, dst, lo, h, n):
    m = src.shape[0]
    out = np.zeros((m, n * n))
    hi = lo + n * h
    alph = np.empty(2 * n + 4)
    for r in range(m):
        x0 = src[r, 0]
        y0 = src[r, 1]
        dx = dst[r, 0] - x0
        dy = dst[r, 1] - y0
        length = np.sqrt(dx * dx + dy * dy)
        if length == 0.0:
            continue
        amin = 0.0
        amax = 1.0
        if dx != 0.0:
            a1 = (lo - x0) / dx
            a2 = (hi - x0) / dx
            amin = max(amin, min(a1, a2))
            amax = min(amax, max(a1, a2))
        elif x0 <= lo or x0 >= hi:
            continue
        if dy != 0.0:
            a1 = (lo - y0) / dy
            a2 = (hi - y0) / dy
            amin = max(amin, min(a1, a2))
            amax = min(amax, max(a1, a2))
        elif y0 <= lo or y0 >= hi:
            continue
        if amax <= amin:
            continue
        cnt = 0
        alph[cnt] = amin
        cnt += 1
        alph[cnt] = amax
        cnt += 1
        for k in range(n + 1):
            if dx != 0.0:
                a = (lo + k * h - x0) / dx
                if a > amin and a < amax:
                    alph[cnt] = a
                    cnt += 1
            if dy != 0.0:
                a = (lo + k * h - y0) / dy
                if a > amin and a < amax:
                    alph[cnt] = a
                    cnt += 1
        a_sorted = np.sort(alph[:cnt])
        for q in range(cnt - 1):
            da = a_sorted[q + 1] - a_sorted[q]
            if da <= 0.0:
                continue
            am = 0.5 * (a_sorted[q + 1] + a_sorted[q])
            ix = int(np.floor((x0 + am * dx - lo) / h))
            iy = int(np.floor((y0 + am * dy - lo) / h))
            ix = min(max(ix, 0), n - 1)
            iy = min(max(iy, 0), n - 1)
            out[r, ix * n + iy] += da * length
    return out


def _ray_matrix_vec(src, dst, lo, h, n):
    src = np.asarray(src, dtype=float)
    dst = np.asarray(dst, dtype=float)
    m = src.shape[0]
    hi = lo + n * h
    d = dst - src
    length = np.hypot(d[:, 0], d[:, 1])
    amin = np.zeros(m)
    amax = np.ones(m)
    valid = length > 0
    planes = lo + h * np.arange(n + 1)
    crossings = []
    with np.errstate(divide="ignore", invalid="ignore"):
        for ax in (0, 1):
            moving = d[:, ax] != 0
            a1 = (lo - src[:, ax]) / d[:, ax]
            a2 = (hi - src[:, ax]) / d[:, ax]
            amin = np.where(moving, np.maximum(amin, np.minimum(a1, a2)), amin)
            amax = np.where(moving, np.minimum(amax, np.maximum(a1, a2)), amax)
            inside = (src[:, ax] > lo) & (src[:, ax] < hi)
            valid &= moving | inside
            crossings.append((planes[None, :] - src[:, ax, None]) / d[:, ax, None])
    valid &= amax > amin
    alph = np.concatenate([amin[:, None], amax[:, None]] + crossings, axis=1)
    keep = (alph > amin[:, None]) & (alph < amax[:, None]) & np.isfinite(alph)
    keep[:, :2] = True
    alph = np.where(keep, alph, np.inf)
    alph.sort(axis=1)
    a0 = alph[:, :-1]
    a1 = alph[:, 1:]
    with np.errstate(invalid="ignore"):
        da = a1 - a0
    ok = np.isfinite(da) & (da > 0) & valid[:, None]
    am = 0.5 * (a0 + a1)
    rows, cols = np.nonzero(ok)
    amid = am[rows, cols]
    ix = np.floor((src[rows, 0] + amid * d[rows, 0] - lo) / h).astype(np.int64)
    iy = np.floor((src[rows, 1] + amid * d[rows, 1] - lo) / h).astype(np.int64)
    ix = np.clip(ix, 0, n - 1)
    iy = np.clip(iy, 0, n - 1)
    out = np.zeros((m, n * n))
    np.add.at(out, (rows, ix * n + iy), da[rows, cols] * length[rows])
    return out


# ---------------------------------------------------------------------------
# cell-centred finite volumes on an n x n grid, index = i * n + j
# Dirichlet faces at i = -1/2 and i = n - 1/2, no-flux faces in j


@njit
def _fv_band_loop(kappa, n):
    d = n * n
    ab = np.zeros((n + 1, d))
    for i in range(n):
        for j in range(n):
            a = i * n + j
            ka = kappa[a]
            if i == 0 or i == n - 1:
                ab[0, a] += 2.0 * ka
            if j + 1 < n:
                b = a + 1
                kb = kappa[b]
                t = 2.0 * ka * kb / (ka + kb)
                ab[0, a] += t
                ab[0, b] += t
                ab[1, a] = -t
            if i + 1 < n:
                b = a + n
                kb = kappa[b]
                t = 2.0 * ka * kb / (ka + kb)
                ab[0, a] += t
                ab[0, b] += t
                ab[n, a] = -t
    return ab


def _fv_band_vec(kappa, n):
    k = np.asarray(kappa, dtype=float).reshape(n, n)
    ab = np.zeros((n + 1, n * n))
    diag = np.zeros((n, n))
    diag[0, :] += 2.0 * k[0, :]
    diag[-1, :] += 2.0 * k[-1, :]
    ty = 2.0 * k[:, :-1] * k[:, 1:] / (k[:, :-1] + k[:, 1:])
    tx = 2.0 * k[:-1, :] * k[1:, :] / (k[:-1, :] + k[1:, :])
    diag[:, :-1] += ty
    diag[:, 1:] += ty
    diag[:-1, :] += tx
    diag[1:, :] += tx
    ab[0] = diag.ravel()
    off1 = np.zeros((n, n))
    off1[:, :-1] = -ty
    ab[1] = off1.ravel()
    offn = np.zeros((n, n))
    offn[:-1, :] = -tx
    ab[n] = offn.ravel()
    return ab


@njit
def _fv_adjoint_loop(kappa, p, lam, n):
    # out[q, c] = -lam[q]^T (dK/dx_c) p with x = log kappa
    nq = lam.shape[0]
    out = np.zeros((nq, n * n))
    for i in range(n):
        for j in range(n):
            a = i * n + j
            ka = kappa[a]
            if i == 0 or i == n - 1:
                g = 2.0 * ka * p[a]
                for q in range(nq):
                    out[q, a] -= g * lam[q, a]
            for step in (1, n):
                if step == 1:
                    if j + 1 >= n:
                        continue
                elif i + 1 >= n:
                    continue
                b = a + step
                kb = kappa[b]
                s = (ka + kb) * (ka + kb)
                da = 2.0 * ka * kb * kb / s
                db = 2.0 * kb * ka * ka / s
                dp = p[a] - p[b]
                for q in range(nq):
                    w = (lam[q, a] - lam[q, b]) * dp
                    out[q, a] -= da * w
                    out[q, b] -= db * w
    return out


def _fv_adjoint_vec(kappa, p, lam, n):
    k = np.asarray(kappa, dtype=float).reshape(n, n)
    pg = np.asarray(p, dtype=float).reshape(n, n)
    lam = np.asarray(lam, dtype=float)
    nq = lam.shape[0]
    lg = lam.reshape(nq, n, n)
    out = np.zeros((nq, n, n))
    out[:, 0, :] -= 2.0 * k[0, :] * pg[0, :] * lg[:, 0, :]
    out[:, -1, :] -= 2.0 * k[-1, :] * pg[-1, :] * lg[:, -1, :]
    # j direction
    ka, kb = k[:, :-1], k[:, 1:]
    s = (ka + kb) ** 2
    w = (lg[:, :, :-1] - lg[:, :, 1:]) * (pg[:, :-1] - pg[:, 1:])
    out[:, :, :-1] -= (2.0 * ka * kb * kb / s) * w
    out[:, :, 1:] -= (2.0 * kb * ka * ka / s) * w
    # i direction
    ka, kb = k[:-1, :], k[1:, :]
    s = (ka + kb) ** 2
    w = (lg[:, :-1, :] - lg[:, 1:, :]) * (pg[:-1, :] - pg[1:, :])
    out[:, :-1, :] -= (2.0 * ka * kb * kb / s) * w
    out[:, 1:, :] -= (2.0 * kb * ka * ka / s) * w
    return out.reshape(nq, n * n)


# ---------------------------------------------------------------------------
# chain utilities


@njit
def _transition_counts_loop(labels, k):
    out = np.zeros((k, k), dtype=np.int64)
    for t in range(labels.shape[0] - 1):
        out[labels[t], labels[t + 1]] += 1
    return out


def _transition_counts_vec(labels, k):
    labels = np.asarray(labels, dtype=np.int64)
    flat = labels[:-1] * k + labels[1:]
    return np.bincount(flat, minlength=k * k).reshape(k, k)


@njit
def _sokal_window_loop(rho, c):
    tau = 1.0
    for w in range(1, rho.shape[0]):
        tau += 2.0 * rho[w]
        if w >= c * tau:
            return tau, w
    return tau, rho.shape[0] - 1


def _sokal_window_vec(rho, c):
    rho = np.asarray(rho, dtype=float)
    taus = 1.0 + 2.0 * np.cumsum(rho[1:])
    lags = np.arange(1, rho.shape[0])
    hit = np.nonzero(lags >= c * taus)[0]
    if hit.size == 0:
        return float(taus[-1]) if taus.size else 1.0, rho.shape[0] - 1
    w = int(hit[0])
    return float(taus[w]), int(lags[w])


IMPLEMENTATIONS = {
    "ray_matrix": (_ray_matrix_loop, _ray_matrix_vec),
    "fv_band": (_fv_band_loop, _fv_band_vec),
    "fv_adjoint": (_fv_adjoint_loop, _fv_adjoint_vec),
    "transition_counts": (_transition_counts_loop, _transition_counts_vec),
    "sokal_window": (_sokal_window_loop, _sokal_window_vec),
}

_pick = 0 if USE_NUMBA else 1


def ray_matrix(src, dst, lo, h, n):
    """Intersection lengths of segments ``src[i] -> dst[i]`` with an n x n grid.

    The grid covers ``[lo, lo + n h]^2``; cell (ix, iy) maps to column ``ix * n + iy``.
    """
    src = np.ascontiguousarray(src, dtype=float)
    dst = np.ascontiguousarray(dst, dtype=float)
    return IMPLEMENTATIONS["ray_matrix"][_pick](src, dst, float(lo), float(h), int(n))


def fv_band(kappa, n):
    """Lower banded form (LAPACK layout) of the finite-volume operator for conductivity ``kappa``."""
    return IMPLEMENTATIONS["fv_band"][_pick](np.ascontiguousarray(kappa, dtype=float), int(n))


def fv_adjoint(kappa, p, lam, n):
    """Rows ``-lam_q^T (dK/dx) p`` for each adjoint state ``lam_q`` (x = log kappa)."""
    lam = np.ascontiguousarray(np.atleast_2d(lam), dtype=float)
    return IMPLEMENTATIONS["fv_adjoint"][_pick](
        np.ascontiguousarray(kappa, dtype=float), np.ascontiguousarray(p, dtype=float), lam, int(n)
    )


def transition_counts(labels, k):
    return IMPLEMENTATIONS["transition_counts"][_pick](np.ascontiguousarray(labels, dtype=np.int64), int(k))


def sokal_window(rho, c):
    """Return ``(tau, W)`` with W the first lag satisfying ``W >= c * tau_W``."""
    tau, w = IMPLEMENTATIONS["sokal_window"][_pick](np.ascontiguousarray(rho, dtype=float), float(c))
    return float(tau), int(w)

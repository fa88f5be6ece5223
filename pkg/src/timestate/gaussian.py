"""Gaussian orthant probabilities and truncated multivariate normal moments.

All routines are vectorised over a leading batch axis: many mean vectors
share a single covariance matrix, which is exactly the situation of one
state path evaluated for every gene.

Probabilities are returned on the log scale.  Dimension one uses
``log_ndtr``; dimension two uses the Drezner-Wesolowsky
quadrature (Owen's T for strong correlation) with a log-stable fallback in
the far tail; higher dimensions integrate the most
restrictive coordinate out by Gauss-Legendre quadrature and recurse on the
conditional distribution of the rest (sequential conditioning).
"""

from __future__ import annotations

import numpy as np
from scipy import special

_LOG_2PI = np.log(2.0 * np.pi)

#: Gauss-Legendre nodes used for every one-dimensional outer integral.
N_NODES = 48
_GL_X, _GL_W = np.polynomial.legendre.leggauss(N_NODES)
_GL_X = 0.5 * (_GL_X + 1.0)
_GL_LOGW = np.log(0.5 * _GL_W)

# bivariate closed forms are accurate to ~1e-16 absolute; below this
# probability the log-stable quadrature takes over
_BVN_FALLBACK = 1e-8
_LOG_RECHECK = np.log(1e-8)


def _log_phi(x):
    return -0.5 * (x * x + _LOG_2PI)


def _outer_interval(a):
    """Integration window for ``w ~ N(0, 1)`` restricted to ``w > a``.

    The window covers all but ``exp(-36)`` of the restricted mass.
    """
    lo = np.maximum(a, -9.0)
    hi = np.sqrt(np.maximum(a, 0.0) ** 2 + 72.0)
    hi = np.maximum(hi, lo + 1e-12)
    return lo, hi - lo


def _log_bvn_quadrature(h1, h2, rho):
    """log P(Z1 > -h1, Z2 > -h2) for standard normals with correlation rho.

    Log-stable in the far tails; used where the closed form is inaccurate.
    """
    # integrate the more restrictive coordinate
    swap = h2 < h1
    first = np.where(swap, h2, h1)
    second = np.where(swap, h1, h2)
    a = -first
    lo, width = _outer_interval(a)
    w = lo[:, None] + width[:, None] * _GL_X[None, :]
    s = np.sqrt(1.0 - rho * rho)
    inner = special.log_ndtr((second[:, None] + rho * w) / s)
    terms = np.log(width)[:, None] + _GL_LOGW[None, :] + _log_phi(w) + inner
    return special.logsumexp(terms, axis=1)


def _bvn_cdf(h, k, rho):
    """P(Z1 < h, Z2 < k) via Owen's T function."""
    s = np.sqrt(1.0 - rho * rho)
    with np.errstate(divide="ignore", invalid="ignore"):
        ah = (k - rho * h) / (h * s)
        ak = (h - rho * k) / (k * s)
    # zero arguments: the limit is +-inf with the sign of the numerator
    ah = np.where(h == 0.0, np.copysign(np.inf, k - rho * h), ah)
    ak = np.where(k == 0.0, np.copysign(np.inf, h - rho * k), ak)
    ah = np.where(np.isnan(ah), 0.0, ah)
    ak = np.where(np.isnan(ak), 0.0, ak)
    # signs taken separately: h * k can underflow to zero
    sgn = np.sign(h) * np.sign(k)
    beta = np.where((sgn < 0) | ((sgn == 0) & (h + k < 0)), 0.5, 0.0)
    p = (0.5 * special.ndtr(h) + 0.5 * special.ndtr(k)
         - special.owens_t(h, ah) - special.owens_t(k, ak) - beta)
    origin = (h == 0.0) & (k == 0.0)
    return np.where(origin, 0.25 + np.arcsin(rho) / (2.0 * np.pi), p)


def _gl_half(npts):
    x, w = np.polynomial.legendre.leggauss(2 * npts)
    keep = x > 0
    return x[keep], w[keep]


_DW_RULES = {3: _gl_half(3), 6: _gl_half(6), 10: _gl_half(10)}


def _bvn_upper_dw(h, k, rho):
    """P(Z1 > h, Z2 > k), Drezner-Wesolowsky form for |rho| < 0.925.

    The correlation is shared by all pairs, so the quadrature nodes over
    arcsin(rho) are fixed and the sum vectorises.
    """
    lg = 3 if abs(rho) < 0.3 else (6 if abs(rho) < 0.75 else 10)
    x, w = _DW_RULES[lg]
    asr = 0.5 * np.arcsin(rho)
    sn = np.sin(asr * np.concatenate([1.0 - x, 1.0 + x]))
    ww = np.concatenate([w, w])
    hk = (h * k)[:, None]
    hs = (0.5 * (h * h + k * k))[:, None]
    terms = np.exp((sn * hk - hs) / (1.0 - sn * sn))
    return terms @ ww * (asr / (2.0 * np.pi)) + special.ndtr(-h) * special.ndtr(-k)


def log_bvn_orthant(h1, h2, rho, stable=True):
    """log P(Z1 > -h1, Z2 > -h2) for a standard bivariate normal.

    ``h1, h2`` are standardised means (mean / sd) of the two coordinates.
    With ``stable=False`` tiny probabilities are only accurate in absolute
    terms, which is all an enclosing quadrature needs.
    """
    h1 = np.asarray(h1, dtype=float)
    h2 = np.asarray(h2, dtype=float)
    shape = np.broadcast(h1, h2).shape
    h1 = np.broadcast_to(h1, shape).ravel()
    h2 = np.broadcast_to(h2, shape).ravel()
    if abs(rho) < 0.925:
        p = _bvn_upper_dw(-h1, -h2, rho)
    else:
        p = _bvn_cdf(h1, h2, rho)
    if not stable:
        return np.log(np.maximum(p, 1e-300)).reshape(shape)
    out = np.empty_like(p)
    good = p > _BVN_FALLBACK
    out[good] = np.log(p[good])
    bad = ~good
    if bad.any():
        out[bad] = _log_bvn_quadrature(h1[bad], h2[bad], rho)
    return out.reshape(shape)


def log_orthant(mean, cov, stable=True):
    """log P(X > 0) elementwise for ``X ~ N(mean[i], cov)``.

    Parameters
    ----------
    mean : ndarray of shape (n, m)
        One mean vector per row.
    cov : ndarray of shape (m, m)
        Shared positive definite covariance.

    Returns
    -------
    ndarray of shape (n,)
    """
    mean = np.asarray(mean, dtype=float)
    cov = np.asarray(cov, dtype=float)
    if mean.ndim == 1:
        mean = mean[None, :]
    n, m = mean.shape
    if m == 0:
        return np.zeros(n)
    sd = np.sqrt(np.diag(cov))
    if m == 1:
        return special.log_ndtr(mean[:, 0] / sd[0])
    if m == 2:
        rho = cov[0, 1] / (sd[0] * sd[1])
        return log_bvn_orthant(mean[:, 0] / sd[0], mean[:, 1] / sd[1], rho, stable)

    out = np.empty(n)
    # condition first on the coordinate with the smallest marginal probability
    first = np.argmin(mean / sd, axis=1)
    for k in range(m):
        rows = np.flatnonzero(first == k)
        if rows.size:
            out[rows] = _log_orthant_outer(mean[rows], cov, k, False)
            if stable:
                redo = rows[out[rows] < _LOG_RECHECK]
                if redo.size:
                    out[redo] = _log_orthant_outer(mean[redo], cov, k, True)
    return out


def _log_orthant_outer(mean, cov, k, stable):
    m = cov.shape[0]
    rest = [j for j in range(m) if j != k]
    sd_k = np.sqrt(cov[k, k])
    slope = cov[rest, k] / sd_k
    cond_cov = cov[np.ix_(rest, rest)] - np.outer(slope, slope)
    a = -mean[:, k] / sd_k
    lo, width = _outer_interval(a)
    w = lo[:, None] + width[:, None] * _GL_X[None, :]
    cond_mean = mean[:, None, rest] + w[:, :, None] * slope[None, None, :]
    inner = log_orthant(cond_mean.reshape(-1, m - 1), cond_cov, stable)
    inner = inner.reshape(w.shape)
    terms = np.log(width)[:, None] + _GL_LOGW[None, :] + _log_phi(w) + inner
    return special.logsumexp(terms, axis=1)


def _log_mvn_density_at(x, cov):
    """log N(x; 0, cov) for rows of ``x`` and a shared small covariance."""
    chol = np.linalg.cholesky(cov)
    z = np.linalg.solve(chol, x.T).T
    logdet = 2.0 * np.sum(np.log(np.diag(chol)))
    return -0.5 * (np.sum(z * z, axis=1) + logdet + x.shape[1] * _LOG_2PI)


def truncated_moments(mean, cov):
    """Moments of ``X ~ N(mean[i], cov)`` conditioned on ``X > 0``.

    Uses the Tallis / Manjunath-Wilhelm formulas, which need only orthant
    probabilities of dimension ``m - 1`` and ``m - 2`` besides the full one.

    Returns
    -------
    log_alpha : ndarray (n,)
        log P(X > 0).
    first : ndarray (n, m)
        Conditional mean.
    second : ndarray (n, m, m)
        Conditional covariance.
    """
    mean = np.asarray(mean, dtype=float)
    cov = np.asarray(cov, dtype=float)
    if mean.ndim == 1:
        mean = mean[None, :]
    n, m = mean.shape
    log_alpha = log_orthant(mean, cov)
    if m == 0:
        return log_alpha, np.zeros((n, 0)), np.zeros((n, 0, 0))

    # centred variable Y = X - mean, truncated to Y > a
    a = -mean
    var = np.diag(cov)

    # F_k(a_k) / alpha
    fk = np.empty((n, m))
    for k in range(m):
        rest = [j for j in range(m) if j != k]
        logf = _log_phi(a[:, k] / np.sqrt(var[k])) - 0.5 * np.log(var[k])
        if rest:
            slope = cov[rest, k] / var[k]
            cond_mean = a[:, k][:, None] * slope[None, :]
            cond_cov = cov[np.ix_(rest, rest)] - np.outer(cov[rest, k], cov[k, rest]) / var[k]
            # P(Y_rest > a_rest | Y_k = a_k) = P(Y_rest - a_rest > 0)
            logf = logf + log_orthant(cond_mean - a[:, rest], cond_cov)
        fk[:, k] = np.exp(logf - log_alpha)

    # F_kq(a_k, a_q) / alpha, symmetric in (k, q)
    fkq = np.zeros((n, m, m))
    for k in range(m):
        for q in range(k + 1, m):
            idx = [k, q]
            rest = [j for j in range(m) if j not in idx]
            sub = cov[np.ix_(idx, idx)]
            logf = _log_mvn_density_at(a[:, idx], sub)
            if rest:
                gain = cov[np.ix_(rest, idx)] @ np.linalg.inv(sub)
                cond_mean = a[:, idx] @ gain.T
                cond_cov = cov[np.ix_(rest, rest)] - gain @ cov[np.ix_(idx, rest)]
                logf = logf + log_orthant(cond_mean - a[:, rest], cond_cov)
            val = np.exp(logf - log_alpha)
            fkq[:, k, q] = val
            fkq[:, q, k] = val

    ey = fk @ cov.T  # E[Y_i] = sum_k cov_ik F_k
    term1 = np.einsum("ik,jk,nk->nij", cov, cov, a * fk / var[None, :])
    # coefficient (cov_jq - cov_kq cov_jk / cov_kk) indexed [k, q, j]
    coef = cov[None, :, :] - cov[:, :, None] * cov[:, None, :] / var[:, None, None]
    coef = np.transpose(coef, (0, 2, 1))  # [k, j, q]
    term2 = np.einsum("ik,kjq,nkq->nij", cov, coef, fkq)
    eyy = cov[None, :, :] + term1 + term2
    second = eyy - ey[:, :, None] * ey[:, None, :]
    second = 0.5 * (second + np.transpose(second, (0, 2, 1)))
    return log_alpha, mean + ey, second


def sample_truncated_normal(rng, loc, scale, positive, size=None):
    """Draw from ``N(loc, scale**2)`` truncated to (0, inf) or (-inf, 0).

    Inverse-cdf sampling on the log scale, so deep truncation is handled.
    Returned values are strictly on the requested side of zero.
    """
    loc = np.asarray(loc, dtype=float)
    scale = np.asarray(scale, dtype=float)
    if not positive:
        return -sample_truncated_normal(rng, -loc, scale, True, size)
    u = rng.random(size if size is not None else np.broadcast(loc, scale).shape)
    lower = -loc / scale
    x = -special.ndtri_exp(np.log1p(-u) + special.log_ndtr(-lower))
    out = loc + scale * x
    return np.maximum(out, np.finfo(float).tiny)

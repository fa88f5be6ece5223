"""Path-conditional marginal likelihood and posterior moments.

Work is done in the centred model: with ``y_t = xbar_t - xbar_1`` for
t = 2..T, the latent vector ``z = (mu~_1, delta_active)`` is Gaussian a
priori (truncation aside) and ``y = H z + e`` is linear in it.  For a path
with active (non-Same) periods A::

    f(y | v) = N(y; H m0, D + H V0 H') * P_post(orthant) / P_prior(orthant)

where the posterior orthant probability is a |A|-dimensional Gaussian
orthant probability from :mod:`timestate.gaussian`.  Every quantity that
depends only on the path, the design and the parameters is computed once
per path and shared across genes.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np
from scipy import special

from .core import DOWN, SAME, UP, Design, PathSet, StatePath, ValidationError
from .gaussian import log_orthant, sample_truncated_normal, truncated_moments
from .params import MeanLevelParams, ObservationParams

_LOG_2PI = np.log(2.0 * np.pi)


@dataclass(frozen=True)
class PathConditionalResult:
    """Likelihood and posterior moments of one gene's mean curve given a path."""

    log_lik: float
    post_mean: np.ndarray
    post_var: np.ndarray


class _PathTerms:
    """Gene-independent algebra for one path."""

    def __init__(self, codes, obs: ObservationParams, mean: MeanLevelParams, design: Design):
        codes = np.asarray(codes)
        T = design.T
        if codes.shape != (T - 1,):
            raise ValidationError(f"path has {codes.size + 1} time points, design has {T}")
        if mean.n_periods != T - 1:
            raise ValidationError("mean-level parameters do not match the design")
        s2 = obs.sigma2
        n = design.n
        active = np.flatnonzero(codes != SAME)
        m = active.size
        self.m = m
        self.active = active
        self.signs = np.where(codes[active] == UP, 1.0, -1.0)
        cols = np.where(codes[active] == UP, 0, 1)
        self.cols = cols
        eta = mean.eta[active, cols]
        tau = mean.tau[active, cols]

        m0 = np.concatenate([[0.0], eta])
        v0 = np.concatenate([[s2 / n[0]], tau ** 2])
        H = np.zeros((T - 1, 1 + m))
        H[:, 0] = 1.0
        for j, p in enumerate(active):
            H[p:, 1 + j] = 1.0
        dvar = s2 / n[1:]

        cov_y = np.diag(dvar) + (H * v0) @ H.T
        chol = np.linalg.cholesky(cov_y)
        self.mean_y = H @ m0
        self.chol_inv = np.linalg.inv(chol)
        self.logdet_y = 2.0 * np.sum(np.log(np.diag(chol)))

        prec = np.diag(1.0 / v0) + (H.T / dvar) @ H
        S = np.linalg.inv(prec)
        S = 0.5 * (S + S.T)
        self.post_cov = S
        self.gain = S @ (H.T / dvar)        # posterior mean = gain @ y + offset
        self.offset = S @ (m0 / v0)
        sg = self.signs
        self.orthant_cov = S[1:, 1:] * np.outer(sg, sg)
        self.log_prior_orthant = float(np.sum(special.log_ndtr(sg * eta / tau)))

        # maps z to the full centred mean curve, time 1 included
        M = np.zeros((T, 1 + m))
        M[0, 0] = 1.0
        M[1:] = H
        self.curve = M

    def gaussian_part(self, y):
        r = (y - self.mean_y) @ self.chol_inv.T
        return -0.5 * (np.sum(r * r, axis=1) + self.logdet_y + y.shape[1] * _LOG_2PI)

    def orthant_mean(self, y):
        zbar = y @ self.gain.T + self.offset
        return zbar, zbar[:, 1:] * self.signs

    def log_lik(self, y):
        ll = self.gaussian_part(y)
        if self.m:
            _, w = self.orthant_mean(y)
            ll = ll + log_orthant(w, self.orthant_cov) - self.log_prior_orthant
        return ll

    def latent_moments(self, y):
        """Log-likelihood plus posterior mean (G, 1+m) and covariance of z."""
        ll = self.gaussian_part(y)
        zbar, w = self.orthant_mean(y)
        G = y.shape[0]
        S = self.post_cov
        if self.m == 0:
            return ll, zbar, np.broadcast_to(S, (G,) + S.shape)
        log_alpha, ew, cw = truncated_moments(w, self.orthant_cov)
        ll = ll + log_alpha - self.log_prior_orthant
        sg = self.signs
        ed = ew * sg
        cd = cw * np.outer(sg, sg)
        # the unconstrained coordinate mu~_1 regresses on the constrained ones
        B = S[0, 1:] @ np.linalg.inv(S[1:, 1:])
        e0 = zbar[:, 0] + (ed - zbar[:, 1:]) @ B
        v0 = S[0, 0] - B @ S[1:, 0] + np.einsum("i,nij,j->n", B, cd, B)
        c0d = cd @ B
        ez = np.column_stack([e0, ed])
        cz = np.empty((G, 1 + self.m, 1 + self.m))
        cz[:, 0, 0] = v0
        cz[:, 0, 1:] = c0d
        cz[:, 1:, 0] = c0d
        cz[:, 1:, 1:] = cd
        return ll, ez, cz

    def moments(self, y):
        """Log-likelihood plus posterior mean/variance of the centred curve."""
        ll, ez, cz = self.latent_moments(y)
        M = self.curve
        post_mean = ez @ M.T
        post_var = np.einsum("ti,nij,tj->nt", M, cz, M)
        return ll, post_mean, np.maximum(post_var, 0.0)


def _centered_block(gene_means) -> np.ndarray:
    x = np.asarray(gene_means, dtype=float)
    if x.ndim == 1:
        x = x[None, :]
    return x[:, 1:] - x[:, :1]


def _codes(path, T):
    if isinstance(path, StatePath):
        if path.T != T:
            raise ValidationError(f"path has {path.T} time points, design has {T}")
        return np.array(path.codes)
    return np.asarray(path)


def path_log_likelihood(gene_means, path, obs_params: ObservationParams,
                        mean_params: MeanLevelParams, design: Design):
    """log f(xbar_g | s_g = path) in the centred model.

    Parameters
    ----------
    gene_means : array-like of shape (T,) or (G, T)
        Time-point sample means of one gene (or a batch of genes).  Raw or
        already centred: only differences from time 1 are used.

    Returns
    -------
    float or ndarray of shape (G,)
    """
    terms = _PathTerms(_codes(path, design.T), obs_params, mean_params, design)
    y = _centered_block(gene_means)
    ll = terms.log_lik(y)
    return float(ll[0]) if np.ndim(gene_means) == 1 else ll


def path_conditional_moments(gene_means, path, obs_params, mean_params, design):
    """Posterior mean and variance of the centred mean curve given the path.

    Returns a :class:`PathConditionalResult` for a single gene, or a tuple of
    arrays ``(log_lik, post_mean, post_var)`` for a batch.
    """
    terms = _PathTerms(_codes(path, design.T), obs_params, mean_params, design)
    y = _centered_block(gene_means)
    ll, pm, pv = terms.moments(y)
    if np.ndim(gene_means) == 1:
        return PathConditionalResult(float(ll[0]), pm[0], pv[0])
    return ll, pm, pv


def _chunks(G, n_jobs):
    if n_jobs <= 1:
        return [slice(0, G)]
    k = int(np.ceil(G / n_jobs))
    return [slice(i, min(i + k, G)) for i in range(0, G, k)]


def all_path_log_likelihoods(centered_means, paths: PathSet, obs_params, mean_params,
                             design, n_jobs=1) -> np.ndarray:
    """(G, P) matrix of log f(y_g | v) for every gene and every path.

    ``centered_means`` is the (G, T) array of
    :attr:`SufficientStats.centered_means`.  With ``n_jobs > 1`` genes are
    split into contiguous blocks evaluated on a thread pool; the per-gene
    arithmetic is independent of the split.
    """
    y = _centered_block(centered_means)
    terms = [_PathTerms(c, obs_params, mean_params, design) for c in paths.codes]
    out = np.empty((y.shape[0], len(paths)))

    def work(sl):
        for j, t in enumerate(terms):
            out[sl, j] = t.log_lik(y[sl])

    blocks = _chunks(y.shape[0], n_jobs)
    if len(blocks) == 1:
        work(blocks[0])
    else:
        with ThreadPoolExecutor(max_workers=n_jobs) as ex:
            list(ex.map(work, blocks))
    return out


def all_path_moments(centered_means, paths: PathSet, obs_params, mean_params, design):
    """Per-path log-likelihoods (G, P) and curve moments (G, P, T)."""
    y = _centered_block(centered_means)
    G, P, T = y.shape[0], len(paths), design.T
    ll = np.empty((G, P))
    means = np.empty((G, P, T))
    var = np.empty((G, P, T))
    for j, c in enumerate(paths.codes):
        t = _PathTerms(c, obs_params, mean_params, design)
        ll[:, j], means[:, j], var[:, j] = t.moments(y)
    return ll, means, var


def all_path_increment_moments(centered_means, paths: PathSet, obs_params, mean_params,
                               design, n_jobs=1):
    """Per-path log-likelihoods and posterior moments of the active increments.

    Returns ``(loglik, terms)`` where ``loglik`` is (G, P) and ``terms[j]``
    is ``(active_periods, direction_columns, E[delta], E[delta^2])`` for path
    j, the moment arrays having shape (G, m_j).
    """
    y = _centered_block(centered_means)
    G, P = y.shape[0], len(paths)
    ll = np.empty((G, P))
    terms = []
    blocks = _chunks(G, n_jobs)
    for j, c in enumerate(paths.codes):
        t = _PathTerms(c, obs_params, mean_params, design)
        e1 = np.empty((G, t.m))
        e2 = np.empty((G, t.m))

        def work(sl, t=t, j=j, e1=e1, e2=e2):
            lj, ez, cz = t.latent_moments(y[sl])
            ll[sl, j] = lj
            ed = ez[:, 1:]
            e1[sl] = ed
            e2[sl] = ed * ed + np.diagonal(cz, axis1=1, axis2=2)[:, 1:]

        if len(blocks) == 1:
            work(blocks[0])
        else:
            with ThreadPoolExecutor(max_workers=n_jobs) as ex:
                list(ex.map(work, blocks))
        terms.append((t.active, t.cols, e1, e2))
    return ll, terms


def mc_oracle_log_likelihood(gene_means, path, obs_params, mean_params, design,
                             n_samples=10**6, seed=0, chunk=250_000):
    """Simple Monte Carlo estimate of f(xbar_g | s_g = path).

    Draws mu~_1 and the increments from their priors and averages the
    Gaussian density of the centred means.  Test oracle only.

    Returns
    -------
    estimate, std_error : float
        Both on the density scale.
    """
    if n_samples < 10**4:
        raise ValueError("n_samples must be at least 1e4")
    codes = _codes(path, design.T)
    y = _centered_block(gene_means)[0]
    s2 = obs_params.sigma2
    n = design.n
    T = design.T
    rng = np.random.default_rng(seed)
    sd_obs = np.sqrt(s2 / n[1:])
    const = -np.sum(np.log(sd_obs)) - 0.5 * (T - 1) * _LOG_2PI
    total = 0.0
    total_sq = 0.0
    done = 0
    while done < n_samples:
        k = min(chunk, n_samples - done)
        mu1 = rng.normal(0.0, np.sqrt(s2 / n[0]), size=k)
        inc = np.zeros((k, T - 1))
        for p, c in enumerate(codes):
            if c == SAME:
                continue
            e, t = mean_params.get(p, c)
            inc[:, p] = sample_truncated_normal(rng, e, t, c == UP, size=k)
        curve = mu1[:, None] + np.cumsum(inc, axis=1)
        r = (y[None, :] - curve) / sd_obs
        dens = np.exp(const - 0.5 * np.sum(r * r, axis=1))
        total += dens.sum()
        total_sq += np.dot(dens, dens)
        done += k
    est = total / n_samples
    var = max(total_sq / n_samples - est * est, 0.0)
    return est, np.sqrt(var / n_samples)

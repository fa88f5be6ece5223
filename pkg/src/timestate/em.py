"""Empirical Bayes fitting of the hierarchical state space model by EM."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
from scipy import optimize, special

from .core import (DOWN, SAME, UP, ExpressionDataset, PathSet, SufficientStats,
                   ValidationError, compute_sufficient_stats)
from .likelihood import all_path_increment_moments, all_path_log_likelihoods
from .params import (ORDERS, MeanLevelParams, ModelParams, ObservationParams,
                     StateLevelParams)

logger = logging.getLogger(__name__)

_LOG_2PI = np.log(2.0 * np.pi)

# bounds of the mean-level optimiser
ETA_BOUNDS = (-20.0, 20.0)
TAU_BOUNDS = (1e-3, 20.0)
_LOG_TAU_BOUNDS = (float(np.log(TAU_BOUNDS[0])), float(np.log(TAU_BOUNDS[1])))
MEAN_UPDATES = ("exact", "pairwise")


class FitError(RuntimeError):
    """EM could not produce a valid fit."""


@dataclass(frozen=True)
class GenePosterior:
    """Posterior over state paths for one gene."""

    path_probs: np.ndarray
    state_marginals: np.ndarray
    pairwise_marginals: np.ndarray


class GenePosteriors:
    """Batched E-step output for G genes.

    Attributes
    ----------
    path_probs : ndarray (G, P)
        Pr(s_g = v | x_g) in canonical path order.
    log_marginal : ndarray (G,)
        log f(x_g) in the centred model.
    state_marginals : ndarray (G, T-1, 3)
        Pr(s_gt = i | x_g) for t = 2..T, state axis ordered Same/Up/Down.
    pairwise_marginals : ndarray (G, T-2, 3, 3)
        Pr(s_g(t-1) = i, s_gt = j | x_g) for t = 3..T.
    """

    def __init__(self, path_probs, log_marginal, paths: PathSet):
        self.paths = paths
        self.path_probs = path_probs
        self.log_marginal = log_marginal
        onehot = paths.onehot()
        self.state_marginals = np.einsum("gp,pti->gti", path_probs, onehot)
        T1 = paths.T - 1
        pw = np.empty((path_probs.shape[0], max(T1 - 1, 0), 3, 3))
        for t in range(T1 - 1):
            pw[:, t] = np.einsum("gp,pi,pj->gij", path_probs, onehot[:, t], onehot[:, t + 1])
        self.pairwise_marginals = pw

    @classmethod
    def from_log_likelihoods(cls, loglik, log_prior, paths):
        joint = loglik + log_prior[None, :]
        lse = special.logsumexp(joint, axis=1)
        probs = np.exp(joint - lse[:, None])
        probs /= probs.sum(axis=1, keepdims=True)
        return cls(probs, lse, paths)

    @property
    def G(self) -> int:
        return self.path_probs.shape[0]

    @property
    def log_likelihood(self) -> float:
        return float(np.sum(self.log_marginal))

    def __len__(self):
        return self.G

    def __getitem__(self, g) -> GenePosterior:
        pw = self.pairwise_marginals[g]
        return GenePosterior(self.path_probs[g], self.state_marginals[g], pw)

    @property
    def prob_same(self) -> np.ndarray:
        """(G, T-1) posterior probability of no change at each period."""
        return self.state_marginals[:, :, SAME]

    @property
    def prob_null_path(self) -> np.ndarray:
        return self.path_probs[:, self.paths.null_index]


@dataclass
class FitConfig:
    """EM controls.

    ``mean_update`` selects the mean-level M-step: ``"exact"`` maximises the
    expected complete-data log-likelihood of the increments (a true EM step);
    ``"pairwise"`` maximises the posterior-weighted adjacent-pair mixture
    objective, a composite update guarded by step halving.

    ``deterministic`` is accepted for interface completeness: gene blocks are
    always reduced in gene order, so threaded and sequential fits agree.
    """

    max_iter: int = 500
    rel_tol: float = 1e-6
    n_jobs: int = 1
    deterministic: bool = True
    multi_start: int = 0
    seed: int = 0
    monotone_slack: float = 1e-8
    max_halvings: int = 6
    mean_update: str = "exact"

    def __post_init__(self):
        if self.mean_update not in MEAN_UPDATES:
            raise ValidationError(f"mean_update must be one of {MEAN_UPDATES}")
        if self.max_iter < 1:
            raise ValidationError("max_iter must be at least 1")
        if not self.rel_tol > 0:
            raise ValidationError("rel_tol must be positive")
        if self.n_jobs < 1:
            raise ValidationError("n_jobs must be at least 1")
        if self.multi_start < 0:
            raise ValidationError("multi_start must be non-negative")


@dataclass
class FitReport:
    params: ModelParams
    log_lik_trace: list = field(default_factory=list)
    iterations: int = 0
    converged: bool = False
    posteriors: GenePosteriors = None


def _stats(data) -> SufficientStats:
    if isinstance(data, SufficientStats):
        return data
    if isinstance(data, ExpressionDataset):
        return compute_sufficient_stats(data)
    raise TypeError(f"expected ExpressionDataset or SufficientStats, got {type(data).__name__}")


def estimate_sigma2(dataset) -> ObservationParams:
    """Pooled unbiased estimate of the observation variance.

    ``pooled_ss / (G * (sum_t n_t - T))``.
    """
    stats = _stats(dataset)
    df = stats.G * stats.design.df
    if df <= 0:
        raise ValidationError("no within-time-point degrees of freedom")
    s2 = stats.pooled_ss / df
    if not s2 > 0:
        raise ValidationError("all replicates identical: sigma^2 estimate is zero")
    return ObservationParams(s2)


def initialize_params(dataset, order="first", sigma2=None) -> ModelParams:
    """Deterministic starting values.

    eta = +1 (Up) / -1 (Down), tau = 1, and Pr(Same) = 0.8, Pr(Up) = Pr(Down)
    = 0.1 in every period (every row of every transition matrix).
    """
    if order not in ORDERS:
        raise ValidationError(f"order must be one of {ORDERS}")
    stats = _stats(dataset)
    obs = ObservationParams(sigma2) if sigma2 is not None else estimate_sigma2(stats)
    T = stats.design.T
    return ModelParams(obs, MeanLevelParams.constant(T), StateLevelParams.uniform(order, T))


def _observed(loglik, state: StateLevelParams, paths):
    return GenePosteriors.from_log_likelihoods(loglik, state.log_path_prior(paths), paths)


def e_step(stats, params: ModelParams, paths=None, n_jobs=1) -> GenePosteriors:
    """Posterior path probabilities and their state/pairwise marginals."""
    stats = _stats(stats)
    paths = PathSet(stats.design.T) if paths is None else paths
    ll = all_path_log_likelihoods(stats.centered_means, paths, params.obs, params.mean,
                                  stats.design, n_jobs=n_jobs)
    return _observed(ll, params.state, paths)


def m_step_state(posteriors: GenePosteriors, order, previous=None) -> StateLevelParams:
    """Posterior averages over genes (exact maximiser for the state level).

    Transition rows that receive no posterior mass keep their previous value
    (or a uniform row when there is none).
    """
    if posteriors.G == 0:
        raise ValidationError("empty gene set")
    T = posteriors.paths.T
    if order == "zero":
        return StateLevelParams("zero", T, marginals=posteriors.state_marginals.mean(axis=0))
    if order == "full":
        return StateLevelParams("full", T, path_probs=posteriors.path_probs.mean(axis=0))
    if order != "first":
        raise ValidationError(f"order must be one of {ORDERS}")
    initial = posteriors.state_marginals[:, 0].mean(axis=0)
    joint = posteriors.pairwise_marginals.mean(axis=0)
    rows = joint.sum(axis=2, keepdims=True)
    if previous is not None and previous.order == "first":
        fallback = previous.transitions
    else:
        fallback = np.full((T - 2, 3, 3), 1.0 / 3.0)
    with np.errstate(invalid="ignore", divide="ignore"):
        trans = np.where(rows > 0, joint / rows, fallback)
    return StateLevelParams("first", T, initial=initial, transitions=trans)


# -- mean level -------------------------------------------------------------

def _log_pair_density(d, v, eta, tau, direction):
    """log density of an adjacent-mean difference under one state.

    The difference is ``delta + e`` with ``e ~ N(0, v)`` and ``delta`` either
    zero or truncated Normal(eta, tau^2).
    """
    if direction == SAME:
        return -0.5 * (d * d / v + np.log(v) + _LOG_2PI)
    t2 = tau * tau
    tot = t2 + v
    r = d - eta
    base = -0.5 * (r * r / tot + np.log(tot) + _LOG_2PI)
    m = (eta * v + d * t2) / tot
    s = np.sqrt(t2 * v / tot)
    sign = 1.0 if direction == UP else -1.0
    return base + special.log_ndtr(sign * m / s) - special.log_ndtr(sign * eta / tau)


def _period_data(stats, period):
    d = stats.means[:, period + 1] - stats.means[:, period]
    n = stats.design.n
    return d, 1.0 / n[period] + 1.0 / n[period + 1]


def mean_objective(stats, posteriors: GenePosteriors, params: ModelParams, period) -> float:
    """Weighted pairwise objective for one period (log scale)."""
    stats = _stats(stats)
    d, c = _period_data(stats, period)
    v = params.obs.sigma2 * c
    w = posteriors.state_marginals[:, period]
    return _objective_value(d, v, w, params.mean, period)


def _objective_value(d, v, w, mean, period):
    with np.errstate(divide="ignore"):
        terms = [np.log(w[:, SAME]) + _log_pair_density(d, v, 0.0, 1.0, SAME)]
        for direction in (UP, DOWN):
            e, t = mean.get(period, direction)
            terms.append(np.log(w[:, direction]) + _log_pair_density(d, v, e, t, direction))
    total = np.logaddexp(np.logaddexp(terms[0], terms[1]), terms[2])
    return float(np.sum(total[np.isfinite(total)]))


def m_step_mean(stats, posteriors: GenePosteriors, current_params: ModelParams) -> MeanLevelParams:
    """Update (eta, tau) of every (period, direction) cell.

    Maximises the weighted pairwise objective cell by cell from the current
    values with a bounded L-BFGS-B search; an update is kept only if it does
    not lower the objective.  Cells whose total posterior weight is below
    ``1e-6 * G`` are left unchanged.
    """
    stats = _stats(stats)
    mean = current_params.mean
    G = stats.G
    for period in range(stats.design.T - 1):
        d, c = _period_data(stats, period)
        v = current_params.obs.sigma2 * c
        w = posteriors.state_marginals[:, period]
        with np.errstate(divide="ignore"):
            log_w = np.log(w)
        for direction in (UP, DOWN):
            if w[:, direction].sum() < 1e-6 * G:
                continue
            other = DOWN if direction == UP else UP
            eo, to = mean.get(period, other)
            with np.errstate(divide="ignore"):
                fixed = np.logaddexp(log_w[:, SAME] + _log_pair_density(d, v, 0.0, 1.0, SAME),
                                     log_w[:, other] + _log_pair_density(d, v, eo, to, other))
            lw = log_w[:, direction]

            def negobj(x):
                dens = lw + _log_pair_density(d, v, x[0], np.exp(x[1]), direction)
                tot = np.logaddexp(fixed, dens)
                return -np.sum(tot[np.isfinite(tot)])

            e0, t0 = mean.get(period, direction)
            x0 = np.array([np.clip(e0, *ETA_BOUNDS), np.log(np.clip(t0, *TAU_BOUNDS))])
            f0 = negobj(x0)
            res = optimize.minimize(negobj, x0, method="L-BFGS-B",
                                    bounds=[ETA_BOUNDS, _LOG_TAU_BOUNDS])
            if np.isfinite(res.fun) and res.fun <= f0:
                mean = mean.with_cell(period, direction, float(res.x[0]), float(np.exp(res.x[1])))
    return mean


@dataclass(frozen=True)
class IncrementStats:
    """Posterior-weighted sums over genes for every (period, direction) cell.

    ``weight`` is sum_g Pr(cell active | x_g); ``first``/``second`` are the
    sums of E[delta] and E[delta^2] over the same posterior.  Shape (T-1, 2).
    """

    weight: np.ndarray
    first: np.ndarray
    second: np.ndarray


def increment_stats(posteriors: GenePosteriors, terms, n_periods) -> IncrementStats:
    W = np.zeros((n_periods, 2))
    S1 = np.zeros((n_periods, 2))
    S2 = np.zeros((n_periods, 2))
    for j, (active, cols, e1, e2) in enumerate(terms):
        w = posteriors.path_probs[:, j]
        for k, (p, c) in enumerate(zip(active, cols)):
            W[p, c] += w.sum()
            S1[p, c] += w @ e1[:, k]
            S2[p, c] += w @ e2[:, k]
    return IncrementStats(W, S1, S2)


def _expected_increment_loglik(x, W, S1, S2, sign):
    eta, log_tau = x
    tau = np.exp(log_tau)
    quad = (S2 - 2.0 * eta * S1 + W * eta * eta) / (2.0 * tau * tau)
    return -quad - W * log_tau - W * special.log_ndtr(sign * eta / tau)


def m_step_mean_exact(suff: IncrementStats, current: MeanLevelParams, G) -> MeanLevelParams:
    """Maximise the expected complete-data log-likelihood of the increments.

    The objective separates over cells; each is a smooth 2-D problem in
    (eta, log tau) solved by L-BFGS-B from the current value.  A cell is
    updated only if its objective does not decrease, and skipped when its
    posterior weight is below ``1e-6 * G``.
    """
    eta = current.eta.copy()
    tau = current.tau.copy()
    for p in range(eta.shape[0]):
        for c, sign in ((0, 1.0), (1, -1.0)):
            W, S1, S2 = suff.weight[p, c], suff.first[p, c], suff.second[p, c]
            if W < 1e-6 * G:
                continue

            def neg(x):
                return -_expected_increment_loglik(x, W, S1, S2, sign)

            x0 = np.array([np.clip(eta[p, c], *ETA_BOUNDS),
                           np.log(np.clip(tau[p, c], *TAU_BOUNDS))])
            f0 = neg(x0)
            res = optimize.minimize(neg, x0, method="L-BFGS-B",
                                    bounds=[ETA_BOUNDS, _LOG_TAU_BOUNDS])
            if np.isfinite(res.fun) and res.fun <= f0:
                eta[p, c] = res.x[0]
                tau[p, c] = np.exp(res.x[1])
    return MeanLevelParams(eta, tau)


def observed_log_likelihood(stats, params: ModelParams, n_jobs=1) -> float:
    """sum_g log f(x_g) under ``params`` (centred-model density)."""
    return e_step(stats, params, n_jobs=n_jobs).log_likelihood


def _interp_mean(old: MeanLevelParams, new: MeanLevelParams, frac):
    eta = old.eta + frac * (new.eta - old.eta)
    tau = np.exp(np.log(old.tau) + frac * (np.log(new.tau) - np.log(old.tau)))
    return MeanLevelParams(eta, tau)


def _run_em(stats, params, order, config, paths):
    design = stats.design
    exact = config.mean_update == "exact"

    def evaluate(mean):
        if exact:
            return all_path_increment_moments(stats.centered_means, paths, params.obs, mean,
                                              design, n_jobs=config.n_jobs)
        return all_path_log_likelihoods(stats.centered_means, paths, params.obs, mean,
                                        design, n_jobs=config.n_jobs), None

    L, terms = evaluate(params.mean)
    post = _observed(L, params.state, paths)
    trace = [post.log_likelihood]
    converged = False
    it = 0
    for it in range(1, config.max_iter + 1):
        state = m_step_state(post, order, params.state)
        if exact:
            cand = m_step_mean_exact(increment_stats(post, terms, design.T - 1),
                                     params.mean, stats.G)
        else:
            cand = m_step_mean(stats, post, params)
        # an exact step cannot lower the likelihood beyond rounding; the
        # composite one can, so halve back towards the previous mean level
        accepted = None
        for h in range(config.max_halvings + 1):
            trial = cand if h == 0 else _interp_mean(params.mean, cand, 0.5 ** h)
            Lt, tt = evaluate(trial)
            pt = _observed(Lt, state, paths)
            if pt.log_likelihood >= trace[-1]:
                accepted = (trial, Lt, tt, pt)
                break
        if accepted is None:
            accepted = (params.mean, L, terms, _observed(L, state, paths))
        mean, L, terms, post = accepted
        params = params.replace(state=state, mean=mean)
        ll = post.log_likelihood
        if ll < trace[-1] - config.monotone_slack:
            raise FitError(
                f"observed log-likelihood decreased at iteration {it}: {trace[-1]} -> {ll}")
        prev = trace[-1]
        trace.append(ll)
        logger.debug("iteration %d log-likelihood %.10g", it, ll)
        if abs(ll - prev) <= config.rel_tol * abs(prev):
            converged = True
            break
    return FitReport(params, trace, it, converged, post)


def _perturbed_start(base: ModelParams, order, rng) -> ModelParams:
    T = base.T
    eta = base.mean.eta * np.exp(rng.normal(0.0, 0.3, base.mean.eta.shape))
    tau = base.mean.tau * np.exp(rng.normal(0.0, 0.3, base.mean.tau.shape))
    p_same = float(rng.uniform(0.6, 0.95))
    return ModelParams(base.obs, MeanLevelParams(eta, tau),
                       StateLevelParams.uniform(order, T, p_same))


def fit_model(dataset, order="first", config: FitConfig | None = None,
              init: ModelParams | None = None) -> FitReport:
    """Fit the model by EM.

    sigma^2 is estimated once and held fixed; state-level and mean-level
    parameters alternate with the E-step until the relative change of the
    observed-data log-likelihood drops below ``config.rel_tol``.

    Parameters
    ----------
    dataset : ExpressionDataset or SufficientStats
    order : {"zero", "first", "full"}
    config : FitConfig, optional
    init : ModelParams, optional
        Starting values; defaults to :func:`initialize_params`.
    """
    config = config or FitConfig()
    if order not in ORDERS:
        raise ValidationError(f"order must be one of {ORDERS}")
    stats = _stats(dataset)
    paths = PathSet(stats.design.T)
    start = init if init is not None else initialize_params(stats, order)
    if start.state.order != order:
        raise ValidationError("initial state parameters have a different order")
    best = _run_em(stats, start, order, config, paths)
    if config.multi_start:
        rng = np.random.default_rng(config.seed)
        for _ in range(config.multi_start):
            rep = _run_em(stats, _perturbed_start(start, order, rng), order, config, paths)
            if rep.log_lik_trace[-1] > best.log_lik_trace[-1]:
                best = rep
    return best

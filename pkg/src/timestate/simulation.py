"""Sampling from the model, baseline callers, metrics and the benchmark harness.

Random numbers come from numpy's PCG64 generator, drawn in a fixed order:
state paths, first-time-point means, increments (period by period, Up genes
then Down genes), then the observation noise as one G x sum(n_t) block.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .core import (DOWN, SAME, UP, Design, PathSet, StatePath, compute_sufficient_stats,
                   validate_dataset)
from .em import FitConfig, fit_model
from .gaussian import sample_truncated_normal
from .inference import CallSet, call, encode_states, estimate_fdr, posterior_mean_curve
from .likelihood import all_path_moments
from .params import ModelParams, default_simulation_params

logger = logging.getLogger(__name__)

BASELINE_MEAN = 7.0
BASELINE_SD = 2.0
METHODS = ("first", "zero", "pairwise")


@dataclass(frozen=True)
class SimulationTruth:
    path_index: np.ndarray
    true_means: np.ndarray
    seed: int
    params_used: ModelParams

    @property
    def paths(self) -> PathSet:
        return PathSet(self.params_used.T)

    @property
    def states(self) -> np.ndarray:
        return np.asarray(self.paths.codes)[self.path_index]

    @property
    def true_paths(self) -> list[StatePath]:
        ps = self.paths
        return [ps[i] for i in self.path_index]


def _rng(seed):
    return np.random.Generator(np.random.PCG64(seed))


def simulate_dataset(params: ModelParams, G, design, seed, baseline_mean=BASELINE_MEAN,
                     baseline_sd=BASELINE_SD, gene_prefix="g"):
    """Draw a dataset and its latent truth from the model.

    Returns
    -------
    dataset : ExpressionDataset
    truth : SimulationTruth
    """
    G = int(G)
    if G < 1:
        raise ValueError("G must be at least 1")
    if not isinstance(design, Design):
        design = Design(tuple(design))
    if design.T != params.T:
        raise ValueError(f"design has {design.T} time points, params describe {params.T}")
    rng = _rng(seed)
    paths = PathSet(params.T)
    cum = np.cumsum(params.state.path_prior(paths))
    idx = np.searchsorted(cum / cum[-1], rng.random(G), side="right")
    idx = np.minimum(idx, len(paths) - 1).astype(np.int64)
    states = np.asarray(paths.codes)[idx]

    mu = np.empty((G, params.T))
    mu[:, 0] = rng.normal(baseline_mean, baseline_sd, size=G)
    inc = np.zeros((G, params.T - 1))
    for p in range(params.T - 1):
        for direction in (UP, DOWN):
            sel = np.flatnonzero(states[:, p] == direction)
            if sel.size:
                e, t = params.mean.get(p, direction)
                inc[sel, p] = sample_truncated_normal(rng, e, t, direction == UP, size=sel.size)
    mu[:, 1:] = mu[:, :1] + np.cumsum(inc, axis=1)

    sd = np.sqrt(params.obs.sigma2)
    noise = rng.standard_normal((G, design.n_samples))
    values = mu[:, design.column_times()] + sd * noise
    ids = [f"{gene_prefix}{i + 1}" for i in range(G)]
    return validate_dataset(values, design, ids), SimulationTruth(idx, mu, seed, params)


def pairwise_baseline(dataset, config: FitConfig | None = None) -> CallSet:
    """Call each period separately from a two-time-point fit.

    Every adjacent pair of time points is fitted on its own with the
    zero-order model (same mean-level family, sigma^2 re-estimated from the
    two time points) and the period's state is the marginal posterior mode.
    """
    T = dataset.T
    states = np.empty((dataset.G, T - 1), dtype=np.int64)
    for p in range(T - 1):
        sub = dataset.subset_times([p, p + 1])
        rep = fit_model(sub, "zero", config)
        states[:, p] = np.argmax(rep.posteriors.state_marginals[:, 0], axis=1)
    return CallSet(tuple(dataset.gene_ids), PathSet(T), encode_states(states), "pairwise")


# -- metrics ------------------------------------------------------------------

_PERIOD_METRICS = ("sensitivity", "specificity", "fdr", "mr")


@dataclass
class MetricsReport:
    """Metrics of one or more replications.

    Per-period arrays have shape (R, T-1); ``smr`` has shape (R,).  NaN
    marks a rate with an empty denominator.
    """

    sensitivity: np.ndarray
    specificity: np.ndarray
    fdr: np.ndarray
    mr: np.ndarray
    smr: np.ndarray
    extra: dict = field(default_factory=dict)

    @property
    def replications(self) -> int:
        return self.smr.shape[0]

    @classmethod
    def combine(cls, reports) -> "MetricsReport":
        reports = list(reports)
        kw = {k: np.concatenate([getattr(r, k) for r in reports]) for k in
              _PERIOD_METRICS + ("smr",)}
        keys = set().union(*(r.extra for r in reports)) if reports else set()
        extra = {}
        for k in sorted(keys):
            if all(k in r.extra for r in reports):
                extra[k] = np.concatenate([r.extra[k] for r in reports])
        return cls(**kw, extra=extra)

    def mean(self, name):
        return np.nanmean(self._get(name), axis=0)

    def sd(self, name):
        a = self._get(name)
        if a.shape[0] < 2:
            return np.full(a.shape[1:], np.nan)
        return np.nanstd(a, axis=0, ddof=1)

    def _get(self, name):
        return self.extra[name] if name in self.extra else getattr(self, name)


def _rate(num, den):
    return num / den if den > 0 else np.nan


def evaluate_calls(truth, callset: CallSet) -> MetricsReport:
    """Compare called states with the truth (TDE = Up or Down, TNDE = Same)."""
    true_states = truth.states if isinstance(truth, SimulationTruth) else np.asarray(truth)
    called = callset.states
    if true_states.shape != called.shape:
        raise ValueError("truth and calls cover different genes or time points")
    P = true_states.shape[1]
    sens, spec, fdr, mr = (np.empty((1, P)) for _ in range(4))
    for t in range(P):
        ts, cs = true_states[:, t] != SAME, called[:, t] != SAME
        sens[0, t] = _rate(np.sum(ts & cs), np.sum(ts))
        spec[0, t] = _rate(np.sum(~ts & ~cs), np.sum(~ts))
        fdr[0, t] = _rate(np.sum(~ts & cs), np.sum(cs))
        mr[0, t] = np.mean(true_states[:, t] != called[:, t])
    smr = np.array([np.mean(np.any(true_states != called, axis=1))])
    return MetricsReport(sens, spec, fdr, mr, smr)


def shrinkage_mse(truth: SimulationTruth, stats, curve) -> tuple[float, float]:
    """MSE of posterior-mean and of raw centred sample-mean curves.

    Both estimate the centred latent curve ``mu_t - mu_1`` at t = 2..T.
    """
    target = truth.true_means[:, 1:] - truth.true_means[:, :1]
    raw = stats.centered_means[:, 1:]
    post = curve.mean[:, 1:] - curve.mean[:, :1]
    return float(np.mean((post - target) ** 2)), float(np.mean((raw - target) ** 2))


# -- benchmark ----------------------------------------------------------------

@dataclass
class BenchmarkConfig:
    methods: tuple = METHODS
    replications: int = 10
    G: int = 4000
    design: tuple = (4, 4, 4, 4)
    params: ModelParams = None
    seed: int = 2007
    criterion: str = "mmp"
    fit: FitConfig = field(default_factory=FitConfig)

    def __post_init__(self):
        bad = set(self.methods) - set(METHODS)
        if bad:
            raise ValueError(f"unknown methods {sorted(bad)}; choose from {METHODS}")
        if self.replications < 1:
            raise ValueError("replications must be at least 1")
        if self.params is None:
            self.params = default_simulation_params()


def replication_seed(seed, r) -> int:
    """Independent 64-bit sub-seed of replication ``r``."""
    return int(np.random.SeedSequence([int(seed), int(r)]).generate_state(1, np.uint64)[0])


@dataclass
class BenchmarkResult:
    config: BenchmarkConfig
    reports: dict                # method -> MetricsReport over replications
    seeds: list

    def table(self) -> list[dict]:
        """One row per method; period metrics as ``mean (sd)`` strings."""
        rows = []
        for method in self.config.methods:
            rep = self.reports[method]
            row = {"method": method}
            for name in _PERIOD_METRICS:
                m, s = rep.mean(name), rep.sd(name)
                for t in range(m.shape[0]):
                    row[f"{name}_{t + 2}"] = _fmt(m[t], s[t])
            row["smr"] = _fmt(rep.mean("smr"), rep.sd("smr"))
            rows.append(row)
        return rows


def _fmt(m, s):
    return f"{float(m):.3f} ({float(s):.3f})"


def run_one(method, dataset, truth, config: BenchmarkConfig) -> MetricsReport:
    if method == "pairwise":
        return evaluate_calls(truth, pairwise_baseline(dataset, config.fit))
    rep = fit_model(dataset, method, config.fit)
    calls = estimate_fdr(call(rep.posteriors, config.criterion, dataset.gene_ids),
                         rep.posteriors)
    out = evaluate_calls(truth, calls)
    est = np.array([[np.nan if f is None else f for f in calls.fdr_per_time]])
    stats = compute_sufficient_stats(dataset)
    _, pm, pv = all_path_moments(stats.centered_means, rep.posteriors.paths,
                                 rep.params.obs, rep.params.mean, stats.design)
    curve = posterior_mean_curve(rep.posteriors, pm, pv)
    mse_post, mse_raw = shrinkage_mse(truth, stats, curve)
    out.extra.update(fdr_estimated=est, mse_posterior=np.array([mse_post]),
                     mse_raw=np.array([mse_raw]), iterations=np.array([rep.iterations]))
    return out


def run_benchmark(config: BenchmarkConfig, on_replication=None) -> BenchmarkResult:
    """Simulate ``replications`` datasets and score every method on each.

    ``on_replication(r, seed, {method: MetricsReport})`` is called after each
    replication, e.g. to persist per-replication results.
    """
    per_method = {m: [] for m in config.methods}
    seeds = []
    for r in range(config.replications):
        s = replication_seed(config.seed, r)
        seeds.append(s)
        try:
            ds, truth = simulate_dataset(config.params, config.G, config.design, s)
            res = {m: run_one(m, ds, truth, config) for m in config.methods}
        except Exception as exc:
            raise RuntimeError(f"benchmark replication {r} (seed {s}) failed: {exc}") from exc
        for m, rep in res.items():
            per_method[m].append(rep)
        logger.info("replication %d done", r)
        if on_replication is not None:
            on_replication(r, s, res)
    reports = {m: MetricsReport.combine(v) for m, v in per_method.items()}
    return BenchmarkResult(config, reports, seeds)

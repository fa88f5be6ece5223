"""Decoding of optimal state paths, conditional FDR and path clusters."""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .core import SAME, PathSet

CRITERIA = ("mmp", "mjp")


@dataclass(frozen=True)
class CallSet:
    """Optimal path of every gene under one decoding criterion.

    ``fdr_per_time`` holds one entry per period t = 2..T; an entry is None
    when no gene is called at that period.
    """

    gene_ids: tuple
    paths: PathSet
    path_index: np.ndarray
    criterion: str
    fdr_per_time: tuple = None
    fdr_overall: float = None

    @property
    def G(self) -> int:
        return self.path_index.shape[0]

    @property
    def states(self) -> np.ndarray:
        """(G, T-1) state codes of the optimal paths."""
        return np.asarray(self.paths.codes)[self.path_index]

    @property
    def tde_per_time(self) -> np.ndarray:
        return self.states != SAME

    @property
    def tde(self) -> np.ndarray:
        return self.tde_per_time.any(axis=1)

    @property
    def n_tde(self) -> int:
        return int(self.tde.sum())

    def labels(self) -> list[str]:
        labels = self.paths.labels
        return [labels[i] for i in self.path_index]

    @property
    def clusters(self) -> dict:
        """Path label -> list of gene ids, all genes included."""
        out = {}
        labels = self.paths.labels
        for gid, i in zip(self.gene_ids, self.path_index):
            out.setdefault(labels[i], []).append(gid)
        return out


def _gene_ids(posteriors, gene_ids):
    if gene_ids is None:
        return tuple(f"g{i + 1}" for i in range(posteriors.G))
    gene_ids = tuple(gene_ids)
    if len(gene_ids) != posteriors.G:
        raise ValueError("gene_ids and posteriors differ in length")
    return gene_ids


def encode_states(states) -> np.ndarray:
    """Canonical path index of each row of (G, T-1) state codes."""
    states = np.asarray(states, dtype=np.int64)
    idx = np.zeros(states.shape[0], dtype=np.int64)
    for c in range(states.shape[1]):
        idx = 3 * idx + states[:, c]
    return idx


def call_mmp(posteriors, gene_ids=None) -> CallSet:
    """Maximise the marginal posterior state probability at each time.

    Ties resolve to Same, then Up, then Down (the state-axis order).
    """
    states = np.argmax(posteriors.state_marginals, axis=2)
    return CallSet(_gene_ids(posteriors, gene_ids), posteriors.paths,
                   encode_states(states), "mmp")


def call_mjp(posteriors, gene_ids=None) -> CallSet:
    """Maximise the joint posterior probability of the whole path.

    Ties resolve to the lowest canonical path index.
    """
    idx = np.argmax(posteriors.path_probs, axis=1).astype(np.int64)
    return CallSet(_gene_ids(posteriors, gene_ids), posteriors.paths, idx, "mjp")


def call(posteriors, criterion="mmp", gene_ids=None) -> CallSet:
    if criterion == "mmp":
        return call_mmp(posteriors, gene_ids)
    if criterion == "mjp":
        return call_mjp(posteriors, gene_ids)
    raise ValueError(f"criterion must be one of {CRITERIA}, got {criterion!r}")


def estimate_fdr(callset: CallSet, posteriors) -> CallSet:
    """Attach posterior-based FDR estimates to a call set.

    Per period, the mean of Pr(s_gt = Same | x_g) over genes called at t;
    overall, the mean of Pr(all-Same path | x_g) over genes called anywhere.
    """
    if posteriors.G != callset.G:
        raise ValueError("call set and posteriors describe different genes")
    called = callset.tde_per_time
    p_same = posteriors.prob_same
    per_time = []
    for t in range(called.shape[1]):
        sel = called[:, t]
        per_time.append(float(p_same[sel, t].mean()) if sel.any() else None)
    any_call = callset.tde
    overall = float(posteriors.prob_null_path[any_call].mean()) if any_call.any() else None
    return replace(callset, fdr_per_time=tuple(per_time), fdr_overall=overall)


@dataclass(frozen=True)
class PosteriorCurve:
    """Posterior mean and variance of each gene's centred mean curve."""

    mean: np.ndarray
    var: np.ndarray


def posterior_mean_curve(posteriors, path_means, path_vars) -> PosteriorCurve:
    """Mixture over paths of the path-conditional moments.

    ``path_means``/``path_vars`` have shape (G, P, T), as returned by
    :func:`timestate.likelihood.all_path_moments`.
    """
    w = posteriors.path_probs[:, :, None]
    mean = np.sum(w * path_means, axis=1)
    # law of total variance; written as within + between to avoid cancellation
    between = np.sum(w * (path_means - mean[:, None, :]) ** 2, axis=1)
    within = np.sum(w * path_vars, axis=1)
    var = np.maximum(within + between, 0.0)
    return PosteriorCurve(mean, var)


@dataclass(frozen=True)
class Cluster:
    label: str
    index: int
    gene_ids: tuple
    centered_curve: np.ndarray = None

    @property
    def size(self) -> int:
        return len(self.gene_ids)


def cluster_by_path(callset: CallSet, curve: PosteriorCurve | None = None) -> list[Cluster]:
    """Group genes by optimal path, largest cluster first.

    When ``curve`` is given each cluster also carries the average posterior
    mean curve of its genes, shifted to start at zero.
    """
    order = {}
    for g, i in enumerate(callset.path_index):
        order.setdefault(int(i), []).append(g)
    labels = callset.paths.labels
    out = []
    for i, members in order.items():
        centred = None
        if curve is not None:
            c = curve.mean[members]
            centred = (c - c[:, :1]).mean(axis=0)
        out.append(Cluster(labels[i], i, tuple(callset.gene_ids[g] for g in members), centred))
    out.sort(key=lambda c: (-c.size, c.index))
    return out

"""Domain types: experimental design, expression data, state paths."""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

SAME, UP, DOWN = 0, 1, 2
STATES = (SAME, UP, DOWN)
STATE_SYMBOLS = ("=", "+", "-")
STATE_NAMES = ("same", "up", "down")
START = "start"


class ValidationError(ValueError):
    """Raised when input data or a design is inconsistent."""


@dataclass(frozen=True)
class Design:
    """Replicate layout of a one-group time-course experiment.

    Parameters
    ----------
    replicates : sequence of int
        Number of arrays ``n_t`` at each time point, in time order.
    time_labels : sequence of str, optional
        Names of the time points; defaults to ``t1 .. tT``.
    """

    replicates: tuple[int, ...]
    time_labels: tuple[str, ...] = field(default=None)

    def __post_init__(self):
        reps = tuple(int(n) for n in self.replicates)
        object.__setattr__(self, "replicates", reps)
        if len(reps) < 2:
            raise ValidationError("a design needs at least two time points")
        if min(reps) < 1:
            raise ValidationError("every time point needs at least one replicate")
        if sum(reps) < len(reps) + 1:
            raise ValidationError(
                "sigma^2 is inestimable: no time point has more than one replicate")
        labels = self.time_labels
        if labels is None:
            labels = tuple(f"t{i + 1}" for i in range(len(reps)))
        labels = tuple(str(s) for s in labels)
        if len(labels) != len(reps):
            raise ValidationError("time_labels must have one entry per time point")
        if len(set(labels)) != len(labels):
            raise ValidationError("time labels must be unique")
        object.__setattr__(self, "time_labels", labels)

    @property
    def T(self) -> int:
        return len(self.replicates)

    @property
    def n(self) -> np.ndarray:
        return np.asarray(self.replicates, dtype=float)

    @property
    def n_samples(self) -> int:
        return sum(self.replicates)

    @property
    def df(self) -> int:
        """Within-time-point degrees of freedom per gene."""
        return self.n_samples - self.T

    def column_times(self) -> np.ndarray:
        """Zero-based time index of every column, replicates of a time point adjacent."""
        return np.repeat(np.arange(self.T), self.replicates)

    def slices(self) -> list[slice]:
        edges = np.concatenate([[0], np.cumsum(self.replicates)])
        return [slice(int(a), int(b)) for a, b in zip(edges[:-1], edges[1:])]

    def subset(self, times: Sequence[int]) -> "Design":
        """Design restricted to the given zero-based time points."""
        return Design(tuple(self.replicates[t] for t in times),
                      tuple(self.time_labels[t] for t in times))


@dataclass(frozen=True)
class ExpressionDataset:
    """A validated G x sum(n_t) matrix of log2 expression values.

    Columns are grouped by time point (all replicates of time 1, then time
    2, ...).  Construct through :func:`validate_dataset`.
    """

    design: Design
    gene_ids: tuple[str, ...]
    values: np.ndarray

    @property
    def G(self) -> int:
        return self.values.shape[0]

    @property
    def T(self) -> int:
        return self.design.T

    def subset_times(self, times: Sequence[int]) -> "ExpressionDataset":
        cols = np.concatenate([np.arange(self.design.n_samples)[s]
                               for s in (self.design.slices()[t] for t in times)])
        return validate_dataset(self.values[:, cols], self.design.subset(times),
                                self.gene_ids)

    def subset_genes(self, rows) -> "ExpressionDataset":
        rows = np.asarray(rows)
        ids = tuple(np.asarray(self.gene_ids, dtype=object)[rows])
        return validate_dataset(self.values[rows], self.design, ids)


def validate_dataset(raw_matrix, design, gene_ids=None) -> ExpressionDataset:
    """Check a raw matrix against a design and wrap it.

    Parameters
    ----------
    raw_matrix : array-like of shape (G, sum(n_t))
        Columns grouped by time point.
    design : Design or sequence of int
        Replicate counts per time point.
    gene_ids : sequence of str, optional
        Defaults to ``g1 .. gG``.

    Raises
    ------
    ValidationError
        On dimension mismatch, non-finite values (the message names the gene
        and column), duplicate gene ids or an unreplicated design.
    """
    if not isinstance(design, Design):
        design = Design(tuple(design))
    values = np.array(raw_matrix, dtype=float, copy=True)
    if values.ndim != 2:
        raise ValidationError(f"expected a 2-d matrix, got {values.ndim} dimensions")
    G, N = values.shape
    if N != design.n_samples:
        raise ValidationError(
            f"matrix has {N} columns but the design has {design.n_samples} samples")
    if G < 1:
        raise ValidationError("dataset has no genes")
    if gene_ids is None:
        gene_ids = tuple(f"g{i + 1}" for i in range(G))
    gene_ids = tuple(str(g) for g in gene_ids)
    if len(gene_ids) != G:
        raise ValidationError(f"{len(gene_ids)} gene ids for {G} rows")
    if len(set(gene_ids)) != G:
        seen = set()
        dup = next(g for g in gene_ids if g in seen or seen.add(g))
        raise ValidationError(f"duplicate gene id {dup!r}")
    bad = ~np.isfinite(values)
    if bad.any():
        r, c = np.argwhere(bad)[0]
        raise ValidationError(
            f"non-finite value {values[r, c]!r} for gene {gene_ids[r]!r} at column {c}")
    values.setflags(write=False)
    return ExpressionDataset(design, gene_ids, values)


@dataclass(frozen=True)
class StatePath:
    """Direction of change over the T-1 periods after the start.

    ``codes[i]`` is the state of time point ``i + 2`` (SAME, UP or DOWN);
    time point 1 is always ``start``.
    """

    codes: tuple[int, ...]

    def __post_init__(self):
        codes = tuple(int(c) for c in self.codes)
        if not codes or any(c not in STATES for c in codes):
            raise ValidationError(f"invalid state codes {self.codes!r}")
        object.__setattr__(self, "codes", codes)

    @property
    def T(self) -> int:
        return len(self.codes) + 1

    @property
    def states(self) -> tuple[str, ...]:
        return (START,) + tuple(STATE_SYMBOLS[c] for c in self.codes)

    @property
    def n_changes(self) -> int:
        return sum(c != SAME for c in self.codes)

    @property
    def label(self) -> str:
        return ",".join(self.states)

    @classmethod
    def from_label(cls, label: str) -> "StatePath":
        parts = [p.strip() for p in label.split(",")]
        if not parts or parts[0] != START:
            raise ValidationError(f"path label must begin with {START!r}: {label!r}")
        try:
            return cls(tuple(STATE_SYMBOLS.index(p) for p in parts[1:]))
        except ValueError:
            raise ValidationError(f"unknown state symbol in {label!r}") from None

    def index(self) -> int:
        """Canonical base-3 index (most significant digit at time 2)."""
        idx = 0
        for c in self.codes:
            idx = 3 * idx + c
        return idx

    def __str__(self):
        return self.label


class PathSet:
    """All 3^(T-1) state paths in canonical order.

    Index ``i`` written in base 3 with T-1 digits gives the codes of the
    path, most significant digit first, with SAME=0, UP=1, DOWN=2.
    """

    def __init__(self, T: int):
        if T < 2:
            raise ValidationError("need at least two time points")
        self.T = int(T)
        codes = np.array(list(itertools.product(STATES, repeat=self.T - 1)), dtype=np.int8)
        codes.setflags(write=False)
        self.codes = codes

    def __len__(self):
        return self.codes.shape[0]

    def __getitem__(self, i) -> StatePath:
        return StatePath(tuple(self.codes[i]))

    def __iter__(self):
        return (self[i] for i in range(len(self)))

    def index(self, path: StatePath) -> int:
        if path.T != self.T:
            raise ValidationError(f"path of length {path.T} in a PathSet for T={self.T}")
        return path.index()

    @property
    def labels(self) -> list[str]:
        return [p.label for p in self]

    @property
    def null_index(self) -> int:
        """Index of the all-Same path."""
        return 0

    def onehot(self) -> np.ndarray:
        """(P, T-1, 3) indicator of the state of each path at each period."""
        return np.eye(3)[self.codes]


def enumerate_state_paths(T: int) -> PathSet:
    """Enumerate every state path for T time points."""
    return PathSet(T)


@dataclass(frozen=True)
class SufficientStats:
    """Per-gene time-point means and the pooled within-time sum of squares."""

    design: Design
    means: np.ndarray
    pooled_ss: float
    centered_means: np.ndarray

    @property
    def G(self) -> int:
        return self.means.shape[0]


def compute_sufficient_stats(dataset: ExpressionDataset) -> SufficientStats:
    """Sample means per time point, pooled SS and first-time-centred means."""
    values = dataset.values
    means = np.column_stack([values[:, s].mean(axis=1) for s in dataset.design.slices()])
    ss = 0.0
    for t, s in enumerate(dataset.design.slices()):
        ss += float(np.sum((values[:, s] - means[:, t:t + 1]) ** 2))
    centered = means - means[:, :1]
    centered[:, 0] = 0.0
    means.setflags(write=False)
    centered.setflags(write=False)
    return SufficientStats(dataset.design, means, ss, centered)

"""Parameter containers for the three levels of the model."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import DOWN, SAME, UP, PathSet, StatePath, ValidationError

ORDERS = ("zero", "first", "full")

_NORM_TOL = 1e-6


def _normalise(p, what):
    p = np.array(p, dtype=float)
    if np.any(p < -1e-12) or not np.all(np.isfinite(p)):
        raise ValidationError(f"{what}: probabilities must be finite and non-negative")
    p = np.clip(p, 0.0, None)
    s = p.sum(axis=-1, keepdims=True)
    if np.any(np.abs(s - 1.0) > _NORM_TOL):
        raise ValidationError(f"{what}: probabilities must sum to one")
    return p / s


@dataclass(frozen=True)
class ObservationParams:
    """Common observation variance of every array."""

    sigma2: float

    def __post_init__(self):
        s = float(self.sigma2)
        if not np.isfinite(s) or s <= 0:
            raise ValidationError(f"sigma2 must be positive, got {self.sigma2!r}")
        object.__setattr__(self, "sigma2", s)


@dataclass(frozen=True)
class MeanLevelParams:
    """Truncated-Normal increment distributions, one per period and direction.

    ``eta[p, 0]``/``tau[p, 0]`` are the location and scale of the pre-truncation
    Normal for an upward change over period ``p`` (time ``p+1`` to ``p+2``,
    zero based), truncated to (0, inf); column 1 holds the downward change,
    truncated to (-inf, 0).
    """

    eta: np.ndarray
    tau: np.ndarray

    def __post_init__(self):
        eta = np.array(self.eta, dtype=float)
        tau = np.array(self.tau, dtype=float)
        if eta.ndim != 2 or eta.shape[1] != 2 or eta.shape != tau.shape:
            raise ValidationError("eta and tau must both have shape (T-1, 2)")
        if not (np.all(np.isfinite(eta)) and np.all(np.isfinite(tau))):
            raise ValidationError("mean-level parameters must be finite")
        if np.any(tau <= 0):
            raise ValidationError("tau must be positive")
        eta.setflags(write=False)
        tau.setflags(write=False)
        object.__setattr__(self, "eta", eta)
        object.__setattr__(self, "tau", tau)

    @property
    def n_periods(self) -> int:
        return self.eta.shape[0]

    @classmethod
    def constant(cls, T, eta_up=1.0, tau_up=1.0, eta_down=-1.0, tau_down=1.0):
        eta = np.tile([eta_up, eta_down], (T - 1, 1))
        tau = np.tile([tau_up, tau_down], (T - 1, 1))
        return cls(eta, tau)

    def with_cell(self, period, direction, eta, tau) -> "MeanLevelParams":
        """Copy with one (period, direction) cell replaced; direction is UP/DOWN."""
        e = self.eta.copy()
        t = self.tau.copy()
        col = 0 if direction == UP else 1
        e[period, col] = eta
        t[period, col] = tau
        return MeanLevelParams(e, t)

    def get(self, period, direction):
        col = 0 if direction == UP else 1
        return float(self.eta[period, col]), float(self.tau[period, col])


@dataclass(frozen=True)
class StateLevelParams:
    """Prior over state paths for a Markov order of zero, one or 'full'.

    Index 0/1/2 of every probability axis is Same/Up/Down.

    * ``zero``: ``marginals`` of shape (T-1, 3), independent periods.
    * ``first``: ``initial`` (3,) for time 2 and ``transitions`` of shape
      (T-2, 3, 3), row = previous state.
    * ``full``: ``path_probs`` over the canonical :class:`PathSet`.
    """

    order: str
    T: int
    marginals: np.ndarray = None
    initial: np.ndarray = None
    transitions: np.ndarray = None
    path_probs: np.ndarray = None

    def __post_init__(self):
        if self.order not in ORDERS:
            raise ValidationError(f"order must be one of {ORDERS}, got {self.order!r}")
        T = int(self.T)
        object.__setattr__(self, "T", T)
        if self.order == "zero":
            m = _normalise(self.marginals, "marginals")
            if m.shape != (T - 1, 3):
                raise ValidationError(f"zero-order marginals need shape ({T - 1}, 3)")
            object.__setattr__(self, "marginals", m)
        elif self.order == "first":
            if self.initial is None or (T > 2 and self.transitions is None):
                raise ValidationError("first-order parameters need initial and transitions")
            init = _normalise(self.initial, "initial")
            trans = _normalise(np.reshape(self.transitions, (-1, 3, 3)) if T > 2
                               else np.zeros((0, 3, 3)), "transitions")
            if init.shape != (3,) or trans.shape != (T - 2, 3, 3):
                raise ValidationError(
                    f"first-order parameters need shapes (3,) and ({T - 2}, 3, 3)")
            object.__setattr__(self, "initial", init)
            object.__setattr__(self, "transitions", trans)
        else:
            p = _normalise(self.path_probs, "path_probs")
            if p.shape != (3 ** (T - 1),):
                raise ValidationError(f"full-order prior needs {3 ** (T - 1)} entries")
            object.__setattr__(self, "path_probs", p)

    @classmethod
    def uniform(cls, order, T, p_same=0.8):
        """Every period: Pr(Same) = p_same, the remainder split evenly."""
        q = (1.0 - p_same) / 2.0
        row = np.array([p_same, q, q])
        if order == "zero":
            return cls("zero", T, marginals=np.tile(row, (T - 1, 1)))
        if order == "first":
            return cls("first", T, initial=row, transitions=np.tile(row, (T - 2, 3, 1)))
        probs = np.prod(row[PathSet(T).codes], axis=1)
        return cls("full", T, path_probs=probs)

    def path_prior(self, paths: PathSet | None = None) -> np.ndarray:
        """Prior probability of every path in canonical order."""
        paths = PathSet(self.T) if paths is None else paths
        codes = paths.codes
        if self.order == "zero":
            return np.prod(self.marginals[np.arange(self.T - 1), codes], axis=1)
        if self.order == "first":
            p = self.initial[codes[:, 0]].copy()
            for t in range(self.T - 2):
                p *= self.transitions[t, codes[:, t], codes[:, t + 1]]
            return p
        return self.path_probs.copy()

    def log_path_prior(self, paths: PathSet | None = None) -> np.ndarray:
        with np.errstate(divide="ignore"):
            return np.log(self.path_prior(paths))

    def to_dict(self) -> dict:
        d = {"order": self.order, "T": self.T}
        if self.order == "zero":
            d["marginals"] = self.marginals.tolist()
        elif self.order == "first":
            d["initial"] = self.initial.tolist()
            d["transitions"] = self.transitions.tolist()
        else:
            d["path_probs"] = self.path_probs.tolist()
        return d

    @classmethod
    def from_dict(cls, d) -> "StateLevelParams":
        return cls(d["order"], d["T"], marginals=d.get("marginals"),
                   initial=d.get("initial"), transitions=d.get("transitions"),
                   path_probs=d.get("path_probs"))


def prior_path_probability(path: StatePath, state_params: StateLevelParams) -> float:
    """Pr(s_g = path) under the state-level prior."""
    if path.T != state_params.T:
        raise ValidationError(
            f"path has {path.T} time points, state parameters describe {state_params.T}")
    paths = PathSet(state_params.T)
    return float(state_params.path_prior(paths)[path.index()])


@dataclass(frozen=True)
class ModelParams:
    """Everything shared by all genes: observation, mean and state levels."""

    obs: ObservationParams
    mean: MeanLevelParams
    state: StateLevelParams

    def __post_init__(self):
        if self.mean.n_periods != self.state.T - 1:
            raise ValidationError("mean-level and state-level parameters disagree on T")

    @property
    def T(self) -> int:
        return self.state.T

    def replace(self, **kw) -> "ModelParams":
        d = {"obs": self.obs, "mean": self.mean, "state": self.state}
        d.update(kw)
        return ModelParams(**d)

    def to_dict(self) -> dict:
        return {
            "sigma2": self.obs.sigma2,
            "eta": self.mean.eta.tolist(),
            "tau": self.mean.tau.tolist(),
            "state": self.state.to_dict(),
        }

    @classmethod
    def from_dict(cls, d) -> "ModelParams":
        return cls(ObservationParams(d["sigma2"]),
                   MeanLevelParams(d["eta"], d["tau"]),
                   StateLevelParams.from_dict(d["state"]))


def _reference_state():
    # Axis order (=, +, -).
    initial = [0.88, 0.04, 0.08]
    d8_d15 = [[1.00, 0.00, 0.00],
              [0.23, 0.09, 0.68],
              [0.28, 0.72, 0.00]]
    d15_imm = [[1.00, 0.00, 0.00],
               [0.51, 0.33, 0.16],
               [0.82, 0.00, 0.18]]
    return StateLevelParams("first", 4, initial=initial, transitions=[d8_d15, d15_imm])


#: First-order state parameters of a four-time-point immune-response study.
REFERENCE_STATE = _reference_state()

#: Default simulation setting on the log2 scale.
DEFAULT_SIM_SIGMA = 0.35
DEFAULT_SIM_ETA = 1.2
DEFAULT_SIM_TAU = 0.6


def default_simulation_params(state: StateLevelParams = REFERENCE_STATE) -> ModelParams:
    mean = MeanLevelParams.constant(state.T, DEFAULT_SIM_ETA, DEFAULT_SIM_TAU,
                                    -DEFAULT_SIM_ETA, DEFAULT_SIM_TAU)
    return ModelParams(ObservationParams(DEFAULT_SIM_SIGMA ** 2), mean, state)


__all__ = [
    "ORDERS", "ObservationParams", "MeanLevelParams", "StateLevelParams",
    "ModelParams", "prior_path_probability", "REFERENCE_STATE",
    "default_simulation_params", "SAME", "UP", "DOWN",
]

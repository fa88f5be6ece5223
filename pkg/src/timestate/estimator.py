"""scikit-learn style front end."""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_array, check_is_fitted

from .core import Design, ExpressionDataset, compute_sufficient_stats, validate_dataset
from .em import FitConfig, e_step, fit_model
from .inference import call, cluster_by_path, estimate_fdr, posterior_mean_curve
from .likelihood import all_path_moments


class HierarchicalStateSpaceModel(BaseEstimator, TransformerMixin):
    """Empirical Bayes state-path model for short expression time courses.

    Parameters
    ----------
    replicates : tuple of int
        Replicates per time point; columns of ``X`` are grouped by time point.
    order : {"zero", "first", "full"}
        Markov order of the state-path prior.
    criterion : {"mmp", "mjp"}
        Decoding rule used by :meth:`predict`.
    max_iter, tol : EM iteration cap and relative log-likelihood tolerance.
    n_jobs : threads for the E-step.
    multi_start : extra randomly perturbed EM starts.
    random_state : seed for the perturbed starts.
    mean_update : {"exact", "pairwise"}

    Attributes
    ----------
    params_ : ModelParams
    posteriors_ : GenePosteriors of the training genes
    log_lik_trace_ : list of float
    n_iter_ : int
    converged_ : bool
    """

    def __init__(self, replicates=(4, 4, 4, 4), order="first", criterion="mmp", max_iter=500,
                 tol=1e-6, n_jobs=1, multi_start=0, random_state=0, mean_update="exact"):
        self.replicates = replicates
        self.order = order
        self.criterion = criterion
        self.max_iter = max_iter
        self.tol = tol
        self.n_jobs = n_jobs
        self.multi_start = multi_start
        self.random_state = random_state
        self.mean_update = mean_update

    def _dataset(self, X):
        if isinstance(X, ExpressionDataset):
            if tuple(X.design.replicates) != tuple(self.replicates):
                raise ValueError("dataset design differs from the estimator's replicates")
            return X
        X = check_array(X, dtype=float, ensure_all_finite=True)
        return validate_dataset(X, Design(tuple(self.replicates)))

    def _config(self):
        seed = 0 if self.random_state is None else int(self.random_state)
        return FitConfig(max_iter=self.max_iter, rel_tol=self.tol, n_jobs=self.n_jobs,
                         multi_start=self.multi_start, seed=seed,
                         mean_update=self.mean_update)

    def fit(self, X, y=None):
        ds = self._dataset(X)
        rep = fit_model(ds, self.order, self._config())
        self.params_ = rep.params
        self.posteriors_ = rep.posteriors
        self.log_lik_trace_ = list(rep.log_lik_trace)
        self.n_iter_ = rep.iterations
        self.converged_ = rep.converged
        self.n_features_in_ = ds.design.n_samples
        return self

    def _posteriors(self, X):
        check_is_fitted(self, "params_")
        ds = self._dataset(X)
        stats = compute_sufficient_stats(ds)
        return ds, stats, e_step(stats, self.params_, n_jobs=self.n_jobs)

    def predict_proba(self, X):
        """(G, P) posterior path probabilities in canonical path order."""
        return self._posteriors(X)[2].path_probs

    def predict(self, X):
        """Canonical index of each gene's optimal path."""
        ds, _, post = self._posteriors(X)
        return call(post, self.criterion, ds.gene_ids).path_index

    def call(self, X, with_fdr=True):
        ds, _, post = self._posteriors(X)
        cs = call(post, self.criterion, ds.gene_ids)
        return estimate_fdr(cs, post) if with_fdr else cs

    def transform(self, X):
        """Posterior mean curves on the input scale, shape (G, T)."""
        ds, stats, post = self._posteriors(X)
        _, pm, pv = all_path_moments(stats.centered_means, post.paths, self.params_.obs,
                                     self.params_.mean, stats.design)
        curve = posterior_mean_curve(post, pm, pv)
        # centred at the first sample mean; shift back
        return curve.mean + stats.means[:, :1]

    def clusters(self, X):
        ds, stats, post = self._posteriors(X)
        _, pm, pv = all_path_moments(stats.centered_means, post.paths, self.params_.obs,
                                     self.params_.mean, stats.design)
        cs = call(post, self.criterion, ds.gene_ids)
        return cluster_by_path(cs, posterior_mean_curve(post, pm, pv))

    def score(self, X, y=None):
        """Mean per-gene log marginal likelihood."""
        return float(np.mean(self._posteriors(X)[2].log_marginal))

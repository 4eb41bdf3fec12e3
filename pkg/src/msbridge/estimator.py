"""Scikit-learn style front end over the snapshot -> solve -> predict pipeline.

``BridgeEstimator`` is a thin stateful wrapper: ``fit`` ingests a profile
dataset (or a manifest path), assembles the structured marginal problem and
runs the scaling iteration; ``predict`` evaluates displacement interpolation
at (core, time) queries.  All heavy lifting lives in the functional modules;
this class only holds parameters and the fitted solution, so ``get_params``,
``set_params`` and ``clone`` behave the standard way.
"""

from __future__ import annotations

import warnings

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.exceptions import NotFittedError

from .ingest import ProfileDataset, assemble_problem, load_profiles
from .metrics import wasserstein2
from .predict import PredictedDistribution, interpolate
from .sinkhorn import SolverConfig, feasibility_residuals, solve


class BridgeEstimator(BaseEstimator):
    """Fits a structured entropic bridge to profile snapshots.

    Parameters mirror the CLI flags: ``structure`` is one of ``"path"``,
    ``"bc"``/``"barycentric"``, ``"sp"``/``"series_parallel"``; ``times`` is
    the strictly increasing snapshot grid; ``n0`` is the phantom-marginal
    support size (barycentric only).  ``fit`` accepts a ``ProfileDataset`` or
    anything ``load_profiles`` takes (manifest path or dataset directory).

    Fitted attributes: ``solution_``, ``structure_``, ``times_``,
    ``n_iter_``, ``converged_``, ``feasibility_``.
    """

    def __init__(self, structure="path", times=None, epsilon=0.05,
                 tolerance=1e-10, max_iterations=1000, n0=None, seed=0,
                 normalize=True, strict=False):
        self.structure = structure
        self.times = times
        self.epsilon = epsilon
        self.tolerance = tolerance
        self.max_iterations = max_iterations
        self.n0 = n0
        self.seed = seed
        self.normalize = normalize
        self.strict = strict

    def fit(self, X, y=None):
        dataset = X if isinstance(X, ProfileDataset) else load_profiles(X)
        if self.times is None:
            raise ValueError("times must be set before fitting")
        times = np.asarray(self.times, dtype=np.float64)
        structure, marginals = assemble_problem(
            dataset, self.structure, times, n0=self.n0, seed=self.seed,
            strict=self.strict, normalize=self.normalize)
        config = SolverConfig(epsilon=self.epsilon, tolerance=self.tolerance,
                              max_iterations=self.max_iterations)
        solution = solve(structure, marginals, config)
        if not solution.converged:
            warnings.warn(
                f"scaling iteration stopped after {solution.iterations} sweeps "
                f"above tolerance {self.tolerance:g}", RuntimeWarning,
                stacklevel=2)
        self.solution_ = solution
        self.structure_ = structure
        self.times_ = times
        self.n_iter_ = solution.iterations
        self.converged_ = solution.converged
        self.feasibility_ = feasibility_residuals(solution)
        return self

    def _check_fitted(self):
        if not hasattr(self, "solution_"):
            raise NotFittedError(
                "this BridgeEstimator is not fitted yet; call fit first")

    @staticmethod
    def _queries(X) -> np.ndarray:
        arr = np.asarray(X, dtype=np.float64)
        if arr.ndim != 2 or arr.shape[1] != 2:
            raise ValueError(
                "queries must be an (m, 2) array of [core, time] rows")
        return arr

    def predict(self, X) -> list[PredictedDistribution]:
        """Interpolated distribution for each ``[core, time]`` row of ``X``."""
        self._check_fitted()
        return [interpolate(self.solution_, int(core), tau, self.times_)
                for core, tau in self._queries(X)]

    def predict_mean(self, X) -> np.ndarray:
        """Means of the predicted distributions, one row per query."""
        return np.array([p.weights @ p.points for p in self.predict(X)])

    def score(self, X, y) -> float:
        """Negative mean 2-Wasserstein distance to held-out marginals ``y``."""
        predictions = self.predict(X)
        if len(y) != len(predictions):
            raise ValueError(
                f"got {len(predictions)} queries but {len(y)} reference marginals")
        distances = [wasserstein2(pred.as_marginal(), ref)
                     for pred, ref in zip(predictions, y)]
        return -float(np.mean(distances))

"""scikit-learn style wrappers around the GRAPE runner and the trap certifier.

Rows of ``X`` are piecewise-constant controls with ``D`` amplitudes on
``[0, T]``.  Constructor arguments are stored untouched (``get_params`` and
``set_params`` come from :class:`sklearn.base.BaseEstimator`) and validated
in ``fit``.
"""
from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from .dynamics import Propagator
from .dyson import AnalyticControl
from .grape import GrapeConfig, grape_batch, grape_from_controls
from .landscape import certify_trap_order, variation
from .model import InitialState
from .validation import check_controls, check_observable, check_system

__all__ = ["GrapeOptimizer", "TrapCertifier"]


class GrapeOptimizer(BaseEstimator):
    """Fixed-step GRAPE ascent.

    ``fit()`` without ``X`` draws ``n_runs`` random initial controls from the
    seeded generator; ``fit(X)`` starts one run from each row of ``X``.
    ``predict(X)`` returns the objective value of each control.

    Attributes
    ----------
    controls_ : ndarray of shape (n_runs, D)
        Final controls.
    objectives_ : ndarray of shape (n_runs,)
    n_iter_ : ndarray of shape (n_runs,)
    succeeded_ : ndarray of bool
    n_fail_ : int
    summary_ : BatchSummary or None
        Set when the initial controls were drawn randomly.
    """

    def __init__(self, system="S2", observable=1.0, l=1.0, eps=0.2, K_stop=1000, I_err=1e-5,
                 T=10.0, D=200, shift=0.0, seed=0, n_runs=100, exact_gradient=False, threads=None):
        self.system = system
        self.observable = observable
        self.l = l
        self.eps = eps
        self.K_stop = K_stop
        self.I_err = I_err
        self.T = T
        self.D = D
        self.shift = shift
        self.seed = seed
        self.n_runs = n_runs
        self.exact_gradient = exact_gradient
        self.threads = threads

    def _config(self) -> GrapeConfig:
        return GrapeConfig(l=self.l, eps=self.eps, K_stop=self.K_stop, I_err=self.I_err, T=self.T,
                           D=self.D, shift=self.shift, seed=self.seed, exact_gradient=self.exact_gradient)

    def fit(self, X=None, y=None):
        sys_ = check_system(self.system)
        obs = check_observable(self.observable)
        cfg = self._config()
        init = InitialState()
        if X is None:
            if int(self.n_runs) < 1:
                raise ValueError("n_runs must be >= 1")
            self.summary_ = grape_batch(sys_, obs, init, cfg, int(self.n_runs), threads=self.threads,
                                        keep_controls=True)
            records = self.summary_.records
        else:
            X = check_controls(X, cfg.D)
            self.summary_ = None
            records = grape_from_controls(sys_, obs, init, cfg, X)
        self.system_, self.observable_ = sys_, obs
        self.controls_ = np.array([r.final_control for r in records])
        self.objectives_ = np.array([r.final_objective for r in records])
        self.initial_objectives_ = np.array([r.initial_objective for r in records])
        self.n_iter_ = np.array([r.iterations for r in records])
        self.succeeded_ = np.array([r.succeeded for r in records])
        self.n_fail_ = int((~self.succeeded_).sum())
        self.n_features_in_ = cfg.D
        return self

    def predict(self, X) -> np.ndarray:
        """Objective value ``J`` of each row of ``X``."""
        check_is_fitted(self, "controls_")
        X = check_controls(X, self.n_features_in_)
        prop = Propagator(self.system_, self.observable_, InitialState(), self.T, self.n_features_in_)
        return np.asarray(prop.objective(X), dtype=float)

    def score(self, X, y=None) -> float:
        """Mean objective value over the rows of ``X``."""
        return float(np.mean(self.predict(X)))


class TrapCertifier(TransformerMixin, BaseEstimator):
    """Trap-order certification at zero control.

    ``fit`` builds the certificate; ``transform(X)`` maps each
    piecewise-constant direction (a row on ``[0, T_]``) to its even Taylor
    coefficients ``[J2, J4, J6, J8]`` at zero control.
    """

    def __init__(self, system="S2", observable=1.0, n_dirs=100, seed=0, T=None, tol=1e-9, threads=1):
        self.system = system
        self.observable = observable
        self.n_dirs = n_dirs
        self.seed = seed
        self.T = T
        self.tol = tol
        self.threads = threads

    def fit(self, X=None, y=None):
        sys_ = check_system(self.system)
        obs = check_observable(self.observable)
        cert = certify_trap_order(sys_, obs, n_dirs=int(self.n_dirs), seed=self.seed, T=self.T,
                                  tol=self.tol, threads=self.threads)
        self.system_, self.observable_ = sys_, obs
        self.certificate_ = cert
        self.order_ = cert.order
        self.T_ = cert.T
        self.witness_ = cert.witness
        return self

    def transform(self, X) -> np.ndarray:
        check_is_fitted(self, "certificate_")
        X = check_controls(X)
        out = np.empty((X.shape[0], 4))
        for i, row in enumerate(X):
            f = AnalyticControl.piecewise_constant(row, self.T_)
            rep = variation(self.system_, self.observable_, f, max_order=8)
            out[i] = [rep.J2, rep.J4, rep.J6, rep.J8]
        return out

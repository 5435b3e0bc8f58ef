"""Scikit-learn style regressor wrapping the GP layer."""

import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.utils.validation import check_array, check_is_fitted, check_X_y

from .exceptions import ConfigurationError
from .gp import BACKENDS, Budget, fit, log_marginal_likelihood, predict
from .kernels import DataSet, Family, Hyperparameters, InducingGrid, KernelSpec


class LogDetGPRegressor(RegressorMixin, BaseEstimator):
    """GP regression with matrix-free log-determinant backends.

    Parameters
    ----------
    kernel : {"rbf", "matern12", "matern32", "matern52"}
    lengthscale, signal, noise : initial hyperparameters (natural scale).
        ``lengthscale`` may be a sequence for per-dimension scales.
    backend : one of ``exact``, ``lanczos``, ``chebyshev``, ``scaled-eig``.
    m, n_z : estimator budget; ``None`` picks the backend default.
    seed : probe seed, frozen for the whole optimization.
    grid_size : inducing points per dimension; ``None`` means dense kernels.
    diag_correct : add the diagonal correction to the SKI operator.
    optimize : fit hyperparameters by L-BFGS-B, or keep the initial values.
    max_iters : optimizer iteration cap.
    fit_mean : use the sample mean of ``y`` as the constant mean.
    """

    def __init__(
        self,
        kernel="rbf",
        lengthscale=1.0,
        signal=1.0,
        noise=0.1,
        backend="lanczos",
        m=None,
        n_z=None,
        seed=0,
        grid_size=None,
        diag_correct=False,
        optimize=True,
        max_iters=100,
        fit_mean=False,
        cg_tol=1e-8,
    ):
        self.kernel = kernel
        self.lengthscale = lengthscale
        self.signal = signal
        self.noise = noise
        self.backend = backend
        self.m = m
        self.n_z = n_z
        self.seed = seed
        self.grid_size = grid_size
        self.diag_correct = diag_correct
        self.optimize = optimize
        self.max_iters = max_iters
        self.fit_mean = fit_mean
        self.cg_tol = cg_tol

    def _budget(self):
        overrides = {"seed": int(self.seed), "cg_tol": float(self.cg_tol)}
        if self.m is not None:
            overrides["m"] = int(self.m)
        if self.n_z is not None:
            overrides["n_z"] = int(self.n_z)
        return Budget.default(self.backend, **overrides)

    def _spec(self):
        try:
            family = Family(str(self.kernel).lower())
        except ValueError as exc:
            raise ConfigurationError(f"unknown kernel {self.kernel!r}") from exc
        return KernelSpec(family, isotropic=np.ndim(self.lengthscale) == 0)

    def fit(self, X, y):
        X, y = check_X_y(X, y, y_numeric=True)
        if self.backend not in BACKENDS or self.backend == "surrogate":
            raise ConfigurationError(f"unsupported backend {self.backend!r} for the estimator")
        spec = self._spec()
        data = DataSet(X, y)
        if self.fit_mean:
            data = data.with_sample_mean()
        grid = None
        if self.grid_size is not None:
            sizes = np.broadcast_to(np.atleast_1d(self.grid_size), (X.shape[1],))
            grid = InducingGrid.from_data(X, [int(s) for s in sizes])
        theta0 = Hyperparameters.from_natural(self.lengthscale, self.signal, self.noise)
        budget = self._budget()
        if self.optimize:
            result = fit(data, spec, theta0, self.backend, budget, self.max_iters,
                         grid=grid, diag_correct=self.diag_correct)
            self.theta_ = result.theta_star
            self.fit_result_ = result
        else:
            self.theta_ = theta0
            self.fit_result_ = None
        self.spec_ = spec
        self.data_ = data
        self.grid_ = grid
        self.n_features_in_ = X.shape[1]
        return self

    def predict(self, X, return_std=False):
        check_is_fitted(self, "theta_")
        X = check_array(X)
        if X.shape[1] != self.n_features_in_:
            raise ValueError(f"X has {X.shape[1]} features, expected {self.n_features_in_}")
        mean, var = predict(self.data_, self.spec_, self.theta_, X, grid=self.grid_,
                            diag_correct=self.diag_correct)
        return (mean, np.sqrt(var)) if return_std else mean

    def log_marginal_likelihood(self, theta=None):
        """Log marginal likelihood (not negated) at ``theta`` or the fitted value."""
        check_is_fitted(self, "theta_")
        theta = self.theta_ if theta is None else theta
        if not isinstance(theta, Hyperparameters):
            theta = Hyperparameters.from_vector(theta, len(self.theta_.log_lengthscales))
        ev = log_marginal_likelihood(self.data_, self.spec_, theta, self.backend, self._budget(),
                                     grid=self.grid_, diag_correct=self.diag_correct)
        return -ev.neg_log_lik

    @property
    def hyperparameters_(self):
        check_is_fitted(self, "theta_")
        return {
            "lengthscale": self.theta_.lengthscales.tolist(),
            "signal": self.theta_.signal,
            "noise": self.theta_.noise,
        }

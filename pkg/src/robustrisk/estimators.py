"""scikit-learn style wrappers around the empirical fits.

The functional API in :mod:`robustrisk.linreg` and :mod:`robustrisk.logreg`
works on :class:`~robustrisk.data.Dataset` objects that carry the ground
truth. These classes accept plain ``(X, y)`` arrays instead. Consistent
perturbations need the ground-truth direction, passed as ``theta_star``.
"""

from types import SimpleNamespace

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin, RegressorMixin
from sklearn.utils.validation import check_array, check_is_fitted, check_X_y

from .exceptions import ConfigurationError
from .linreg import min_norm_solve, ridge_solve
from .logreg import fit_max_margin, fit_regularized


class RidgeRegressor(RegressorMixin, BaseEstimator):
    """Ridge regression on ``X^T X / n + alpha I``; ``alpha = 0`` gives the min-norm solution."""

    def __init__(self, alpha=1.0):
        self.alpha = alpha

    def fit(self, X, y):
        X, y = check_X_y(X, y, y_numeric=True)
        if self.alpha < 0:
            raise ConfigurationError("alpha must be nonnegative")
        self.coef_ = min_norm_solve(X, y) if self.alpha == 0 else ridge_solve(X, y, self.alpha)
        self.n_features_in_ = X.shape[1]
        return self

    def predict(self, X):
        check_is_fitted(self, "coef_")
        return check_array(X) @ self.coef_


class _RobustLinearClassifier(ClassifierMixin, BaseEstimator):

    def _prepare(self, X, y):
        X, y = check_X_y(X, y)
        classes = np.unique(y)
        if classes.size != 2:
            raise ConfigurationError("need exactly two classes")
        self.classes_ = classes
        signs = np.where(y == classes[1], 1.0, -1.0)
        d = X.shape[1]
        if self.theta_star is None:
            if self.consistent:
                raise ConfigurationError("consistent perturbations need theta_star")
            # reference direction only affects the stored decomposition
            ref = np.zeros(d)
            ref[0] = 1.0
        else:
            ref = np.asarray(self.theta_star, dtype=float)
            if ref.shape != (d,):
                raise ConfigurationError("theta_star has the wrong dimension")
            ref = ref / np.linalg.norm(ref)
        self.n_features_in_ = d
        return SimpleNamespace(X=X, y=signs, theta_star=ref)

    def _store(self, result):
        self.result_ = result
        self.coef_ = np.array(result.estimator.theta)
        self.n_iter_ = result.iterations
        self.converged_ = result.converged
        return self

    def decision_function(self, X):
        check_is_fitted(self, "coef_")
        return check_array(X) @ self.coef_

    def predict(self, X):
        return np.where(self.decision_function(X) >= 0, self.classes_[1], self.classes_[0])


class RobustLogisticRegression(_RobustLinearClassifier):
    """Adversarially trained logistic regression with ridge penalty ``lam ||theta||^2``.

    ``norm`` is the attack norm (``"linf"`` or ``"l2"``) with radius ``eps``.
    """

    def __init__(self, lam=1.0, eps=0.1, norm="linf", consistent=False, theta_star=None, max_iter=20000,
                 tol=1e-5):
        self.lam = lam
        self.eps = eps
        self.norm = norm
        self.consistent = consistent
        self.theta_star = theta_star
        self.max_iter = max_iter
        self.tol = tol

    def fit(self, X, y):
        data = self._prepare(X, y)
        return self._store(fit_regularized(data, self.eps, self.norm, self.consistent, lam=self.lam,
                                           max_iter=self.max_iter, tol=self.tol))


class RobustMaxMarginClassifier(_RobustLinearClassifier):
    """Robust max-l2-margin interpolator, scaled so its smallest robust margin is one.

    Raises :class:`~robustrisk.exceptions.InfeasibleError` from ``fit`` when the
    training data are not robustly separable.
    """

    def __init__(self, eps=0.1, norm="linf", consistent=False, theta_star=None, max_iter=50000):
        self.eps = eps
        self.norm = norm
        self.consistent = consistent
        self.theta_star = theta_star
        self.max_iter = max_iter

    def fit(self, X, y):
        data = self._prepare(X, y)
        return self._store(fit_max_margin(data, self.eps, self.norm, self.consistent, max_iter=self.max_iter))

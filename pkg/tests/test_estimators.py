import numpy as np
import pytest
from sklearn.base import clone

from robustrisk.data import ProblemConfig, generate_dataset
from robustrisk.estimators import RidgeRegressor, RobustLogisticRegression, RobustMaxMarginClassifier
from robustrisk.exceptions import ConfigurationError, InfeasibleError
from robustrisk.linreg import min_norm_fit, ridge_fit
from robustrisk.logreg import fit_max_margin, fit_regularized


@pytest.fixture(scope="module")
def reg_ds():
    return generate_dataset(ProblemConfig(d=40, n=20, sigma2=0.1, seed=7))


@pytest.fixture(scope="module")
def clf_ds():
    return generate_dataset(ProblemConfig(d=40, n=20, task="classification", seed=7))


class TestRidgeRegressor:
    def test_matches_functional(self, reg_ds):
        m = RidgeRegressor(alpha=0.3).fit(reg_ds.X, reg_ds.y)
        np.testing.assert_allclose(m.coef_, ridge_fit(reg_ds, 0.3).theta, rtol=1e-12)
        np.testing.assert_allclose(m.predict(reg_ds.X), reg_ds.X @ m.coef_)

    def test_alpha_zero_interpolates(self, reg_ds):
        m = RidgeRegressor(alpha=0.0).fit(reg_ds.X, reg_ds.y)
        np.testing.assert_allclose(m.coef_, min_norm_fit(reg_ds).theta, rtol=1e-10)
        assert m.score(reg_ds.X, reg_ds.y) == pytest.approx(1.0)

    def test_params_and_clone(self):
        m = RidgeRegressor(alpha=2.0)
        assert m.get_params() == {"alpha": 2.0}
        assert clone(m).alpha == 2.0

    def test_negative_alpha(self, reg_ds):
        with pytest.raises(ConfigurationError):
            RidgeRegressor(alpha=-1.0).fit(reg_ds.X, reg_ds.y)

    def test_unfitted(self):
        from sklearn.exceptions import NotFittedError
        with pytest.raises(NotFittedError):
            RidgeRegressor().predict(np.ones((2, 3)))


class TestRobustLogisticRegression:
    def test_matches_functional(self, clf_ds):
        m = RobustLogisticRegression(lam=0.1, eps=0.05, consistent=True, theta_star=clf_ds.theta_star)
        m.fit(clf_ds.X, clf_ds.y)
        ref = fit_regularized(clf_ds, 0.05, "linf", True, lam=0.1)
        np.testing.assert_allclose(m.coef_, ref.estimator.theta, rtol=1e-10, atol=1e-12)
        assert m.converged_

    def test_string_labels(self, clf_ds):
        labels = np.where(clf_ds.y > 0, "pos", "neg")
        m = RobustLogisticRegression(lam=0.1, eps=0.05).fit(clf_ds.X, labels)
        assert list(m.classes_) == ["neg", "pos"]
        # separable training data, so the fit labels every training point correctly
        assert m.score(clf_ds.X, labels) == 1.0

    def test_consistent_needs_truth(self, clf_ds):
        with pytest.raises(ConfigurationError):
            RobustLogisticRegression(consistent=True).fit(clf_ds.X, clf_ds.y)

    def test_one_class(self, clf_ds):
        with pytest.raises(ConfigurationError):
            RobustLogisticRegression().fit(clf_ds.X, np.ones(clf_ds.n))


class TestRobustMaxMargin:
    def test_matches_functional(self, clf_ds):
        m = RobustMaxMarginClassifier(eps=0.05, consistent=True, theta_star=clf_ds.theta_star)
        m.fit(clf_ds.X, clf_ds.y)
        ref = fit_max_margin(clf_ds, 0.05)
        np.testing.assert_allclose(m.coef_, ref.estimator.theta, rtol=1e-10, atol=1e-12)
        margins = clf_ds.y * m.decision_function(clf_ds.X)
        assert margins.min() >= 1.0 - 1e-6
        np.testing.assert_array_equal(m.predict(clf_ds.X), clf_ds.y)

    def test_infeasible(self):
        ds = generate_dataset(ProblemConfig(d=5, n=300, task="classification", label_flip_prob=0.2, seed=2))
        with pytest.raises(InfeasibleError):
            RobustMaxMarginClassifier(eps=0.1).fit(ds.X, ds.y)

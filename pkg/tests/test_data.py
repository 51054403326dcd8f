import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from robustrisk.data import (RNG_ALGO, ProblemConfig, decompose, generate_dataset, make_rng,
                             sample_moments_check, unit_vector)
from robustrisk.exceptions import ConfigurationError, DomainError


class TestConfig:
    def test_defaults(self):
        c = ProblemConfig(d=20, n=10)
        assert c.perturbation_norm == "l2"
        assert c.gamma == 2.0
        assert ProblemConfig(d=20, n=10, task="classification").perturbation_norm == "linf"

    @pytest.mark.parametrize("kw", [dict(d=0, n=1), dict(d=1, n=1, task="ranking"),
                                    dict(d=1, n=1, perturbation_norm="linf"),
                                    dict(d=1, n=1, sigma2=-1.0),
                                    dict(d=1, n=1, task="classification", label_flip_prob=0.5)])
    def test_invalid(self, kw):
        with pytest.raises(ConfigurationError):
            ProblemConfig(**kw)

    def test_with(self):
        c = ProblemConfig(d=20, n=10).with_(sigma2=0.2)
        assert c.sigma2 == 0.2


class TestRng:
    def test_algorithm(self):
        assert RNG_ALGO == "Philox4x64-10"
        assert isinstance(make_rng(0).bit_generator, np.random.Philox)

    def test_streams_differ_by_purpose_and_trial(self):
        a = make_rng(3, 0, "X").standard_normal(4)
        np.testing.assert_array_equal(a, make_rng(3, 0, "X").standard_normal(4))
        assert not np.allclose(a, make_rng(3, 0, "noise").standard_normal(4))
        assert not np.allclose(a, make_rng(3, 1, "X").standard_normal(4))

    def test_negative_seed(self):
        with pytest.raises(ValueError):
            make_rng(-1)


class TestGenerate:
    def test_regression_shapes_and_readonly(self):
        ds = generate_dataset(ProblemConfig(d=30, n=20, sigma2=0.5, seed=1))
        assert ds.X.shape == (20, 30) and ds.n == 20 and ds.d == 30
        np.testing.assert_array_equal(ds.clean_y, ds.X @ ds.theta_star)
        with pytest.raises(ValueError):
            ds.X[0, 0] = 1.0

    def test_noise_does_not_change_design(self):
        a = generate_dataset(ProblemConfig(d=30, n=20, sigma2=0.0, seed=1))
        b = generate_dataset(ProblemConfig(d=30, n=20, sigma2=0.3, seed=1))
        np.testing.assert_array_equal(a.X, b.X)
        assert not np.allclose(a.y, b.y)

    def test_flips(self):
        cfg = ProblemConfig(d=5, n=20000, task="classification", label_flip_prob=0.1, seed=2)
        ds = generate_dataset(cfg)
        frac = np.mean(ds.y != ds.clean_y)
        assert abs(frac - 0.1) < 4 * np.sqrt(0.09 / 20000)
        np.testing.assert_array_equal(ds.clean_y, np.where(ds.X[:, 0] >= 0, 1.0, -1.0))

    def test_custom_theta_star(self):
        t = np.ones(4) / 2
        ds = generate_dataset(ProblemConfig(d=4, n=3), theta_star=t)
        np.testing.assert_array_equal(ds.theta_star, t)
        with pytest.raises(DomainError):
            generate_dataset(ProblemConfig(d=4, n=3), theta_star=np.ones(4))

    def test_to_csv(self, tmp_path):
        ds = generate_dataset(ProblemConfig(d=3, n=2))
        p = tmp_path / "ds.csv"
        ds.to_csv(p)
        lines = p.read_text().splitlines()
        assert lines[0] == "x_1,x_2,x_3,y" and len(lines) == 3

    def test_sample_moments(self):
        ds = generate_dataset(ProblemConfig(d=200, n=400, seed=5))
        mean_norm, gap = sample_moments_check(ds)
        # each column mean is N(0, 1/n), so the norm is about sqrt(d/n)
        assert abs(mean_norm - np.sqrt(0.5)) < 0.1
        assert gap < 0.2


class TestDecompose:
    @settings(max_examples=50, deadline=None)
    @given(st.lists(st.floats(-10, 10, allow_nan=False), min_size=2, max_size=8))
    def test_pythagoras(self, vals):
        theta = np.array(vals)
        est = decompose(theta, unit_vector(theta.size, 1))
        np.testing.assert_allclose(est.norm2 ** 2, theta @ theta, rtol=1e-12, atol=1e-12)
        assert est.nu_par == theta[1]
        np.testing.assert_allclose(est.perp_l1, np.abs(theta).sum() - abs(theta[1]), atol=1e-12)

    def test_scaled(self):
        est = decompose([1.0, 2.0], unit_vector(2))
        s = est.scaled(2.0)
        np.testing.assert_allclose([s.nu_par, s.perp_l2], [2.0, 4.0])

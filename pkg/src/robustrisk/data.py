"""Synthetic isotropic Gaussian data and estimator bookkeeping.

Randomness is drawn from numpy's Philox counter-based generator. Every stream
is keyed by ``(base_seed, trial, purpose)`` so that, for instance, the design
matrix of a trial does not change when the noise level does, and parallel
sweeps give the same numbers regardless of scheduling.
"""

import csv
import hashlib
from dataclasses import dataclass, field, replace

import numpy as np

from .exceptions import ConfigurationError, DomainError

RNG_ALGO = "Philox4x64-10"

TASKS = ("regression", "classification")
NORMS = ("l2", "linf")


def _purpose_key(purpose):
    digest = hashlib.sha256(str(purpose).encode()).digest()
    return int.from_bytes(digest[:8], "little")


def make_rng(base_seed, trial=0, purpose="data"):
    """Philox generator keyed by ``(base_seed, trial, purpose)``."""
    if base_seed < 0 or trial < 0:
        raise ValueError("seeds must be nonnegative")
    ss = np.random.SeedSequence([int(base_seed) & (2**64 - 1), int(trial), _purpose_key(purpose)])
    return np.random.Generator(np.random.Philox(ss))


@dataclass(frozen=True)
class ProblemConfig:
    """Full description of one synthetic problem instance."""

    d: int
    n: int
    task: str = "regression"
    sigma2: float = 0.0
    label_flip_prob: float = 0.0
    eps_train: float = 0.0
    eps_test: float = 0.0
    perturbation_norm: str = None
    consistent: bool = True
    lam: float = 0.0
    seed: int = 0
    trial: int = 0

    def __post_init__(self):
        if self.d < 1 or self.n < 1:
            raise ConfigurationError("d and n must be positive")
        if self.task not in TASKS:
            raise ConfigurationError(f"unknown task {self.task!r}")
        if self.perturbation_norm is None:
            object.__setattr__(self, "perturbation_norm", "l2" if self.task == "regression" else "linf")
        if self.perturbation_norm not in NORMS:
            raise ConfigurationError(f"unknown perturbation norm {self.perturbation_norm!r}")
        if self.task == "regression" and self.perturbation_norm != "l2":
            raise ConfigurationError("regression supports l2 perturbations only")
        if min(self.eps_train, self.eps_test, self.sigma2, self.lam) < 0:
            raise ConfigurationError("eps, sigma2 and lambda must be nonnegative")
        if not 0 <= self.label_flip_prob < 0.5:
            raise ConfigurationError("label_flip_prob must lie in [0, 0.5)")

    @property
    def gamma(self):
        return self.d / self.n

    @property
    def experimental(self):
        """Classification with l2 perturbations is supported but not the main setting."""
        return self.task == "classification" and self.perturbation_norm != "linf"

    def with_(self, **changes):
        return replace(self, **changes)


def unit_vector(d, index=0):
    e = np.zeros(d)
    e[index] = 1.0
    return e


@dataclass(frozen=True)
class Dataset:
    """Design matrix, observed targets, ground truth and clean targets."""

    X: np.ndarray
    y: np.ndarray
    theta_star: np.ndarray
    clean_y: np.ndarray
    config: ProblemConfig = None

    @property
    def n(self):
        return self.X.shape[0]

    @property
    def d(self):
        return self.X.shape[1]

    def to_csv(self, path):
        """Write columns ``x_1..x_d, y`` with a header row (debugging aid)."""
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow([f"x_{j + 1}" for j in range(self.d)] + ["y"])
            for row, target in zip(self.X, self.y):
                w.writerow([repr(float(v)) for v in row] + [repr(float(target))])


def _check_unit(theta_star):
    theta_star = np.asarray(theta_star, dtype=float)
    if theta_star.ndim != 1 or abs(np.linalg.norm(theta_star) - 1.0) > 1e-12:
        raise DomainError("theta_star must be a unit vector")
    return theta_star


def generate_dataset(config, theta_star=None):
    """Draw a dataset for ``config``.

    ``X``, regression noise and label flips come from separate streams keyed by
    ``(config.seed, config.trial)``.
    """
    theta_star = unit_vector(config.d) if theta_star is None else _check_unit(theta_star)
    if theta_star.size != config.d:
        raise ConfigurationError("theta_star has the wrong dimension")
    X = make_rng(config.seed, config.trial, "X").standard_normal((config.n, config.d))
    signal = X @ theta_star
    if config.task == "regression":
        clean = signal
        y = clean.copy()
        if config.sigma2 > 0:
            y = y + np.sqrt(config.sigma2) * make_rng(config.seed, config.trial, "noise").standard_normal(config.n)
    else:
        clean = np.where(signal >= 0, 1.0, -1.0)
        y = clean.copy()
        if config.label_flip_prob > 0:
            flips = make_rng(config.seed, config.trial, "flips").random(config.n) < config.label_flip_prob
            y[flips] = -y[flips]
    for a in (X, y, clean):
        a.setflags(write=False)
    return Dataset(X, y, theta_star, clean, config)


@dataclass(frozen=True)
class Estimator:
    """Parameter vector with its decomposition relative to the ground truth.

    ``perp_l1`` and ``perp_l2`` are the norms of ``theta - nu_par * theta_star``.
    """

    theta: np.ndarray
    theta_star: np.ndarray
    nu_par: float
    perp_l2: float
    perp_l1: float
    meta: dict = field(default_factory=dict, compare=False)

    @property
    def d(self):
        return self.theta.size

    @property
    def norm2(self):
        return float(np.hypot(self.nu_par, self.perp_l2))

    @property
    def norm1(self):
        return float(np.abs(self.theta).sum())

    def scaled(self, c):
        return decompose(c * self.theta, self.theta_star)


def decompose(theta, theta_star):
    """Split ``theta`` into its component along ``theta_star`` and the orthogonal remainder."""
    theta = np.array(theta, dtype=float)
    theta_star = _check_unit(theta_star)
    nu = float(theta @ theta_star)
    perp = theta - nu * theta_star
    theta.setflags(write=False)
    return Estimator(theta, theta_star, nu, float(np.linalg.norm(perp)), float(np.abs(perp).sum()))


def sample_moments_check(dataset):
    """Diagnostics: norm of the column mean and Bai-Yin edge deviations of ``X^T X / n``.

    Returns ``(mean_norm, gap)`` where ``gap`` is the larger of the deviations
    of the extreme nonzero eigenvalues from ``(1 -+ sqrt(gamma))^2``.
    """
    X = np.asarray(dataset.X if hasattr(dataset, "X") else dataset, dtype=float)
    n, d = X.shape
    if n < 2 or d < 2:
        raise DomainError("need n, d >= 2")
    mean_norm = float(np.linalg.norm(X.mean(axis=0)))
    small = X @ X.T if d > n else X.T @ X
    ev = np.linalg.eigvalsh(small / n)
    gamma = d / n
    gap = max(abs(ev[-1] - (1 + np.sqrt(gamma)) ** 2), abs(ev[0] - (1 - np.sqrt(gamma)) ** 2))
    return mean_norm, float(gap)

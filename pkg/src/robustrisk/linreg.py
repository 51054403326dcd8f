"""Ridge regression and the min-norm interpolator: empirical fits and asymptotic risks.

The asymptotic part evaluates the Marchenko-Pastur Stieltjes transform

    m(z) = (1 - gamma - z - sqrt((1 - gamma - z)^2 - 4 gamma z)) / (2 gamma z)

at ``z = -lambda`` and combines bias ``lambda^2 m'``, variance
``sigma^2 gamma (m - lambda m')`` and the orthogonal mass
``R - (lambda m)^2`` into the limiting standard and adversarial risks.
"""

import warnings
from dataclasses import dataclass

import numpy as np
from scipy import linalg
from scipy.optimize import minimize_scalar

from .data import decompose
from .exceptions import DivergenceError, DomainError
from .numerics import SQRT_2_OVER_PI
from .schedule import Schedule, snapshot_steps


# ---------------------------------------------------------------------------
# empirical estimators


def ridge_solve(X, y, lam):
    """Ridge solution ``(X^T X / n + lam I)^{-1} X^T y / n`` for ``lam > 0``.

    Uses the ``n x n`` dual system when ``d > n``.
    """
    if not lam > 0:
        raise DomainError("ridge_solve needs lam > 0; use min_norm_solve for lam = 0")
    n, d = X.shape
    if d > n:
        G = X @ X.T
        G[np.diag_indices_from(G)] += n * lam
        return X.T @ linalg.cho_solve(linalg.cho_factor(G), y)
    A = X.T @ X
    A[np.diag_indices_from(A)] += n * lam
    return linalg.cho_solve(linalg.cho_factor(A), X.T @ y)


def min_norm_solve(X, y, rcond=1e-12):
    """Minimum-norm least-squares solution (interpolator when ``d > n``)."""
    n, d = X.shape
    M = X @ X.T if d > n else X.T @ X
    try:
        c, low = linalg.cho_factor(M)
    except linalg.LinAlgError as exc:
        raise DomainError("gram matrix is numerically singular") from exc
    diag = np.abs(np.diag(c))
    if (diag.min() / diag.max()) ** 2 < rcond:
        raise DomainError("gram matrix is numerically rank deficient")
    if d > n:
        return X.T @ linalg.cho_solve((c, low), y)
    return linalg.cho_solve((c, low), X.T @ y)


def ridge_fit(dataset, lam):
    """Ridge estimator for ``dataset`` as an :class:`~robustrisk.data.Estimator`."""
    return decompose(ridge_solve(dataset.X, dataset.y, lam), dataset.theta_star)


def min_norm_fit(dataset):
    """Min-norm interpolator (``d > n``) or least squares (``d <= n``)."""
    return decompose(min_norm_solve(dataset.X, dataset.y), dataset.theta_star)


def ridge_path(dataset, lambdas):
    """Ridge estimators for several ``lambda`` from one eigendecomposition.

    ``lambda = 0`` gives the min-norm solution.
    """
    X, y = dataset.X, dataset.y
    n, d = X.shape
    if d > n:
        ev, U = linalg.eigh(X @ X.T)
        proj = U.T @ y
        out = []
        for lam in lambdas:
            denom = ev + n * lam
            if lam == 0 and ev.min() <= 1e-12 * ev.max():
                raise DomainError("gram matrix is numerically rank deficient")
            out.append(decompose(X.T @ (U @ (proj / denom)), dataset.theta_star))
        return out
    ev, V = linalg.eigh(X.T @ X)
    proj = V.T @ (X.T @ y)
    out = []
    for lam in lambdas:
        if lam == 0 and ev.min() <= 1e-12 * ev.max():
            raise DomainError("gram matrix is numerically rank deficient")
        out.append(decompose(V @ (proj / (ev + n * lam)), dataset.theta_star))
    return out


def default_regression_schedule(d, warmup=250):
    return Schedule(base=np.sqrt(1.0 / d), warmup=warmup)


def gd_regression_path(dataset, steps=2000, schedule=None, snapshots=None):
    """Zero-initialized full-batch gradient descent on the mean squared loss.

    Returns a list of ``(step, Estimator)`` pairs at the requested iterations
    (by default roughly log-spaced). Raises :class:`DivergenceError` if the
    training loss exceeds ten times its starting value.
    """
    X, y = dataset.X, dataset.y
    n, d = X.shape
    schedule = schedule or default_regression_schedule(d)
    wanted = set(snapshot_steps(steps) if snapshots is None else snapshots)
    theta = np.zeros(d)
    base_loss = float(y @ y) / n
    out = []
    for k in range(steps + 1):
        if k in wanted:
            out.append((k, decompose(theta, dataset.theta_star)))
        if k == steps:
            break
        r = X @ theta - y
        loss = float(r @ r) / n
        if not np.isfinite(loss) or loss > 10.0 * max(base_loss, 1e-300):
            raise DivergenceError(f"gradient descent diverged at step {k}", residual=loss)
        theta = theta - schedule(k) * (2.0 / n) * (X.T @ r)
    return out


# ---------------------------------------------------------------------------
# asymptotics


@dataclass(frozen=True)
class LinRegAsymptotics:
    """Limiting risks of ridge regression at ``d/n -> gamma``.

    For ``gamma > 1`` and ``lambda = 0`` the transform has a simple pole
    ``(1 - 1/gamma)/lambda``; ``m`` and ``m_prime`` then hold the finite parts
    and ``lambda_m`` the limit of ``lambda m(-lambda)``.
    """

    gamma: float
    lam: float
    sigma2: float
    eps: float
    m: float
    m_prime: float
    lambda_m: float
    bias: float
    variance: float
    sr: float
    perp_mass: float
    ar: float


def stieltjes_mp(lam, gamma):
    """``(m(-lam), m'(-lam), lam * m(-lam))`` for ``lam > 0``."""
    lam = np.asarray(lam, dtype=float)
    a = 1.0 - gamma + lam
    disc = np.sqrt(a * a + 4.0 * gamma * lam)
    # pick the cancellation-free form of disc - a
    diff = np.where(a > 0, 4.0 * gamma * lam / (disc + np.abs(a)), disc + np.abs(a))
    lam_m = diff / (2.0 * gamma)
    with np.errstate(divide="ignore"):
        # both branches are evaluated; only the selected one is finite at lam = 0
        m = np.where(a > 0, 2.0 / (disc + a), diff / (2.0 * gamma * np.where(lam > 0, lam, 1.0)))
    m_prime = m * (1.0 + gamma * m) / disc
    return m, m_prime, lam_m


def _limit_terms(gamma):
    if gamma < 1:
        m = 1.0 / (1.0 - gamma)
        return m, m / (1.0 - gamma) ** 2, 0.0, 0.0, m
    c0 = 1.0 / (gamma * (gamma - 1.0))
    lam_m = 1.0 - 1.0 / gamma
    # finite parts of m and m'; bias -> 1 - 1/gamma; m - lam m' -> c0
    return c0, c0 * (1.0 + gamma * c0) / (gamma - 1.0), lam_m, lam_m, c0


def linreg_asymptotics(lam, gamma, sigma2=0.0, eps_test=0.0):
    """Asymptotic bias, variance, standard and adversarial risk of ridge regression.

    ``lam = 0`` is treated through its exact limit (needs ``gamma != 1``).
    """
    if not gamma > 0 or lam < 0 or sigma2 < 0 or eps_test < 0:
        raise DomainError("need gamma > 0 and nonnegative lam, sigma2, eps")
    if lam == 0:
        if gamma == 1:
            raise DivergenceError("the min-norm risk diverges at gamma = 1")
        m, m_prime, lam_m, bias, m_minus = _limit_terms(gamma)
    else:
        m, m_prime, lam_m = (float(v) for v in stieltjes_mp(lam, gamma))
        a = 1.0 - gamma + lam
        disc = np.sqrt(a * a + 4.0 * gamma * lam)
        bias = lam_m * (lam + gamma * lam_m) / disc
        if gamma <= 1:
            m_minus = m * (disc + 1.0 - gamma - lam) / (2.0 * disc)
        else:
            m_minus = lam_m * 2.0 / (disc * (disc + gamma - 1.0 + lam))
    variance = sigma2 * gamma * m_minus
    sr = bias + variance
    perp = min(max(sr - lam_m * lam_m, 0.0), sr)
    ar = sr + eps_test ** 2 * perp + 2.0 * eps_test * SQRT_2_OVER_PI * np.sqrt(perp * sr)
    return LinRegAsymptotics(float(gamma), float(lam), float(sigma2), float(eps_test), float(m),
                             float(m_prime), float(lam_m), float(bias), float(variance), float(sr),
                             float(perp), float(ar))


def optimal_lambda(gamma, sigma2=0.0, eps_test=0.0, grid=None, include_zero=True):
    """Minimize the asymptotic adversarial risk over ``lambda >= 0``.

    Scans ``grid`` (default 121 log-spaced points in ``[1e-4, 1e2]``) plus
    ``lambda = 0``, then refines around the best point with a bounded
    scalar search in ``log lambda``. Returns ``(lambda_opt, ar_opt)``.
    """
    grid = np.geomspace(1e-4, 1e2, 121) if grid is None else np.asarray(grid, dtype=float)
    grid = np.sort(grid[grid > 0])
    if grid.size == 0 or grid[-1] < 10:
        raise DomainError("grid must reach lambda >= 10")
    ar = np.array([linreg_asymptotics(lam, gamma, sigma2, eps_test).ar for lam in grid])
    k = int(np.argmin(ar))
    lo = np.log(grid[max(k - 1, 0)])
    hi = np.log(grid[min(k + 1, grid.size - 1)])
    res = minimize_scalar(lambda s: linreg_asymptotics(np.exp(s), gamma, sigma2, eps_test).ar,
                          bounds=(lo, hi), method="bounded", options={"xatol": 1e-10})
    best_lam, best_ar = float(grid[k]), float(ar[k])
    if res.fun < best_ar:
        best_lam, best_ar = float(np.exp(res.x)), float(res.fun)
    if include_zero:
        if gamma == 1:
            warnings.warn("lambda = 0 skipped: risk diverges at gamma = 1", RuntimeWarning)
        else:
            ar0 = linreg_asymptotics(0.0, gamma, sigma2, eps_test).ar
            if ar0 <= best_ar:
                best_lam, best_ar = 0.0, ar0
    return best_lam, best_ar

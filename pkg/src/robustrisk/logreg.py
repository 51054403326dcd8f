"""Adversarially robust logistic regression on finite samples.

For a linear model the inner maximization of the adversarial logistic loss
has a closed form: the margin ``y <x, theta>`` is lowered by ``eps`` times a
dual norm of ``theta`` (see :func:`robustrisk.risk.perturbation_penalty`).
This module trains on that robust loss:

* :func:`fit_regularized` minimizes the robust loss plus ``lam ||theta||^2``;
* :func:`fit_max_margin` computes the robust max-l2-margin interpolator
  through its dual;
* :func:`gd_classification_path` runs plain gradient descent from zero.

For l-infinity perturbations the penalty is an l1 norm sitting inside the
loss. Because the logistic loss is decreasing, writing ``theta = u - v`` with
``u, v >= 0`` turns the problem into a smooth bound-constrained one with the
same minimizers, which L-BFGS-B solves to high accuracy.
"""

from dataclasses import dataclass

import numpy as np
from scipy import optimize, special

from .data import decompose
from .exceptions import ConfigurationError, DivergenceError, DomainError, InfeasibleError, SolverError
from .numerics import logistic_loss
from .risk import _basis_index
from .schedule import Schedule, snapshot_steps


@dataclass
class TrainResult:
    """Fitted estimator with training diagnostics."""

    estimator: object
    final_loss: float
    robust_margin: float
    robust_avg_margin: float
    l1_over_l2: float
    iterations: int
    converged: bool
    step: int = None


class _Penalty:
    """Dual-norm penalty ``pen(theta)`` acting on the attackable coordinates."""

    def __init__(self, theta_star, norm, consistent):
        if norm not in ("l2", "linf"):
            raise ConfigurationError(f"unknown norm {norm!r}")
        self.norm = norm
        self.consistent = consistent
        self.theta_star = theta_star
        self.free = None
        if consistent and norm == "linf":
            k = _basis_index(theta_star)
            if k is None:
                raise ConfigurationError("consistent linf perturbations need theta_star = e_k")
            self.free = k

    def project(self, theta):
        """Part of ``theta`` that enters the penalty."""
        if not self.consistent:
            return theta
        if self.norm == "linf":
            v = theta.copy()
            v[self.free] = 0.0
            return v
        return theta - (theta @ self.theta_star) * self.theta_star

    def value(self, theta):
        v = self.project(theta)
        return float(np.abs(v).sum()) if self.norm == "linf" else float(np.linalg.norm(v))

    def subgrad(self, theta):
        """Subgradient with ``sign(0) = 0`` (and zero for the l2 norm at the origin)."""
        v = self.project(theta)
        if self.norm == "linf":
            return np.sign(v)
        nv = np.linalg.norm(v)
        return v / nv if nv > 0 else np.zeros_like(v)


def _margins(theta, X, y, eps, pen):
    return y * (X @ theta) - eps * pen.value(theta)


def robust_logistic_objective(theta, dataset, eps, norm="linf", consistent=True, lam=0.0):
    """Robust logistic loss ``mean log(1 + exp(-(y <x, theta> - eps pen)))`` plus ``lam ||theta||^2``.

    Returns ``(value, subgradient)``.
    """
    pen = _Penalty(dataset.theta_star, norm, consistent)
    return _objective(np.asarray(theta, dtype=float), dataset.X, dataset.y, eps, pen, lam)


def _objective(theta, X, y, eps, pen, lam):
    a = _margins(theta, X, y, eps, pen)
    s = special.expit(-a)
    n = y.size
    value = float(logistic_loss(a).mean() + lam * theta @ theta)
    grad = -(X.T @ (y * s)) / n + eps * s.mean() * pen.subgrad(theta) + 2.0 * lam * theta
    return value, grad


def _stationarity(theta, X, y, eps, pen, lam):
    """Norm of the minimal-norm subgradient and of the smooth part of the gradient."""
    a = _margins(theta, X, y, eps, pen)
    s = special.expit(-a)
    n = y.size
    g = -(X.T @ (y * s)) / n + 2.0 * lam * theta
    c = eps * s.mean()
    if pen.norm == "linf":
        mask = np.ones(theta.size, bool)
        if pen.consistent:
            mask[pen.free] = False
        out = g.copy()
        nz = mask & (theta != 0)
        z = mask & (theta == 0)
        out[nz] += c * np.sign(theta[nz])
        out[z] = np.sign(g[z]) * np.maximum(np.abs(g[z]) - c, 0.0)
    else:
        v = pen.project(theta)
        nv = np.linalg.norm(v)
        if nv > 0:
            out = g + c * v / nv
        else:
            # smallest element of g + c * B where B is the unit ball of the attackable subspace
            gp = pen.project(g)
            ngp = np.linalg.norm(gp)
            out = g - gp * min(1.0, c / ngp) if ngp > 0 else g
    return float(np.linalg.norm(out)), float(np.linalg.norm(g))


def margin_stats(est, dataset, eps, norm="linf", consistent=True):
    """Normalized robust margins ``(y <x, theta> - eps pen(theta)) / ||theta||_2``.

    Returns ``(min, mean, sorted margins)``.
    """
    nrm = est.norm2
    if not nrm > 0:
        raise DomainError("margins of the zero vector are undefined")
    pen = _Penalty(dataset.theta_star, norm, consistent)
    m = np.sort(_margins(est.theta, dataset.X, dataset.y, eps, pen)) / nrm
    return float(m[0]), float(m.mean()), m


def _result(theta, dataset, eps, pen, lam, iterations, converged, step=None):
    est = decompose(theta, dataset.theta_star)
    loss, _ = _objective(est.theta, dataset.X, dataset.y, eps, pen, lam)
    if est.norm2 > 0:
        m = _margins(est.theta, dataset.X, dataset.y, eps, pen) / est.norm2
        rm, ram = float(m.min()), float(m.mean())
        l1l2 = est.norm1 / est.norm2
    else:
        rm = ram = l1l2 = float("nan")
    return TrainResult(est, loss, rm, ram, l1l2, int(iterations), bool(converged), step)


def fit_regularized(dataset, eps, norm="linf", consistent=True, lam=1.0, init=None, max_iter=20000,
                    tol=1e-5, allow_zero_lambda=False):
    """Minimize the robust logistic loss plus ``lam ||theta||^2``.

    The returned result has ``converged=True`` when a subgradient of norm at
    most ``tol * (1 + ||grad of smooth part||)`` exists at the output. With
    ``allow_zero_lambda`` the unregularized loss is minimized, which only has
    a minimizer when the data are not robustly separable.
    """
    if lam < 0 or (lam == 0 and not allow_zero_lambda):
        raise DomainError("fit_regularized needs lam > 0")
    X, y = dataset.X, dataset.y
    n, d = X.shape
    pen = _Penalty(dataset.theta_star, norm, consistent)
    theta0 = np.zeros(d) if init is None else np.asarray(init, dtype=float).copy()

    if norm == "linf":
        mask = np.ones(d, bool)
        if consistent:
            mask[pen.free] = False
        free = np.flatnonzero(~mask)
        pidx = np.flatnonzero(mask)
        k, p = free.size, pidx.size

        def unpack(z):
            theta = np.empty(d)
            theta[free] = z[:k]
            theta[pidx] = z[k:k + p] - z[k + p:]
            return theta, z[k:].sum()

        def fun(z):
            theta, l1 = unpack(z)
            a = y * (X @ theta) - eps * l1
            s = special.expit(-a)
            val = logistic_loss(a).mean() + lam * theta @ theta
            g = -(X.T @ (y * s)) / n + 2.0 * lam * theta
            c = eps * s.mean()
            return val, np.concatenate([g[free], g[pidx] + c, -g[pidx] + c])

        z0 = np.concatenate([theta0[free], np.maximum(theta0[pidx], 0), np.maximum(-theta0[pidx], 0)])
        bounds = [(None, None)] * k + [(0, None)] * (2 * p)
        res = optimize.minimize(fun, z0, jac=True, method="L-BFGS-B", bounds=bounds,
                                options={"maxiter": max_iter, "maxfun": 2 * max_iter, "maxcor": 30,
                                         "ftol": 1e-16, "gtol": 1e-11})
        theta = unpack(res.x)[0]
    else:
        res = optimize.minimize(lambda t: _objective(t, X, y, eps, pen, lam), theta0, jac=True,
                                method="L-BFGS-B",
                                options={"maxiter": max_iter, "maxfun": 2 * max_iter, "maxcor": 30,
                                         "ftol": 1e-16, "gtol": 1e-11})
        theta = res.x
    stat, gnorm = _stationarity(theta, X, y, eps, pen, lam)
    ok = stat <= tol * (1.0 + gnorm)
    return _result(theta, dataset, eps, pen, lam, res.nit, ok)


def _dual_theta(v, beta, pen):
    """Minimizer of ``0.5 ||theta||^2 - <v, theta> + beta pen(theta)``."""
    if pen.norm == "linf":
        theta = np.sign(v) * np.maximum(np.abs(v) - beta, 0.0)
        if pen.consistent:
            theta[pen.free] = v[pen.free]
        return theta
    vp = pen.project(v)
    nv = np.linalg.norm(vp)
    shrink = max(0.0, 1.0 - beta / nv) if nv > 0 else 0.0
    return (v - vp) + shrink * vp


def fit_max_margin(dataset, eps, norm="linf", consistent=True, box=1e6, max_iter=50000, tol=1e-6):
    """Robust max-l2-margin interpolator.

    Solves ``min ||theta||^2 / 2`` subject to ``y_i <x_i, theta> - eps pen(theta) >= 1``
    through its dual

        max_{alpha >= 0}  sum(alpha) - 0.5 ||prox(A^T alpha, eps sum(alpha))||^2,

    where ``A`` has rows ``y_i x_i`` and ``prox`` soft-thresholds the
    attackable coordinates. The box ``alpha <= box`` keeps the dual bounded;
    if the solution presses against it while some robust margin stays below
    one, the constraints are declared infeasible. The returned estimator is
    rescaled so that its smallest robust margin equals one.
    """
    X, y = dataset.X, dataset.y
    n, d = X.shape
    pen = _Penalty(dataset.theta_star, norm, consistent)
    A = X * y[:, None]

    def fun(alpha):
        theta = _dual_theta(A.T @ alpha, eps * alpha.sum(), pen)
        val = -alpha.sum() + 0.5 * theta @ theta
        grad = A @ theta - eps * pen.value(theta) - 1.0
        return val, grad

    res = optimize.minimize(fun, np.full(n, 1.0 / n), jac=True, method="L-BFGS-B",
                            bounds=[(0, box)] * n,
                            options={"maxiter": max_iter, "maxfun": 2 * max_iter, "maxcor": 30,
                                     "ftol": 1e-16, "gtol": 1e-10})
    alpha = res.x
    theta = _dual_theta(A.T @ alpha, eps * alpha.sum(), pen)
    margins = _margins(theta, X, y, eps, pen)
    mmin = float(margins.min()) if n else 0.0
    at_box = bool(np.any(alpha >= 0.999 * box))
    if at_box and mmin < 1.0 - 1e-3:
        raise InfeasibleError("robust max-margin constraints are infeasible", residual=1.0 - mmin)
    if not mmin > 0:
        raise SolverError("max-margin dual did not reach a separating direction", residual=1.0 - mmin)
    theta = theta / mmin
    # complementary slackness gap measures distance to the optimum
    kkt = float(np.abs(alpha * (margins / mmin - 1.0)).sum() / max(alpha.sum(), 1e-300))
    ok = abs(1.0 - mmin) <= 1e-3 or kkt <= tol
    out = _result(theta, dataset, eps, pen, 0.0, res.nit, ok)
    out.estimator.meta["dual_sum"] = float(alpha.sum())
    return out


def fit_unregularized(dataset, eps, norm="linf", consistent=True, **kw):
    """The ``lam -> 0`` estimator.

    The plain robust loss is minimized first. A stationary point at finite
    ``theta`` certifies that no robustly separating direction exists (one
    would strictly decrease the loss), so that minimizer is returned.
    Otherwise the data are treated as robustly separable and the robust
    max-margin solution is returned.
    """
    r = fit_regularized(dataset, eps, norm, consistent, lam=0.0, allow_zero_lambda=True)
    if r.converged and not r.robust_margin > 0:
        r.estimator.meta["regime"] = "nonseparable"
        return r
    out = fit_max_margin(dataset, eps, norm, consistent, **kw)
    out.estimator.meta["regime"] = "separable"
    return out


def regularization_path(dataset, eps, lambdas, norm="linf", consistent=True, **kw):
    """Fits along a decreasing sequence of ``lam`` with warm starts."""
    out = []
    init = None
    for lam in sorted(lambdas, reverse=True):
        r = fit_regularized(dataset, eps, norm, consistent, lam=lam, init=init, **kw)
        init = r.estimator.theta
        out.append((lam, r))
    return out


def default_classification_schedule(compress=1):
    """Doubling schedule: base 0.01, doubling every ``30000/compress`` steps until ``300000/compress``.

    ``compress = 1`` is the full-length schedule (meant for 500000 steps).
    Larger values shorten the doubling periods but keep the base rate, since
    raising the rate early makes the l1 term oscillate and diverge.
    """
    return Schedule(base=0.01, double_every=max(30000 // compress, 1),
                    double_until=max(300000 // compress, 1))


def gd_classification_path(dataset, eps, norm="linf", consistent=True, steps=500000, schedule=None,
                           snapshots=None, max_lr=None, dtype=np.float64):
    """Zero-initialized (sub)gradient descent on the unregularized robust logistic loss.

    Returns :class:`TrainResult` snapshots (``step`` set) at the requested
    iterations. ``max_lr`` optionally caps the step size; ``dtype=np.float32``
    halves the cost of the matrix-vector products. Raises
    :class:`DivergenceError` if the loss exceeds ten times ``log 2``.
    """
    X, y = dataset.X.astype(dtype, copy=False), dataset.y.astype(dtype, copy=False)
    d = X.shape[1]
    pen = _Penalty(dataset.theta_star, norm, consistent)
    schedule = schedule or default_classification_schedule()
    wanted = set(snapshot_steps(steps) if snapshots is None else snapshots)
    theta = np.zeros(d, dtype=dtype)
    out = []
    for k in range(steps + 1):
        value, grad = _objective(theta, X, y, eps, pen, 0.0)
        if not np.isfinite(value) or value > 10.0 * np.log(2.0):
            raise DivergenceError(f"gradient descent diverged at step {k}", residual=value)
        if k in wanted:
            out.append(_result(theta.astype(np.float64), dataset, eps, pen, 0.0, k, True, step=k))
        if k == steps:
            break
        lr = schedule(k)
        if max_lr is not None:
            lr = min(lr, max_lr)
        theta -= (lr * grad).astype(dtype, copy=False)
    return out

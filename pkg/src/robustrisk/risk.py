"""Population standard and adversarial risks of linear estimators under isotropic Gaussian features.

Closed forms are used for squared loss (regression) and 0-1 loss
(classification with ``y = sign(<x, theta_star>)``). Monte Carlo oracles build
the worst-case perturbation explicitly for each test point and are meant for
cross-checking the closed forms.
"""

from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np
from scipy import special

from .data import make_rng
from .exceptions import ConfigurationError, DomainError
from .numerics import SQRT_2_OVER_PI, integral_I, logistic_loss


@dataclass(frozen=True)
class RiskReport:
    """Standard risk, adversarial risk and the terms that make them up."""

    sr: float
    ar: float
    components: dict = field(default_factory=dict)


def _basis_index(theta_star):
    """Index ``k`` if ``theta_star = +-e_k``, else ``None``."""
    k = int(np.argmax(np.abs(theta_star)))
    return k if abs(abs(theta_star[k]) - 1.0) <= 1e-12 else None


def perturbation_penalty(est, norm="linf", consistent=True):
    """Dual norm of the part of ``theta`` an attacker can act on.

    The adversary's best achievable change of ``<theta, x>`` under a budget
    ``eps`` is ``eps`` times this value.
    """
    if norm == "l2":
        return est.perp_l2 if consistent else est.norm2
    if norm == "linf":
        if not consistent:
            return est.norm1
        if _basis_index(est.theta_star) is None:
            raise ConfigurationError("consistent linf perturbations need theta_star = e_k")
        return est.perp_l1
    raise ConfigurationError(f"unknown norm {norm!r}")


def regression_risks(est, eps_test, consistent=True):
    """Squared-loss risks for Gaussian features with target ``<x, theta_star>``.

    ``ar = sr + 2 eps sqrt(2/pi) p sqrt(sr) + eps^2 p^2`` where ``p`` is
    ``||P_perp theta||_2`` (consistent) or ``||theta||_2``.
    """
    if eps_test < 0:
        raise DomainError("eps_test must be nonnegative")
    par_err = (1.0 - est.nu_par) ** 2
    perp_mass = est.perp_l2 ** 2
    sr = par_err + perp_mass
    p = est.perp_l2 if consistent else est.norm2
    cross = 2.0 * eps_test * SQRT_2_OVER_PI * p * np.sqrt(sr)
    ar = sr + cross + (eps_test * p) ** 2
    comps = {"err_total": sr, "perp_mass": perp_mass, "cross": cross,
             "parallel_error": par_err, "orthogonal_error": perp_mass}
    return RiskReport(float(sr), float(ar), comps)


def classification_risks(est, eps_test, norm="linf", consistent=True):
    """0-1 loss risks for labels ``sign(<x, theta_star>)``.

    With ``u = <theta, theta_star>/||theta||`` and ``t = eps * pen / ||theta||``,
    ``sr = arccos(u)/pi`` and ``ar = sr + erf(t/sqrt 2)/2 + I(t, u)``.
    """
    if eps_test < 0:
        raise DomainError("eps_test must be nonnegative")
    nrm = est.norm2
    if not nrm > 0:
        raise DomainError("classification risk of the zero vector is undefined")
    u = float(np.clip(est.nu_par / nrm, -1.0, 1.0))
    t = eps_test * perturbation_penalty(est, norm, consistent) / nrm
    sr = np.arccos(u) / np.pi
    erf_term = 0.5 * special.erf(t / np.sqrt(2.0))
    i_term = float(integral_I(t, u))
    ar = min(1.0, sr + erf_term + i_term)
    comps = {"arccos_term": sr, "erf_term": erf_term, "I_term": i_term, "t": t, "u": u}
    return RiskReport(float(sr), float(ar), comps)


def population_risks(est, eps_test, task, norm=None, consistent=True):
    """Dispatch to :func:`regression_risks` or :func:`classification_risks`."""
    if task == "regression":
        if norm not in (None, "l2"):
            raise ConfigurationError("regression supports l2 perturbations only")
        return regression_risks(est, eps_test, consistent)
    if task == "classification":
        return classification_risks(est, eps_test, norm or "linf", consistent)
    raise ConfigurationError(f"unknown task {task!r}")


def worst_case_perturbation(x, y, est, eps, norm="linf", consistent=True, task="classification"):
    """Explicit maximizer ``delta`` of the loss over the perturbation set, one row per sample.

    For regression the attacker pushes the residual ``<x, theta> - y`` away
    from zero; for classification it lowers the margin ``y <x, theta>``.
    """
    x = np.atleast_2d(np.asarray(x, dtype=float))
    y = np.atleast_1d(np.asarray(y, dtype=float))
    theta = est.theta
    if task == "regression":
        if norm != "l2":
            raise ConfigurationError("regression supports l2 perturbations only")
        sign = np.sign(x @ theta - y)
    elif task == "classification":
        sign = -y
    else:
        raise ConfigurationError(f"unknown task {task!r}")
    sign = np.where(sign == 0, 1.0, sign)
    if norm == "l2":
        v = theta - est.nu_par * est.theta_star if consistent else theta
        nv = np.linalg.norm(v)
        unit = v / nv if nv > 0 else np.zeros_like(v)
        return eps * sign[:, None] * unit[None, :]
    if norm == "linf":
        s = np.sign(theta)
        if consistent:
            k = _basis_index(est.theta_star)
            if k is None:
                raise ConfigurationError("consistent linf perturbations need theta_star = e_k")
            s = s.copy()
            s[k] = 0.0
        return eps * sign[:, None] * s[None, :]
    raise ConfigurationError(f"unknown norm {norm!r}")


def _pointwise_loss(pred, y, task, loss):
    if task == "regression":
        return (pred - y) ** 2
    margin = y * pred
    if loss == "zero_one":
        return (margin <= 0).astype(float)
    if loss == "logistic":
        return logistic_loss(margin)
    raise ConfigurationError(f"unknown loss {loss!r}")


def worst_case_loss_oracle(x, y, est, eps, norm="linf", consistent=True, task="classification",
                           loss="zero_one"):
    """Loss at the worst-case perturbation, evaluated by applying that perturbation to ``x``.

    Regression uses the squared loss against the target ``y`` (the clean
    response ``<x, theta_star>``); classification uses ``loss`` at the
    perturbed margin. Returns one value per row of ``x``.
    """
    x = np.atleast_2d(np.asarray(x, dtype=float))
    y = np.atleast_1d(np.asarray(y, dtype=float))
    delta = worst_case_perturbation(x, y, est, eps, norm, consistent, task)
    return _pointwise_loss((x + delta) @ est.theta, y, task, loss)


class MonteCarloRisk(NamedTuple):
    sr: float
    ar: float
    stderr: float
    sr_stderr: float


def _test_batches(d, samples, seed, batch_elems=2**22):
    rng = make_rng(seed, 0, "mc-test")
    rows = max(1, batch_elems // max(d, 1))
    left = samples
    while left > 0:
        m = min(rows, left)
        yield rng.standard_normal((m, d))
        left -= m


def _targets(x, est, task):
    signal = x @ est.theta_star
    if task == "regression":
        return signal
    return np.where(signal >= 0, 1.0, -1.0)


def monte_carlo_risk(est, eps, norm="linf", consistent=True, task="classification", samples=10**6,
                     seed=0, loss="zero_one"):
    """Monte Carlo estimates of the standard and adversarial risk on fresh Gaussian points.

    Returns ``MonteCarloRisk(sr, ar, stderr, sr_stderr)``; ``stderr`` refers to ``ar``.
    """
    if samples < 1000:
        raise DomainError("use at least 1000 samples")
    acc = np.zeros(4)
    for x in _test_batches(est.d, samples, seed):
        y = _targets(x, est, task)
        clean = _pointwise_loss(x @ est.theta, y, task, loss)
        adv = worst_case_loss_oracle(x, y, est, eps, norm, consistent, task, loss)
        acc += [clean.sum(), (clean ** 2).sum(), adv.sum(), (adv ** 2).sum()]
    mean_sr, mean_ar = acc[0] / samples, acc[2] / samples
    var_sr = max(acc[1] / samples - mean_sr ** 2, 0.0)
    var_ar = max(acc[3] / samples - mean_ar ** 2, 0.0)
    return MonteCarloRisk(float(mean_sr), float(mean_ar), float(np.sqrt(var_ar / samples)),
                          float(np.sqrt(var_sr / samples)))


def mean_shift_dr_estimate(est, eps, norm="linf", task="classification", samples=10**6, seed=0,
                           consistent=True, loss="zero_one", grid=41, return_stderr=False):
    """Risk under the worst deterministic mean shift ``x -> x + delta``.

    The shift enters only through ``c = <theta, delta>``, which ranges over
    ``[-eps pen, eps pen]``. The risk is estimated on one fixed Monte Carlo
    sample for every ``c`` on a grid and the largest value is returned.
    """
    pen = perturbation_penalty(est, norm, consistent)
    shifts = eps * pen * np.linspace(-1.0, 1.0, grid)
    sums = np.zeros(grid)
    sq = np.zeros(grid)
    for x in _test_batches(est.d, samples, seed):
        y = _targets(x, est, task)
        pred = x @ est.theta
        vals = _pointwise_loss(pred[:, None] + shifts[None, :], y[:, None], task, loss)
        sums += vals.sum(axis=0)
        sq += (vals ** 2).sum(axis=0)
    means = sums / samples
    k = int(np.argmax(means))
    dr = float(means[k])
    if return_stderr:
        return dr, float(np.sqrt(max(sq[k] / samples - dr ** 2, 0.0) / samples))
    return dr

"""Asymptotic risks of adversarially trained logistic regression from scalar min-max problems.

In the proportional limit ``d/n -> gamma`` with ``eps = eps0 / sqrt(d)``,
consistent l-infinity attacks and ``theta_star = e_1``, the estimator is
described by a handful of scalars: ``nu_par = <theta, theta_star>``,
``nu_perp = ||P_perp theta||_2`` and ``delta = ||P_perp theta||_1 / sqrt(d)``.
They solve the stationarity equations of a low-dimensional saddle problem.

Regularized (``lam > 0``) problem, unknowns ``(nu_par, nu_perp, delta, r, mu, tau)``::

    C = E M(x, tau/r) - delta mu + r tau / 2 + lam (nu_perp^2 + nu_par^2) - nu_perp sqrt(g(mu, r))
    x = xi |Z_par| nu_par + Z_perp nu_perp - eps0 delta

with ``M`` the Moreau envelope of the logistic loss and ``g`` the second
moment of a soft-thresholded ``N(0, gamma r^2)``.

Robust max-margin problem, unknowns ``(nu_par, nu_perp, delta, r, zeta, kappa)``
and ``s = 1 + kappa``::

    C = nu_par^2 - kappa nu_perp^2 - delta zeta - gamma r^2 / (4 s) + r sqrt(T)
        + 2 s E huber_{zeta/(2s)}(sqrt(gamma) r Z / (2s))
    T = E (1 + eps0 delta - xi |Z_par| nu_par + Z_perp nu_perp)_+^2

``xi`` is the label-flip sign (``-1`` with probability ``flip_prob``) and is
integrated exactly as a two-point mixture.
"""

from dataclasses import astuple, dataclass
from itertools import product

import numpy as np

from .exceptions import DomainError, SolverError
from .numerics import (QuadratureGrid, expected_huber_grad, expected_soft_threshold_sq_grad, half_normal_panel_rule,
                       integral_I, moreau_logistic, positive_part_second_moment_grad,
                       solve_nonlinear_system, std_normal_funcs)


class UnsolvedError(SolverError):
    """No start of the multi-start schedule converged."""


@dataclass(frozen=True)
class CgmtVarsNonSep:
    nu_par: float
    nu_perp: float
    delta: float
    r: float
    mu: float
    tau: float


@dataclass(frozen=True)
class CgmtVarsSep:
    nu_par: float
    nu_perp: float
    delta: float
    r: float
    zeta: float
    kappa: float


@dataclass(frozen=True)
class TheoryPrediction:
    vars: object
    regime: str
    sr: float
    ar: float
    residual_norm: float
    eps0: float
    noise_sigma: float
    gamma: float
    lam: float = None
    converged: bool = True


NONSEP_STARTS = tuple(product((0.3, 0.7), (0.5, 2.0), (0.1, 1.0), (0.5, 2.0), (0.5, 2.0), (0.5, 2.0)))
SEP_STARTS = tuple(product((0.3, 0.7), (0.5, 2.0), (0.1, 1.0), (0.5, 2.0), (0.5, 2.0), (0.5, 2.0)))


def _flip_axis(grid, flip_prob, two_dim=True):
    """Signed ``|Z_par|`` nodes, ``Z_perp`` nodes and weights with the label-flip mixture folded in."""
    if not 0 <= flip_prob < 0.5:
        raise DomainError("flip_prob must lie in [0, 0.5)")
    if two_dim:
        zp, zq, w = grid.mesh()
    else:
        zp, w = grid.half_nodes, grid.half_weights
        zq = None
    if flip_prob == 0:
        return zp, zq, w
    zp2 = np.concatenate([zp, -zp])
    w2 = np.concatenate([(1 - flip_prob) * w, flip_prob * w])
    zq2 = None if zq is None else np.concatenate([zq, zq])
    return zp2, zq2, w2


def nonseparable_residuals(v, gamma, eps0, lam, flip_prob=0.0, grid=None):
    """Partial derivatives of the regularized objective.

    Returns ``(dC/dnu_par, dC/dnu_perp, dC/dr, dC/ddelta, dC/dmu, dC/dtau)``.
    """
    nu_par, nu_perp, delta, r, mu, tau = (float(a) for a in astuple(v))
    if r <= 0 or tau <= 0 or nu_perp < 0 or mu < 0 or delta < 0:
        raise DomainError("need r, tau > 0 and nu_perp, mu, delta >= 0")
    grid = grid or QuadratureGrid.build()
    zs, zq, w = _flip_axis(grid, flip_prob)
    x = zs * nu_par + zq * nu_perp - eps0 * delta
    k = moreau_logistic(x, tau / r)
    e_x_par = w @ (k.d_x * zs)
    e_x_perp = w @ (k.d_x * zq)
    e_x = w @ k.d_x
    e_t = w @ k.d_t
    sq = np.sqrt(gamma)
    g, g_mu, g_s = (float(a) for a in expected_soft_threshold_sq_grad(mu, sq * r))
    root = np.sqrt(g)
    g_r = sq * g_s
    return np.array([
        e_x_par + 2.0 * lam * nu_par,
        e_x_perp + 2.0 * lam * nu_perp - root,
        -tau / (r * r) * e_t - nu_perp * g_r / (2.0 * root) + 0.5 * tau,
        -eps0 * e_x - mu,
        -nu_perp * g_mu / (2.0 * root) - delta,
        e_t / r + 0.5 * r,
    ])


def _t_terms(nu_par, nu_perp, delta, eps0, flip_prob, grid):
    # The Z_perp integral is exact; the |Z_par| integrand has a kink of
    # width nu_perp / nu_par where the bracket crosses zero, which a global
    # Gauss rule resolves poorly once nu_perp << nu_par, so panels split there.
    if not 0 <= flip_prob < 0.5:
        raise DomainError("flip_prob must lie in [0, 0.5)")
    c = 1.0 + eps0 * delta
    out = np.zeros(4)
    for sign, mass in ((1.0, 1.0 - flip_prob), (-1.0, flip_prob)):
        if mass == 0:
            continue
        slope = sign * nu_par
        kink = c / slope if slope > 0 else None
        width = nu_perp / abs(slope) if slope else 0.0
        z, w = half_normal_panel_rule(kink, width)
        zs = sign * z
        p, p_a, p_b = positive_part_second_moment_grad(nu_perp, c - zs * nu_par)
        out += mass * np.array([w @ p, w @ p_a, -(w @ (p_b * zs)), eps0 * (w @ p_b)])
    return tuple(out)


def positive_part_mean(nu_par, nu_perp, delta, eps0, flip_prob=0.0, grid=None):
    """``T = E (1 + eps0 delta - xi |Z_par| nu_par + Z_perp nu_perp)_+^2`` with ``Z_perp`` integrated in closed form."""
    return float(_t_terms(nu_par, nu_perp, delta, eps0, flip_prob, grid or QuadratureGrid.build())[0])


def separable_residuals(v, gamma, eps0, flip_prob=0.0, grid=None):
    """Partial derivatives of the max-margin objective.

    Returns ``(dC/dnu_par, dC/dnu_perp, dC/dr, dC/ddelta, dC/dzeta, dC/dkappa)``.
    """
    nu_par, nu_perp, delta, r, zeta, kappa = (float(a) for a in astuple(v))
    s = 1.0 + kappa
    if s <= 0 or r < 0 or zeta < 0 or nu_perp < 0 or delta < 0:
        raise DomainError("need 1 + kappa > 0 and r, zeta, nu_perp, delta >= 0")
    grid = grid or QuadratureGrid.build()
    T, T_perp, T_par, T_delta = _t_terms(nu_par, nu_perp, delta, eps0, flip_prob, grid)
    if not T > 0:
        raise DomainError("T vanished")
    rt = np.sqrt(T)
    sq = np.sqrt(gamma)
    a = sq * r / (2.0 * s)
    b = zeta / (2.0 * s)
    h, h_a, h_b = (float(q) for q in expected_huber_grad(a, b))
    hs_r = sq * h_a
    hs_zeta = h_b
    hs_s = 2.0 * h - 2.0 * a * h_a - 2.0 * b * h_b
    return np.array([
        2.0 * nu_par + r * T_par / (2.0 * rt),
        -2.0 * kappa * nu_perp + r * T_perp / (2.0 * rt),
        -gamma * r / (2.0 * s) + rt + hs_r,
        -zeta + r * T_delta / (2.0 * rt),
        -delta + hs_zeta,
        -nu_perp ** 2 + gamma * r * r / (4.0 * s * s) + hs_s,
    ])


def theory_risks(v, eps0):
    """Standard and adversarial 0-1 risk implied by ``(nu_par, nu_perp, delta)``."""
    nu = float(np.hypot(v.nu_par, v.nu_perp))
    if not nu > 0:
        raise DomainError("nu must be positive")
    u = float(np.clip(v.nu_par / nu, -1.0, 1.0))
    t = eps0 * v.delta / nu
    sr = float(np.arccos(u) / np.pi)
    erf_t = float(std_normal_funcs(t / np.sqrt(2.0))[0])
    ar = min(1.0, sr + 0.5 * erf_t + float(integral_I(t, u)))
    return sr, ar


def _sanitize(start):
    """Warm starts may sit on the boundary (e.g. a pinned multiplier); move them inside."""
    x = np.asarray(start, dtype=float).copy()
    x[1:] = np.where(x[1:] > 1e-8, x[1:], 0.5)
    return tuple(x)


def _solve(residual_fn, starts, mask, pin, tol, restarts, max_nfev=400):
    """Try starts in order.

    ``pin`` maps a variable index to a fixed value. Each pinned variable
    removes the delta equation (residual 3), which holds identically in the
    only case where we pin (``eps0 = 0``).
    """
    free = [i for i in range(6) if i not in pin]

    def full(xr):
        x = np.empty(6)
        x[free] = xr
        for i, val in pin.items():
            x[i] = val
        return x

    def res(xr):
        return np.delete(residual_fn(full(xr)), [3] if pin else [])

    best = None
    for start in starts:
        x0 = np.asarray(start, dtype=float)[free]
        rep = solve_nonlinear_system(res, x0, np.asarray(mask)[free], tol=tol, restarts=restarts,
                                     max_nfev=max_nfev)
        if best is None or (rep.converged, -rep.residual_norm) > (best.converged, -best.residual_norm):
            best = rep
        if rep.converged:
            break
    return full(best.solution), best


def solve_nonseparable(gamma, eps0, lam, flip_prob=0.0, init=None, grid=None, tol=1e-10, restarts=1,
                       starts=None):
    """Solve the regularized system and return a :class:`TheoryPrediction`.

    Starts from ``init`` (if given) and then the frozen multi-start grid. For
    ``eps0 = 0`` the threshold ``mu`` is pinned to 0, where its equation holds
    identically.
    """
    if not gamma > 0 or eps0 < 0 or lam < 0:
        raise DomainError("need gamma > 0, eps0 >= 0, lam >= 0")
    if not 0 <= flip_prob < 0.5:
        raise DomainError("flip_prob must lie in [0, 0.5)")
    grid = grid or QuadratureGrid.build()
    fn = lambda x: nonseparable_residuals(CgmtVarsNonSep(*x), gamma, eps0, lam, flip_prob, grid)
    seq = list(starts if starts is not None else NONSEP_STARTS)
    if init is not None:
        seq.insert(0, _sanitize(astuple(init) if not isinstance(init, (tuple, list, np.ndarray)) else init))
    pin = {4: 0.0} if eps0 == 0 else {}
    if eps0 == 0:
        seq = [tuple(s[:4]) + (1.0,) + tuple(s[5:]) for s in seq]
    x, rep = _solve(fn, seq, [False, True, True, True, True, True], pin, tol, restarts)
    v = CgmtVarsNonSep(*(float(a) for a in x))
    if not rep.converged:
        raise UnsolvedError("regularized system did not converge", residual=rep.residual_norm)
    sr, ar = theory_risks(v, eps0)
    return TheoryPrediction(v, "regularized", sr, ar, rep.residual_norm, float(eps0), float(flip_prob),
                            float(gamma), float(lam), True)


def solve_separable(gamma, eps0, flip_prob=0.0, init=None, grid=None, tol=1e-10, restarts=1, starts=None):
    """Solve the robust max-margin system and return a :class:`TheoryPrediction`.

    The start grid lists ``(nu_par, nu_perp, delta, r, zeta, 1 + kappa)``.
    For ``eps0 = 0`` the multiplier ``zeta`` is pinned to 0.
    """
    if not gamma > 0 or eps0 < 0:
        raise DomainError("need gamma > 0 and eps0 >= 0")
    if not 0 <= flip_prob < 0.5:
        raise DomainError("flip_prob must lie in [0, 0.5)")
    grid = grid or QuadratureGrid.build()

    def fn(x):
        return separable_residuals(CgmtVarsSep(x[0], x[1], x[2], x[3], x[4], x[5] - 1.0),
                                   gamma, eps0, flip_prob, grid)

    seq = list(starts if starts is not None else SEP_STARTS)
    if init is not None:
        if isinstance(init, CgmtVarsSep):
            init = (init.nu_par, init.nu_perp, init.delta, init.r, init.zeta, 1.0 + init.kappa)
        seq.insert(0, _sanitize(init))
    pin = {4: 0.0} if eps0 == 0 else {}
    if eps0 == 0:
        seq = [tuple(s[:4]) + (1.0,) + tuple(s[5:]) for s in seq]
    x, rep = _solve(fn, seq, [False, True, True, True, True, True], pin, tol, restarts)
    v = CgmtVarsSep(float(x[0]), float(x[1]), float(x[2]), float(x[3]), float(x[4]), float(x[5] - 1.0))
    if not rep.converged:
        raise UnsolvedError("max-margin system did not converge", residual=rep.residual_norm)
    sr, ar = theory_risks(v, eps0)
    return TheoryPrediction(v, "separable", sr, ar, rep.residual_norm, float(eps0), float(flip_prob),
                            float(gamma), 0.0, True)

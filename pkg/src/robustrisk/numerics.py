"""Numerical substrate for the asymptotic risk formulas.

Contains standard normal helpers, the proximal operator and Moreau envelope of
the logistic loss, closed-form Gaussian expectations (soft-threshold second
moment, expected Huber loss, second moment of a positive part), the integral
``I(t, u)`` appearing in the robust 0-1 risk, a tensor Gaussian quadrature over
``(|Z_par|, Z_perp)`` and a small Levenberg-Marquardt driver for the scalar
fixed-point systems.

All functions broadcast over numpy arrays.
"""

from dataclasses import dataclass, field
from functools import lru_cache

import mpmath
import numpy as np
from scipy import special
from scipy.linalg import eigh_tridiagonal
from scipy.optimize import least_squares

from .exceptions import EvaluationError, SolverError

SQRT2 = np.sqrt(2.0)
SQRT2PI = np.sqrt(2.0 * np.pi)
SQRT_2_OVER_PI = np.sqrt(2.0 / np.pi)


def std_normal_funcs(x):
    """Return ``(erf(x), Phi(x), phi(x))`` for the standard normal."""
    x = np.asarray(x, dtype=float)
    return special.erf(x), special.ndtr(x), np.exp(-0.5 * x * x) / SQRT2PI


def logistic_loss(z):
    """``log(1 + exp(-z))`` evaluated without overflow."""
    return np.logaddexp(0.0, -np.asarray(z, dtype=float))


def logistic_loss_grad(z):
    """Derivative of :func:`logistic_loss`, equal to ``-sigmoid(-z)``."""
    return -special.expit(-np.asarray(z, dtype=float))


# ---------------------------------------------------------------------------
# logistic prox and Moreau envelope


def prox_logistic(x, mu, tol=1e-10, max_iter=100):
    """Proximal operator of the logistic loss.

    Solves ``t - x - mu * sigmoid(-t) = 0``. The left side is increasing in
    ``t`` and its root lies in ``[x, x + mu]``, so Newton steps that leave the
    current bracket are replaced by bisection.

    Parameters
    ----------
    x : array_like
        Point at which the prox is evaluated.
    mu : array_like
        Positive step, broadcast against ``x``.

    Returns
    -------
    ndarray or float
    """
    x, mu = np.broadcast_arrays(np.asarray(x, dtype=float), np.asarray(mu, dtype=float))
    if np.any(~(mu > 0)):
        raise ValueError("prox_logistic requires mu > 0")
    lo = x.copy()
    hi = x + mu
    t = x.copy()
    scale = np.maximum(1.0, np.abs(x) + mu)
    res = np.inf
    for _ in range(max_iter):
        sig = special.expit(-t)
        h = t - x - mu * sig
        res = np.abs(h)
        done = res <= 1e-15 * scale
        if np.all(done):
            break
        pos = h > 0
        hi = np.where(pos, t, hi)
        lo = np.where(pos, lo, t)
        step = h / (1.0 + mu * sig * (1.0 - sig))
        t_new = t - step
        outside = (t_new <= lo) | (t_new >= hi)
        t_new = np.where(outside, 0.5 * (lo + hi), t_new)
        # stop moving once the bracket has collapsed
        t = np.where(done | (hi - lo <= 4e-16 * scale), t, t_new)
    h = t - x - mu * special.expit(-t)
    worst = float(np.max(np.abs(h))) if h.size else 0.0
    if not worst <= tol * max(1.0, float(np.max(scale)) if h.size else 1.0):
        raise SolverError("prox_logistic did not converge", residual=worst)
    return t[()] if t.ndim == 0 else t


@dataclass(frozen=True)
class KernelEval:
    """Value of a scalar kernel with optional partial derivatives."""

    value: object
    d_x: object = None
    d_t: object = None


def moreau_logistic(x, t):
    """Moreau envelope ``M(x, t) = min_p l(p) + (x - p)^2 / (2t)`` of the logistic loss.

    Returns a :class:`KernelEval` with ``d_x = (x - p)/t`` and
    ``d_t = -(x - p)^2 / (2 t^2)`` where ``p`` is the prox.
    """
    x, t = np.broadcast_arrays(np.asarray(x, dtype=float), np.asarray(t, dtype=float))
    p = prox_logistic(x, t)
    diff = x - p
    value = logistic_loss(p) + diff * diff / (2.0 * t)
    d_x = diff / t
    d_t = -0.5 * d_x * d_x
    return KernelEval(value=value, d_x=d_x, d_t=d_t)


# ---------------------------------------------------------------------------
# closed-form Gaussian expectations


def expected_excess(s, mu):
    """``E(|s Z| - mu)_+`` for ``s > 0`` and ``mu >= 0``."""
    s = np.asarray(s, dtype=float)
    mu = np.asarray(mu, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        h = mu / s
        out = s * SQRT_2_OVER_PI * np.exp(-0.5 * h * h) - mu * special.erfc(h / SQRT2)
    return np.where(s > 0, out, 0.0)


def expected_soft_threshold_sq(mu, s):
    """Second moment ``E[soft_mu(s Z)^2]`` of a soft-thresholded Gaussian."""
    return expected_soft_threshold_sq_grad(mu, s)[0]


def expected_soft_threshold_sq_grad(mu, s):
    """Soft-threshold second moment with partials in ``mu`` and ``s``.

    Returns ``(G, dG/dmu, dG/ds)``.
    """
    mu = np.asarray(mu, dtype=float)
    s = np.asarray(s, dtype=float)
    if np.any(mu < 0) or np.any(~(s > 0)):
        raise ValueError("need mu >= 0 and s > 0")
    h = mu / s
    g = (mu * mu + s * s) * special.erfc(h / SQRT2) - s * mu * SQRT_2_OVER_PI * np.exp(-0.5 * h * h)
    g = np.maximum(g, 0.0)
    ex = expected_excess(s, mu)
    return g, -2.0 * ex, 2.0 * (g + mu * ex) / s


def expected_huber(a, b):
    """``E huber_b(a Z)`` where ``huber_b(x) = x^2/2`` for ``|x| <= b`` and ``b|x| - b^2/2`` otherwise."""
    return expected_huber_grad(a, b)[0]


def expected_huber_grad(a, b):
    """Expected Huber loss with partials. Returns ``(H, dH/da, dH/db)``."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if np.any(b < 0):
        raise ValueError("expected_huber requires b >= 0")
    sgn = np.sign(a)
    a = np.abs(a)
    pos = a > 0
    a_safe = np.where(pos, a, 1.0)
    h = b / a_safe
    e = special.erf(h / SQRT2)
    val = 0.5 * (a * a + b * b) * e - 0.5 * b * b + a * b * np.exp(-0.5 * h * h) / SQRT2PI
    val = np.where(pos, np.maximum(val, 0.0), 0.0)
    d_a = np.where(pos, sgn * a * e, 0.0)
    d_b = np.where(pos, expected_excess(a_safe, b), 0.0)
    return val, d_a, d_b


def positive_part_second_moment(a, b):
    """``E max(0, b + a Z)^2`` for ``a >= 0``."""
    return positive_part_second_moment_grad(a, b)[0]


def positive_part_second_moment_grad(a, b):
    """Second moment of ``(b + aZ)_+`` with partials. Returns ``(P, dP/da, dP/db)``."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if np.any(a < 0):
        raise ValueError("positive_part_second_moment requires a >= 0")
    pos = a > 0
    a_safe = np.where(pos, a, 1.0)
    h = b / a_safe
    cdf = special.ndtr(h)
    pdf = np.exp(-0.5 * h * h) / SQRT2PI
    val = (a * a + b * b) * cdf + a * b * pdf
    d_a = 2.0 * a * cdf
    d_b = 2.0 * (b * cdf + a * pdf)
    bp = np.maximum(b, 0.0)
    val = np.where(pos, np.maximum(val, 0.0), bp * bp)
    d_a = np.where(pos, d_a, 0.0)
    d_b = np.where(pos, d_b, 2.0 * bp)
    return val, d_a, d_b


def integral_I(t, u):
    """``I(t, u) = int_0^t phi(x) erf(x u / sqrt(2 (1 - u^2))) dx``.

    Evaluated through Owen's T function: with ``a = u / sqrt(1 - u^2)``,
    ``I = arcsin(u)/pi - 2 T(t, a)``. At ``u = +-1`` the inner erf is the sign
    function and ``I = +-(Phi(t) - 1/2)``.
    """
    t = np.asarray(t, dtype=float)
    u = np.asarray(u, dtype=float)
    if np.any(t < 0) or np.any(np.abs(u) > 1):
        raise ValueError("integral_I requires t >= 0 and |u| <= 1")
    t, u = np.broadcast_arrays(t, u)
    edge = np.abs(u) >= 1.0
    u_in = np.where(edge, 0.0, u)
    a = u_in / np.sqrt(1.0 - u_in * u_in)
    inner = np.arcsin(u_in) / np.pi - 2.0 * special.owens_t(t, a)
    limit = np.sign(u) * (special.ndtr(t) - 0.5)
    out = np.where(edge, limit, inner)
    out = np.where(t == 0, 0.0, out)
    return out[()] if out.ndim == 0 else out


# ---------------------------------------------------------------------------
# quadrature


@lru_cache(maxsize=8)
def _half_normal_rule(n, dps=250):
    """Gauss rule for the half-normal density ``2 phi(z)`` on ``[0, inf)``.

    Recurrence coefficients come from the moments
    ``E|Z|^k = 2^{k/2} Gamma((k+1)/2) / sqrt(pi)`` through the Chebyshev
    algorithm run in high precision; eigenvalues of the Jacobi matrix seed a
    Newton polish of the nodes.
    """
    with mpmath.workdps(dps):
        mom = [mpmath.power(2, mpmath.mpf(k) / 2) * mpmath.gamma(mpmath.mpf(k + 1) / 2) / mpmath.sqrt(mpmath.pi)
               for k in range(2 * n)]
        alpha = [mpmath.mpf(0)] * n
        beta = [mpmath.mpf(0)] * n
        alpha[0] = mom[1] / mom[0]
        beta[0] = mom[0]
        prev = [mpmath.mpf(0)] * (2 * n)
        cur = list(mom)
        for k in range(1, n):
            nxt = [mpmath.mpf(0)] * (2 * n)
            for ell in range(k, 2 * n - k):
                nxt[ell] = cur[ell + 1] - alpha[k - 1] * cur[ell] - beta[k - 1] * prev[ell]
            alpha[k] = nxt[k + 1] / nxt[k] - cur[k] / cur[k - 1]
            beta[k] = nxt[k] / cur[k - 1]
            prev, cur = cur, nxt
        diag = np.array([float(a) for a in alpha])
        off = np.array([float(mpmath.sqrt(b)) for b in beta[1:]])
        guess = eigh_tridiagonal(diag, off, eigvals_only=True)
        # Newton-polish the nodes and take weights from the Christoffel
        # function, both in extended precision so that the tiny weights of
        # the outermost nodes keep full relative accuracy.
        sq = [mpmath.sqrt(b) for b in beta]
        nodes, weights = [], []
        for x0 in guess:
            x = mpmath.mpf(x0)
            for _ in range(6):
                p_prev, p = mpmath.mpf(0), 1 / sq[0]
                dp_prev, dp = mpmath.mpf(0), mpmath.mpf(0)
                total = p * p
                for j in range(n):
                    nxt_sq = sq[j + 1] if j + 1 < n else mpmath.mpf(1)
                    p_new = ((x - alpha[j]) * p - (sq[j] * p_prev if j else 0)) / nxt_sq
                    dp_new = (p + (x - alpha[j]) * dp - (sq[j] * dp_prev if j else 0)) / nxt_sq
                    p_prev, p, dp_prev, dp = p, p_new, dp, dp_new
                    if j + 1 < n:
                        total += p * p
                x -= p / dp
            nodes.append(x)
            weights.append(1 / total)
        nodes = np.array([float(x) for x in nodes])
        weights = np.array([float(w) for w in weights])
    return nodes, weights / weights.sum()


_PANEL_BREAKS = (0.0, 0.5, 1.0, 1.5, 2.0, 2.5, 3.0, 4.0, 5.0, 6.0, 8.0, 10.0, 14.0, 40.0)


def half_normal_panel_rule(kink=None, width=0.0, order=24):
    """Composite Gauss-Legendre rule for ``2 phi(z)`` on ``[0, 40]``.

    Meant for integrands that are smooth except for a (possibly smoothed) kink
    of the given ``width`` at ``kink``; panels are split there so that a
    narrow kink does not spoil the accuracy of a global Gauss rule.
    """
    breaks = set(_PANEL_BREAKS)
    if kink is not None and 0 < kink < _PANEL_BREAKS[-1]:
        for k in (0, 1, 3, 8, 20):
            breaks.update((kink - k * width, kink + k * width))
    b = np.array(sorted(x for x in breaks if 0 <= x <= _PANEL_BREAKS[-1]))
    b = b[np.concatenate([[True], np.diff(b) > 1e-14])]
    x, w = np.polynomial.legendre.leggauss(order)
    lo, hi = b[:-1, None], b[1:, None]
    nodes = (0.5 * (hi - lo) * x + 0.5 * (hi + lo)).ravel()
    weights = (0.5 * (hi - lo) * w).ravel() * 2.0 * np.exp(-0.5 * nodes * nodes) / np.sqrt(2 * np.pi)
    return nodes, weights


@lru_cache(maxsize=8)
def _normal_rule(n):
    nodes, weights = special.roots_hermitenorm(n)
    return nodes, weights / weights.sum()


@dataclass(frozen=True)
class QuadratureGrid:
    """Tensor Gauss rule for ``(|Z_par|, Z_perp)`` with ``Z_par, Z_perp`` iid standard normal.

    The ``|Z_par|`` axis uses a Gauss rule for the half-normal density, so odd
    powers of ``|Z_par|`` are integrated exactly as well as even ones.
    """

    half_nodes: np.ndarray
    half_weights: np.ndarray
    full_nodes: np.ndarray
    full_weights: np.ndarray
    node_count: int
    _mesh: tuple = field(default=None, repr=False, compare=False)

    @classmethod
    def build(cls, node_count=96):
        return _grid(int(node_count))

    def mesh(self):
        """Flattened ``(z_par, z_perp, weight)`` arrays over the tensor grid."""
        return self._mesh


@lru_cache(maxsize=8)
def _grid(n):
    hn, hw = _half_normal_rule(n)
    fn, fw = _normal_rule(n)
    zp, zq = np.meshgrid(hn, fn, indexing="ij")
    w = np.outer(hw, fw)
    mesh = tuple(np.ascontiguousarray(a.ravel()) for a in (zp, zq, w))
    for a in mesh + (hn, hw, fn, fw):
        a.setflags(write=False)
    return QuadratureGrid(hn, hw, fn, fw, n, mesh)


def gaussian_expectation(f, grid=None):
    """Tensor quadrature estimate of ``E f(|Z_par|, Z_perp)``.

    ``f`` receives broadcastable arrays of shape ``(N, 1)`` and ``(1, N)``.
    """
    grid = grid or QuadratureGrid.build()
    zp = grid.half_nodes[:, None]
    zq = grid.full_nodes[None, :]
    vals = np.broadcast_to(np.asarray(f(zp, zq), dtype=float), (zp.size, zq.size))
    bad = ~np.isfinite(vals)
    if bad.any():
        i, j = np.argwhere(bad)[0]
        raise EvaluationError(
            f"non-finite integrand at node z_par={grid.half_nodes[i]!r}, z_perp={grid.full_nodes[j]!r}")
    return float(grid.half_weights @ vals @ grid.full_weights)


# ---------------------------------------------------------------------------
# nonlinear systems


@dataclass
class SolveReport:
    """Outcome of :func:`solve_nonlinear_system`."""

    solution: np.ndarray
    residual_norm: float
    iterations: int
    converged: bool
    restarts_used: int


def solve_nonlinear_system(residual, x0, positivity_mask=None, tol=1e-10, restarts=8,
                           max_nfev=2000, boundary_tol=1e-12, seed=0):
    """Solve ``residual(x) = 0`` by Levenberg-Marquardt.

    Variables flagged in ``positivity_mask`` are optimized as ``log x``. The
    Jacobian is a forward difference with step ``1e-6 (1 + |y|)`` in the
    transformed coordinates. When a run fails, further runs start from
    ``x0`` perturbed by a fixed-seed generator, so the schedule is
    deterministic. A solution whose positive coordinates collapse below
    ``boundary_tol`` is reported with ``converged=False``.
    """
    x0 = np.asarray(x0, dtype=float)
    mask = np.zeros(x0.shape, bool) if positivity_mask is None else np.asarray(positivity_mask, bool)
    if np.any(x0[mask] <= 0):
        raise ValueError("positive variables need a positive starting value")

    def to_x(y):
        x = y.copy()
        x[mask] = np.exp(y[mask])
        return x

    def fun(y):
        r = np.asarray(residual(to_x(y)), dtype=float)
        if r.shape != x0.shape:
            raise ValueError("residual dimension must match x0")
        if not np.all(np.isfinite(r)):
            return np.full_like(r, 1e100)
        return r

    def jac(y):
        f0 = fun(y)
        J = np.empty((f0.size, y.size))
        for k in range(y.size):
            h = 1e-6 * (1.0 + abs(y[k]))
            yk = y.copy()
            yk[k] += h
            J[:, k] = (fun(yk) - f0) / h
        return J

    y0 = x0.copy()
    y0[mask] = np.log(x0[mask])
    rng = np.random.default_rng(seed)
    best = None
    total_iters = 0
    for attempt in range(restarts + 1):
        if attempt == 0:
            start = y0
        else:
            start = y0 + rng.normal(scale=0.5, size=y0.size) * np.where(mask, 1.0, 1.0 + np.abs(y0))
        try:
            sol = least_squares(fun, start, jac=jac, method="lm", xtol=1e-15, ftol=1e-15,
                                gtol=1e-15, max_nfev=max_nfev)
        except (ValueError, FloatingPointError):
            continue
        total_iters += int(sol.nfev)
        x = to_x(sol.x)
        rn = float(np.linalg.norm(fun(sol.x)))
        ok = rn <= tol and not np.any(x[mask] < boundary_tol)
        report = SolveReport(x, rn, total_iters, bool(ok), attempt)
        if best is None or (report.converged, -report.residual_norm) > (best.converged, -best.residual_norm):
            best = report
        if ok:
            break
    if best is None:
        best = SolveReport(to_x(y0), float("inf"), total_iters, False, restarts)
    best.iterations = total_iters
    return best

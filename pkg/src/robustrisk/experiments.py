"""Sweep harness: runs theory and simulation grids and writes self-describing result rows.

A :class:`SweepSpec` names a base problem, the axes to vary and how many
seeds to draw. :func:`run_sweep` splits the grid into independent work units,
runs them (optionally in a process pool) and returns the rows in a fixed
order, so the output does not depend on the number of workers.
"""

import csv
import dataclasses
import io
import json
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, fields
from itertools import product

import numpy as np

from .data import RNG_ALGO, ProblemConfig, generate_dataset
from .exceptions import ConfigurationError, LabError
from .linreg import gd_regression_path, linreg_asymptotics, optimal_lambda, ridge_path
from .logreg import (default_classification_schedule, fit_regularized, fit_unregularized,
                     gd_classification_path)
from .logreg_theory import solve_nonseparable, solve_separable
from .risk import classification_risks, regression_risks

MAX_D = 16000
MAX_N = 2000
FLOAT_DIGITS = 12

# ---------------------------------------------------------------------------
# rows


def _round(v):
    """Round to the printed precision so that emitted rows parse back unchanged."""
    if v is None:
        return None
    v = float(v)
    return float(f"{v:.{FLOAT_DIGITS}g}") if np.isfinite(v) else v


@dataclass
class ResultRow:
    """One evaluated point. ``seed`` is the replicate index or ``"theory"``."""

    experiment_id: str
    regime: str
    gamma: float
    d: int
    n: int
    lam: float
    eps_train: float
    eps_test: float
    flip_prob: float
    sigma2: float
    seed: object
    sr: float = None
    ar: float = None
    nu_par: float = None
    perp_l2: float = None
    perp_l1_scaled: float = None
    robust_margin: float = None
    robust_avg_margin: float = None
    l1_over_l2: float = None
    train_loss: float = None
    wall_ms: float = None
    rng_algo: str = RNG_ALGO
    base_seed: int = 0
    status: str = "ok"
    step: int = None

    def __post_init__(self):
        for f in _FLOAT_FIELDS:
            setattr(self, f, _round(getattr(self, f)))


_INT_FIELDS = ("d", "n", "base_seed", "step")
_STR_FIELDS = ("experiment_id", "regime", "rng_algo", "status")
_FLOAT_FIELDS = ("gamma", "lam", "eps_train", "eps_test", "flip_prob", "sigma2", "sr", "ar", "nu_par",
                 "perp_l2", "perp_l1_scaled", "robust_margin", "robust_avg_margin", "l1_over_l2",
                 "train_loss", "wall_ms")
# the CSV header calls the regularization strength "lambda"
HEADER = ["lambda" if f.name == "lam" else f.name for f in fields(ResultRow)]


def _fmt(v):
    if v is None:
        return ""
    if isinstance(v, float):
        return f"{v:.{FLOAT_DIGITS}g}"
    return str(v)


def _row_dict(row):
    return {("lambda" if k == "lam" else k): v for k, v in dataclasses.asdict(row).items()}


def emit(rows, fmt="csv", path=None):
    """Write rows as CSV (fixed header, LF newlines) or JSON lines.

    With ``path=None`` the text is returned instead of written.
    """
    buf = io.StringIO()
    if fmt == "csv":
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(HEADER)
        for r in rows:
            w.writerow([_fmt(v) for v in _row_dict(r).values()])
    elif fmt in ("json-lines", "jsonl"):
        for r in rows:
            buf.write(json.dumps(_row_dict(r)) + "\n")
    else:
        raise ConfigurationError(f"unknown format {fmt!r}")
    text = buf.getvalue()
    if path is None:
        return text
    try:
        with open(path, "w", newline="") as fh:
            fh.write(text)
    except OSError as exc:
        raise OSError(f"cannot write {path}: {exc}") from exc
    return None


def _convert(key, value):
    if value is None or value == "":
        return None
    if key == "seed":
        return value if value == "theory" else int(value)
    if key in _INT_FIELDS:
        return int(value)
    if key in _STR_FIELDS:
        return str(value)
    return float(value)


def parse(text_or_path, fmt="csv"):
    """Inverse of :func:`emit`; accepts a path or the text itself."""
    text = text_or_path
    if os.path.exists(str(text_or_path)):
        with open(text_or_path) as fh:
            text = fh.read()
    if fmt == "csv":
        records = list(csv.DictReader(io.StringIO(text)))
    elif fmt in ("json-lines", "jsonl"):
        records = [json.loads(line) for line in text.splitlines() if line.strip()]
    else:
        raise ConfigurationError(f"unknown format {fmt!r}")
    out = []
    for rec in records:
        kw = {("lam" if k == "lambda" else k): _convert("lam" if k == "lambda" else k, v) for k, v in rec.items()}
        out.append(ResultRow(**kw))
    return out


# ---------------------------------------------------------------------------
# sweep specification


@dataclass
class SweepSpec:
    """A grid of problems.

    ``lambda_list`` may contain ``"opt"`` (regression only), which is replaced
    by the asymptotically optimal ``lambda`` of each point. For classification
    ``lambda = 0`` means the ``lam -> 0`` limit: the robust max-margin
    solution when it exists. ``method = "gd"`` replaces the fits by gradient
    descent snapshots. Classification theory uses ``eps0 = eps * sqrt(d)``
    with the same radius for training and evaluation.
    """

    name: str
    base: ProblemConfig
    gamma_list: list = field(default_factory=list)
    lambda_list: list = field(default_factory=list)
    eps_list: list = field(default_factory=list)
    flip_list: list = field(default_factory=list)
    sigma2_list: list = field(default_factory=list)
    seeds: int = 5
    theory: bool = True
    empirical: bool = True
    method: str = "fit"
    gd_steps: int = 0
    gd_compress: int = 1
    timing: bool = False
    caps: bool = True
    out_path: str = None
    out_format: str = "csv"

    def __post_init__(self):
        if not any((self.gamma_list, self.lambda_list, self.eps_list, self.flip_list, self.sigma2_list)):
            raise ConfigurationError("at least one axis must be nonempty")
        if self.seeds < 1:
            raise ConfigurationError("seeds must be at least 1")
        if self.method not in ("fit", "gd"):
            raise ConfigurationError(f"unknown method {self.method!r}")

    @property
    def task(self):
        return self.base.task

    def axes(self):
        b = self.base
        return (self.gamma_list or [b.gamma], self.lambda_list or [b.lam], self.eps_list or [b.eps_test],
                self.flip_list or [b.label_flip_prob], self.sigma2_list or [b.sigma2])

    def to_dict(self):
        out = dataclasses.asdict(self)
        out["base"] = dataclasses.asdict(self.base)
        return out

    @classmethod
    def from_dict(cls, data):
        data = dict(data)
        base = data.pop("base", {})
        if isinstance(base, dict):
            base = ProblemConfig(**base)
        names = {f.name for f in fields(cls)}
        unknown = set(data) - names
        if unknown:
            raise ConfigurationError(f"unknown spec keys: {sorted(unknown)}")
        return cls(base=base, **data)

    def with_(self, **changes):
        return dataclasses.replace(self, **changes)


def load_spec(path):
    with open(path) as fh:
        return SweepSpec.from_dict(json.load(fh))


# ---------------------------------------------------------------------------
# presets

_LINREG_GAMMAS = [0.2, 0.35, 0.5, 0.7, 1.4, 2.0, 2.8, 4.0, 5.6, 8.0]


def _linreg_base(sigma2):
    return ProblemConfig(d=1000, n=1000, task="regression", sigma2=sigma2, eps_test=0.4, consistent=True)


def _logreg_base(eps, flip=0.0):
    return ProblemConfig(d=8000, n=1000, task="classification", eps_train=eps, eps_test=eps,
                         label_flip_prob=flip, consistent=True)


PRESETS = {
    # ridge regression risks against gamma, noisy and noiseless, lambda in {0, optimal}
    "fig2a": lambda: SweepSpec("fig2a", _linreg_base(0.2), gamma_list=list(_LINREG_GAMMAS),
                               lambda_list=[0.0, "opt"]),
    "fig2b": lambda: SweepSpec("fig2b", _linreg_base(0.0), gamma_list=list(_LINREG_GAMMAS),
                               lambda_list=[0.0, "opt"]),
    # asymptotic regression risks along the lambda path for several gamma
    "fig3": lambda: SweepSpec("fig3", _linreg_base(0.0), gamma_list=[0.5, 1.5, 2.0, 4.0, 8.0],
                              lambda_list=[float(v) for v in np.geomspace(1e-3, 1e2, 26)], empirical=False),
    # robust logistic regression at d/n = 8 along the lambda path (0 is the max-margin limit)
    "fig4a": lambda: SweepSpec("fig4a", _logreg_base(0.1), gamma_list=[8.0],
                               lambda_list=[0.0, 0.001, 0.003, 0.01, 0.03, 0.1, 0.3, 1.0, 3.0], theory=False),
    # gradient descent on the unregularized robust loss, compressed doubling schedule
    "fig4b": lambda: SweepSpec("fig4b", _logreg_base(0.1), gamma_list=[8.0], lambda_list=[0.0], theory=False,
                               method="gd", gd_steps=16666, gd_compress=30),
    # theory against simulation for eps0 = 0.05 sqrt(1000 gamma), lambda in {1, max-margin}
    "fig5": lambda: SweepSpec("fig5", _logreg_base(0.05), gamma_list=[2.0, 8.0], lambda_list=[0.0, 1.0]),
    # label noise: unregularized and regularized fits for several flip rates
    "fig6": lambda: SweepSpec("fig6", _logreg_base(0.1), gamma_list=[8.0],
                              lambda_list=[0.0, 0.03, 0.1, 0.3, 1.0],
                              flip_list=[0.0, 0.02, 0.05, 0.1, 0.15, 0.2], theory=False),
}


def preset(name):
    """Frozen spec for a named figure grid."""
    if name not in PRESETS:
        raise ConfigurationError(f"unknown preset {name!r}; choose from {', '.join(sorted(PRESETS))}")
    return PRESETS[name]()


# ---------------------------------------------------------------------------
# work units


@dataclass(frozen=True)
class _Unit:
    kind: str
    spec: SweepSpec
    gamma: float
    lambdas: tuple
    eps: float
    flip: float
    sigma2: float
    replicate: object


def _units(spec):
    gammas, lambdas, epss, flips, sig2s = spec.axes()
    out = []
    for g, e, f, s in product(gammas, epss, flips, sig2s):
        if spec.theory:
            for lam in lambdas:
                out.append(_Unit("theory", spec, g, (lam,), e, f, s, "theory"))
        if spec.empirical:
            for k in range(spec.seeds):
                out.append(_Unit("empirical", spec, g, tuple(lambdas), e, f, s, k))
    return out


def _dims(spec, gamma):
    n = spec.base.n
    d = max(1, int(round(gamma * n)))
    if spec.caps and (d > MAX_D or n > MAX_N):
        raise ConfigurationError(f"d={d}, n={n} exceeds the desk-scale caps d<={MAX_D}, n<={MAX_N}")
    return d, n


def _resolve_lambda(lam, gamma, sigma2, eps):
    if lam == "opt":
        return optimal_lambda(gamma, sigma2, eps)[0]
    return float(lam)


def _linreg_regime(requested, lam):
    if requested == "opt":
        return "ridge_opt"
    return "min_norm" if lam == 0 else "ridge"


def _base_row(unit, d, n, lam, regime, **kw):
    spec = unit.spec
    eps_train = unit.eps if spec.task == "classification" else spec.base.eps_train
    return ResultRow(spec.name, regime, unit.gamma, d, n, lam, eps_train, unit.eps, unit.flip, unit.sigma2,
                     unit.replicate, base_seed=spec.base.seed, **kw)


def _estimator_fields(est):
    return dict(nu_par=est.nu_par, perp_l2=est.perp_l2, perp_l1_scaled=est.perp_l1 / np.sqrt(est.d))


def _train_fields(res):
    return dict(robust_margin=res.robust_margin, robust_avg_margin=res.robust_avg_margin,
                l1_over_l2=res.l1_over_l2, train_loss=res.final_loss)


def _linreg_theory(unit, d, n):
    lam = _resolve_lambda(unit.lambdas[0], unit.gamma, unit.sigma2, unit.eps)
    regime = _linreg_regime(unit.lambdas[0], lam)
    a = linreg_asymptotics(lam, unit.gamma, unit.sigma2, unit.eps)
    return [_base_row(unit, d, n, lam, regime, sr=a.sr, ar=a.ar, nu_par=1.0 - a.lambda_m,
                      perp_l2=np.sqrt(a.perp_mass))]


def _logreg_theory(unit, d, n):
    lam = float(unit.lambdas[0])
    eps0 = unit.eps * np.sqrt(d)
    if lam == 0 and unit.flip == 0:
        p = solve_separable(unit.gamma, eps0, 0.0)
    else:
        p = solve_nonseparable(unit.gamma, eps0, lam, unit.flip)
    v = p.vars
    return [_base_row(unit, d, n, lam, p.regime, sr=p.sr, ar=p.ar, nu_par=v.nu_par, perp_l2=v.nu_perp,
                      perp_l1_scaled=v.delta)]


def _config(unit, d, n):
    b = unit.spec.base
    return b.with_(d=d, n=n, sigma2=unit.sigma2, label_flip_prob=unit.flip, eps_test=unit.eps,
                   eps_train=unit.eps if b.task == "classification" else b.eps_train, trial=unit.replicate)


def _linreg_empirical(unit, d, n):
    spec = unit.spec
    ds = generate_dataset(_config(unit, d, n))
    cons = spec.base.consistent
    if spec.method == "gd":
        rows = []
        for step, est in gd_regression_path(ds, steps=spec.gd_steps):
            rk = regression_risks(est, unit.eps, cons)
            rows.append(_base_row(unit, d, n, 0.0, "gd", sr=rk.sr, ar=rk.ar, step=step, **_estimator_fields(est)))
        return rows
    lams = [_resolve_lambda(lam, unit.gamma, unit.sigma2, unit.eps) for lam in unit.lambdas]
    rows = []
    for req, lam, est in zip(unit.lambdas, lams, ridge_path(ds, lams)):
        rk = regression_risks(est, unit.eps, cons)
        r = ds.X @ est.theta - ds.y
        rows.append(_base_row(unit, d, n, lam, _linreg_regime(req, lam), sr=rk.sr, ar=rk.ar,
                              train_loss=float(r @ r) / n, **_estimator_fields(est)))
    return rows


def _logreg_empirical(unit, d, n):
    spec = unit.spec
    ds = generate_dataset(_config(unit, d, n))
    norm, cons = spec.base.perturbation_norm, spec.base.consistent
    rows = []
    if spec.method == "gd":
        path = gd_classification_path(ds, unit.eps, norm, cons, steps=spec.gd_steps,
                                      schedule=default_classification_schedule(spec.gd_compress),
                                      dtype=np.float32)
        for res in path:
            est = res.estimator
            if est.norm2 == 0:
                continue
            rk = classification_risks(est, unit.eps, norm, cons)
            rows.append(_base_row(unit, d, n, 0.0, "gd", sr=rk.sr, ar=rk.ar, step=res.step,
                                  **_estimator_fields(est), **_train_fields(res)))
        return rows
    init = None
    for lam in sorted((float(v) for v in unit.lambdas), reverse=True):
        if lam == 0:
            res = fit_unregularized(ds, unit.eps, norm, cons)
            regime = res.estimator.meta.get("regime", "unregularized")
        else:
            res = fit_regularized(ds, unit.eps, norm, cons, lam=lam, init=init)
            init = res.estimator.theta
            regime = "regularized"
        rk = classification_risks(res.estimator, unit.eps, norm, cons)
        status = "ok" if res.converged else "not_converged"
        rows.append(_base_row(unit, d, n, lam, regime, sr=rk.sr, ar=rk.ar, status=status,
                              **_estimator_fields(res.estimator), **_train_fields(res)))
    # restore the order of lambda_list
    order = {float(v): i for i, v in enumerate(unit.lambdas)}
    return sorted(rows, key=lambda r: order[r.lam])


_RUNNERS = {
    ("theory", "regression"): _linreg_theory,
    ("theory", "classification"): _logreg_theory,
    ("empirical", "regression"): _linreg_empirical,
    ("empirical", "classification"): _logreg_empirical,
}


def _run_unit(unit):
    d, n = _dims(unit.spec, unit.gamma)
    start = time.perf_counter()
    try:
        rows = _RUNNERS[unit.kind, unit.spec.task](unit, d, n)
    except LabError as exc:
        # record the failure, keep the sweep going
        lams = unit.lambdas if unit.kind == "empirical" else unit.lambdas[:1]
        regime = "theory" if unit.kind == "theory" else "empirical"
        rows = [_base_row(unit, d, n, lam if lam != "opt" else None, regime, status=type(exc).__name__)
                for lam in lams]
    if unit.spec.timing:
        ms = (time.perf_counter() - start) * 1e3 / max(len(rows), 1)
        for r in rows:
            r.wall_ms = _round(ms)
    return rows


def run_sweep(spec, jobs=1):
    """Evaluate every point of ``spec``; rows come back in grid order for any ``jobs``."""
    units = _units(spec)
    for g in spec.axes()[0]:
        _dims(spec, g)
    if jobs > 1 and len(units) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            chunks = list(pool.map(_run_unit, units))
    else:
        chunks = [_run_unit(u) for u in units]
    return [r for chunk in chunks for r in chunk]


def summarize(rows, keys=("regime", "gamma", "lam", "eps_test", "flip_prob", "sigma2", "step")):
    """Seed means of ``sr`` and ``ar`` for the empirical rows, keyed by ``keys``."""
    groups = {}
    for r in rows:
        if r.seed == "theory" or r.status != "ok":
            continue
        groups.setdefault(tuple(getattr(r, k) for k in keys), []).append((r.sr, r.ar))
    return {k: tuple(np.mean(v, axis=0)) for k, v in groups.items()}


def select_columns(rows, columns, where=None):
    """Whitespace-separated columns for plotting tools, one line per matching row."""
    where = where or {}
    lines = []
    for r in rows:
        rec = _row_dict(r)
        if all(_fmt(rec.get(k)) == str(v) for k, v in where.items()):
            lines.append(" ".join(_fmt(rec[c]) or "nan" for c in columns))
    return "\n".join(lines) + ("\n" if lines else "")

"""Generalized lambda models: GLD parameters that vary with the input.

Each of the four FKML parameters is a polynomial chaos expansion of x;
lambda2 is expanded on the log scale so it stays positive. Fitting happens
in two stages. First, a feasible generalized least-squares loop picks the
mean and log-variance bases. Then the coefficients of all four expansions
are estimated by maximum likelihood.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy import optimize

from . import gld
from .errors import DomainError, FitError
from .gld import GldParams
from .pce import BasisSet, InputModel, PceModel, aols, enumerate_basis, eval_basis, wls

logger = logging.getLogger(__name__)

LINKS = ("identity", "log", "identity", "identity")
LAMBDA_NAMES = ("lambda1", "lambda2", "lambda3", "lambda4")

# starting shape of the maximum likelihood search: lambda3 = lambda4 = 0.1349
# makes the FKML distribution close to a normal
NORMAL_SHAPE = 0.1349
# E[log chi2_1] = -(euler_gamma + log 2): the offset between the mean of
# log(eps**2) and log Var(eps) for Gaussian eps
LOG_CHI2_BIAS = 1.2703628454614782
SHAPE_BOX = (-0.5 + 1e-3, 5.0)
# log-density assigned at the support boundary for observations outside it,
# relative to -log(std(y)); the penalty then grows linearly with the distance
SENTINEL_OFFSET = -100.0
PENALTY_SCALE = 1e3
ZERO_RESIDUAL_JITTER = 1e-12
# moments of order k exist iff min(lambda3, lambda4) > -1/k; the default floor
# on lambda3(x), lambda4(x) keeps the fourth moment finite everywhere
SHAPE_FLOOR = -0.25 + 1e-3
# quadratic penalty per design point on lambda3(x), lambda4(x) below the floor
SHAPE_FLOOR_WEIGHT = 1e4


@dataclass(frozen=True)
class SampleSet:
    """Design points X (n, M) with one simulator output y each."""

    X: np.ndarray
    y: np.ndarray

    def __post_init__(self):
        X = np.atleast_2d(np.asarray(self.X, dtype=float))
        y = np.asarray(self.y, dtype=float).ravel()
        if X.shape[0] != y.size:
            raise DomainError(f"{X.shape[0]} design rows but {y.size} outputs")
        if not (np.all(np.isfinite(X)) and np.all(np.isfinite(y))):
            raise DomainError("sample set contains non-finite values")
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "y", y)

    def __len__(self):
        return self.y.size


@dataclass(frozen=True, eq=False)
class GlamModel:
    """Four PCEs, one per GLD parameter; ``lam2`` holds log(lambda2)."""

    lam1: PceModel
    lam2: PceModel
    lam3: PceModel
    lam4: PceModel

    @property
    def input_model(self) -> InputModel:
        return self.lam1.input_model

    @property
    def components(self):
        return (self.lam1, self.lam2, self.lam3, self.lam4)

    def n_coefficients(self):
        return sum(len(c.basis) for c in self.components)

    def to_dict(self):
        d = {"model": "glam", "input_model": self.input_model.to_dict()}
        for name, link, comp in zip(LAMBDA_NAMES, LINKS, self.components):
            d[name] = {"link": link, **comp.to_dict(include_input_model=False)}
        return d

    @classmethod
    def from_dict(cls, d):
        im = InputModel.from_dict(d["input_model"])
        comps = []
        for name, link in zip(LAMBDA_NAMES, LINKS):
            block = d[name]
            if block.get("link", link) != link:
                raise DomainError(f"{name} must use the {link} link")
            comps.append(PceModel.from_dict(block, input_model=im))
        return cls(*comps)


def predict_lambda(g: GlamModel, x) -> GldParams:
    """GLD parameters at ``x``: a single point (M,) gives scalars, (n, M) arrays."""
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    X = g.input_model.check(x)
    l1, eta, l3, l4 = (c(X) for c in g.components)
    params = GldParams(l1, np.exp(eta), l3, l4)
    return params[0] if single else params


def emulator_quantile(g: GlamModel, u, x):
    """Conditional quantile Q(u; x). ``u`` broadcasts against the points in ``x``."""
    return gld.quantile(predict_lambda(g, x), u)


def emulator_sample(g: GlamModel, X, rng: np.random.Generator):
    """One emulator draw per row of ``X``."""
    u = rng.random(np.atleast_2d(X).shape[0])
    return gld.quantile(predict_lambda(g, np.atleast_2d(X)), u)


# ---------------------------------------------------------------------------
# likelihood


def _penalty_constants(y):
    sd = float(np.std(y))
    sd = sd if sd > 0 else 1.0
    return SENTINEL_OFFSET - np.log(sd), PENALTY_SCALE / sd


def _dboxcox_dlam(logv, lam):
    """Derivative of (v**lam - 1)/lam with respect to lam, as logv**2 * g(lam*logv)."""
    z = lam * logv
    small = np.abs(z) < 1e-3
    zs = np.where(small, 1.0, z)
    with np.errstate(over="ignore", invalid="ignore"):
        g = np.where(small, 0.5 + z / 3 + z**2 / 8 + z**3 / 30,
                     (zs * np.exp(zs) - np.expm1(zs)) / zs**2)
    return logv**2 * g


def _loglik_terms(y, l1, eta, l3, l4, sentinel, kappa, tol, grad=False):
    """Per-observation log-density (penalized outside the support).

    With ``grad`` also returns d(logf)/d(l1, eta, l3, l4) per observation,
    obtained by differentiating the implicit equation Q(u) = y.
    """
    # trial points of the optimizer can overflow lambda2 or the support bounds;
    # such observations end up penalized, so the warnings carry no information
    with np.errstate(all="ignore"):
        return _loglik_terms_raw(y, l1, eta, l3, l4, sentinel, kappa, tol, grad)


def _loglik_terms_raw(y, l1, eta, l3, l4, sentinel, kappa, tol, grad):
    l2 = np.exp(eta)
    u = gld._bisect(y, l1, l2, l3, l4, tol)
    lower, upper = gld._support_arrays(l1, l2, l3, l4)
    below = y < lower
    above = y > upper
    outside = below | above
    inside = ~outside
    logf = np.full(y.shape, sentinel, dtype=float)
    uu = np.clip(u, 1e-300, 1 - 1e-16)
    with np.errstate(divide="ignore", over="ignore", invalid="ignore"):
        a = np.power(uu, l3 - 1.0)
        b = np.power(1.0 - uu, l4 - 1.0)
        D = a + b
        logf_in = eta - np.log(D)
    ok = inside & np.isfinite(logf_in) & (logf_in > sentinel)
    logf = np.where(ok, logf_in, logf)
    dist = np.where(below, lower - y, np.where(above, y - upper, 0.0))
    logf = logf - kappa * dist
    if not grad:
        return logf
    g1 = np.zeros_like(y)
    ge = np.zeros_like(y)
    g3 = np.zeros_like(y)
    g4 = np.zeros_like(y)
    with np.errstate(divide="ignore", over="ignore", invalid="ignore"):
        L = np.log(uu)
        Mlog = np.log1p(-uu)
        A = gld._boxcox(uu, l3)
        B = gld._boxcox(1.0 - uu, l4)
        du1 = -l2 / D
        due = (A - B) / D
        du3 = -_dboxcox_dlam(L, l3) / D
        du4 = _dboxcox_dlam(Mlog, l4) / D
        Du = (l3 - 1.0) * a / uu - (l4 - 1.0) * b / (1.0 - uu)
        r = Du / D
        g1_in = -r * du1
        ge_in = 1.0 - r * due
        g3_in = -(a * L) / D - r * du3
        g4_in = -(b * Mlog) / D - r * du4
    fin = ok & np.isfinite(g1_in) & np.isfinite(ge_in) & np.isfinite(g3_in) & np.isfinite(g4_in)
    g1 = np.where(fin, g1_in, 0.0)
    ge = np.where(fin, ge_in, 0.0)
    g3 = np.where(fin, g3_in, 0.0)
    g4 = np.where(fin, g4_in, 0.0)
    # penalty: lower = l1 - 1/(l2 l3), upper = l1 + 1/(l2 l4)
    with np.errstate(divide="ignore", invalid="ignore"):
        inv3 = np.where(below, 1.0 / (l2 * l3), 0.0)
        inv4 = np.where(above, 1.0 / (l2 * l4), 0.0)
    g1 = g1 - kappa * np.where(below, 1.0, np.where(above, -1.0, 0.0))
    ge = ge - kappa * (inv3 + inv4)
    g3 = g3 - kappa * np.where(below, inv3 / np.where(below, l3, 1.0), 0.0)
    g4 = g4 - kappa * np.where(above, inv4 / np.where(above, l4, 1.0), 0.0)
    return logf, (g1, ge, g3, g4)


def negative_log_likelihood(g: GlamModel, s: SampleSet, tol: float = gld.DEFAULT_TOL) -> float:
    """Sum of -log f(y_i; lambda(x_i)).

    Observations outside the support of their conditional GLD contribute a
    large finite penalty that grows with the distance to the support.
    """
    X = g.input_model.check(s.X)
    l1, eta, l3, l4 = (c(X) for c in g.components)
    sentinel, kappa = _penalty_constants(s.y)
    return float(-np.sum(_loglik_terms(s.y, l1, eta, l3, l4, sentinel, kappa, tol)))


class _Objective:
    """NLL as a function of the stacked coefficient vector of the four PCEs."""

    def __init__(self, designs, y, tol, shape_floor=None):
        self.designs = designs
        self.y = y
        self.tol = tol
        self.shape_floor = shape_floor
        self.sizes = [P.shape[1] for P in designs]
        self.splits = np.cumsum(self.sizes)[:-1]
        self.sentinel, self.kappa = _penalty_constants(y)
        self.n_eval = 0

    def lambdas(self, theta):
        return [P @ c for P, c in zip(self.designs, np.split(theta, self.splits))]

    def __call__(self, theta):
        self.n_eval += 1
        lam = self.lambdas(theta)
        value = -np.sum(_loglik_terms(self.y, *lam, self.sentinel, self.kappa, self.tol))
        return float(value + self._floor_penalty(lam)[0])

    def value_and_grad(self, theta):
        self.n_eval += 1
        lam = self.lambdas(theta)
        logf, grads = _loglik_terms(self.y, *lam, self.sentinel, self.kappa, self.tol, grad=True)
        grads = [-gl for gl in grads]
        penalty, pgrads = self._floor_penalty(lam)
        grads[2] = grads[2] + pgrads[0]
        grads[3] = grads[3] + pgrads[1]
        g = np.concatenate([P.T @ gl for P, gl in zip(self.designs, grads)])
        return float(-np.sum(logf) + penalty), g

    def _floor_penalty(self, lam):
        """Keeps the pointwise shape parameters above the floor at the design points.

        The box on the constant terms alone does not stop a varying lambda4(x)
        from dropping below -1/2 somewhere, where the response variance is
        infinite and the upper tail explodes.
        """
        if self.shape_floor is None:
            return 0.0, (0.0, 0.0)
        gaps = [np.maximum(self.shape_floor - l, 0.0) for l in lam[2:]]
        value = SHAPE_FLOOR_WEIGHT * sum(float(np.sum(d**2)) for d in gaps)
        return value, tuple(-2.0 * SHAPE_FLOOR_WEIGHT * d for d in gaps)


# ---------------------------------------------------------------------------
# fitting


@dataclass
class FglsResult:
    mean_basis: BasisSet
    mean_coefficients: np.ndarray
    var_basis: BasisSet
    var_coefficients: np.ndarray
    loo_errors: list
    best_iteration: int
    jittered: int
    weighted_rss_checks: list


@dataclass
class GlamFitConfig:
    """Settings of :func:`fit`; every field has a usable default.

    Attributes:
        mean_degrees, mean_qnorms: AOLS grid for the mean (lambda1) basis.
        var_degrees, var_qnorms: AOLS grid for the log-variance (lambda2) basis.
        shape_degree, shape_qnorm: fixed truncation for lambda3 and lambda4.
        n_fgls: number of FGLS iterations.
        early_stop: AOLS stops after this many non-improving degrees (None = full grid).
        corrected_loo: select bases by the size-corrected LOO error.
        cv_folds: rank candidate degrees by k-fold CV of the selection (None = LOO).
        shape_floor: penalized lower bound on lambda3(x), lambda4(x) at the design
            points (None = only the box on the constant terms).
        restarts: perturbed restarts of the likelihood search after the first start.
        optimizer: "lbfgs" (analytic gradient, default) or "nelder-mead".
        min_points_factor: require n >= factor * total number of coefficients.
    """

    mean_degrees: Sequence[int] = tuple(range(0, 11))
    mean_qnorms: Sequence[float] = (0.5, 0.75, 1.0)
    var_degrees: Sequence[int] = tuple(range(0, 11))
    var_qnorms: Sequence[float] = (0.5, 0.75, 1.0)
    shape_degree: int = 1
    shape_qnorm: float = 1.0
    n_fgls: int = 5
    early_stop: int | None = 2
    corrected_loo: bool = True
    cv_folds: int | None = 5
    shape_floor: float | None = SHAPE_FLOOR
    restarts: int = 3
    optimizer: str = "lbfgs"
    max_iter: int = 2000
    tol: float = 1e-8
    min_points_factor: float = 3.0
    bisection_tol: float = gld.DEFAULT_TOL
    seed: int = 0

    def __post_init__(self):
        if self.n_fgls < 1:
            raise DomainError("n_fgls must be at least 1")
        if self.restarts < 0:
            raise DomainError("restarts must be non-negative")
        if self.optimizer not in ("lbfgs", "nelder-mead"):
            raise DomainError(f"unknown optimizer {self.optimizer!r}")

    @classmethod
    def from_dict(cls, d):
        known = cls.__dataclass_fields__
        unknown = set(d) - set(known)
        if unknown:
            raise DomainError(f"unknown fit settings: {sorted(unknown)}")
        return cls(**d)

    def to_dict(self):
        out = {}
        for k in self.__dataclass_fields__:
            v = getattr(self, k)
            out[k] = list(v) if isinstance(v, (tuple, list, range)) else v
        return out


@dataclass
class FitReport:
    """Diagnostics of a GLaM fit."""

    bases: dict
    nll: float
    initial_nll: float
    iterations: int
    evaluations: int
    fgls_loo: list
    fgls_best_iteration: int
    jittered_residuals: int
    start_nlls: list
    optimizer: str
    converged: bool
    message: str
    coefficient_box: dict = field(default_factory=lambda: {
        "lambda3_constant": list(SHAPE_BOX), "lambda4_constant": list(SHAPE_BOX)})

    def to_dict(self):
        return {
            "bases": self.bases,
            "nll": self.nll,
            "initial_nll": self.initial_nll,
            "iterations": self.iterations,
            "evaluations": self.evaluations,
            "fgls_loo": list(self.fgls_loo),
            "fgls_best_iteration": self.fgls_best_iteration,
            "jittered_residuals": self.jittered_residuals,
            "start_nlls": list(self.start_nlls),
            "optimizer": self.optimizer,
            "converged": self.converged,
            "message": self.message,
            "coefficient_box": self.coefficient_box,
        }


def _weighted_rss(Psi, c, y, v):
    r = y - Psi @ c
    return float(np.sum(r**2 / v))


def fgls_select(s: SampleSet, im: InputModel, mean_degrees=range(0, 11), mean_qnorms=(0.5, 0.75, 1.0),
                var_degrees=range(0, 11), var_qnorms=(0.5, 0.75, 1.0), n_fgls=5,
                early_stop=None, max_terms=None, corrected_loo=True, cv_folds=None) -> FglsResult:
    """Pick the mean and log-variance bases by iterated feasible GLS.

    The mean basis comes from one adaptive fit on (X, y). Each iteration then
    fits log squared residuals, turns the prediction into variances, and
    refits the mean coefficients by weighted least squares. Basis selection
    uses the size-corrected LOO error unless ``corrected_loo`` is False, or
    the k-fold error of the whole selection with ``cv_folds=k``. The variance
    basis of the iteration with the smallest LOO error is returned together
    with the mean coefficients refitted in that iteration.
    """
    if n_fgls < 1:
        raise DomainError("n_fgls must be at least 1")
    X = im.check(s.X)
    y = s.y
    mean_fit = aols(im, X, y, degrees=mean_degrees, qnorms=mean_qnorms,
                    early_stop=early_stop, max_terms=max_terms, corrected_loo=corrected_loo,
                    cv_folds=cv_folds)
    A_m = mean_fit.basis
    Psi_m = eval_basis(A_m, im, X)
    c_m = mean_fit.coefficients
    scale = float(np.max(np.abs(y))) or 1.0
    history = []
    jittered = 0
    checks = []
    for it in range(n_fgls):
        resid = y - Psi_m @ c_m
        zero = np.abs(resid) < ZERO_RESIDUAL_JITTER * scale
        if np.any(zero):
            jittered += int(zero.sum())
            resid = np.where(zero, ZERO_RESIDUAL_JITTER * scale, resid)
        target = 2.0 * np.log(np.abs(resid))
        var_fit = aols(im, X, target, degrees=var_degrees, qnorms=var_qnorms,
                       early_stop=early_stop, max_terms=max_terms, corrected_loo=corrected_loo,
                       cv_folds=cv_folds)
        v = np.exp(eval_basis(var_fit.basis, im, X) @ var_fit.coefficients)
        v = np.clip(v, 1e-300, 1e300)
        prev = c_m
        c_m = wls(A_m, im, X, y, v)
        checks.append(_weighted_rss(Psi_m, c_m, y, v) <= _weighted_rss(Psi_m, prev, y, v) * (1 + 1e-10))
        history.append((var_fit, c_m, var_fit.selection_error))
        logger.debug("FGLS iteration %d: variance LOO %.4g, %d terms",
                     it + 1, var_fit.loo_error, len(var_fit.basis))
    losses = [h[2] for h in history]
    best = int(np.argmin(losses))
    var_fit, c_best, _ = history[best]
    return FglsResult(A_m, c_best, var_fit.basis, var_fit.coefficients, losses, best, jittered, checks)


def _expand(basis, coefs, target_basis):
    """Coefficients of ``basis`` re-indexed onto ``target_basis`` (missing rows = 0)."""
    pos = {t: k for k, t in enumerate(target_basis.as_tuples())}
    out = np.zeros(len(target_basis))
    for t, c in zip(basis.as_tuples(), coefs):
        out[pos[t]] = c
    return out


def _initial_point(fg: FglsResult, shape_basis: BasisSet, y_scale):
    """Starting coefficients on the standardized output scale."""
    mu, sd = y_scale
    c1 = fg.mean_coefficients / sd
    k1 = fg.mean_basis.constant_position()
    c1[k1] -= mu / sd
    v_shape = gld.variance(GldParams(0.0, 1.0, NORMAL_SHAPE, NORMAL_SHAPE))
    # log Var(x) ~ PCE_v(x) + bias, and Var = v_shape / lambda2**2
    c2 = -0.5 * fg.var_coefficients
    k2 = fg.var_basis.constant_position()
    c2[k2] += 0.5 * np.log(v_shape) - 0.5 * LOG_CHI2_BIAS + np.log(sd)
    c3 = np.zeros(len(shape_basis))
    c3[shape_basis.constant_position()] = NORMAL_SHAPE
    return [c1, c2, c3, c3.copy()]


def _to_original_scale(coefs, bases, y_scale):
    mu, sd = y_scale
    c1, c2, c3, c4 = (np.array(c, dtype=float) for c in coefs)
    c1 *= sd
    c1[bases[0].constant_position()] += mu
    c2[bases[1].constant_position()] -= np.log(sd)
    return [c1, c2, c3, c4]


def fit(s: SampleSet, im: InputModel, config: GlamFitConfig | None = None):
    """Fit a GLaM by FGLS basis selection followed by maximum likelihood.

    Args:
        s: training data, one output per design point.
        im: input marginals; also defines the polynomial basis.
        config: fit settings (defaults: see :class:`GlamFitConfig`).

    Returns:
        (GlamModel, FitReport)

    Raises:
        DomainError: too few points for the number of coefficients.
        FitError: no start produced a finite likelihood.
    """
    cfg = config or GlamFitConfig()
    X = im.check(s.X)
    n = len(s)
    mu, sd = float(np.mean(s.y)), float(np.std(s.y))
    sd = sd if sd > 0 else 1.0
    shape_basis = enumerate_basis(im.dim, cfg.shape_degree, cfg.shape_qnorm)
    # keep the total coefficient count within n / min_points_factor
    budget = int(n // cfg.min_points_factor) - 2 * len(shape_basis)
    if budget < 2:
        raise DomainError(f"{n} points are too few for a GLaM in {im.dim} dimensions")
    fg = fgls_select(s, im, cfg.mean_degrees, cfg.mean_qnorms, cfg.var_degrees, cfg.var_qnorms,
                     cfg.n_fgls, early_stop=cfg.early_stop, max_terms=max(1, budget // 2),
                     corrected_loo=cfg.corrected_loo, cv_folds=cfg.cv_folds)
    bases = [fg.mean_basis, fg.var_basis, shape_basis, shape_basis]
    y_std = (s.y - mu) / sd
    designs = [eval_basis(b, im, X) for b in bases]
    obj = _Objective(designs, y_std, cfg.bisection_tol, shape_floor=cfg.shape_floor)
    init = np.concatenate(_initial_point(fg, shape_basis, (mu, sd)))
    offsets = np.concatenate([[0], np.cumsum([len(b) for b in bases])])
    box = [(None, None)] * init.size
    for comp in (2, 3):
        k = offsets[comp] + shape_basis.constant_position()
        box[k] = SHAPE_BOX
    init_nll = obj(init)

    rng = np.random.default_rng(cfg.seed)
    starts = [init]
    for _ in range(cfg.restarts):
        x0 = init.copy()
        x0 += 0.1 * rng.standard_normal(init.size) * np.maximum(np.abs(init), 0.1)
        for comp in (2, 3):
            k = offsets[comp] + shape_basis.constant_position()
            x0[k] = rng.uniform(0.0, 0.4)
        starts.append(x0)

    results = []
    for x0 in starts:
        try:
            res = _minimize(obj, x0, box, cfg)
        except (FloatingPointError, ValueError) as exc:
            logger.warning("likelihood search failed from one start: %s", exc)
            continue
        if np.isfinite(res.fun):
            results.append(res)
    start_nlls = [float(r.fun) for r in results]
    if not results and not np.isfinite(init_nll):
        raise FitError("no start produced a finite likelihood",
                       {"initial_nll": init_nll, "n": n, "bases": [len(b) for b in bases]})
    best = min(results, key=lambda r: r.fun) if results else None
    if best is None or not best.fun <= init_nll:
        theta, final, converged, message, nit = init, init_nll, False, "kept initial point", 0
    else:
        theta, final = best.x, float(best.fun)
        converged, message, nit = bool(best.success), str(best.message), int(best.nit)
    coefs = _to_original_scale(np.split(theta, offsets[1:-1]), bases, (mu, sd))
    model = GlamModel(*(PceModel(b, c, im) for b, c in zip(bases, coefs)))
    nll = negative_log_likelihood(model, s, cfg.bisection_tol)
    if not np.isfinite(nll):
        raise FitError("fitted model has a non-finite likelihood", {"nll": nll})
    report = FitReport(
        bases={name: [list(t) for t in b.as_tuples()] for name, b in zip(LAMBDA_NAMES, bases)},
        nll=nll,
        initial_nll=float(init_nll + n * np.log(sd)),
        iterations=nit,
        evaluations=obj.n_eval,
        fgls_loo=[float(v) for v in fg.loo_errors],
        fgls_best_iteration=fg.best_iteration,
        jittered_residuals=fg.jittered,
        start_nlls=[float(v + n * np.log(sd)) for v in start_nlls],
        optimizer=cfg.optimizer,
        converged=converged,
        message=message,
    )
    report.coefficient_box["shape_floor"] = cfg.shape_floor
    return model, report


def _minimize(obj, x0, box, cfg):
    if cfg.optimizer == "lbfgs":
        return optimize.minimize(obj.value_and_grad, x0, jac=True, method="L-BFGS-B", bounds=box,
                                 options={"maxiter": cfg.max_iter, "ftol": cfg.tol * 1e-2, "gtol": 1e-6})
    lo = np.array([b[0] if b[0] is not None else -np.inf for b in box])
    hi = np.array([b[1] if b[1] is not None else np.inf for b in box])
    x0 = np.clip(x0, lo, hi)
    best = None
    # restart the simplex from its own optimum until a full cycle gains < tol
    for _ in range(5):
        res = optimize.minimize(obj, x0, method="Nelder-Mead", bounds=box,
                                options={"maxfev": cfg.max_iter * x0.size, "xatol": 1e-8,
                                         "fatol": cfg.tol, "adaptive": True})
        if best is not None and best.fun - res.fun < cfg.tol:
            best = res if res.fun < best.fun else best
            break
        best = res
        x0 = res.x
    return best

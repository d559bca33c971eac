"""Sobol' indices of stochastic simulators through a fitted GLaM.

Two families of indices are estimated:

* classical indices, which treat the latent randomness as one more input
  U ~ U(0, 1) and decompose the variance of Q(U; X);
* QoI-based indices, which decompose the variance of a deterministic summary
  of the conditional distribution (mean, quantile, entropy, ...).

Each is available through pick-freeze Monte Carlo and through a sparse PCE
fitted to the relevant function, whose indices follow from its coefficients.
"""

from __future__ import annotations

import logging
import re
from dataclasses import dataclass, field
from itertools import combinations
from typing import Callable, Sequence

import numpy as np

from . import gld
from .errors import DomainError, UndefinedIndexError
from .glam import GlamModel, emulator_quantile, predict_lambda
from .gld import GldParams
from .pce import InputModel, PceModel, aols, sobol_from_pce
from .report import SobolReport

logger = logging.getLogger(__name__)

QOI_KINDS = ("mean", "variance", "std", "quantile", "superquantile", "expected_payoff", "entropy")
LOO_WARNING = 0.05


@dataclass(frozen=True)
class QoiSpec:
    """A deterministic summary of the conditional response distribution.

    ``param`` is alpha for quantile/superquantile, the strike for
    expected_payoff and the per-point sample size for entropy.
    """

    kind: str
    param: float | None = None

    def __post_init__(self):
        if self.kind not in QOI_KINDS:
            raise DomainError(f"unknown QoI {self.kind!r}")
        if self.kind in ("quantile", "superquantile"):
            if self.param is None or not 0 < self.param < 1:
                raise DomainError(f"{self.kind} needs alpha in (0, 1)")
        elif self.kind == "expected_payoff":
            if self.param is None:
                object.__setattr__(self, "param", 1.0)
        elif self.kind == "entropy":
            n = 10**4 if self.param is None else self.param
            if int(n) != n or n < 1:
                raise DomainError("entropy sample size must be a positive integer")
            object.__setattr__(self, "param", int(n))
        elif self.param is not None:
            raise DomainError(f"{self.kind} takes no parameter")

    @property
    def label(self):
        return self.kind if self.param is None else f"{self.kind}({self.param:g})"

    @classmethod
    def parse(cls, text):
        """Parse ``"mean"``, ``"quantile(0.95)"`` or ``"quantile:0.95"``."""
        m = re.fullmatch(r"\s*([a-z_]+)\s*(?:[(:]\s*([-+0-9.eE]+)\s*\)?)?\s*", str(text))
        if not m:
            raise DomainError(f"cannot parse QoI {text!r}")
        kind, arg = m.group(1), m.group(2)
        return cls(kind, None if arg is None else float(arg))


def _row_seed_words(x):
    return np.frombuffer(np.ascontiguousarray(x, dtype=np.float64).tobytes(), dtype=np.uint32)


def _entropy_rows(p: GldParams, X, n_mc, seed, chunk=256):
    """Entropy per row; each row draws from its own stream seeded by (seed, x)."""
    l1, l2, l3, l4 = p.arrays()
    out = np.empty(X.shape[0])
    for start in range(0, X.shape[0], chunk):
        stop = min(start + chunk, X.shape[0])
        U = np.empty((stop - start, n_mc))
        for k, i in enumerate(range(start, stop)):
            ss = np.random.SeedSequence([int(seed)] + _row_seed_words(X[i]).tolist())
            U[k] = np.random.default_rng(ss).random(n_mc)
        with np.errstate(divide="ignore"):
            logf = gld._log_pdf_at_u(U, l2[start:stop, None], l3[start:stop, None], l4[start:stop, None])
        out[start:stop] = -np.mean(logf, axis=1)
    return out


def qoi_values(p: GldParams, q: QoiSpec, X=None, seed=0) -> np.ndarray:
    """QoI of each GLD in ``p``; ``X`` (rows matching ``p``) seeds the entropy streams."""
    if q.kind == "mean":
        return np.asarray(gld.mean(p))
    if q.kind == "variance":
        return np.asarray(gld.variance(p))
    if q.kind == "std":
        return np.sqrt(gld.variance(p))
    if q.kind == "quantile":
        return np.asarray(gld.quantile(p, q.param))
    if q.kind == "superquantile":
        return np.asarray(gld.superquantile(p, q.param))
    if q.kind == "expected_payoff":
        return np.asarray(gld.expected_payoff(p, q.param))
    if X is None:
        raise DomainError("entropy needs the input points to seed its streams")
    return _entropy_rows(p, np.atleast_2d(X), q.param, seed)


def qoi_surface(g: GlamModel, q: QoiSpec, seed: int = 0) -> Callable:
    """Deterministic function X -> QoI(x) of the GLaM's conditional distribution."""

    def surface(X):
        X = np.atleast_2d(np.asarray(X, dtype=float))
        return qoi_values(predict_lambda(g, X), q, X, seed)

    surface.label = q.label
    return surface


# ---------------------------------------------------------------------------
# pick-freeze


def janon(y, yu):
    """Janon et al. covariance-form estimate of Var(E[Y | X_u]) / Var(Y)."""
    m = 0.5 * np.mean(y + yu)
    denom = 0.5 * np.mean(y**2 + yu**2) - m**2
    if not denom > 0:
        raise UndefinedIndexError("zero sample variance")
    return float((np.mean(y * yu) - m**2) / denom)


def bootstrap_ci(y, yu, n_boot=1000, level=0.95, rng=None, total=False):
    """Percentile bootstrap interval of a pick-freeze index.

    The first bootstrap replicate is the estimate on the original sample, so
    ``n_boot=1`` yields the degenerate interval at the point estimate. With
    ``total`` the index is 1 - janon(y, yu).
    """
    y = np.asarray(y, dtype=float)
    yu = np.asarray(yu, dtype=float)
    if n_boot < 1:
        raise DomainError("n_boot must be at least 1")
    rng = rng or np.random.default_rng(0)
    est = [janon(y, yu)]
    for _ in range(n_boot - 1):
        idx = rng.integers(0, y.size, y.size)
        est.append(janon(y[idx], yu[idx]))
    est = np.array(est)
    if total:
        est = 1.0 - est
    a = (1.0 - level) / 2
    return float(np.quantile(est, a)), float(np.quantile(est, 1 - a))


@dataclass
class PickFreezeSamples:
    """Raw outputs behind a pick-freeze report, kept for bootstrapping."""

    y: np.ndarray
    frozen: dict = field(default_factory=dict)


def sobol_pickfreeze(func: Callable, im: InputModel, n_mc: int, rng: np.random.Generator,
                     latent=False, max_order=1, qoi="Y", estimator="pick-freeze",
                     n_boot=0, level=0.95, keep_samples=False, kinds=("first", "total")):
    """Pick-freeze Sobol' indices of ``func``.

    ``func(X)`` is deterministic, or ``func(X, U)`` with a latent uniform U when
    ``latent``. For each variable i the first-order index freezes x_i; the
    total index freezes everything else, the other inputs and U, and
    resamples x_i alone: S_Ti = 1 - S_(~i). Interactions up to ``max_order`` come from the
    closed indices of the subsets, and the closed index of all inputs (the
    variance share explained by X alone) is always included. ``kinds``
    restricts the per-variable indices to "first" and/or "total".
    """
    unknown = set(kinds) - {"first", "total"}
    if unknown:
        raise DomainError(f"unknown index kinds {sorted(unknown)}")
    if max_order > 1 and "first" not in kinds:
        raise DomainError("interactions need the first-order indices")
    if n_mc < 100:
        raise DomainError("n_mc must be at least 100")
    M = im.dim
    X = im.sample(rng, n_mc)
    Xp = im.sample(rng, n_mc)
    U = rng.random(n_mc) if latent else None
    Up = rng.random(n_mc) if latent else None

    def run(A, u):
        return np.asarray(func(A, u) if latent else func(A), dtype=float)

    y = run(X, U)

    def frozen(subset, keep_latent=False):
        A = Xp.copy()
        A[:, list(subset)] = X[:, list(subset)]
        return run(A, U if keep_latent else Up)

    report = SobolReport(qoi=qoi, variables=list(im.names), estimator=estimator,
                         sample_sizes={"n_mc": int(n_mc)},
                         metadata={"latent": bool(latent), "max_order": int(max_order)})
    samples = PickFreezeSamples(y)
    closed = {}
    boot_rng = np.random.default_rng(rng.integers(2**63))

    def add(kind, subset, yu, total=False):
        est = janon(y, yu)
        val = 1.0 - est if total else est
        ci = bootstrap_ci(y, yu, n_boot, level, boot_rng, total=total) if n_boot else None
        report.add(kind, subset, val, ci)
        if keep_samples:
            samples.frozen[(kind, tuple(subset))] = yu
        return val

    for i in range(M if "first" in kinds else 0):
        closed[(i,)] = add("first", (i,), frozen((i,)))
    for i in range(M if "total" in kinds else 0):
        others = tuple(j for j in range(M) if j != i)
        add("total", (i,), frozen(others, keep_latent=True), total=True)
    for order in range(2, max_order + 1):
        for combo in combinations(range(M), order):
            yu = frozen(combo)
            closed[combo] = janon(y, yu)
            # Moebius inversion of the closed indices of all sub-subsets
            inter = sum((-1) ** (order - r) * closed[s]
                        for r in range(1, order + 1) for s in combinations(combo, r))
            report.add("interaction", combo, inter)
    add("closed", tuple(range(M)), frozen(tuple(range(M))))
    return (report, samples) if keep_samples else report


def classical_sobol_pickfreeze(g: GlamModel, im: InputModel | None = None, n_mc: int = 10**5,
                               rng: np.random.Generator | None = None, max_order=1,
                               n_boot=0, level=0.95) -> SobolReport:
    """Classical indices of the emulator Y = Q(U; X) by pick-freeze."""
    im = im or g.input_model
    rng = rng or np.random.default_rng(0)
    return sobol_pickfreeze(lambda X, U: emulator_quantile(g, U, X), im, n_mc, rng, latent=True,
                            max_order=max_order, qoi="classical", n_boot=n_boot, level=level)


def classical_sobol_simulator(sim: Callable, im: InputModel, n_mc: int, rng: np.random.Generator,
                              n_boot=0, level=0.95) -> SobolReport:
    """Classical first-order and closed indices of a black-box simulator.

    The latent randomness of ``sim(X, rng)`` cannot be frozen, so every run
    draws fresh noise: freezing x_i estimates S_i, and re-running the same X
    estimates the closed index of all inputs. Total indices would need the
    noise frozen and are not available this way.
    """
    if n_mc < 100:
        raise DomainError("n_mc must be at least 100")
    M = im.dim
    X = im.sample(rng, n_mc)
    Xp = im.sample(rng, n_mc)
    y = np.asarray(sim(X, rng), dtype=float)
    report = SobolReport(qoi="classical", variables=list(im.names), estimator="pick-freeze",
                         sample_sizes={"n_mc": int(n_mc)}, metadata={"latent": "fresh"})
    boot_rng = np.random.default_rng(rng.integers(2**63))
    jobs = [("first", (i,)) for i in range(M)] + [("closed", tuple(range(M)))]
    for kind, subset in jobs:
        A = Xp.copy()
        A[:, list(subset)] = X[:, list(subset)]
        yu = np.asarray(sim(A, rng), dtype=float)
        ci = bootstrap_ci(y, yu, n_boot, level, boot_rng) if n_boot else None
        report.add(kind, subset, janon(y, yu), ci)
    return report


# ---------------------------------------------------------------------------
# PCE route


@dataclass
class PceSettings:
    """Settings of the PCE fitted to a QoI surface or to Q(u; x).

    The defaults are choices (the grid and sample size are not prescribed
    by the method) and are copied into each report's metadata.
    """

    n_pc: int = 10**4
    degrees: Sequence[int] = tuple(range(1, 11))
    qnorms: Sequence[float] = (0.5, 0.75, 1.0)
    early_stop: int | None = 2
    max_terms: int | None = 600
    max_candidates: int | None = 3000
    max_order: int = 2
    loo_threshold: float = LOO_WARNING

    def to_dict(self):
        return {"n_pc": int(self.n_pc), "degrees": [int(p) for p in self.degrees],
                "qnorms": [float(q) for q in self.qnorms], "early_stop": self.early_stop,
                "max_terms": self.max_terms, "max_candidates": self.max_candidates,
                "max_order": int(self.max_order), "loo_threshold": float(self.loo_threshold)}

    @classmethod
    def from_dict(cls, d):
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise DomainError(f"unknown PCE settings: {sorted(unknown)}")
        return cls(**d)


def _pce_report(im, X, values, settings, qoi, variables=None, extra=None):
    fit = aols(im, X, values, degrees=settings.degrees, qnorms=settings.qnorms,
               early_stop=settings.early_stop, max_terms=settings.max_terms,
               max_candidates=settings.max_candidates)
    model = PceModel(fit.basis, fit.coefficients, im)
    flagged = fit.loo_error > settings.loo_threshold
    if flagged:
        logger.warning("PCE of %s has LOO error %.3g above %.3g", qoi, fit.loo_error, settings.loo_threshold)
    meta = {"loo_error": float(fit.loo_error), "loo_warning": bool(flagged),
            "n_terms": len(fit.basis), "degree": int(fit.basis.p), "qnorm": float(fit.basis.q),
            "settings": settings.to_dict()}
    meta.update(extra or {})
    report = sobol_from_pce(model, qoi=qoi, max_order=settings.max_order, variables=variables,
                            estimator="pce", sample_sizes={"n_pc": int(settings.n_pc)}, metadata=meta)
    return report, float(fit.loo_error)


def qoi_sobol_pce(g: GlamModel, q: QoiSpec, rng: np.random.Generator, im: InputModel | None = None,
                  settings: PceSettings | None = None, seed: int = 0):
    """QoI-based indices from a sparse PCE of the QoI surface.

    Returns (SobolReport, loo_error). A LOO error above the threshold sets
    ``loo_warning`` in the report metadata instead of failing.
    """
    im = im or g.input_model
    settings = settings or PceSettings()
    if settings.n_pc < 10 * im.dim:
        raise DomainError("n_pc must be at least 10 times the input dimension")
    X = im.sample(rng, settings.n_pc)
    values = qoi_surface(g, q, seed)(X)
    return _pce_report(im, X, values, settings, q.label)


def classical_sobol_pce(g: GlamModel, rng: np.random.Generator, im: InputModel | None = None,
                        settings: PceSettings | None = None):
    """Classical indices from a PCE of Q(u; x) over the M inputs plus u.

    Terms involving u count in the total variance but never in an index of
    the inputs, so S_(1..M) (the closed index of all inputs) is the share of
    the output variance explained by X.
    """
    im = im or g.input_model
    settings = settings or PceSettings()
    if settings.n_pc < 10 * (im.dim + 1):
        raise DomainError("n_pc must be at least 10 times the input dimension")
    aug = im.augmented("u")
    Z = aug.sample(rng, settings.n_pc)
    values = emulator_quantile(g, Z[:, -1], Z[:, :-1])
    return _pce_report(aug, Z, values, settings, "classical", variables=range(im.dim))


# ---------------------------------------------------------------------------
# signal-to-noise ratio and surrogate errors


def snr_glam(g: GlamModel, rng: np.random.Generator, im: InputModel | None = None, n_mc: int = 10**5):
    """Var[m(X)] / (Var[Y] - Var[m(X)]) for the emulator.

    m(x) is the GLaM's closed-form conditional mean; Var[Y] is the sample
    variance of emulator draws Y = Q(U; X) at the same input samples. This
    stays usable when the conditional variance is undefined (lambda <= -1/2).
    """
    if n_mc < 10**3:
        raise DomainError("n_mc must be at least 1000")
    im = im or g.input_model
    X = im.sample(rng, n_mc)
    p = predict_lambda(g, X)
    signal = float(np.var(np.asarray(gld.mean(p)), ddof=1))
    total = float(np.var(gld.quantile(p, rng.random(n_mc)), ddof=1))
    if not total - signal > 0:
        raise UndefinedIndexError("intrinsic variance estimate is not positive")
    return signal / (total - signal)


def snr_replicated(Y):
    """SNR from replicated runs, ``Y`` of shape (n points, R replications).

    The between-point variance of the replication means is corrected for the
    noise each mean still carries (within variance / R).
    """
    Y = np.asarray(Y, dtype=float)
    if Y.ndim != 2 or Y.shape[1] < 2 or Y.shape[0] < 2:
        raise DomainError("need at least 2 points with at least 2 replications each")
    R = Y.shape[1]
    within = float(np.mean(np.var(Y, axis=1, ddof=1)))
    signal = float(np.var(Y.mean(axis=1), ddof=1)) - within / R
    if not within > 0 or signal < 0:
        raise UndefinedIndexError("SNR estimate undefined (non-positive variance estimate)")
    return signal / within


def snr(source, rng=None, im=None, n_mc=10**5):
    """SNR of a fitted GLaM or of an (n, R) array of replicated runs."""
    if isinstance(source, GlamModel):
        return snr_glam(source, rng or np.random.default_rng(0), im, n_mc)
    return snr_replicated(source)


def error_q_metric(g: GlamModel, reference: Callable, rng: np.random.Generator,
                   im: InputModel | None = None, n_test: int = 10**5) -> float:
    """Normalized mean-squared quantile error over joint (U, X) test samples.

    ``reference(u, X)`` is the true conditional quantile function.
    """
    im = im or g.input_model
    X = im.sample(rng, n_test)
    U = rng.random(n_test)
    ref = np.asarray(reference(U, X), dtype=float)
    var = float(np.var(ref))
    if not var > 0:
        raise UndefinedIndexError("reference response has zero variance")
    return float(np.mean((ref - emulator_quantile(g, U, X)) ** 2) / var)


def error_qoi_metric(g: GlamModel, reference: Callable, q: QoiSpec, rng: np.random.Generator,
                     im: InputModel | None = None, n_test: int = 10**5, seed: int = 0) -> float:
    """Mean-squared QoI error normalized by the variance of the reference QoI."""
    im = im or g.input_model
    X = im.sample(rng, n_test)
    ref = np.asarray(reference(X), dtype=float)
    var = float(np.var(ref))
    if not var > 0:
        raise UndefinedIndexError("reference QoI has zero variance")
    return float(np.mean((ref - qoi_surface(g, q, seed)(X)) ** 2) / var)

"""Least-squares estimation of PCE coefficients and sparse basis selection."""

from __future__ import annotations

import logging
import warnings
from typing import NamedTuple

import numpy as np
from scipy import linalg
from sklearn.exceptions import ConvergenceWarning
from sklearn.linear_model import lars_path

from ..errors import DomainError, SingularDesignError
from .basis import BasisSet, InputModel, enumerate_basis, eval_basis

logger = logging.getLogger(__name__)

# relative threshold on |R_kk| below which a design column is declared dependent
RANK_TOL = 1e-10


class PceFit(NamedTuple):
    basis: BasisSet
    coefficients: np.ndarray
    loo_error: float
    cv_error: float | None = None

    @property
    def selection_error(self):
        """The error that ranked this fit: CV error when available, else LOO."""
        return self.loo_error if self.cv_error is None else self.cv_error


def _normalizer(y):
    var = np.var(y, ddof=1) if y.size > 1 else 0.0
    return var if var > 0 else 1.0


def _check_rank(R, what="design"):
    d = np.abs(np.diag(R))
    if d.size and (d.max() == 0 or d.min() <= RANK_TOL * d.max()):
        raise SingularDesignError(f"{what} matrix is rank deficient")


def ols_matrix(Psi, y):
    """OLS on a ready-made design matrix; returns (coefficients, loo_error)."""
    Psi = np.asarray(Psi, dtype=float)
    y = np.asarray(y, dtype=float)
    n, k = Psi.shape
    if n <= k:
        raise SingularDesignError(f"need more points ({n}) than basis functions ({k})")
    Q, R = np.linalg.qr(Psi)
    _check_rank(R)
    z = Q.T @ y
    coef = np.linalg.solve(R, z)
    resid = y - Q @ z
    h = np.einsum("ij,ij->i", Q, Q)
    return coef, _loo(resid, h, y)


def _loo(resid, h, y):
    with np.errstate(divide="ignore", invalid="ignore"):
        scaled = resid / (1.0 - np.minimum(h, 1.0 - 1e-12))
    return float(np.mean(scaled**2) / _normalizer(y))


def ols(b: BasisSet, im: InputModel, X, y):
    """Ordinary least squares; returns (coefficients, leave-one-out error).

    The LOO error uses the closed form mean(((y - yhat) / (1 - h))**2) / Var(y)
    with h the diagonal of the hat matrix.
    """
    return ols_matrix(eval_basis(b, im, X), y)


def wls(b: BasisSet, im: InputModel, X, y, weights):
    """Weighted least squares minimizing sum((y - yhat)**2 / weights).

    ``weights`` are the estimated variances of the observations.
    """
    weights = np.asarray(weights, dtype=float)
    if np.any(~(weights > 0)) or not np.all(np.isfinite(weights)):
        raise DomainError("WLS weights must be positive and finite")
    s = 1.0 / np.sqrt(weights)
    Psi = eval_basis(b, im, X) * s[:, None]
    coef, _ = ols_matrix(Psi, np.asarray(y, dtype=float) * s)
    return coef


def loo_correction_factor(n, k, trace_inv):
    """Small-sample inflation of the LOO error for a k-term fit on n points.

    ``trace_inv`` is tr((Psi^T Psi)^-1); the factor is
    n / (n - k) * (1 + tr(C^-1) / n) with C = Psi^T Psi / n the empirical Gram
    matrix, which penalizes large or ill-conditioned models.
    """
    return n / (n - k) * (1.0 + trace_inv)


def _prefix_loo(Psi_ordered, y, corrected=False):
    """LOO error of the OLS fit on every leading block of columns.

    One QR factorization serves all prefixes: the hat diagonal and residual of
    the k-column fit are running sums over the first k columns of Q. The
    inverse of a leading block of R is the leading block of R^-1, so the
    trace needed by the corrected error is a running sum as well.
    Returns an array with one entry per usable prefix length 1..K.
    """
    Q, R = np.linalg.qr(Psi_ordered)
    d = np.abs(np.diag(R))
    usable = len(d)
    bad = np.flatnonzero(d <= RANK_TOL * d.max())
    if bad.size:
        usable = int(bad[0])
    z = Q.T @ y
    resid = y.copy()
    h = np.zeros_like(y)
    norm = _normalizer(y)
    out = np.empty(usable)
    if corrected and usable:
        Rinv = linalg.solve_triangular(R[:usable, :usable], np.eye(usable))
        trace_inv = np.cumsum(np.sum(Rinv**2, axis=0))
    n = y.size
    for k in range(usable):
        resid -= Q[:, k] * z[k]
        h += Q[:, k] ** 2
        with np.errstate(divide="ignore", invalid="ignore"):
            scaled = resid / (1.0 - np.minimum(h, 1.0 - 1e-12))
        out[k] = np.mean(scaled**2) / norm
        if corrected:
            out[k] *= loo_correction_factor(n, k + 1, trace_inv[k]) if n > k + 1 else np.inf
    return out


def lar_ranking(Psi, y, max_terms):
    """Order in which least angle regression activates the non-constant columns.

    Columns are centred and scaled to unit variance first; ``Psi`` must not
    contain the constant column.
    """
    if Psi.shape[1] == 0 or max_terms <= 0:
        return []
    sd = Psi.std(axis=0)
    live = np.flatnonzero(sd > 0)
    Z = (Psi[:, live] - Psi[:, live].mean(axis=0)) / sd[live]
    yc = y - y.mean()
    if not np.any(yc):
        return []
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", ConvergenceWarning)
        warnings.simplefilter("ignore", RuntimeWarning)
        _, active, _ = lars_path(Z, yc, method="lar", max_iter=int(max_terms), return_path=False)
    return [int(live[a]) for a in active][: int(max_terms)]


def hybrid_lar(b_candidate: BasisSet, im: InputModel, X, y, max_terms=None,
               corrected_loo=False) -> PceFit:
    """Sparse PCE: LAR ranks candidates, OLS + LOO picks the best prefix.

    The constant term is excluded from the ranking and always kept. The model
    size is capped at n/2 terms (or ``max_terms``). With ``corrected_loo`` the
    prefixes are compared, and the result reported, by the LOO error times
    :func:`loo_correction_factor`; this favours smaller models on noisy data.
    """
    X = np.atleast_2d(np.asarray(X, dtype=float))
    y = np.asarray(y, dtype=float)
    n = y.size
    Psi = eval_basis(b_candidate, im, X)
    const = b_candidate.constant_position()
    if const is None:
        raise DomainError("candidate basis must contain the zero multi-index")
    others = [k for k in range(len(b_candidate)) if k != const]
    cap = max(1, n // 2) if max_terms is None else int(max_terms)
    cap = min(cap, n - 1)
    ranking = [others[k] for k in lar_ranking(Psi[:, others], y, cap - 1)]
    order = [const] + ranking
    losses = _prefix_loo(Psi[:, order], y, corrected=corrected_loo)
    if losses.size == 0:
        raise SingularDesignError("constant column is degenerate")
    best = int(np.argmin(losses)) + 1
    chosen = sorted(order[:best])
    coef, loo = ols_matrix(Psi[:, chosen], y)
    if corrected_loo:
        loo = float(losses[best - 1])
    return PceFit(b_candidate.subset(chosen), coef, loo)


def _fold_indices(n, k):
    # fixed permutation: the folds, and hence the selected basis, are reproducible
    return np.array_split(np.random.default_rng(0).permutation(n), k)


def cv_error(b: BasisSet, im: InputModel, X, y, folds=5, max_terms=None, corrected_loo=False):
    """K-fold cross-validation error of the whole hybrid-LAR procedure.

    Unlike the LOO error of the selected model, which is computed after LAR
    has seen all the data, this error includes the selection step, so it
    does not reward large candidate sets on noisy data. Normalized by Var(y).
    """
    X = np.atleast_2d(np.asarray(X, dtype=float))
    y = np.asarray(y, dtype=float)
    n = y.size
    if not 2 <= folds <= n:
        raise DomainError("need 2 <= folds <= n")
    sse = 0.0
    for test in _fold_indices(n, folds):
        train = np.ones(n, dtype=bool)
        train[test] = False
        cap = None if max_terms is None else max(1, int(max_terms * train.sum() / n))
        fit = hybrid_lar(b, im, X[train], y[train], max_terms=cap, corrected_loo=corrected_loo)
        pred = eval_basis(fit.basis, im, X[test]) @ fit.coefficients
        sse += float(np.sum((y[test] - pred) ** 2))
    return sse / n / _normalizer(y)


def aols(im: InputModel, X, y, degrees=range(0, 11), qnorms=(0.5, 0.75, 1.0),
         early_stop=None, max_terms=None, corrected_loo=False, max_candidates=None,
         cv_folds=None) -> PceFit:
    """Degree and q-norm adaptive sparse regression.

    Every (p, q) candidate basis is fitted with :func:`hybrid_lar` and the fit
    with the smallest LOO error wins. With ``cv_folds=k`` candidates are
    ranked by the k-fold error of :func:`cv_error` instead (the winner is then
    refitted on all data and carries both errors). With ``early_stop=k`` the
    degree loop ends once k consecutive degrees fail to improve the best
    error. Candidate bases with more than ``max_candidates`` terms are
    skipped, which bounds the memory of the design matrix.
    """
    degrees = sorted(set(int(p) for p in degrees))
    qnorms = sorted(set(float(q) for q in qnorms))
    if not degrees or not qnorms:
        raise DomainError("candidate degree and q-norm lists must be non-empty")
    best = None
    best_score = np.inf
    stale = 0
    failures = []
    seen = set()
    for p in degrees:
        improved = False
        for q in qnorms:
            basis = enumerate_basis(im.dim, p, q)
            key = basis.indices.tobytes()
            if key in seen:
                continue
            seen.add(key)
            if max_candidates is not None and len(basis) > max_candidates:
                failures.append(f"p={p}, q={q}: {len(basis)} candidates exceed the limit")
                continue
            try:
                fit = hybrid_lar(basis, im, X, y, max_terms=max_terms, corrected_loo=corrected_loo)
                if cv_folds:
                    score = cv_error(basis, im, X, y, cv_folds, max_terms, corrected_loo)
                    fit = fit._replace(cv_error=score)
                else:
                    score = fit.loo_error
            except SingularDesignError as exc:
                failures.append(f"p={p}, q={q}: {exc}")
                continue
            if best is None or score < best_score:
                best, best_score = fit, score
                improved = True
        stale = 0 if improved else stale + 1
        if early_stop is not None and stale >= early_stop:
            break
    if best is None:
        raise SingularDesignError("all candidate fits failed: " + "; ".join(failures))
    return best

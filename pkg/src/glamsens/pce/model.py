"""Fitted polynomial chaos expansions and their variance decomposition."""

from __future__ import annotations

from dataclasses import dataclass
from itertools import combinations

import numpy as np

from ..errors import DomainError, UndefinedIndexError
from ..report import SobolReport
from .basis import BasisSet, InputModel, eval_basis, graded_lex_order


@dataclass(frozen=True, eq=False)
class PceModel:
    basis: BasisSet
    coefficients: np.ndarray
    input_model: InputModel

    def __post_init__(self):
        c = np.array(self.coefficients, dtype=float).ravel()
        if c.size != len(self.basis):
            raise DomainError("one coefficient per basis function required")
        c.setflags(write=False)
        object.__setattr__(self, "coefficients", c)

    def __call__(self, X):
        return eval_basis(self.basis, self.input_model, X) @ self.coefficients

    predict = __call__

    @property
    def mean(self):
        const = self.basis.constant_position()
        return float(self.coefficients[const]) if const is not None else 0.0

    @property
    def variance(self):
        nonconst = self.basis.indices.sum(axis=1) > 0
        return float(np.sum(self.coefficients[nonconst] ** 2))

    @classmethod
    def constant(cls, value, input_model):
        basis = BasisSet(np.zeros((1, input_model.dim), dtype=np.int64), 0, 1.0)
        return cls(basis, np.array([float(value)]), input_model)

    def to_dict(self, include_input_model=True):
        d = {
            "p": int(self.basis.p),
            "q": float(self.basis.q),
            "indices": [list(t) for t in self.basis.as_tuples()],
            "coefficients": [float(c) for c in self.coefficients],
        }
        if include_input_model:
            d["input_model"] = self.input_model.to_dict()
        return d

    @classmethod
    def from_dict(cls, d, input_model=None):
        im = input_model if input_model is not None else InputModel.from_dict(d["input_model"])
        idx = np.array(d["indices"], dtype=np.int64).reshape(-1, im.dim)
        basis = BasisSet(idx, int(d.get("p", idx.sum(axis=1).max(initial=0))), float(d.get("q", 1.0)))
        return cls(basis, np.array(d["coefficients"], dtype=float), im)


def sorted_model(basis_rows, coefficients, input_model, p, q):
    """Build a PceModel with rows put in graded lexicographic order."""
    rows = np.asarray(basis_rows, dtype=np.int64)
    order = graded_lex_order(rows)
    return PceModel(BasisSet(rows[order], p, q), np.asarray(coefficients)[order], input_model)


def _term_supports(indices):
    return [frozenset(np.flatnonzero(row).tolist()) for row in indices]


def partial_variances(m: PceModel):
    """Map each non-empty support set to the summed squared coefficients on it."""
    out = {}
    for supp, c in zip(_term_supports(m.basis.indices), m.coefficients):
        if supp:
            out[supp] = out.get(supp, 0.0) + float(c) ** 2
    return out


def closed_index(m: PceModel, subset, exclude=()):
    """Closed index of ``subset``: variance of terms supported inside it.

    Terms touching a variable in ``exclude`` still count in the total variance.
    """
    parts = partial_variances(m)
    total = sum(parts.values())
    if total <= 0:
        raise UndefinedIndexError("PCE has zero variance")
    subset = frozenset(subset)
    return sum(v for s, v in parts.items() if s <= subset) / total


def sobol_from_pce(m: PceModel, qoi="Y", max_order=2, variables=None, estimator="pce",
                   sample_sizes=None, metadata=None) -> SobolReport:
    """Sobol' indices of an orthonormal PCE from its squared coefficients.

    First-order and interaction indices sum the terms whose support equals the
    subset; total indices sum every term that involves the variable. With
    ``variables`` the report covers only those input positions (the others,
    e.g. a latent variable, still enter the total variance).
    """
    parts = partial_variances(m)
    total = sum(parts.values())
    if total <= 0:
        raise UndefinedIndexError("PCE has zero variance; indices are undefined")
    M = m.input_model.dim
    variables = list(range(M)) if variables is None else list(variables)
    names = [m.input_model.names[i] for i in variables]
    report = SobolReport(qoi=qoi, variables=names, estimator=estimator,
                         sample_sizes=dict(sample_sizes or {}), metadata=dict(metadata or {}))
    pos = {v: k for k, v in enumerate(variables)}
    for v in variables:
        first = parts.get(frozenset([v]), 0.0) / total
        tot = sum(val for s, val in parts.items() if v in s) / total
        report.add("first", (pos[v],), first)
        report.add("total", (pos[v],), tot)
    for order in range(2, max_order + 1):
        for combo in combinations(variables, order):
            val = parts.get(frozenset(combo), 0.0) / total
            report.add("interaction", tuple(pos[v] for v in combo), val)
    closed = sum(val for s, val in parts.items() if s <= frozenset(variables)) / total
    report.add("closed", tuple(range(len(variables))), closed)
    return report

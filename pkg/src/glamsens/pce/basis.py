"""Input probability models and orthonormal tensor-product polynomial bases."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Sequence

import numpy as np
from numpy.polynomial import hermite_e, legendre
from scipy import stats

from ..errors import DomainError


@dataclass(frozen=True)
class Marginal:
    """A univariate input distribution: ``uniform(a, b)`` or ``gaussian(mu, sigma)``."""

    kind: str
    a: float
    b: float

    def __post_init__(self):
        if self.kind not in ("uniform", "gaussian"):
            raise DomainError(f"unsupported marginal kind {self.kind!r}")
        if self.kind == "uniform" and not self.b > self.a:
            raise DomainError("uniform marginal needs b > a")
        if self.kind == "gaussian" and not self.b > 0:
            raise DomainError("gaussian marginal needs sigma > 0")

    @classmethod
    def uniform(cls, a, b):
        return cls("uniform", float(a), float(b))

    @classmethod
    def gaussian(cls, mu, sigma):
        return cls("gaussian", float(mu), float(sigma))

    def standardize(self, x):
        """Map to the reference variable: [-1, 1] for uniform, N(0, 1) for gaussian."""
        x = np.asarray(x, dtype=float)
        if self.kind == "uniform":
            # tolerate round-off at the endpoints
            span = self.b - self.a
            if np.any(x < self.a - 1e-12 * span) or np.any(x > self.b + 1e-12 * span):
                raise DomainError(f"value outside uniform support [{self.a}, {self.b}]")
            return np.clip(2.0 * (x - self.a) / span - 1.0, -1.0, 1.0)
        return (x - self.a) / self.b

    def ppf(self, u):
        u = np.asarray(u, dtype=float)
        if self.kind == "uniform":
            return self.a + (self.b - self.a) * u
        return stats.norm.ppf(u, loc=self.a, scale=self.b)

    def cdf(self, x):
        x = np.asarray(x, dtype=float)
        if self.kind == "uniform":
            return np.clip((x - self.a) / (self.b - self.a), 0.0, 1.0)
        return stats.norm.cdf(x, loc=self.a, scale=self.b)

    @property
    def mean(self):
        return 0.5 * (self.a + self.b) if self.kind == "uniform" else self.a

    @property
    def variance(self):
        return (self.b - self.a) ** 2 / 12.0 if self.kind == "uniform" else self.b**2

    def orthonormal(self, x, max_degree):
        """Values of the orthonormal polynomials of degree 0..max_degree, shape (n, d+1)."""
        xi = self.standardize(x)
        if self.kind == "uniform":
            return legendre.legvander(xi, max_degree) * _legendre_norms(max_degree)
        return hermite_e.hermevander(xi, max_degree) * _hermite_norms(max_degree)

    def to_dict(self):
        if self.kind == "uniform":
            return {"kind": "uniform", "a": self.a, "b": self.b}
        return {"kind": "gaussian", "mu": self.a, "sigma": self.b}

    @classmethod
    def from_dict(cls, d):
        if d["kind"] == "uniform":
            return cls.uniform(d["a"], d["b"])
        if d["kind"] == "gaussian":
            return cls.gaussian(d["mu"], d["sigma"])
        raise DomainError(f"unsupported marginal kind {d['kind']!r}")


@lru_cache(maxsize=None)
def _legendre_norms(d):
    return np.sqrt(2.0 * np.arange(d + 1) + 1.0)


@lru_cache(maxsize=None)
def _hermite_norms(d):
    return 1.0 / np.sqrt([math.factorial(k) for k in range(d + 1)])


@dataclass(frozen=True)
class InputModel:
    """Independent marginals of the input vector."""

    marginals: tuple
    names: tuple = field(default=())

    def __post_init__(self):
        object.__setattr__(self, "marginals", tuple(self.marginals))
        names = tuple(self.names) or tuple(f"x{i + 1}" for i in range(len(self.marginals)))
        if len(names) != len(self.marginals):
            raise DomainError("one name per marginal required")
        object.__setattr__(self, "names", names)

    @property
    def dim(self):
        return len(self.marginals)

    def sample(self, rng, n):
        u = rng.random((n, self.dim))
        return self.from_unit(u)

    def from_unit(self, u):
        """Map points of the unit hypercube through the marginal inverse CDFs."""
        u = np.atleast_2d(u)
        return np.column_stack([m.ppf(u[:, j]) for j, m in enumerate(self.marginals)])

    def check(self, X):
        X = np.atleast_2d(np.asarray(X, dtype=float))
        if X.shape[1] != self.dim:
            raise DomainError(f"expected {self.dim} input columns, got {X.shape[1]}")
        for j, m in enumerate(self.marginals):
            m.standardize(X[:, j])
        return X

    def augmented(self, name="u"):
        """This model with a U(0, 1) variable appended (used for the latent U)."""
        return InputModel(self.marginals + (Marginal.uniform(0.0, 1.0),), self.names + (name,))

    def to_dict(self):
        return {"names": list(self.names), "marginals": [m.to_dict() for m in self.marginals]}

    @classmethod
    def from_dict(cls, d):
        return cls(tuple(Marginal.from_dict(m) for m in d["marginals"]), tuple(d.get("names", ())))


def uniform_model(bounds: Sequence[tuple], names: Sequence[str] = ()) -> InputModel:
    return InputModel(tuple(Marginal.uniform(a, b) for a, b in bounds), tuple(names))


@dataclass(frozen=True, eq=False)
class BasisSet:
    """Ordered multi-indices; ``indices`` has shape (K, M)."""

    indices: np.ndarray
    p: int
    q: float

    def __post_init__(self):
        idx = np.array(self.indices, dtype=np.int64)
        if idx.ndim != 2:
            raise DomainError("multi-indices must form a 2-d array")
        idx.setflags(write=False)
        object.__setattr__(self, "indices", idx)

    def __len__(self):
        return self.indices.shape[0]

    def __eq__(self, other):
        return isinstance(other, BasisSet) and np.array_equal(self.indices, other.indices)

    __hash__ = None

    @property
    def dim(self):
        return self.indices.shape[1]

    def subset(self, rows):
        return BasisSet(self.indices[np.asarray(rows, dtype=int)], self.p, self.q)

    def constant_position(self):
        hits = np.flatnonzero(self.indices.sum(axis=1) == 0)
        return int(hits[0]) if hits.size else None

    def as_tuples(self):
        return [tuple(int(v) for v in row) for row in self.indices]


def _qnorm(alpha, q):
    alpha = np.asarray(alpha, dtype=float)
    return np.sum(alpha**q, axis=-1) ** (1.0 / q)


def graded_lex_order(indices):
    """Sort key: total degree ascending, then larger leading degrees first."""
    indices = np.asarray(indices)
    keys = [-indices[:, j] for j in range(indices.shape[1] - 1, -1, -1)] + [indices.sum(axis=1)]
    return np.lexsort(keys)


def _total_degree_indices(M, p):
    out = []

    def rec(prefix, remaining, slots):
        if slots == 1:
            for k in range(remaining + 1):
                out.append(prefix + (k,))
            return
        for k in range(remaining + 1):
            rec(prefix + (k,), remaining - k, slots - 1)

    rec((), p, M)
    return np.array(out, dtype=np.int64).reshape(-1, M)


def enumerate_basis(M: int, p: int, q: float = 1.0) -> BasisSet:
    """All multi-indices with q-quasi-norm at most p, in graded lexicographic order."""
    if p < 0 or not 0 < q <= 1:
        raise DomainError("need p >= 0 and 0 < q <= 1")
    if M < 1:
        raise DomainError("dimension must be positive")
    idx = _total_degree_indices(M, p)
    keep = _qnorm(idx, q) <= p + 1e-10
    idx = idx[keep]
    return BasisSet(idx[graded_lex_order(idx)], p, q)


def eval_basis(b: BasisSet, im: InputModel, X) -> np.ndarray:
    """Design matrix Psi[i, k] = prod_j phi_{alpha_kj}(x_ij), shape (n, K)."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    if X.shape[1] != im.dim or b.dim != im.dim:
        raise DomainError("input dimension mismatch")
    out = np.ones((X.shape[0], len(b)))
    for j, marg in enumerate(im.marginals):
        degs = b.indices[:, j]
        dmax = int(degs.max()) if len(b) else 0
        if dmax == 0:
            marg.standardize(X[:, j])
            continue
        vals = marg.orthonormal(X[:, j], dmax)
        out *= vals[:, degs]
    return out

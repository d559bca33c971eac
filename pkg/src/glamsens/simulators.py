"""Reference stochastic simulators and design generation.

Every simulator takes a design ``X`` of shape (n, M) plus a numpy Generator
and returns one output per row; all latent randomness comes from that
generator, so results are reproducible given the seed.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy import stats

from .errors import DomainError
from .pce import InputModel, uniform_model

# ---------------------------------------------------------------------------
# analytic toy model: sin(x1) + 7 sin(x2)^2 + exp(x1/pi + x3 Z)


def toy_input_model() -> InputModel:
    return uniform_model([(0.0, 2 * math.pi), (0.0, 2 * math.pi), (0.25, 0.75)], ("x1", "x2", "x3"))


def _toy_parts(X):
    X = toy_input_model().check(X)
    shift = np.sin(X[:, 0]) + 7.0 * np.sin(X[:, 1]) ** 2
    return shift, X[:, 0] / math.pi, X[:, 2]


def toy_eval(X, rng: np.random.Generator) -> np.ndarray:
    """One draw per row; the response is a shifted lognormal."""
    shift, mu, sigma = _toy_parts(X)
    return shift + np.exp(mu + sigma * rng.standard_normal(shift.size))


def toy_quantile(u, X) -> np.ndarray:
    shift, mu, sigma = _toy_parts(X)
    return shift + np.exp(mu + sigma * stats.norm.ppf(u))


def toy_mean(X) -> np.ndarray:
    shift, mu, sigma = _toy_parts(X)
    return shift + np.exp(mu + 0.5 * sigma**2)


def toy_variance(X) -> np.ndarray:
    _, mu, sigma = _toy_parts(X)
    return np.expm1(sigma**2) * np.exp(2 * mu + sigma**2)


def toy_std(X) -> np.ndarray:
    return np.sqrt(toy_variance(X))


def toy_entropy(X) -> np.ndarray:
    """Differential entropy; the shift does not change it."""
    _, mu, sigma = _toy_parts(X)
    return mu + 0.5 + np.log(sigma * math.sqrt(2 * math.pi))


def toy_superquantile(alpha, X) -> np.ndarray:
    """E[Y | Y >= Q(alpha)] of the shifted lognormal."""
    shift, mu, sigma = _toy_parts(X)
    z = stats.norm.ppf(alpha)
    return shift + np.exp(mu + 0.5 * sigma**2) * stats.norm.sf(z - sigma) / (1.0 - alpha)


def toy_expected_payoff(strike, X) -> np.ndarray:
    """E[max(Y - strike, 0)]; Black-Scholes form for the lognormal part."""
    shift, mu, sigma = _toy_parts(X)
    k = strike - shift
    out = shift + np.exp(mu + 0.5 * sigma**2) - strike  # k <= 0: payoff is Y - strike
    pos = k > 0
    d = (mu[pos] - np.log(k[pos])) / sigma[pos]
    out[pos] = (np.exp(mu[pos] + 0.5 * sigma[pos] ** 2) * stats.norm.cdf(d + sigma[pos])
                - k[pos] * stats.norm.cdf(d))
    return out


def toy_qoi(kind: str, param=None) -> Callable:
    """Analytic QoI surface X -> QoI(x) of the toy model."""
    table = {
        "mean": toy_mean,
        "variance": toy_variance,
        "std": toy_std,
        "entropy": toy_entropy,
        "quantile": lambda X: toy_quantile(param, X),
        "superquantile": lambda X: toy_superquantile(param, X),
        "expected_payoff": lambda X: toy_expected_payoff(param, X),
    }
    if kind not in table:
        raise DomainError(f"no analytic toy QoI {kind!r}")
    return table[kind]


# ---------------------------------------------------------------------------
# Heston stochastic volatility model


@dataclass(frozen=True)
class HestonConfig:
    dt: float = 0.004
    horizon: float = 1.0
    y0: float = 1.0

    def __post_init__(self):
        if not (self.dt > 0 and self.horizon > 0):
            raise DomainError("dt and horizon must be positive")

    @property
    def steps(self):
        return max(1, int(round(self.horizon / self.dt)))


HESTON_NAMES = ("mu", "kappa", "theta", "sigma", "rho", "v0")
HESTON_BOUNDS = ((0.0, 0.1), (0.3, 2.0), (0.02, 0.07), (0.2, 0.4), (-1.0, -0.5), (0.02, 0.07))


def heston_input_model() -> InputModel:
    return uniform_model(HESTON_BOUNDS, HESTON_NAMES)


def heston_eval(X, rng: np.random.Generator, cfg: HestonConfig = HestonConfig(),
                check=True) -> np.ndarray:
    """Asset value at the horizon, Euler scheme with full truncation.

    The variance process may become negative; wherever it enters a drift or
    diffusion coefficient it is replaced by max(v, 0).
    """
    X = heston_input_model().check(X) if check else np.atleast_2d(np.asarray(X, dtype=float))
    mu, kappa, theta, sigma, rho, v0 = X.T
    n = X.shape[0]
    y = np.full(n, float(cfg.y0))
    v = v0.copy()
    sq = math.sqrt(cfg.dt)
    # Cholesky factor of [[1, rho], [rho, 1]]
    c21, c22 = rho, np.sqrt(np.clip(1.0 - rho**2, 0.0, None))
    for _ in range(cfg.steps):
        z1 = rng.standard_normal(n)
        z2 = rng.standard_normal(n)
        vp = np.maximum(v, 0.0)
        root = np.sqrt(vp)
        y = y + mu * y * cfg.dt + root * y * sq * z1
        v = v + kappa * (theta - vp) * cfg.dt + sigma * root * sq * (c21 * z1 + c22 * z2)
    return y


def heston_payoff(X, rng, cfg: HestonConfig = HestonConfig(), strike=1.0) -> np.ndarray:
    return np.maximum(heston_eval(X, rng, cfg) - strike, 0.0)


def heston_mean(X) -> np.ndarray:
    """exp(mu): the analytic conditional mean of the continuous-time model."""
    X = heston_input_model().check(X)
    return np.exp(X[:, 0])


def _heston_qoi(kind, param=None):
    if kind != "mean":
        raise DomainError(f"no analytic Heston QoI {kind!r}")
    return heston_mean


# ---------------------------------------------------------------------------
# stochastic SIR model


@dataclass(frozen=True)
class SirConfig:
    population: int = 2000

    def __post_init__(self):
        if self.population < 1:
            raise DomainError("population must be positive")


SIR_NAMES = ("E0", "I0", "beta", "gamma")


def sir_input_model() -> InputModel:
    return uniform_model([(1600.0, 1800.0), (20.0, 200.0), (0.5, 0.7), (0.5, 0.7)], SIR_NAMES)


def sir_counts(X, population):
    """Initial susceptible / infected counts: the inputs rounded to integers."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    E0 = np.rint(X[:, 0]).astype(np.int64)
    I0 = np.rint(X[:, 1]).astype(np.int64)
    if np.any(I0 < 1) or np.any(E0 < 0) or np.any(E0 + I0 > population):
        raise DomainError("need I0 >= 1, E0 >= 0 and E0 + I0 <= population")
    return E0, I0


def sir_eval(X, rng: np.random.Generator, cfg: SirConfig = SirConfig(), check=True,
             return_events=False):
    """Total number of new infections E0 - E_T of a Gillespie SIR run per row.

    At each step the waiting times to the next infection, Exp(beta E I / P),
    and to the next recovery, Exp(gamma I), are drawn; the earlier event
    happens. Runs end when no infected individual is left. Runs for all rows
    advance together, one event per active run per sweep.
    """
    if check:
        sir_input_model().check(X)
    X = np.atleast_2d(np.asarray(X, dtype=float))
    P = cfg.population
    E0, I0 = sir_counts(X, P)
    beta, gamma = X[:, 2], X[:, 3]
    E = E0.copy()
    I = I0.copy()
    events = np.zeros(E.size, dtype=np.int64)
    active = np.flatnonzero(I > 0)
    while active.size:
        e, i = E[active], I[active]
        rate_inf = beta[active] * e * i / P
        rate_rec = gamma[active] * i
        with np.errstate(divide="ignore"):
            t_inf = np.where(rate_inf > 0, rng.standard_exponential(active.size) / rate_inf, np.inf)
        t_rec = rng.standard_exponential(active.size) / rate_rec
        infect = t_inf < t_rec
        E[active] = e - infect
        I[active] = i + np.where(infect, 1, -1)
        events[active] += 1
        active = active[I[active] > 0]
    out = (E0 - E).astype(float)
    return (out, events) if return_events else out


# ---------------------------------------------------------------------------
# designs and replications


def lhs(n: int, im: InputModel, rng: np.random.Generator) -> np.ndarray:
    """Latin hypercube design of size n mapped through the marginal inverse CDFs."""
    if n < 1:
        raise DomainError("design size must be at least 1")
    u = np.empty((n, im.dim))
    for j in range(im.dim):
        u[:, j] = (rng.permutation(n) + rng.random(n)) / n
    return im.from_unit(u)


def replicate(sim: Callable, x, R: int, rng: np.random.Generator) -> np.ndarray:
    """R independent runs of ``sim(X, rng)`` at the single point ``x``."""
    if R < 1:
        raise DomainError("need at least one replication")
    x = np.asarray(x, dtype=float).ravel()
    return np.asarray(sim(np.tile(x, (R, 1)), rng), dtype=float)


def empirical_superquantile(samples, alpha, axis=None):
    """Mean of the sorted sample above its empirical alpha-quantile.

    With ``axis`` the sample runs along that axis and one value per slice is
    returned.
    """
    s = np.asarray(samples, dtype=float)
    if axis is None:
        s = np.sort(s.ravel())
        return float(np.mean(s[int(math.floor(alpha * s.size)):]))
    s = np.sort(np.moveaxis(s, axis, -1), axis=-1)
    return np.mean(s[..., int(math.floor(alpha * s.shape[-1])):], axis=-1)


def empirical_qoi(Y, kind: str, param=None) -> np.ndarray:
    """QoI estimate per row of replicated runs ``Y`` (n points, R replications)."""
    Y = np.asarray(Y, dtype=float)
    if Y.ndim != 2 or Y.shape[1] < 2:
        raise DomainError("need an (n, R) array with R >= 2")
    if kind == "mean":
        return Y.mean(axis=1)
    if kind == "variance":
        return Y.var(axis=1, ddof=1)
    if kind == "std":
        return Y.std(axis=1, ddof=1)
    if kind == "quantile":
        return np.quantile(Y, param, axis=1)
    if kind == "superquantile":
        return empirical_superquantile(Y, param, axis=1)
    if kind == "expected_payoff":
        return np.maximum(Y - param, 0.0).mean(axis=1)
    if kind == "entropy":
        return stats.differential_entropy(Y, axis=1)
    raise DomainError(f"unknown QoI {kind!r}")


def replicated_runs(sim: Callable, X, R: int, rng: np.random.Generator,
                    max_batch: int = 2 * 10**5) -> np.ndarray:
    """(n, R) array of independent runs at each row of ``X``, in bounded batches."""
    if R < 1:
        raise DomainError("need at least one replication")
    X = np.atleast_2d(np.asarray(X, dtype=float))
    rows = max(1, max_batch // R)
    out = np.empty((X.shape[0], R))
    for start in range(0, X.shape[0], rows):
        block = X[start:start + rows]
        y = np.asarray(sim(np.repeat(block, R, axis=0), rng), dtype=float)
        out[start:start + block.shape[0]] = y.reshape(block.shape[0], R)
    return out


def replicated_qoi(sim: Callable, kind: str, param=None, R: int = 1000,
                   rng: np.random.Generator | None = None) -> Callable:
    """Empirical QoI surface: ``R`` runs per point, summarized by :func:`empirical_qoi`."""
    rng = rng or np.random.default_rng(0)

    def surface(X):
        return empirical_qoi(replicated_runs(sim, X, R, rng), kind, param)

    return surface


@dataclass(frozen=True)
class Simulator:
    name: str
    input_model: Callable[[], InputModel]
    evaluate: Callable
    quantile: Callable | None = None
    qoi: Callable | None = None

    def analytic_qoi(self, kind, param=None):
        """Exact QoI surface when the simulator has one, else None."""
        if self.qoi is None:
            return None
        try:
            return self.qoi(kind, param)
        except DomainError:
            return None


def get_simulator(name: str, settings: dict | None = None) -> Simulator:
    """Look up a simulator by name; ``settings`` go to its config dataclass."""
    settings = dict(settings or {})
    if name == "toy":
        if settings:
            raise DomainError(f"toy simulator takes no settings, got {sorted(settings)}")
        return Simulator("toy", toy_input_model, toy_eval, toy_quantile, toy_qoi)
    if name == "heston":
        cfg = HestonConfig(**settings)
        return Simulator("heston", heston_input_model, lambda X, rng: heston_eval(X, rng, cfg),
                         qoi=_heston_qoi)
    if name == "sir":
        cfg = SirConfig(**settings)
        return Simulator("sir", sir_input_model, lambda X, rng: sir_eval(X, rng, cfg))
    raise DomainError(f"unknown simulator {name!r}")


SIMULATOR_NAMES = ("toy", "heston", "sir")

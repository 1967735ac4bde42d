"""Poisson regression with a log-population offset, and ordinary least squares.

The Poisson fit is plain Newton/IRLS on the canonical log link; standard
errors come from the inverse Fisher information at the optimum.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping

import numpy as np
from scipy.linalg import LinAlgError, cho_factor, cho_solve, solve_triangular
from scipy.special import ndtri

from .errors import InvalidInputError, SingularDesignError

INTERCEPT = "intercept"


@dataclass
class DesignSpec:
    """Outcome counts, log offset and named predictor columns.

    An intercept column is always prepended; do not pass one in
    ``predictors``.
    """

    outcome: np.ndarray
    offset: np.ndarray
    predictors: Mapping[str, np.ndarray] = field(default_factory=dict)

    def __post_init__(self):
        self.outcome = np.asarray(self.outcome, dtype=float)
        self.offset = np.asarray(self.offset, dtype=float)
        n = self.outcome.shape[0]
        if self.outcome.ndim != 1 or self.offset.shape != (n,):
            raise InvalidInputError("outcome and offset must be 1-d of equal length")
        if INTERCEPT in self.predictors:
            raise InvalidInputError(f"{INTERCEPT!r} is added automatically")
        cols = {}
        for name, col in self.predictors.items():
            col = np.asarray(col, dtype=float)
            if col.shape != (n,):
                raise InvalidInputError(f"predictor {name!r} has shape {col.shape}, want ({n},)")
            if not np.all(np.isfinite(col)):
                raise InvalidInputError(f"predictor {name!r} has non-finite values")
            cols[name] = col
        self.predictors = cols
        if not np.all(np.isfinite(self.offset)):
            raise InvalidInputError("offset has non-finite values")
        y = self.outcome
        if np.any(y < 0) or np.any(y != np.round(y)):
            raise InvalidInputError("outcome must hold nonnegative integers")

    @classmethod
    def with_population(cls, y, pop, predictors=None):
        pop = np.asarray(pop, dtype=float)
        if np.any(pop <= 0):
            raise InvalidInputError("population must be positive for a log offset")
        return cls(y, np.log(pop), predictors or {})

    @property
    def names(self) -> tuple[str, ...]:
        return (INTERCEPT, *self.predictors)

    def matrix(self) -> np.ndarray:
        n = self.outcome.shape[0]
        return np.column_stack([np.ones(n), *self.predictors.values()])


@dataclass
class GlmFit:
    names: tuple[str, ...]
    coefficients: np.ndarray
    covariance: np.ndarray
    n_iter: int
    converged: bool
    deviance: float
    n_obs: int

    def index(self, name: str) -> int:
        try:
            return self.names.index(name)
        except ValueError:
            raise InvalidInputError(f"unknown coefficient {name!r}") from None

    def estimate(self, name: str) -> float:
        return float(self.coefficients[self.index(name)])

    def variance(self, name: str) -> float:
        k = self.index(name)
        return float(self.covariance[k, k])

    def se(self, name: str) -> float:
        return float(np.sqrt(self.variance(name)))

    @property
    def params(self) -> dict[str, float]:
        return dict(zip(self.names, map(float, self.coefficients)))


@dataclass
class OlsFit:
    names: tuple[str, ...]
    coefficients: np.ndarray
    residual_sd: float
    covariance: np.ndarray
    r_squared_adj: float
    n_obs: int
    xtx_inv: np.ndarray

    @property
    def params(self) -> dict[str, float]:
        return dict(zip(self.names, map(float, self.coefficients)))

    @property
    def df_resid(self) -> int:
        return self.n_obs - len(self.names)


RANK_RTOL = 1e-10


def _check_r(r: np.ndarray):
    # |R_kk| relative to the largest; exact collinearity leaves ~1e-15 after rounding
    d = np.abs(np.diag(r))
    if d.min() <= RANK_RTOL * d.max():
        raise SingularDesignError("design matrix is rank deficient")


def _check_rank(X: np.ndarray):
    n, p = X.shape
    if n <= p:
        raise SingularDesignError(f"{n} rows for {p} columns")
    _check_r(np.linalg.qr(X, mode="r"))


def _poisson_deviance(y, ylogy, eta, mu) -> float:
    return 2.0 * float(np.sum(ylogy - y * eta - y + mu))


def poisson_irls(X: np.ndarray, y: np.ndarray, offset: np.ndarray, tol: float = 1e-10,
                 max_iter: int = 50, check_rank: bool = True):
    """Raw IRLS on arrays. Returns (beta, covariance, n_iter, converged, deviance)."""
    if check_rank:
        _check_rank(X)
    sum_y = float(y.sum())
    beta = np.zeros(X.shape[1])
    # log(sum Y / sum Pop); half a case avoids log(0) on an all-zero outcome
    beta[0] = np.log(max(sum_y, 0.5) / float(np.exp(offset).sum()))
    with np.errstate(divide="ignore", invalid="ignore"):
        ylogy = np.where(y > 0, y * np.log(y), 0.0)
    score_tol = 1e-8 * max(sum_y, 1.0)

    eta = offset + X @ beta
    mu = np.exp(eta)
    dev = _poisson_deviance(y, ylogy, eta, mu)
    converged = False
    n_iter = 0
    for n_iter in range(1, max_iter + 1):
        info = (X.T * mu) @ X
        try:
            chol = cho_factor(info, check_finite=False)
        except LinAlgError as exc:
            raise SingularDesignError("information matrix not positive definite") from exc
        beta = beta + cho_solve(chol, X.T @ (y - mu), check_finite=False)
        eta = offset + X @ beta
        mu = np.exp(eta)
        dev_new = _poisson_deviance(y, ylogy, eta, mu)
        if not np.isfinite(dev_new):
            break
        small_change = abs(dev - dev_new) <= tol * (abs(dev_new) + 0.1)
        dev = dev_new
        if small_change and np.max(np.abs(X.T @ (y - mu))) <= score_tol:
            converged = True
            break

    info = (X.T * mu) @ X
    try:
        chol = cho_factor(info, check_finite=False)
        cov = cho_solve(chol, np.eye(X.shape[1]), check_finite=False)
    except LinAlgError as exc:
        raise SingularDesignError("information matrix not positive definite") from exc
    cov = 0.5 * (cov + cov.T)
    return beta, cov, n_iter, converged, dev


def fit_poisson(spec: DesignSpec, tol: float = 1e-10, max_iter: int = 50) -> GlmFit:
    """Maximum-likelihood Poisson regression of ``spec.outcome`` with offset.

    Converges when the relative deviance change drops below ``tol`` and the
    score is numerically zero; otherwise returns with ``converged=False``.
    """
    X = spec.matrix()
    beta, cov, n_iter, converged, dev = poisson_irls(X, spec.outcome, spec.offset,
                                                     tol, max_iter)
    return GlmFit(spec.names, beta, cov, n_iter, converged, dev, X.shape[0])


def fitted_counts(spec: DesignSpec, fit: GlmFit) -> np.ndarray:
    if tuple(fit.names) != spec.names:
        raise InvalidInputError(f"fit coefficients {fit.names} do not match design {spec.names}")
    return np.exp(spec.offset + spec.matrix() @ fit.coefficients)


def fit_ols(outcome, predictors: Mapping[str, np.ndarray]) -> OlsFit:
    """Least squares of ``outcome`` on an intercept plus ``predictors`` via QR."""
    y = np.asarray(outcome, dtype=float)
    spec_names = (INTERCEPT, *predictors)
    cols = [np.asarray(c, dtype=float) for c in predictors.values()]
    for name, c in zip(predictors, cols):
        if c.shape != y.shape:
            raise InvalidInputError(f"predictor {name!r} has shape {c.shape}, want {y.shape}")
    X = np.column_stack([np.ones_like(y), *cols])
    n, p = X.shape
    if n <= p:
        raise SingularDesignError(f"{n} rows for {p} columns")
    q, r = np.linalg.qr(X)
    _check_r(r)
    coef = solve_triangular(r, q.T @ y)
    resid = y - X @ coef
    rss = float(resid @ resid)
    sigma = float(np.sqrt(rss / (n - p)))
    r_inv = solve_triangular(r, np.eye(p))
    xtx_inv = r_inv @ r_inv.T
    tss = float(np.sum((y - y.mean()) ** 2))
    r2_adj = 1.0 - (rss / (n - p)) / (tss / (n - 1)) if tss > 0 else float("nan")
    return OlsFit(spec_names, coef, sigma, sigma ** 2 * xtx_inv, r2_adj, n, xtx_inv)


def normal_quantile(level: float) -> float:
    if not 0 < level < 1:
        raise InvalidInputError(f"level must lie in (0, 1), got {level}")
    return float(ndtri(0.5 * (1.0 + level)))


def wald_interval(fit, coef_name: str, level: float = 0.95,
                  exponentiate: bool = False) -> tuple[float, float]:
    """Normal-theory interval estimate +/- z * SE for one coefficient.

    ``fit`` is anything exposing ``estimate(name)`` and ``se(name)``.
    With ``exponentiate`` both ends are mapped to the prevalence-ratio scale.
    """
    z = normal_quantile(level)
    est, se = fit.estimate(coef_name), fit.se(coef_name)
    lo, hi = est - z * se, est + z * se
    if exponentiate:
        return float(np.exp(lo)), float(np.exp(hi))
    return lo, hi

"""Multiple imputation of map-based proximity from straight-line proximity.

The imputation model is a normal linear regression of X on X*, log(Y) and
covariates, fitted to the queried rows. Missing X values are replaced by
draws from that model B times, the Poisson analysis model is refitted on
each completed dataset, and the B fits are pooled with Rubin's rules.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np
from scipy.special import stdtrit

from .errors import (
    InsufficientValidationError,
    InvalidInputError,
    SingularDesignError,
    ZeroCountError,
)
from .regress import GlmFit, fit_ols, normal_quantile


@dataclass
class ImputationModel:
    names: tuple[str, ...]
    alpha: np.ndarray
    sigma: float
    covariates: tuple[str, ...] = ()
    interaction: bool = False
    log_y_offset: float | None = None
    n_obs: int = 0
    xtx_inv: np.ndarray | None = None
    r_squared_adj: float = float("nan")

    @property
    def params(self) -> dict[str, float]:
        return dict(zip(self.names, map(float, self.alpha)))

    def design(self, x_star, y, covariates: Mapping[str, np.ndarray]) -> np.ndarray:
        cols = _predictors(np.asarray(x_star, float), np.asarray(y, float), covariates,
                           self.covariates, self.interaction, self.log_y_offset)
        n = len(x_star)
        return np.column_stack([np.ones(n), *cols.values()])

    def mean(self, x_star, y, covariates: Mapping[str, np.ndarray] | None = None):
        return self.design(x_star, y, covariates or {}) @ self.alpha


def _log_y(y: np.ndarray, log_y_offset: float | None) -> np.ndarray:
    if log_y_offset is None:
        if np.any(y <= 0):
            raise ZeroCountError(
                "log(Y) undefined for a row with Y = 0; set log_y_offset "
                "to use log(Y + c) instead")
        return np.log(y)
    return np.log(y + log_y_offset)


def _predictors(x_star, y, covariates, names, interaction, log_y_offset) -> dict:
    cols = {"x_star": x_star, "log_y": _log_y(y, log_y_offset)}
    for name in names:
        cols[name] = np.asarray(covariates[name], dtype=float)
    if interaction:
        for name in names:
            cols[f"x_star:{name}"] = x_star * cols[name]
    return cols


def fit_imputation_model(x, x_star, y, queried, covariates: Mapping[str, np.ndarray] | None = None,
                         include_interaction: bool = False,
                         log_y_offset: float | None = None) -> ImputationModel:
    """OLS of X on X*, log(Y), Z (and X* x Z) over the queried rows.

    Parameters
    ----------
    x : array_like
        Map-based proximity; only entries where ``queried`` is true are read.
    x_star, y : array_like
        Straight-line proximity and outcome counts for every row.
    queried : array_like of bool
    covariates : mapping of name -> array, optional
    include_interaction : bool
        Add X* x Z terms for every covariate.
    log_y_offset : float, optional
        Use log(Y + c) instead of log(Y). Without it a queried row with
        Y = 0 raises :class:`ZeroCountError`.
    """
    covariates = dict(covariates or {})
    queried = np.asarray(queried, dtype=bool)
    x = np.asarray(x, dtype=float)
    x_star = np.asarray(x_star, dtype=float)
    y = np.asarray(y, dtype=float)
    names = tuple(covariates)
    n_pred = 3 + len(names) * (2 if include_interaction else 1)
    n_q = int(queried.sum())
    if n_q < n_pred + 2:
        raise InsufficientValidationError(
            f"{n_q} queried rows; the imputation model needs at least {n_pred + 2}")
    sub = {k: np.asarray(v, dtype=float)[queried] for k, v in covariates.items()}
    cols = _predictors(x_star[queried], y[queried], sub, names, include_interaction,
                       log_y_offset)
    ols = fit_ols(x[queried], cols)
    return ImputationModel(ols.names, ols.coefficients, ols.residual_sd, names,
                           include_interaction, log_y_offset, ols.n_obs, ols.xtx_inv,
                           ols.r_squared_adj)


DRAW_METHODS = ("bootstrap", "posterior", "fixed")


def _posterior_draw(model: ImputationModel, rng: np.random.Generator):
    """(alpha, sigma) drawn from their approximate posterior under a flat prior."""
    df = model.n_obs - len(model.names)
    sigma = model.sigma * np.sqrt(df / rng.chisquare(df))
    chol = np.linalg.cholesky(model.xtx_inv)
    alpha = model.alpha + sigma * chol @ rng.standard_normal(len(model.alpha))
    return alpha, sigma


def _bootstrap_draw(model: ImputationModel, x, x_star, y, queried, covariates,
                    rng: np.random.Generator, max_tries: int = 100):
    """(alpha, sigma) refitted on a with-replacement resample of the queried rows."""
    rows = np.flatnonzero(queried)
    for _ in range(max_tries):
        pick = rows[rng.integers(0, len(rows), size=len(rows))]
        cov = {k: np.asarray(v, float)[pick] for k, v in covariates.items()}
        try:
            refit = fit_imputation_model(np.asarray(x, float)[pick],
                                         np.asarray(x_star, float)[pick],
                                         np.asarray(y, float)[pick], np.ones(len(pick), bool),
                                         cov, model.interaction, model.log_y_offset)
        except SingularDesignError:
            continue
        return refit.alpha, refit.sigma
    raise SingularDesignError("no full-rank bootstrap resample of the validation rows")


def draw_completed_dataset(model: ImputationModel, x, x_star, y, queried,
                           covariates: Mapping[str, np.ndarray] | None, rng: np.random.Generator,
                           method: str = "bootstrap") -> np.ndarray:
    """One completed proximity vector: observed X where queried, a draw elsewhere.

    Draws are normal around the imputation-model mean. ``method`` sets where
    the model parameters come from for this draw:

    ``"fixed"``
        the fitted (alpha, sigma), unchanged across imputations;
    ``"posterior"``
        a draw from their normal/scaled-inverse-chi-square posterior;
    ``"bootstrap"``
        a refit on a bootstrap resample of the queried rows.

    Negative draws are kept. When every row is queried the generator is not
    touched.
    """
    if method not in DRAW_METHODS:
        raise InvalidInputError(f"unknown draw method {method!r}; use one of {DRAW_METHODS}")
    queried = np.asarray(queried, dtype=bool)
    out = np.array(x, dtype=float, copy=True)
    miss = ~queried
    if not miss.any():
        return out
    covariates = covariates or {}
    sub = {k: np.asarray(v)[miss] for k, v in covariates.items()}
    design = model.design(np.asarray(x_star, float)[miss], np.asarray(y, float)[miss], sub)
    if method == "posterior":
        alpha, sigma = _posterior_draw(model, rng)
    elif method == "bootstrap":
        alpha, sigma = _bootstrap_draw(model, x, x_star, y, queried, covariates, rng)
    else:
        alpha, sigma = model.alpha, model.sigma
    out[miss] = design @ alpha + sigma * rng.standard_normal(int(miss.sum()))
    return out


@dataclass
class PooledEstimate:
    """Rubin's-rules combination of B analysis-model fits."""

    names: tuple[str, ...]
    coefficients: np.ndarray
    within_var: np.ndarray
    between_var: np.ndarray
    total_var: np.ndarray
    b: int
    df_complete: float = float("inf")
    n_obs: int = 0
    converged: Sequence[bool] = field(default_factory=tuple)
    n_negative_draws: int = 0

    def index(self, name: str) -> int:
        try:
            return self.names.index(name)
        except ValueError:
            raise InvalidInputError(f"unknown coefficient {name!r}") from None

    def estimate(self, name: str) -> float:
        return float(self.coefficients[self.index(name)])

    def variance(self, name: str) -> float:
        return float(self.total_var[self.index(name)])

    def se(self, name: str) -> float:
        return float(np.sqrt(self.variance(name)))

    @property
    def params(self) -> dict[str, float]:
        return dict(zip(self.names, map(float, self.coefficients)))

    def df(self, name: str) -> float:
        """Barnard-Rubin small-sample degrees of freedom."""
        k = self.index(name)
        b, w, t = self.between_var[k], self.within_var[k], self.total_var[k]
        if b == 0:
            return self.df_complete
        lam = (1 + 1 / self.b) * b / t
        df_old = (self.b - 1) / lam ** 2
        if not np.isfinite(self.df_complete):
            return float(df_old)
        nu = self.df_complete
        df_obs = (nu + 1) / (nu + 3) * nu * (1 - lam)
        return float(1.0 / (1.0 / df_old + 1.0 / df_obs))

    def interval(self, name: str, level: float = 0.95, reference: str = "normal"):
        est, se = self.estimate(name), self.se(name)
        if reference == "normal":
            z = normal_quantile(level)
        elif reference == "t":
            df = self.df(name)
            z = normal_quantile(level) if not np.isfinite(df) else float(
                stdtrit(df, 0.5 * (1 + level)))
        else:
            raise InvalidInputError(f"unknown reference distribution {reference!r}")
        return est - z * se, est + z * se

    @property
    def all_converged(self) -> bool:
        return all(self.converged)


def _shifted_mean(a: np.ndarray) -> np.ndarray:
    # mean taken around the first row: identical rows pool to that row exactly
    return a[0] + (a - a[0]).mean(axis=0)


def pool_rubin(fits: Sequence[GlmFit]) -> PooledEstimate:
    """Pool B >= 2 fits: mean estimate, W-bar + (1 + 1/B) * between variance."""
    if len(fits) < 2:
        raise InvalidInputError("Rubin pooling needs at least two fits")
    names = tuple(fits[0].names)
    for f in fits[1:]:
        if tuple(f.names) != names:
            raise InvalidInputError(f"coefficient sets differ: {names} vs {tuple(f.names)}")
    b = len(fits)
    coefs = np.array([f.coefficients for f in fits])
    variances = np.array([np.diag(f.covariance) for f in fits])
    qbar = _shifted_mean(coefs)
    wbar = _shifted_mean(variances)
    dev = coefs - coefs[0]
    bvar = np.sum((dev - dev.mean(axis=0)) ** 2, axis=0) / (b - 1)
    total = wbar + (1.0 + 1.0 / b) * bvar
    return PooledEstimate(names, qbar, wbar, bvar, total, b,
                          n_obs=fits[0].n_obs,
                          converged=tuple(bool(f.converged) for f in fits))


def impute_analyze(data, b: int, spec, rng: np.random.Generator, method: str = "bootstrap",
                   log_y_offset: float | None = None,
                   imputation_covariates: Sequence[str] | None = None,
                   imputation_interaction: bool | None = None,
                   keep_draws: list | None = None) -> PooledEstimate:
    """Fit the imputation model, draw ``b`` completed datasets, fit and pool.

    ``data`` is a :class:`foodaccess.analyze.TwoPhaseDataset` and ``spec`` an
    :class:`foodaccess.analyze.AnalysisSpec`. By default the imputation model
    uses the analysis covariates, with X* x Z terms exactly when the analysis
    model has X x Z terms. With every row queried the result is the
    complete-data fit repeated ``b`` times.
    """
    from .analyze import fit_strategy_design

    if b < 2:
        raise InvalidInputError("at least two imputations are required")
    queried = np.asarray(data.queried, dtype=bool)
    if queried.all():
        fit = fit_strategy_design(data, spec, data.x, None)
        if keep_draws is not None:
            keep_draws.extend(np.array(data.x, copy=True) for _ in range(b))
        return pool_rubin([fit] * b)

    cov_names = tuple(spec.covariates if imputation_covariates is None
                      else imputation_covariates)
    interaction = spec.interaction if imputation_interaction is None else imputation_interaction
    covs = {k: data.covariates[k] for k in cov_names}
    model = fit_imputation_model(data.x, data.x_star, data.y, queried, covs,
                                 include_interaction=interaction and bool(cov_names),
                                 log_y_offset=log_y_offset)
    fits = []
    n_negative = 0
    for _ in range(b):
        x_tilde = draw_completed_dataset(model, data.x, data.x_star, data.y, queried, covs,
                                         rng, method=method)
        n_negative += int(np.sum(x_tilde[~queried] < 0))
        if keep_draws is not None:
            keep_draws.append(x_tilde)
        fits.append(fit_strategy_design(data, spec, x_tilde, None))
    pooled = pool_rubin(fits)
    pooled.n_negative_draws = n_negative
    pooled.df_complete = float(len(data.y) - len(pooled.names))
    return pooled

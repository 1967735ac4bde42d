"""The four analysis strategies and the prevalence-ratio report.

gold           Poisson fit on map-based X for every row
naive          Poisson fit on straight-line X* for every row
complete_case  Poisson fit on map-based X, queried rows only
imputation     multiple imputation of X for unqueried rows, pooled
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .errors import (
    FoodAccessError,
    InsufficientValidationError,
    InvalidInputError,
    UnavailableStrategyError,
)
from .impute import PooledEstimate, impute_analyze
from .regress import DesignSpec, GlmFit, fit_poisson, normal_quantile

STRATEGIES = ("gold", "naive", "complete_case", "imputation")
EXPOSURE = "x"
MODEL_LABEL = "independence model"


@dataclass(frozen=True)
class TwoPhaseDataset:
    """Outcome, population, both proximity measures and covariates per row.

    ``x`` holds NaN wherever map-based proximity is unknown. ``queried``
    marks the validation subset; a simulated dataset may know X everywhere
    while still only treating the queried rows as validated.
    """

    y: np.ndarray
    pop: np.ndarray
    x_star: np.ndarray
    x: np.ndarray
    queried: np.ndarray
    covariates: Mapping[str, np.ndarray] = field(default_factory=dict)
    ids: tuple[str, ...] | None = None

    def __post_init__(self):
        n = len(self.y)
        for name in ("pop", "x_star", "x", "queried"):
            if len(getattr(self, name)) != n:
                raise InvalidInputError(f"{name} length differs from outcome length {n}")
        for name, col in self.covariates.items():
            if len(col) != n:
                raise InvalidInputError(f"covariate {name!r} length differs from {n}")
        q = np.asarray(self.queried, dtype=bool)
        if np.any(np.isnan(np.asarray(self.x, float)[q])):
            raise InvalidInputError("queried rows must have map-based proximity")
        if not np.all(np.isfinite(self.x_star)):
            raise InvalidInputError("straight-line proximity must be known for every row")

    def __len__(self):
        return len(self.y)

    @property
    def n_queried(self) -> int:
        return int(np.sum(self.queried))

    @property
    def has_full_x(self) -> bool:
        return bool(np.all(np.isfinite(self.x)))

    @classmethod
    def from_simulated(cls, sim) -> "TwoPhaseDataset":
        return cls(y=sim.y, pop=sim.pop, x_star=sim.x_star, x=sim.x, queried=sim.queried)

    @classmethod
    def from_records(cls, neighborhoods, pairs, covariates: Sequence[str] = ("metro",)):
        """Join neighborhood records to proximity pairs by id (1:1)."""
        by_id = {nb.id: nb for nb in neighborhoods}
        pair_ids = [p.neighborhood_id for p in pairs]
        orphan_nb = sorted(set(by_id) - set(pair_ids))
        orphan_px = sorted(set(pair_ids) - set(by_id))
        if orphan_nb or orphan_px or len(set(pair_ids)) != len(pair_ids):
            raise JoinError(orphan_nb, orphan_px)
        rows = [(by_id[p.neighborhood_id], p) for p in pairs]
        cov = {name: np.array([float(getattr(nb, name)) for nb, _ in rows])
               for name in covariates}
        return cls(
            y=np.array([nb.cases for nb, _ in rows], dtype=float),
            pop=np.array([nb.population for nb, _ in rows], dtype=float),
            x_star=np.array([p.x_star for _, p in rows]),
            x=np.array([np.nan if p.x is None else p.x for _, p in rows]),
            queried=np.array([p.queried for _, p in rows], dtype=bool),
            covariates=cov,
            ids=tuple(p.neighborhood_id for _, p in rows),
        )


class JoinError(InvalidInputError):
    def __init__(self, orphan_neighborhoods, orphan_proximity):
        self.orphan_neighborhoods = list(orphan_neighborhoods)
        self.orphan_proximity = list(orphan_proximity)
        super().__init__(
            "neighborhood and proximity ids do not match 1:1; "
            f"only in neighborhoods: {self.orphan_neighborhoods}; "
            f"only in proximity: {self.orphan_proximity}")


@dataclass(frozen=True)
class AnalysisSpec:
    """Covariates Z and whether to add X x Z terms to the Poisson model."""

    covariates: tuple[str, ...] = ()
    interaction: bool = False

    def names(self) -> tuple[str, ...]:
        names = ["intercept", EXPOSURE, *self.covariates]
        if self.interaction:
            names += [f"{EXPOSURE}:{z}" for z in self.covariates]
        return tuple(names)


def default_spec(data: TwoPhaseDataset, interaction: bool = True) -> AnalysisSpec:
    """Non-constant covariates, with X x Z terms when any covariate is present."""
    covs = tuple(k for k, v in data.covariates.items() if np.ptp(np.asarray(v, float)) > 0)
    return AnalysisSpec(covs, interaction and bool(covs))


def fit_strategy_design(data: TwoPhaseDataset, spec: AnalysisSpec, exposure,
                        rows: np.ndarray | None) -> GlmFit:
    exposure = np.asarray(exposure, dtype=float)
    y, pop = np.asarray(data.y, float), np.asarray(data.pop, float)
    covs = {k: np.asarray(data.covariates[k], float) for k in spec.covariates}
    if rows is not None:
        exposure, y, pop = exposure[rows], y[rows], pop[rows]
        covs = {k: v[rows] for k, v in covs.items()}
    preds = {EXPOSURE: exposure, **covs}
    if spec.interaction:
        for k in spec.covariates:
            preds[f"{EXPOSURE}:{k}"] = exposure * covs[k]
    return fit_poisson(DesignSpec.with_population(y, pop, preds))


def naive_design(data: TwoPhaseDataset, spec: AnalysisSpec) -> DesignSpec:
    preds = {EXPOSURE: np.asarray(data.x_star, float)}
    for k in spec.covariates:
        preds[k] = np.asarray(data.covariates[k], float)
    if spec.interaction:
        for k in spec.covariates:
            preds[f"{EXPOSURE}:{k}"] = preds[EXPOSURE] * preds[k]
    return DesignSpec.with_population(data.y, data.pop, preds)


def run_naive(data: TwoPhaseDataset, spec: AnalysisSpec) -> GlmFit:
    return fit_strategy_design(data, spec, data.x_star, None)


def run_gold(data: TwoPhaseDataset, spec: AnalysisSpec) -> GlmFit:
    if not data.has_full_x:
        raise UnavailableStrategyError("gold standard needs map-based proximity for every row")
    return fit_strategy_design(data, spec, data.x, None)


def run_complete_case(data: TwoPhaseDataset, spec: AnalysisSpec) -> GlmFit:
    rows = np.asarray(data.queried, dtype=bool)
    need = len(spec.names()) + 2
    if rows.sum() < need:
        raise InsufficientValidationError(
            f"{int(rows.sum())} queried rows; complete-case analysis needs {need}")
    return fit_strategy_design(data, spec, data.x, rows)


def run_imputation(data: TwoPhaseDataset, spec: AnalysisSpec, b: int,
                   rng: np.random.Generator, **kwargs) -> PooledEstimate:
    if data.n_queried == 0:
        raise UnavailableStrategyError("imputation needs at least some queried rows")
    return impute_analyze(data, b, spec, rng, **kwargs)


@dataclass
class CoefRow:
    strategy: str
    coef: str
    estimate: float
    se: float
    ci_lo: float
    ci_hi: float

    @property
    def pr(self):
        return math.exp(self.estimate)

    @property
    def pr_lo(self):
        return math.exp(self.ci_lo)

    @property
    def pr_hi(self):
        return math.exp(self.ci_hi)


CSV_HEADER = ("strategy", "coef", "estimate", "se", "ci_lo", "ci_hi", "pr", "pr_lo", "pr_hi")


def _fmt(v: float) -> str:
    return format(v, ".10g")


@dataclass
class AnalysisReport:
    rows: list[CoefRow]
    fits: dict[str, object]
    unavailable: dict[str, str]
    metadata: dict[str, object]
    spatial: dict[str, object] | None = None

    def strategy_rows(self, strategy: str) -> list[CoefRow]:
        return [r for r in self.rows if r.strategy == strategy]

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(CSV_HEADER)
        for r in self.rows:
            w.writerow([r.strategy, r.coef] + [_fmt(v) for v in (
                r.estimate, r.se, r.ci_lo, r.ci_hi, r.pr, r.pr_lo, r.pr_hi)])
        return buf.getvalue()

    def to_text(self) -> str:
        lines = [f"Prevalence ratios ({MODEL_LABEL}), "
                 f"{int(self.metadata.get('level', 0.95) * 100)}% CI"]
        head = f"{'strategy':<14} {'coef':<12} {'estimate':>10} {'se':>9} {'PR':>7}  {'PR CI':<17}"
        lines += [head, "-" * len(head)]
        for s in STRATEGIES:
            if s in self.unavailable:
                lines.append(f"{s:<14} unavailable: {self.unavailable[s]}")
                continue
            for r in self.strategy_rows(s):
                lines.append(f"{r.strategy:<14} {r.coef:<12} {r.estimate:>10.5f} {r.se:>9.5f} "
                             f"{r.pr:>7.3f}  ({r.pr_lo:.3f}, {r.pr_hi:.3f})")
        meta = ", ".join(f"{k}={v}" for k, v in self.metadata.items())
        lines.append(f"[{meta}]")
        if self.spatial:
            sp = self.spatial
            lines.append(f"Moran's I on naive residuals: I = {sp['I']:.4f}, "
                         f"E[I] = {sp['expected']:.4f}, p = {sp['p_value']:.4g} "
                         f"({sp['method']}, {sp['weights']} weights)")
            if sp["p_value"] < 0.05:
                lines.append("Residual spatial autocorrelation detected: standard errors "
                             "from the independence model may be too small.")
        return "\n".join(lines) + "\n"


def _rows_from(strategy: str, fit, level: float, reference: str) -> list[CoefRow]:
    out = []
    for name in fit.names:
        if isinstance(fit, PooledEstimate):
            lo, hi = fit.interval(name, level, reference)
        else:
            z = normal_quantile(level)
            lo, hi = fit.estimate(name) - z * fit.se(name), fit.estimate(name) + z * fit.se(name)
        out.append(CoefRow(strategy, name, fit.estimate(name), fit.se(name), lo, hi))
    return out


def report(data: TwoPhaseDataset, spec: AnalysisSpec, b: int, rng: np.random.Generator,
           level: float = 0.95, reference: str = "normal", seed=None,
           **impute_kwargs) -> AnalysisReport:
    """Run every computable strategy; record why the others were skipped."""
    rows, fits, unavailable = [], {}, {}
    runners = {
        "gold": lambda: run_gold(data, spec),
        "naive": lambda: run_naive(data, spec),
        "complete_case": lambda: run_complete_case(data, spec),
        "imputation": lambda: run_imputation(data, spec, b, rng, **impute_kwargs),
    }
    for s in STRATEGIES:
        try:
            fit = runners[s]()
        except FoodAccessError as exc:
            unavailable[s] = str(exc)
            continue
        fits[s] = fit
        rows.extend(_rows_from(s, fit, level, reference))
    meta = {
        "model": MODEL_LABEL,
        "n": len(data),
        "n_queried": data.n_queried,
        "b": b,
        "seed": seed,
        "level": level,
        "reference": reference,
        "covariates": "+".join(spec.covariates) or "none",
        "interaction": spec.interaction,
    }
    for s, fit in fits.items():
        conv = fit.all_converged if isinstance(fit, PooledEstimate) else fit.converged
        if not conv:
            meta[f"{s}_converged"] = False
    if "imputation" in fits:
        meta["negative_imputed_draws"] = fits["imputation"].n_negative_draws
    return AnalysisReport(rows, fits, unavailable, meta)

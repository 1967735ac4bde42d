"""Monte Carlo harness: replicate loops, evaluation metrics and scenario grids."""

from __future__ import annotations

import configparser
import csv
import io
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from .analyze import (
    EXPOSURE,
    STRATEGIES,
    AnalysisSpec,
    TwoPhaseDataset,
    run_complete_case,
    run_gold,
    run_imputation,
    run_naive,
)
from .errors import FoodAccessError, InvalidConfigError, ScenarioDegenerateError
from .regress import normal_quantile
from .synth import Additive, Multiplicative, SimConfig, generate

MAX_FAILED_FRACTION = 0.001
LEVEL = 0.95


def replicate_rng(seed: int, scenario_index: int, replicate: int) -> np.random.Generator:
    """Independent stream per (seed, scenario, replicate), order-free."""
    ss = np.random.SeedSequence(int(seed), spawn_key=(int(scenario_index), int(replicate)))
    return np.random.default_rng(ss)


@dataclass
class ReplicateResult:
    replicate: int
    estimate: dict[str, float] = field(default_factory=dict)
    se: dict[str, float] = field(default_factory=dict)
    covers: dict[str, bool] = field(default_factory=dict)
    failed: bool = False
    error: str = ""


def run_replicate(config: SimConfig, scenario_index: int, replicate: int,
                  dump_dir: str | None = None) -> ReplicateResult:
    rng = replicate_rng(config.seed, scenario_index, replicate)
    out = ReplicateResult(replicate)
    try:
        sim = generate(config, rng)
        if dump_dir is not None:
            _dump_dataset(sim, dump_dir, scenario_index, replicate)
        data = TwoPhaseDataset.from_simulated(sim)
        spec = AnalysisSpec()
        fits = {
            "gold": run_gold(data, spec),
            "naive": run_naive(data, spec),
            "complete_case": run_complete_case(data, spec),
            "imputation": run_imputation(data, spec, config.b, rng),
        }
    except (FoodAccessError, np.linalg.LinAlgError, FloatingPointError) as exc:
        out.failed, out.error = True, f"{type(exc).__name__}: {exc}"
        return out
    z = normal_quantile(LEVEL)
    for s in STRATEGIES:
        fit = fits[s]
        conv = fit.all_converged if hasattr(fit, "all_converged") else fit.converged
        est, se = fit.estimate(EXPOSURE), fit.se(EXPOSURE)
        if not conv or not (math.isfinite(est) and math.isfinite(se)):
            out.failed, out.error = True, f"{s} fit did not converge"
        out.estimate[s], out.se[s] = est, se
        out.covers[s] = bool(est - z * se <= config.beta1 <= est + z * se)
    return out


def _dump_dataset(sim, dump_dir, scenario_index, replicate):
    os.makedirs(dump_dir, exist_ok=True)
    path = os.path.join(dump_dir, f"scenario{scenario_index:03d}_rep{replicate:05d}.csv")
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["x", "x_star", "err", "pop", "y", "queried"])
        for row in zip(sim.x, sim.x_star, sim.err, sim.pop, sim.y, sim.queried):
            w.writerow([repr(float(row[0])), repr(float(row[1])), repr(float(row[2])),
                        int(row[3]), int(row[4]), int(row[5])])


@dataclass
class StrategyMetrics:
    bias: float
    ese: float
    ase: float
    cp: float
    re: float


def compute_metrics(estimates: dict, ses: dict, covers: dict, truth: float,
                    reference: str = "gold") -> dict[str, StrategyMetrics]:
    """Bias, ESE, ASE, CP and RE for each strategy.

    Bias is relative to ``truth`` unless ``truth == 0``, where it is the
    absolute mean error. RE is the reference strategy's empirical variance
    over the strategy's; NaN marks an undefined ratio.
    """
    out = {}
    ref = np.asarray(estimates.get(reference, []), dtype=float)
    ref_var = ref.var(ddof=1) if ref.size > 1 else math.nan
    for s, est in estimates.items():
        est = np.asarray(est, dtype=float)
        err = float(np.mean(est - truth))
        bias = err / truth if truth != 0 else err
        var = est.var(ddof=1) if est.size > 1 else math.nan
        re = ref_var / var if var > 0 and math.isfinite(ref_var) else math.nan
        out[s] = StrategyMetrics(
            bias=bias,
            ese=float(np.sqrt(var)) if math.isfinite(var) else math.nan,
            ase=float(np.mean(np.asarray(ses[s], dtype=float))),
            cp=float(np.mean(np.asarray(covers[s], dtype=float))),
            re=float(re),
        )
    return out


@dataclass
class MetricsRow:
    scenario: str
    config: SimConfig
    metrics: dict[str, StrategyMetrics]
    n_replicates: int
    n_failed: int
    error: str = ""
    replicates: list[ReplicateResult] = field(default_factory=list, repr=False)


def scenario_key(config: SimConfig) -> str:
    m = config.mechanism
    return (f"n={config.n};q={config.q:g};{m.kind}(mu={m.mu:g},sigma={m.sigma:g});"
            f"beta0={config.beta0:g};beta1={config.beta1:g}")


def _run_chunk(args):
    config, scenario_index, reps, dump_dir = args
    return [run_replicate(config, scenario_index, r, dump_dir) for r in reps]


def run_replicates(config: SimConfig, scenario_index: int = 0, threads: int = 1,
                   dump_dir: str | None = None) -> list[ReplicateResult]:
    reps = list(range(config.replicates))
    if threads <= 1:
        return _run_chunk((config, scenario_index, reps, dump_dir))
    n_chunks = min(len(reps), threads * 4)
    chunks = [reps[k::n_chunks] for k in range(n_chunks)]
    with ProcessPoolExecutor(max_workers=threads) as pool:
        parts = list(pool.map(_run_chunk, [(config, scenario_index, c, dump_dir)
                                           for c in chunks]))
    results = [r for part in parts for r in part]
    results.sort(key=lambda r: r.replicate)
    return results


def aggregate(config: SimConfig, results: list[ReplicateResult],
              scenario: str = "") -> MetricsRow:
    ok = [r for r in results if not r.failed]
    n_failed = len(results) - len(ok)
    row = MetricsRow(scenario or scenario_key(config), config, {}, len(results), n_failed,
                     replicates=results)
    if n_failed > MAX_FAILED_FRACTION * len(results):
        row.error = (f"{n_failed} of {len(results)} replicates failed "
                     f"(first: {next(r.error for r in results if r.failed)})")
        return row
    if not ok:
        row.error = "no successful replicates"
        return row
    row.metrics = compute_metrics(
        {s: [r.estimate[s] for r in ok] for s in STRATEGIES},
        {s: [r.se[s] for r in ok] for s in STRATEGIES},
        {s: [r.covers[s] for r in ok] for s in STRATEGIES},
        config.beta1)
    return row


def run_scenario(config: SimConfig, scenario_index: int = 0, threads: int = 1,
                 dump_dir: str | None = None, scenario: str = "") -> MetricsRow:
    """Replicate loop for one configuration.

    Raises :class:`ScenarioDegenerateError` when more than 0.1% of
    replicates fail.
    """
    row = aggregate(config, run_replicates(config, scenario_index, threads, dump_dir),
                    scenario)
    if row.error:
        raise ScenarioDegenerateError(row.error)
    return row


def run_grid(grid: list, threads: int = 1, dump_dir: str | None = None) -> list[MetricsRow]:
    """Run scenarios in order; a degenerate scenario yields a row with ``error`` set.

    ``grid`` holds :class:`SimConfig` objects or ``(name, SimConfig)`` pairs.
    Scenario k draws its replicate streams from (seed, k, replicate).
    """
    if not grid:
        raise InvalidConfigError("empty grid")
    rows = []
    for k, item in enumerate(grid):
        name, config = item if isinstance(item, tuple) else ("", item)
        results = run_replicates(config, k, threads, dump_dir)
        rows.append(aggregate(config, results, name))
    return rows


# --- output ---------------------------------------------------------------------

METRICS_HEADER = ("scenario", "strategy", "bias", "ese", "ase", "cp", "re", "n_reps", "n_failed")


def _fmt(v: float) -> str:
    return "NA" if not math.isfinite(v) else format(v, ".6g")


def metrics_csv(rows: list[MetricsRow]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(METRICS_HEADER)
    for row in rows:
        for s in STRATEGIES:
            m = row.metrics.get(s)
            vals = ([_fmt(m.bias), _fmt(m.ese), _fmt(m.ase), _fmt(m.cp), _fmt(m.re)]
                    if m else ["NA"] * 5)
            w.writerow([row.scenario, s, *vals, row.n_replicates, row.n_failed])
    return buf.getvalue()


def replicates_csv(rows: list[MetricsRow]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["scenario", "replicate", "strategy", "estimate", "se", "covers", "failed"])
    for row in rows:
        for r in row.replicates:
            for s in STRATEGIES:
                w.writerow([row.scenario, r.replicate, s,
                            repr(r.estimate.get(s, math.nan)), repr(r.se.get(s, math.nan)),
                            int(r.covers.get(s, False)), int(r.failed)])
    return buf.getvalue()


def format_table(rows: list[MetricsRow]) -> str:
    """Aligned text table: one block per scenario, one line per strategy."""
    head = (f"{'scenario':<58} {'strategy':<14} {'bias':>7} {'ese':>7} {'ase':>7} "
            f"{'cp':>6} {'re':>6}")
    lines = [head, "-" * len(head)]
    for row in rows:
        if row.error:
            lines.append(f"{row.scenario:<58} ERROR: {row.error}")
            continue
        for s in STRATEGIES:
            m = row.metrics[s]
            lines.append(f"{row.scenario:<58} {s:<14} {m.bias:>7.3f} {m.ese:>7.4f} "
                         f"{m.ase:>7.4f} {m.cp:>6.3f} {m.re:>6.3f}")
    return "\n".join(lines) + "\n"


# --- grid files -------------------------------------------------------------------

_KEYS = {"n", "q", "mechanism", "mu", "sigma", "beta0", "beta1", "pr", "prev", "b",
         "replicates", "seed"}


def parse_grid(text: str) -> list[tuple[str, SimConfig]]:
    """Parse an INI-style grid: one ``[section]`` per scenario.

    Keys: n, q, mechanism (additive|multiplicative), mu, sigma, beta0,
    beta1, b, replicates, seed. ``pr`` (= exp(beta1)) and ``prev``
    (= exp(beta0)) are accepted as alternatives. Values in ``[DEFAULT]``
    apply to every scenario.
    """
    cp = configparser.ConfigParser()
    try:
        cp.read_string(text)
    except configparser.Error as exc:
        raise InvalidConfigError(f"malformed grid: {exc}") from exc
    out = []
    for section in cp.sections():
        sec = cp[section]
        unknown = set(sec) - _KEYS
        if unknown:
            raise InvalidConfigError(f"[{section}] unknown keys {sorted(unknown)}")
        try:
            kind = sec.get("mechanism", "additive").strip().lower()
            if kind == "additive":
                mech = Additive(sec.getfloat("mu", -0.7), sec.getfloat("sigma", 0.8))
            elif kind == "multiplicative":
                mech = Multiplicative(sec.getfloat("mu", 0.7), sec.getfloat("sigma", 0.15))
            else:
                raise InvalidConfigError(f"[{section}] unknown mechanism {kind!r}")
            if "beta1" in sec and "pr" in sec:
                raise InvalidConfigError(f"[{section}] give beta1 or pr, not both")
            if "beta0" in sec and "prev" in sec:
                raise InvalidConfigError(f"[{section}] give beta0 or prev, not both")
            beta1 = (math.log(sec.getfloat("pr")) if "pr" in sec
                     else sec.getfloat("beta1", 0.01))
            beta0 = (math.log(sec.getfloat("prev")) if "prev" in sec
                     else sec.getfloat("beta0", -2.2))
            config = SimConfig(
                n=sec.getint("n", 387), q=sec.getfloat("q", 0.1), mechanism=mech,
                beta0=beta0, beta1=beta1, b=sec.getint("b", 20),
                replicates=sec.getint("replicates", 1000), seed=sec.getint("seed", 0))
        except ValueError as exc:
            if isinstance(exc, InvalidConfigError):
                raise
            raise InvalidConfigError(f"[{section}] {exc}") from exc
        out.append((section, config))
    if not out:
        raise InvalidConfigError("grid defines no scenarios")
    return out


def load_grid(path) -> list[tuple[str, SimConfig]]:
    with open(path, encoding="utf-8") as fh:
        return parse_grid(fh.read())


def with_replicates(grid, replicates: int):
    return [(name, replace(cfg, replicates=replicates)) for name, cfg in grid]

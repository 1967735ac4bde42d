"""Command-line entry point: ``foodaccess {distances,impute,analyze,simulate}``.

Every output file gets a ``<output>.manifest.json`` companion recording the
command, resolved configuration, seed, input digests, version and wall time.
Settings resolve as command-line flag, then ``--config`` INI section named
after the subcommand, then built-in default.

Exit codes: 0 success, 2 input or configuration error, 3 distance provider
or query budget error.
"""

from __future__ import annotations

import argparse
import configparser
import hashlib
import json
import os
import sys
import time
import warnings
from importlib import resources

import numpy as np

from . import SCHEMA_VERSION, __version__, simlab
from .analyze import AnalysisSpec, TwoPhaseDataset, default_spec, naive_design, report, run_naive
from .errors import (FoodAccessError, InvalidConfigError, InvalidInputError, PartialResultError,
                     ProviderError)
from .geodistance import (DEFAULT_PERCENTILE, EARTH_RADIUS_MILES, FileProvider, RemoteProvider,
                          SyntheticProvider, build_proximity_table)
from .impute import DRAW_METHODS, impute_analyze
from .spatial import AdjacencyGraph, morans_i, residuals
from .synth import stratified_query_sample
from .tables import proximity_csv, read_id_list, read_neighborhoods, read_proximity, read_stores

EXIT_OK, EXIT_INPUT, EXIT_PROVIDER = 0, 2, 3

DEFAULTS = {
    "distances": {"provider": "none", "percentile": DEFAULT_PERCENTILE, "query": "none",
                  "radius": EARTH_RADIUS_MILES, "seed": 0, "tolerance": 1e-9},
    "impute": {"b": 20, "seed": 0, "mi_draws": "bootstrap", "covariates": "metro",
               "interaction": True, "log_y_offset": None},
    "analyze": {"b": 20, "seed": 0, "mi_draws": "bootstrap", "covariates": "metro",
                "interaction": True, "log_y_offset": None, "level": 0.95,
                "reference": "normal", "moran_method": "randomization",
                "permutations": 999, "binary_weights": False},
    "simulate": {"threads": 1, "replicates": None},
}
_TYPES = {"percentile": float, "radius": float, "seed": int, "tolerance": float, "b": int,
          "level": float, "permutations": int, "threads": int, "replicates": int,
          "log_y_offset": float}
_BOOLS = {"interaction", "binary_weights"}


def _sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 16), b""):
            h.update(block)
    return h.hexdigest()


def _write(path, text: str):
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(text)


class Run:
    """Collects what a manifest needs while a subcommand executes."""

    def __init__(self, command: str, argv):
        self.command = command
        self.argv = list(argv)
        self.start = time.perf_counter()
        self.config: dict = {}
        self.inputs: dict[str, str] = {}

    def add_input(self, path):
        if path:
            self.inputs[str(path)] = _sha256(path)

    def output(self, path, text: str):
        _write(path, text)
        manifest = {
            "command": self.command,
            "argv": self.argv,
            "config": self.config,
            "seed": self.config.get("seed"),
            "inputs": dict(sorted(self.inputs.items())),
            "version": __version__,
            "schema_version": SCHEMA_VERSION,
            "wall_time_s": round(time.perf_counter() - self.start, 6),
        }
        _write(path + ".manifest.json", json.dumps(manifest, indent=2, default=str) + "\n")


def _resolve(args, command: str) -> dict:
    """Flag > --config file section > default."""
    file_values = {}
    if getattr(args, "config", None):
        cp = configparser.ConfigParser()
        try:
            if not cp.read(args.config, encoding="utf-8"):
                raise InvalidConfigError(f"cannot read config file {args.config}")
        except configparser.Error as exc:
            raise InvalidConfigError(f"malformed config file: {exc}") from exc
        if cp.has_section(command):
            file_values = dict(cp[command])
    out = {}
    for key, default in DEFAULTS[command].items():
        flag = getattr(args, key, None)
        if flag is not None:
            out[key] = flag
        elif key in file_values:
            raw = file_values[key]
            try:
                if key in _BOOLS:
                    out[key] = raw.strip().lower() in ("1", "true", "yes", "on")
                else:
                    out[key] = _TYPES.get(key, str)(raw)
            except ValueError as exc:
                raise InvalidConfigError(f"config [{command}] {key}: {exc}") from exc
        else:
            out[key] = default
    unknown = set(file_values) - set(DEFAULTS[command])
    if unknown:
        raise InvalidConfigError(f"config [{command}] unknown keys {sorted(unknown)}")
    return out


# --- distances -----------------------------------------------------------------

def _parse_kv(text: str) -> dict[str, str]:
    out = {}
    for part in filter(None, text.split(",")):
        if "=" not in part:
            raise InvalidInputError(f"expected key=value, got {part!r}")
        k, v = part.split("=", 1)
        out[k.strip()] = v.strip()
    return out


def make_provider(text: str, tolerance: float, radius: float, run: Run | None = None):
    """Provider from ``synthetic:factor=F``, ``file:PATH`` or ``remote:url=U,budget=B[,...]``."""
    kind, _, rest = text.partition(":")
    if kind == "none":
        return None
    if kind == "synthetic":
        opts = _parse_kv(rest)
        return SyntheticProvider(float(opts.get("factor", 1.0)), tolerance=tolerance,
                                 radius=radius)
    if kind == "file":
        path = _parse_kv(rest).get("path") if rest.startswith("path=") else rest
        if not path:
            raise InvalidInputError("file provider needs a path")
        if run is not None:
            run.add_input(path)
        return FileProvider.from_csv(path, tolerance=tolerance, radius=radius)
    if kind == "remote":
        opts = _parse_kv(rest)
        if "url" not in opts or "budget" not in opts:
            raise InvalidInputError("remote provider needs url= and budget=")
        return RemoteProvider(opts["url"], int(opts["budget"]), cache_path=opts.get("cache"),
                              min_interval=float(opts.get("interval", 0.0)),
                              tolerance=tolerance, radius=radius)
    raise InvalidInputError(f"unknown provider {kind!r}")


def _query_set(spec: str, neighborhoods, seed: int, run: Run) -> set[str]:
    if spec == "all":
        return {nb.id for nb in neighborhoods}
    if spec == "none":
        return set()
    if spec.startswith("file:"):
        run.add_input(spec[5:])
        return read_id_list(spec[5:])
    if spec.startswith("stratified:"):
        try:
            k = int(spec.split(":", 1)[1])
        except ValueError:
            raise InvalidInputError(f"bad stratified count in {spec!r}") from None
        rng = np.random.default_rng(seed)
        records = [{"id": nb.id, "county": nb.county} for nb in neighborhoods]
        return set(stratified_query_sample(records, k, "county", rng))
    raise InvalidInputError(f"unknown --query {spec!r}")


def cmd_distances(args, run: Run) -> int:
    cfg = run.config = _resolve(args, "distances")
    run.add_input(args.neighborhoods)
    run.add_input(args.stores)
    neighborhoods = read_neighborhoods(args.neighborhoods)
    stores = read_stores(args.stores)
    provider = make_provider(cfg["provider"], cfg["tolerance"], cfg["radius"], run)
    query = _query_set(cfg["query"], neighborhoods, cfg["seed"], run)
    sink, dump = None, []
    if args.dump_pairs:
        if provider is not None and not provider.persists_pairs_ok:
            raise InvalidInputError("--dump-pairs is not allowed with the remote provider")
        sink = lambda o, s, d: dump.append((o, s, d))  # noqa: E731
    pairs = build_proximity_table(neighborhoods, stores, provider, query,
                                  cfg["percentile"], cfg["radius"], sink)
    run.output(args.out, proximity_csv(pairs))
    if args.dump_pairs:
        lines = ["origin_id,store_id,miles"] + [f"{o},{s},{d!r}" for o, s, d in dump]
        run.output(args.dump_pairs, "\n".join(lines) + "\n")
    print(f"{len(pairs)} neighborhoods, {len(query)} queried -> {args.out}")
    return EXIT_OK


# --- impute / analyze ----------------------------------------------------------

def _load_dataset(args, cfg, run: Run) -> TwoPhaseDataset:
    run.add_input(args.neighborhoods)
    run.add_input(args.proximity)
    covs = tuple(c for c in cfg["covariates"].split(",") if c and c != "none")
    return TwoPhaseDataset.from_records(read_neighborhoods(args.neighborhoods),
                                        read_proximity(args.proximity), covs)


def _spec(data, cfg) -> AnalysisSpec:
    return default_spec(data, interaction=cfg["interaction"])


def cmd_impute(args, run: Run) -> int:
    cfg = run.config = _resolve(args, "impute")
    data = _load_dataset(args, cfg, run)
    draws: list = []
    impute_analyze(data, cfg["b"], _spec(data, cfg), np.random.default_rng(cfg["seed"]),
                   method=cfg["mi_draws"], log_y_offset=cfg["log_y_offset"], keep_draws=draws)
    for k, x_tilde in enumerate(draws, start=1):
        lines = ["id,x_tilde"] + [f"{i},{v!r}" for i, v in zip(data.ids, x_tilde.tolist())]
        run.output(os.path.join(args.out_dir, f"imputation_{k:03d}.csv"),
                   "\n".join(lines) + "\n")
    print(f"{len(draws)} completed datasets -> {args.out_dir}")
    return EXIT_OK


def cmd_analyze(args, run: Run) -> int:
    cfg = run.config = _resolve(args, "analyze")
    data = _load_dataset(args, cfg, run)
    spec = _spec(data, cfg)
    rng = np.random.default_rng(cfg["seed"])
    rep = report(data, spec, cfg["b"], rng, level=cfg["level"], reference=cfg["reference"],
                 seed=cfg["seed"], method=cfg["mi_draws"], log_y_offset=cfg["log_y_offset"])
    if args.adjacency:
        run.add_input(args.adjacency)
        graph = AdjacencyGraph.from_csv(args.adjacency, data.ids)
        fit = rep.fits.get("naive") or run_naive(data, spec)
        res = residuals(naive_design(data, spec), fit)
        m = morans_i(res, graph, method=cfg["moran_method"],
                     row_standardize=not cfg["binary_weights"],
                     permutations=cfg["permutations"],
                     rng=np.random.default_rng([cfg["seed"], 1]))
        rep.spatial = {**m._asdict(),
                       "weights": "binary" if cfg["binary_weights"] else "row-standardized",
                       "isolated": len(graph.isolated)}
        moran = ("residuals,method,weights,I,expected,variance,z,p_value\n"
                 f"naive,{m.method},{rep.spatial['weights']},{m.I!r},{m.expected!r},"
                 f"{m.variance!r},{m.z!r},{m.p_value!r}\n")
        run.output(os.path.splitext(args.out)[0] + "_moran.csv", moran)
    else:
        print("warning: no --adjacency given; spatial diagnostic skipped", file=sys.stderr)
    run.output(args.out, rep.to_csv())
    text = rep.to_text()
    if args.text_out:
        run.output(args.text_out, text)
    sys.stdout.write(text)
    return EXIT_OK


# --- simulate ------------------------------------------------------------------

def _grid_path(name: str) -> str:
    if os.path.exists(name):
        return name
    bundled = resources.files("foodaccess") / "grids" / f"{name.removesuffix('.grid')}.grid"
    if bundled.is_file():
        return str(bundled)
    raise InvalidConfigError(f"grid {name!r} not found (bundled: {', '.join(bundled_grids())})")


def bundled_grids() -> list[str]:
    folder = resources.files("foodaccess") / "grids"
    return sorted(p.name.removesuffix(".grid") for p in folder.iterdir()
                  if p.name.endswith(".grid"))


def cmd_simulate(args, run: Run) -> int:
    cfg = run.config = _resolve(args, "simulate")
    path = _grid_path(args.grid)
    run.add_input(path)
    grid = simlab.load_grid(path)
    if cfg["replicates"] is not None:
        grid = simlab.with_replicates(grid, cfg["replicates"])
    run.config = {**cfg, "grid": path,
                  "scenarios": {name: repr(c) for name, c in grid}}
    run.config["seed"] = sorted({c.seed for _, c in grid})
    rows = simlab.run_grid(grid, threads=cfg["threads"], dump_dir=args.dump)
    run.output(args.out, simlab.metrics_csv(rows))
    if args.replicates_out:
        run.output(args.replicates_out, simlab.replicates_csv(rows))
    sys.stdout.write(simlab.format_table(rows))
    return EXIT_OK


# --- parser --------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="foodaccess", description=__doc__.split("\n")[0])
    p.add_argument("--version", action="version",
                   version=f"foodaccess {__version__} (schema {SCHEMA_VERSION})")
    sub = p.add_subparsers(dest="command", required=True)

    d = sub.add_parser("distances", help="build a proximity table")
    d.add_argument("--neighborhoods", required=True)
    d.add_argument("--stores", required=True)
    d.add_argument("--provider", help="none | synthetic:factor=F | file:PATH | "
                   "remote:url=U,budget=B[,cache=PATH][,interval=S]")
    d.add_argument("--percentile", type=float)
    d.add_argument("--query", help="all | none | file:PATH | stratified:K (per county)")
    d.add_argument("--radius", type=float, help="Earth radius in miles")
    d.add_argument("--tolerance", type=float,
                   help="slack before a map distance below straight-line warns")
    d.add_argument("--seed", type=int)
    d.add_argument("--out", required=True)
    d.add_argument("--dump-pairs", help="debug: write every queried pair distance")
    d.set_defaults(func=cmd_distances)

    def data_args(s):
        s.add_argument("--neighborhoods", required=True)
        s.add_argument("--proximity", required=True)
        s.add_argument("--b", type=int, help="number of imputations")
        s.add_argument("--seed", type=int)
        s.add_argument("--mi-draws", dest="mi_draws", choices=DRAW_METHODS,
                       help="how imputation-model uncertainty is propagated")
        s.add_argument("--covariates", help="comma-separated neighborhood columns, or none")
        s.add_argument("--no-interaction", dest="interaction", action="store_const",
                       const=False, help="drop X x Z terms")
        s.add_argument("--log-y-offset", dest="log_y_offset", type=float,
                       help="use log(Y + c) in the imputation model when counts hit 0")

    i = sub.add_parser("impute", help="write completed datasets")
    data_args(i)
    i.add_argument("--out-dir", required=True)
    i.set_defaults(func=cmd_impute)

    a = sub.add_parser("analyze", help="four-strategy prevalence-ratio report")
    data_args(a)
    a.add_argument("--adjacency", help="CSV with id_a,id_b border pairs")
    a.add_argument("--level", type=float)
    a.add_argument("--reference", choices=("normal", "t"))
    a.add_argument("--moran-method", dest="moran_method",
                   choices=("randomization", "normal", "permutation"))
    a.add_argument("--permutations", type=int)
    a.add_argument("--binary-weights", dest="binary_weights", action="store_const", const=True)
    a.add_argument("--out", required=True, help="report CSV")
    a.add_argument("--text-out", help="also save the text table")
    a.set_defaults(func=cmd_analyze)

    s = sub.add_parser("simulate", help="run a scenario grid")
    s.add_argument("grid", help="grid file or bundled name")
    s.add_argument("--threads", type=int)
    s.add_argument("--replicates", type=int, help="override replicates for every scenario")
    s.add_argument("--out", required=True, help="metrics CSV")
    s.add_argument("--replicates-out", help="per-replicate estimates CSV")
    s.add_argument("--dump", help="directory for per-replicate simulated datasets")
    s.set_defaults(func=cmd_simulate)

    for sp in (d, i, a, s):
        sp.add_argument("--config", help="INI file with a section per subcommand")
    return p


def main(argv=None) -> int:
    argv = sys.argv[1:] if argv is None else list(argv)
    args = build_parser().parse_args(argv)
    run = Run(args.command, argv)
    try:
        with warnings.catch_warnings():
            warnings.simplefilter("default")
            return args.func(args, run)
    except (ProviderError, PartialResultError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_PROVIDER
    except (FoodAccessError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())

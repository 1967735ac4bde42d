import csv
import math
import os

import numpy as np
import pytest

from foodaccess import simlab
from foodaccess.analyze import STRATEGIES
from foodaccess.errors import InvalidConfigError, ScenarioDegenerateError
from foodaccess.synth import Additive, Multiplicative, SimConfig

from oracles import aggregate_metrics, newton_poisson

TINY = SimConfig(n=100, q=0.25, b=5, replicates=20, seed=3)


class TestComputeMetrics:
    def test_perfect_estimates(self):
        est = {s: [0.01] * 5 for s in ("gold", "naive")}
        m = simlab.compute_metrics(est, {s: [0.002] * 5 for s in est},
                                   {s: [True] * 5 for s in est}, 0.01)
        assert m["gold"].bias == 0 and m["gold"].ese == 0 and m["gold"].cp == 1
        assert math.isnan(m["gold"].re)

    def test_five_fabricated_replicates(self):
        est = {"gold": [0.010, 0.012, 0.009, 0.011, 0.008],
               "naive": [0.0105, 0.0104, 0.0109, 0.0101, 0.0106]}
        ses = {"gold": [0.001, 0.0012, 0.0011, 0.001, 0.0009], "naive": [0.001] * 5}
        cov = {"gold": [True, True, False, True, True], "naive": [False, True, True, True, True]}
        m = simlab.compute_metrics(est, ses, cov, 0.01)
        # hand evaluation
        assert m["gold"].bias == pytest.approx(0.0, abs=1e-12)
        assert m["gold"].ese == pytest.approx(math.sqrt(2.5e-6), rel=1e-10)
        assert m["gold"].ase == pytest.approx(0.00104, rel=1e-12)
        assert m["gold"].cp == 0.8
        assert m["gold"].re == 1.0
        assert m["naive"].bias == pytest.approx(0.05, rel=1e-10)
        assert m["naive"].ese == pytest.approx(math.sqrt(8.5e-8), rel=1e-10)
        assert m["naive"].re == pytest.approx(2.5e-6 / 8.5e-8, rel=1e-10)

    def test_null_truth_is_absolute(self):
        m = simlab.compute_metrics({"gold": [0.001, -0.003]}, {"gold": [1, 1]},
                                   {"gold": [1, 1]}, 0.0)
        assert m["gold"].bias == pytest.approx(-0.001)

    def test_matches_oracle(self):
        rng = np.random.default_rng(50)
        est = {s: rng.normal(0.01, 0.002, 30).tolist() for s in STRATEGIES}
        ses = {s: rng.gamma(2, 0.001, 30).tolist() for s in STRATEGIES}
        cov = {s: (rng.random(30) < 0.9).tolist() for s in STRATEGIES}
        ours = simlab.compute_metrics(est, ses, cov, 0.01)
        ref = aggregate_metrics({s: {"estimate": est[s], "se": ses[s], "covers": cov[s]}
                                 for s in STRATEGIES}, 0.01)
        for s in STRATEGIES:
            for k in ("bias", "ese", "ase", "cp", "re"):
                assert getattr(ours[s], k) == pytest.approx(ref[s][k], rel=1e-10)


class TestScenario:
    def test_tiny_grid_vs_dumped_csv_oracle(self, tmp_path):
        dump = tmp_path / "dump"
        rows = simlab.run_grid([("tiny", TINY)], dump_dir=str(dump))
        rep_csv = tmp_path / "reps.csv"
        rep_csv.write_text(simlab.replicates_csv(rows))

        cols = {s: {"estimate": [], "se": [], "covers": []} for s in STRATEGIES}
        with open(rep_csv, newline="") as fh:
            for r in csv.DictReader(fh):
                assert r["failed"] == "0"
                c = cols[r["strategy"]]
                c["estimate"].append(float(r["estimate"]))
                c["se"].append(float(r["se"]))
                c["covers"].append(int(r["covers"]))
        ref = aggregate_metrics(cols, TINY.beta1)
        for s in STRATEGIES:
            for k in ("bias", "ese", "ase", "cp", "re"):
                assert getattr(rows[0].metrics[s], k) == pytest.approx(ref[s][k], rel=1e-9)

        # the dumped datasets reproduce the gold and naive estimates via the Newton oracle
        files = sorted(os.listdir(dump))
        assert len(files) == TINY.replicates
        for k, name in enumerate(files[:5]):
            data = np.genfromtxt(dump / name, delimiter=",", names=True)
            off = np.log(data["pop"])
            for s, col in (("gold", "x"), ("naive", "x_star")):
                X = np.column_stack([np.ones(len(off)), data[col]])
                beta, _ = newton_poisson(X, data["y"], off)
                assert beta[1] == pytest.approx(cols[s]["estimate"][k], abs=1e-8)
            assert int(data["queried"].sum()) == 25

    def test_gold_re_is_one(self):
        row = simlab.run_scenario(TINY)
        assert row.metrics["gold"].re == 1.0

    def test_single_scenario_grid_equals_run_scenario(self):
        a = simlab.run_grid([TINY])[0]
        b = simlab.run_scenario(TINY)
        assert simlab.metrics_csv([a]) == simlab.metrics_csv([b])

    def test_isolated_rerun_of_grid_row(self):
        other = SimConfig(n=100, q=0.5, b=5, replicates=10, seed=3)
        grid = simlab.run_grid([("first", other), ("second", TINY)])
        alone = simlab.run_scenario(TINY, scenario_index=1, scenario="second")
        assert simlab.metrics_csv([grid[1]]) == simlab.metrics_csv([alone])

    def test_threads_do_not_change_results(self):
        cfg = SimConfig(n=100, q=0.25, b=5, replicates=12, seed=4)
        one = simlab.run_grid([cfg], threads=1)
        three = simlab.run_grid([cfg], threads=3)
        assert simlab.replicates_csv(one) == simlab.replicates_csv(three)

    def test_degenerate_scenario(self, monkeypatch):
        def broken(config, scenario_index, replicate, dump_dir=None):
            r = simlab.ReplicateResult(replicate)
            r.failed, r.error = replicate % 2 == 0, "boom"
            for s in STRATEGIES:
                r.estimate[s], r.se[s], r.covers[s] = 0.01, 0.001, True
            return r

        monkeypatch.setattr(simlab, "run_replicate", broken)
        with pytest.raises(ScenarioDegenerateError):
            simlab.run_scenario(TINY)
        rows = simlab.run_grid([TINY, TINY])
        assert all(r.error for r in rows)
        assert "ERROR" in simlab.format_table(rows)
        assert "NA" in simlab.metrics_csv(rows)

    def test_metrics_csv_layout(self):
        rows = simlab.run_grid([("a", TINY)])
        lines = simlab.metrics_csv(rows).splitlines()
        assert lines[0] == "scenario,strategy,bias,ese,ase,cp,re,n_reps,n_failed"
        assert [ln.split(",")[1] for ln in lines[1:]] == list(STRATEGIES)

    def test_se_ordering_over_500_replicates(self):
        cfg = SimConfig(n=200, q=0.25, b=5, replicates=500, seed=8)
        m = simlab.run_scenario(cfg).metrics
        assert m["gold"].ese <= m["imputation"].ese <= m["complete_case"].ese


class TestGrids:
    @pytest.mark.parametrize("name,rows", [("table1", 10), ("table2", 8), ("table3", 15),
                                           ("table4", 6), ("smoke", 2)])
    def test_bundled_grid_sizes(self, name, rows):
        from foodaccess.cli import _grid_path
        assert len(simlab.load_grid(_grid_path(name))) == rows

    def test_table1_values(self):
        from foodaccess.cli import _grid_path
        grid = simlab.load_grid(_grid_path("table1"))
        assert sorted({c.n for _, c in grid}) == [387, 2169]
        assert sorted({c.mechanism.sigma for _, c in grid}) == [0.1, 0.2, 0.4, 0.8, 1.0]
        assert all(c.replicates == 1000 and c.b == 20 for _, c in grid)

    def test_table3_pr_and_prevalence(self):
        from foodaccess.cli import _grid_path
        grid = simlab.load_grid(_grid_path("table3"))
        assert sorted({round(math.exp(c.beta1), 6) for _, c in grid}) == [0.95, 0.99, 1.0,
                                                                           1.01, 1.05]
        assert sorted({c.beta0 for _, c in grid}) == [-2.7, -2.2, -1.1]

    def test_parse(self):
        grid = simlab.parse_grid("""
[DEFAULT]
replicates = 7

[a]
n = 50
q = 0.2
mechanism = multiplicative
mu = 0.6
sigma = 0.2
pr = 1.05
""")
        name, cfg = grid[0]
        assert name == "a" and cfg.replicates == 7
        assert cfg.mechanism == Multiplicative(0.6, 0.2)
        assert cfg.beta1 == pytest.approx(math.log(1.05))

    @pytest.mark.parametrize("text", [
        "not an ini",
        "[a]\nn = 5x\n",
        "[a]\nwhat = 1\n",
        "[a]\nmechanism = quadratic\n",
        "[a]\nbeta1 = 0.1\npr = 1.1\n",
        "[a]\nq = 0\n",
        "[DEFAULT]\nn = 10\n",
    ])
    def test_malformed(self, text):
        with pytest.raises(InvalidConfigError):
            simlab.parse_grid(text)

    def test_with_replicates(self):
        grid = simlab.with_replicates([("a", TINY)], 3)
        assert grid[0][1].replicates == 3 and grid[0][1].n == TINY.n

    def test_scenario_key(self):
        key = simlab.scenario_key(SimConfig(mechanism=Additive(-0.7, 0.8)))
        assert key.startswith("n=387;q=0.1;additive(mu=-0.7,sigma=0.8)")

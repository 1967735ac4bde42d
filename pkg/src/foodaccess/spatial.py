"""Moran's I for analysis-model residuals on a neighborhood adjacency graph."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from typing import Iterable, NamedTuple, Sequence

import numpy as np
from scipy.special import ndtr

from .errors import DegenerateInputError, InvalidGraphError, InvalidInputError
from .regress import GlmFit, fitted_counts


class AdjacencyGraph:
    """Undirected border-sharing graph over a fixed, ordered node list.

    Edges are deduplicated and stored once per unordered pair. Nodes that
    share no border with anyone are allowed and listed in ``isolated``.
    """

    def __init__(self, nodes: Sequence[str], edges: Iterable[tuple[str, str]]):
        self.nodes = tuple(nodes)
        self._pos = {n: k for k, n in enumerate(self.nodes)}
        if len(self._pos) != len(self.nodes):
            raise InvalidGraphError("duplicate node ids")
        pairs = set()
        for a, b in edges:
            if a == b:
                raise InvalidGraphError(f"self edge on {a!r}")
            for v in (a, b):
                if v not in self._pos:
                    raise InvalidGraphError(f"edge endpoint {v!r} is not a known node")
            i, j = self._pos[a], self._pos[b]
            pairs.add((min(i, j), max(i, j)))
        self.edges = tuple(sorted(pairs))

    @classmethod
    def from_csv(cls, path, nodes: Sequence[str]) -> "AdjacencyGraph":
        with open(path, newline="", encoding="utf-8") as fh:
            reader = csv.DictReader(fh)
            if not {"id_a", "id_b"} <= set(reader.fieldnames or ()):
                raise InvalidInputError(f"{path}: adjacency CSV needs columns id_a,id_b")
            edges = [(r["id_a"], r["id_b"]) for r in reader]
        return cls(nodes, edges)

    def __len__(self):
        return len(self.nodes)

    @property
    def isolated(self) -> tuple[str, ...]:
        touched = {i for e in self.edges for i in e}
        return tuple(n for k, n in enumerate(self.nodes) if k not in touched)

    def binary_weights(self) -> np.ndarray:
        n = len(self.nodes)
        w = np.zeros((n, n))
        if self.edges:
            i, j = np.array(self.edges).T
            w[i, j] = 1.0
            w[j, i] = 1.0
        return w

    def weights(self, row_standardize: bool = True) -> np.ndarray:
        w = self.binary_weights()
        if row_standardize:
            rs = w.sum(axis=1, keepdims=True)
            np.divide(w, rs, out=w, where=rs > 0)
        return w


class MoranResult(NamedTuple):
    I: float
    p_value: float
    expected: float
    variance: float
    z: float
    method: str


def residuals(spec, fit: GlmFit) -> np.ndarray:
    """Observed minus fitted counts for a Poisson fit on ``spec``."""
    if len(spec.outcome) != fit.n_obs:
        raise InvalidInputError(f"fit used {fit.n_obs} rows, design has {len(spec.outcome)}")
    return spec.outcome - fitted_counts(spec, fit)


def residuals_naive(data, fit: GlmFit, analysis_spec) -> np.ndarray:
    """Residuals Y - exp(offset + design * beta) of a naive (X*) fit."""
    from .analyze import naive_design

    return residuals(naive_design(data, analysis_spec), fit)


def moran_statistic(values: np.ndarray, w: np.ndarray) -> float:
    z = values - values.mean()
    return float(len(values) / w.sum() * (z @ w @ z) / (z @ z))


def morans_i(values, graph: AdjacencyGraph, method: str = "randomization",
             row_standardize: bool = True, permutations: int = 999,
             rng: np.random.Generator | None = None) -> MoranResult:
    """Global Moran's I with a two-sided p-value.

    Parameters
    ----------
    values : array_like
        One value per graph node, in ``graph.nodes`` order.
    method : {"randomization", "normal", "permutation"}
        Variance of I under the randomization or normality assumption
        (normal approximation), or a Monte Carlo permutation test.
    row_standardize : bool
        Row-standardized weights (default) or binary adjacency.
    permutations : int
        Number of permutations for ``method="permutation"`` (>= 999).
    """
    v = np.asarray(values, dtype=float)
    n = len(v)
    if n != len(graph):
        raise InvalidInputError(f"{n} values for a graph with {len(graph)} nodes")
    if not graph.edges:
        raise InvalidGraphError("graph has no edges")
    if np.ptp(v) == 0:
        raise DegenerateInputError("Moran's I is undefined for a constant vector")
    if n < 4 and method != "permutation":
        raise InvalidInputError("the analytic variance needs at least 4 nodes")
    w = graph.weights(row_standardize)
    stat = moran_statistic(v, w)
    expected = -1.0 / (n - 1)

    if method == "permutation":
        if permutations < 999:
            raise InvalidInputError("use at least 999 permutations")
        rng = rng if rng is not None else np.random.default_rng()
        z = v - v.mean()
        zz = z @ z
        scale = n / w.sum()
        perms = np.array([z[rng.permutation(n)] for _ in range(permutations)])
        sims = scale * np.sum((perms @ w) * perms, axis=1) / zz
        hi = np.sum(sims >= stat) + 1
        lo = np.sum(sims <= stat) + 1
        p = min(1.0, 2.0 * min(hi, lo) / (permutations + 1))
        var = float(sims.var(ddof=1))
        zscore = (stat - sims.mean()) / np.sqrt(var)
        return MoranResult(stat, float(p), expected, var, float(zscore), method)

    s0 = w.sum()
    s1 = 0.5 * np.sum((w + w.T) ** 2)
    s2 = np.sum((w.sum(axis=1) + w.sum(axis=0)) ** 2)
    if method == "normal":
        ei2 = (n * n * s1 - n * s2 + 3 * s0 * s0) / ((n * n - 1) * s0 * s0)
    elif method == "randomization":
        z = v - v.mean()
        b2 = n * np.sum(z ** 4) / np.sum(z ** 2) ** 2
        num = (n * ((n * n - 3 * n + 3) * s1 - n * s2 + 3 * s0 * s0)
               - b2 * ((n * n - n) * s1 - 2 * n * s2 + 6 * s0 * s0))
        ei2 = num / ((n - 1) * (n - 2) * (n - 3) * s0 * s0)
    else:
        raise InvalidInputError(f"unknown method {method!r}")
    var = float(ei2 - expected ** 2)
    if var <= 1e-12 * expected ** 2:
        # every relabeling gives the same statistic: nothing to test
        return MoranResult(stat, 1.0, expected, 0.0, 0.0, method)
    zscore = (stat - expected) / np.sqrt(var)
    p = float(2.0 * ndtr(-abs(zscore)))
    return MoranResult(stat, p, expected, var, float(zscore), method)

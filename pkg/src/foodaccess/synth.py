"""Simulated two-phase datasets with truncated-normal measurement error."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Hashable, Iterable

import numpy as np
from scipy.special import ndtr, ndtri

from .errors import DegenerateTruncationError, InvalidConfigError, InvalidInputError


@dataclass(frozen=True)
class Additive:
    """X* = X + U, U ~ N(mu, sigma) truncated to [-X, 0]."""

    mu: float = -0.7
    sigma: float = 0.8

    def __post_init__(self):
        if not self.sigma > 0:
            raise InvalidConfigError("additive error sigma must be > 0")
        if not self.mu <= 0:
            raise InvalidConfigError("additive error mean must be <= 0")

    kind = "additive"


@dataclass(frozen=True)
class Multiplicative:
    """X* = W X, W ~ N(mu, sigma) truncated to [0, 1]."""

    mu: float = 0.7
    sigma: float = 0.15

    def __post_init__(self):
        if not self.sigma > 0:
            raise InvalidConfigError("multiplicative error sigma must be > 0")
        if not 0 < self.mu < 1:
            raise InvalidConfigError("multiplicative error mean must lie in (0, 1)")

    kind = "multiplicative"


@dataclass(frozen=True)
class SimConfig:
    n: int = 387
    q: float = 0.1
    mechanism: Additive | Multiplicative = field(default_factory=Additive)
    beta0: float = -2.2
    beta1: float = 0.01
    gamma_shape: float = 1.0
    gamma_scale: float = 2.5
    pop_mean: float = 4095.0
    b: int = 20
    replicates: int = 1000
    seed: int = 0

    def __post_init__(self):
        if self.n < 1:
            raise InvalidConfigError("n must be a positive integer")
        if not 0 < self.q <= 1:
            raise InvalidConfigError("q must lie in (0, 1]")
        if self.b < 2:
            raise InvalidConfigError("at least two imputations are required")
        if self.replicates < 1:
            raise InvalidConfigError("replicates must be >= 1")
        if self.gamma_shape <= 0 or self.gamma_scale <= 0 or self.pop_mean <= 0:
            raise InvalidConfigError("gamma parameters and pop_mean must be positive")
        if nint(self.n * self.q) < 1:
            raise InvalidConfigError(f"n*q = {self.n * self.q} rounds to zero queried rows")

    @property
    def n_queried(self) -> int:
        return nint(self.n * self.q)


@dataclass(frozen=True)
class SimulatedDataset:
    x: np.ndarray
    x_star: np.ndarray
    err: np.ndarray
    pop: np.ndarray
    y: np.ndarray
    queried: np.ndarray

    def __len__(self):
        return len(self.x)


def nint(v: float) -> int:
    """Nearest integer, halves rounded up."""
    return int(math.floor(v + 0.5))


def sample_truncated_normal(mu, sigma, lower, upper, rng: np.random.Generator, size=None):
    """Draw from N(mu, sigma^2) conditioned on [lower, upper] by inverse CDF.

    All parameters broadcast against each other, so per-row bounds (e.g.
    ``lower = -x``) are fine. Bounds may be infinite.

    The uniform is drawn on [Phi(a), Phi(b)] with a, b the standardized
    bounds. When the interval sits in the upper tail the problem is mirrored
    so that both CDF values stay small and keep full relative precision.
    """
    mu = np.asarray(mu, dtype=float)
    sigma = np.asarray(sigma, dtype=float)
    lower = np.asarray(lower, dtype=float)
    upper = np.asarray(upper, dtype=float)
    if np.any(~(sigma > 0)):
        raise InvalidInputError("sigma must be > 0")
    if np.any(np.isnan(lower)) or np.any(np.isnan(upper)) or np.any(np.isnan(mu)):
        raise InvalidInputError("NaN in truncated normal parameters")
    if np.any(~(lower < upper)):
        raise InvalidInputError("truncation requires lower < upper")

    shape = np.broadcast_shapes(mu.shape, sigma.shape, lower.shape, upper.shape)
    if size is not None:
        shape = np.broadcast_shapes(shape, (size,) if np.isscalar(size) else tuple(size))
    a = np.broadcast_to((lower - mu) / sigma, shape)
    b = np.broadcast_to((upper - mu) / sigma, shape)

    flip = a > 0
    lo = np.where(flip, -b, a)
    hi = np.where(flip, -a, b)
    p_lo, p_hi = ndtr(lo), ndtr(hi)
    mass = p_hi - p_lo
    if np.any(mass < 1e-300):
        raise DegenerateTruncationError("truncation interval has no probability mass")

    u = rng.random(shape)
    z = ndtri(p_lo + u * mass)
    z = np.where(flip, -z, z)
    draw = np.clip(np.broadcast_to(mu, shape) + np.broadcast_to(sigma, shape) * z,
                   np.broadcast_to(lower, shape), np.broadcast_to(upper, shape))
    return draw if draw.shape else float(draw)


def assign_queried(n: int, q: float, rng: np.random.Generator) -> np.ndarray:
    """Boolean mask with exactly nint(n*q) True entries at uniform positions."""
    if not 0 < q <= 1:
        raise InvalidConfigError("q must lie in (0, 1]")
    k = nint(n * q)
    if k == 0:
        raise InvalidConfigError(f"n*q = {n * q} rounds to zero queried rows")
    mask = np.zeros(n, dtype=bool)
    mask[rng.choice(n, size=k, replace=False)] = True
    return mask


def _common(config: SimConfig, rng: np.random.Generator):
    return rng.gamma(config.gamma_shape, config.gamma_scale, size=config.n)


def _finish(config, rng, x, x_star, err) -> SimulatedDataset:
    pop = rng.poisson(config.pop_mean, size=config.n)
    y = rng.poisson(pop * np.exp(config.beta0 + config.beta1 * x))
    queried = assign_queried(config.n, config.q, rng)
    return SimulatedDataset(x=x, x_star=x_star, err=err, pop=pop, y=y, queried=queried)


def generate_additive(config: SimConfig, rng: np.random.Generator) -> SimulatedDataset:
    mech = config.mechanism
    if not isinstance(mech, Additive):
        raise InvalidConfigError("generate_additive needs an Additive mechanism")
    x = _common(config, rng)
    u = sample_truncated_normal(mech.mu, mech.sigma, -x, 0.0, rng)
    x_star = np.clip(x + u, 0.0, x)
    return _finish(config, rng, x, x_star, u)


def generate_multiplicative(config: SimConfig, rng: np.random.Generator) -> SimulatedDataset:
    mech = config.mechanism
    if not isinstance(mech, Multiplicative):
        raise InvalidConfigError("generate_multiplicative needs a Multiplicative mechanism")
    x = _common(config, rng)
    w = sample_truncated_normal(mech.mu, mech.sigma, 0.0, 1.0, rng, size=config.n)
    return _finish(config, rng, x, w * x, w)


def generate(config: SimConfig, rng: np.random.Generator) -> SimulatedDataset:
    if isinstance(config.mechanism, Multiplicative):
        return generate_multiplicative(config, rng)
    return generate_additive(config, rng)


def stratified_query_sample(records: Iterable, per_stratum: int,
                            stratum_key: str | Callable, rng: np.random.Generator,
                            id_key: str | Callable = "id") -> set:
    """Pick ``per_stratum`` ids uniformly without replacement from every stratum.

    ``stratum_key`` and ``id_key`` are attribute/mapping keys or callables.
    Strata and ids are sorted before sampling so the draw depends only on
    the record set and the generator state.
    """
    def getter(key):
        if callable(key):
            return key
        return lambda r: r[key] if isinstance(r, dict) else getattr(r, key)

    skey, ikey = getter(stratum_key), getter(id_key)
    strata: dict[Hashable, list] = {}
    for rec in records:
        strata.setdefault(skey(rec), []).append(ikey(rec))
    if per_stratum < 0:
        raise InvalidConfigError("per_stratum must be >= 0")
    chosen = set()
    for name in sorted(strata, key=str):
        ids = sorted(strata[name], key=str)
        if len(ids) < per_stratum:
            raise InvalidConfigError(
                f"stratum {name!r} has {len(ids)} records, fewer than {per_stratum}")
        picks = rng.choice(len(ids), size=per_stratum, replace=False)
        chosen.update(ids[k] for k in picks)
    return chosen

"""Straight-line and map-based proximity to the nearest store.

Straight-line distances use the haversine formula on a spherical earth.
Map-based distances come from a :class:`DistanceProvider`; only the
per-neighborhood minimum is kept unless a caller explicitly asks for the
individual pair distances.
"""

from __future__ import annotations

import csv
import math
import os
import threading
import time
import warnings
from dataclasses import dataclass
from typing import Callable, Iterable, NamedTuple, Sequence

import numpy as np

from .errors import (
    BudgetExhaustedError,
    DistanceConsistencyWarning,
    InvalidInputError,
    MissingDistanceError,
    PartialResultError,
    ProviderError,
)

EARTH_RADIUS_MILES = 3958.8
METERS_PER_MILE = 1609.344
DEFAULT_PERCENTILE = 0.2


@dataclass(frozen=True)
class Coordinate:
    """Latitude/longitude pair in decimal degrees."""

    lat_deg: float
    lon_deg: float

    def __post_init__(self):
        lat, lon = self.lat_deg, self.lon_deg
        if not (math.isfinite(lat) and math.isfinite(lon)):
            raise InvalidInputError(f"non-finite coordinate ({lat}, {lon})")
        if not -90.0 <= lat <= 90.0:
            raise InvalidInputError(f"latitude {lat} outside [-90, 90]")
        if not -180.0 <= lon <= 180.0:
            raise InvalidInputError(f"longitude {lon} outside [-180, 180]")


@dataclass(frozen=True)
class Neighborhood:
    id: str
    coord: Coordinate
    population: int = 0
    cases: int = 0
    metro: int = 0
    county: str = ""


@dataclass(frozen=True)
class Store:
    id: str
    coord: Coordinate
    category: str = ""


@dataclass(frozen=True)
class ProximityPair:
    """Straight-line proximity for one neighborhood plus, if queried, map proximity."""

    neighborhood_id: str
    x_star: float
    x: float | None = None
    queried: bool = False

    def __post_init__(self):
        if not (math.isfinite(self.x_star) and self.x_star >= 0):
            raise InvalidInputError(
                f"{self.neighborhood_id}: x_star must be finite and >= 0, got {self.x_star}")
        if self.queried != (self.x is not None):
            raise InvalidInputError(
                f"{self.neighborhood_id}: x must be present exactly when queried")
        if self.x is not None and not (math.isfinite(self.x) and self.x >= 0):
            raise InvalidInputError(
                f"{self.neighborhood_id}: x must be finite and >= 0, got {self.x}")

    def check_consistency(self, tolerance: float = 0.0) -> bool:
        """Warn (and return False) when map proximity is below straight-line proximity."""
        if self.x is not None and self.x < self.x_star - tolerance:
            warnings.warn(
                f"{self.neighborhood_id}: map proximity {self.x:.4f} < straight-line "
                f"{self.x_star:.4f}", DistanceConsistencyWarning, stacklevel=2)
            return False
        return True


class NearestStore(NamedTuple):
    miles: float
    store_id: str


# --- straight-line distances ---------------------------------------------------

def _as_coordinate(obj) -> Coordinate:
    if isinstance(obj, Coordinate):
        return obj
    coord = getattr(obj, "coord", None)
    if isinstance(coord, Coordinate):
        return coord
    if isinstance(obj, (tuple, list)) and len(obj) == 2:
        return Coordinate(float(obj[0]), float(obj[1]))
    raise InvalidInputError(f"cannot interpret {obj!r} as a coordinate")


def _store_ids(stores: Sequence) -> list[str]:
    return [getattr(s, "id", str(k)) for k, s in enumerate(stores)]


def _coord_arrays(points: Sequence) -> tuple[np.ndarray, np.ndarray]:
    coords = [_as_coordinate(p) for p in points]
    lat = np.fromiter((c.lat_deg for c in coords), dtype=float, count=len(coords))
    lon = np.fromiter((c.lon_deg for c in coords), dtype=float, count=len(coords))
    return lat, lon


def haversine_distance(a, b, radius: float = EARTH_RADIUS_MILES) -> float:
    """Great-circle distance between two coordinates, in the units of ``radius``."""
    a, b = _as_coordinate(a), _as_coordinate(b)
    if not (radius > 0 and math.isfinite(radius)):
        raise InvalidInputError(f"radius must be positive, got {radius}")
    # same arithmetic as the matrix route so both agree to the last bit
    return float(haversine_matrix([a.lat_deg], [a.lon_deg], [b.lat_deg], [b.lon_deg],
                                  radius)[0, 0])


def haversine_matrix(lat1, lon1, lat2, lon2, radius: float = EARTH_RADIUS_MILES) -> np.ndarray:
    """All pairwise great-circle distances between two point sets.

    Parameters
    ----------
    lat1, lon1 : array_like, shape (n,)
        Origins in decimal degrees.
    lat2, lon2 : array_like, shape (m,)
        Destinations in decimal degrees.

    Returns
    -------
    ndarray, shape (n, m)
    """
    phi1 = np.radians(np.asarray(lat1, dtype=float))[:, None]
    phi2 = np.radians(np.asarray(lat2, dtype=float))[None, :]
    lam1 = np.radians(np.asarray(lon1, dtype=float))[:, None]
    lam2 = np.radians(np.asarray(lon2, dtype=float))[None, :]
    h = (np.sin((phi2 - phi1) / 2) ** 2
         + np.cos(phi1) * np.cos(phi2) * np.sin((lam2 - lam1) / 2) ** 2)
    np.minimum(h, 1.0, out=h)
    return 2.0 * radius * np.arcsin(np.sqrt(h))


def straight_line_proximity(center, stores: Sequence,
                            radius: float = EARTH_RADIUS_MILES) -> NearestStore:
    """Distance to the nearest store and that store's id.

    ``stores`` may hold :class:`Store` objects or bare coordinates; bare
    coordinates are identified by their position in the list.
    """
    if len(stores) == 0:
        raise InvalidInputError("store list is empty")
    c = _as_coordinate(center)
    lat, lon = _coord_arrays(stores)
    d = haversine_matrix([c.lat_deg], [c.lon_deg], lat, lon, radius)[0]
    k = int(np.argmin(d))
    return NearestStore(float(d[k]), _store_ids(stores)[k])


def candidate_stores(center, stores: Sequence, percentile: float = DEFAULT_PERCENTILE,
                     radius: float = EARTH_RADIUS_MILES) -> list[str]:
    """Ids of the floor(M * percentile) nearest stores (at least one).

    Stores are ordered by straight-line distance, ties by store id.
    """
    if not (0.0 < percentile <= 1.0):
        raise InvalidInputError(f"percentile must lie in (0, 1], got {percentile}")
    if len(stores) == 0:
        raise InvalidInputError("store list is empty")
    c = _as_coordinate(center)
    lat, lon = _coord_arrays(stores)
    d = haversine_matrix([c.lat_deg], [c.lon_deg], lat, lon, radius)[0]
    return _nearest_ids(d, _store_ids(stores), percentile)


def n_candidates(n_stores: int, percentile: float) -> int:
    # the epsilon keeps 10 * 0.29 from flooring to 2
    return max(1, int(math.floor(n_stores * percentile + 1e-9)))


def _nearest_ids(d: np.ndarray, ids: list[str], percentile: float) -> list[str]:
    k = n_candidates(len(ids), percentile)
    id_rank = np.empty(len(ids), dtype=np.int64)
    id_rank[sorted(range(len(ids)), key=ids.__getitem__)] = np.arange(len(ids))
    order = np.lexsort((id_rank, d))
    return [ids[j] for j in order[:k]]


# --- map-based distances -------------------------------------------------------

class DistanceProvider:
    """Source of map-based distances between a neighborhood and a store.

    Subclasses implement :meth:`_query`. :meth:`distance` wraps it with the
    straight-line sanity check: a map distance shorter than the arc (minus
    ``tolerance``) triggers a :class:`DistanceConsistencyWarning`.
    """

    name = "abstract"
    persists_pairs_ok = True

    def __init__(self, tolerance: float = 1e-9, radius: float = EARTH_RADIUS_MILES):
        self.tolerance = tolerance
        self.radius = radius

    def _query(self, origin_id: str, origin: Coordinate, store_id: str,
               store: Coordinate) -> float:
        raise NotImplementedError

    def distance(self, origin_id: str, origin: Coordinate, store_id: str,
                 store: Coordinate) -> float:
        miles = float(self._query(origin_id, origin, store_id, store))
        if not (math.isfinite(miles) and miles >= 0):
            raise ProviderError(f"provider returned invalid distance {miles} "
                                f"for ({origin_id}, {store_id})")
        arc = haversine_distance(origin, store, self.radius)
        if miles < arc - self.tolerance:
            warnings.warn(f"map distance {miles:.4f} < straight-line {arc:.4f} "
                          f"for ({origin_id}, {store_id})",
                          DistanceConsistencyWarning, stacklevel=2)
        return miles


class SyntheticProvider(DistanceProvider):
    """Straight-line distance divided by ``factor``; for tests and dry runs."""

    name = "synthetic"

    def __init__(self, factor: float = 1.0, **kwargs):
        super().__init__(**kwargs)
        if not (0 < factor and math.isfinite(factor)):
            raise InvalidInputError(f"factor must be positive, got {factor}")
        self.factor = factor

    def _query(self, origin_id, origin, store_id, store):
        return haversine_distance(origin, store, self.radius) / self.factor


class FileProvider(DistanceProvider):
    """Precomputed pair distances read from ``origin_id,store_id,miles`` CSV."""

    name = "file"

    def __init__(self, table: dict[tuple[str, str], float], **kwargs):
        super().__init__(**kwargs)
        self.table = dict(table)

    @classmethod
    def from_csv(cls, path, **kwargs) -> "FileProvider":
        return cls(read_pair_distances(path), **kwargs)

    def _query(self, origin_id, origin, store_id, store):
        try:
            return self.table[(origin_id, store_id)]
        except KeyError:
            raise MissingDistanceError(
                f"no precomputed distance for ({origin_id}, {store_id})") from None


class RemoteProvider(DistanceProvider):
    """Generic HTTP routing client with caching, throttling and a hard budget.

    Each request is a JSON POST::

        {"origin": {"lat": .., "lon": ..}, "destination": {"lat": .., "lon": ..},
         "mode": "driving"}

    and the service answers ``{"distance_m": <meters>}``.

    Parameters
    ----------
    url : str
        Routing endpoint.
    budget : int
        Maximum number of outbound requests over the provider's lifetime.
        Cache hits are free.
    cache_path : path-like, optional
        Append-only ``origin_id,store_id,miles`` CSV. Without it the cache
        lives in memory only and nothing is written to disk.
    min_interval : float
        Minimum seconds between consecutive outbound requests.
    session : requests.Session-like, optional
        Anything with a ``post(url, json=..., timeout=...)`` method.
    """

    name = "remote"
    persists_pairs_ok = False

    def __init__(self, url: str, budget: int, cache_path=None, min_interval: float = 0.0,
                 session=None, timeout: float = 30.0, headers: dict | None = None,
                 **kwargs):
        super().__init__(**kwargs)
        if budget < 0:
            raise InvalidInputError("budget must be >= 0")
        self.url = url
        self.budget = int(budget)
        self.cache_path = cache_path
        self.min_interval = float(min_interval)
        self.timeout = timeout
        self.headers = headers or {}
        if session is None:
            import requests
            session = requests.Session()
        self.session = session
        self.requests_made = 0
        self.cache_hits = 0
        self._cache: dict[tuple[str, str], float] = {}
        self._lock = threading.Lock()
        self._last_request = -math.inf
        if cache_path is not None and os.path.exists(cache_path):
            self._cache.update(read_pair_distances(cache_path))

    @property
    def remaining(self) -> int:
        return self.budget - self.requests_made

    def _query(self, origin_id, origin, store_id, store):
        key = (origin_id, store_id)
        # one lock for lookup, budget and request: identical concurrent
        # queries must produce a single outbound call
        with self._lock:
            if key in self._cache:
                self.cache_hits += 1
                return self._cache[key]
            if self.requests_made >= self.budget:
                raise BudgetExhaustedError(
                    f"query budget of {self.budget} requests exhausted")
            wait = self._last_request + self.min_interval - time.monotonic()
            if wait > 0:
                time.sleep(wait)
            self._last_request = time.monotonic()
            self.requests_made += 1
            miles = self._request(origin, store)
            self._cache[key] = miles
            if self.cache_path is not None:
                _append_pair(self.cache_path, origin_id, store_id, miles)
            return miles

    def _request(self, origin: Coordinate, store: Coordinate) -> float:
        payload = {
            "origin": {"lat": origin.lat_deg, "lon": origin.lon_deg},
            "destination": {"lat": store.lat_deg, "lon": store.lon_deg},
            "mode": "driving",
        }
        try:
            resp = self.session.post(self.url, json=payload, timeout=self.timeout,
                                     headers=self.headers)
            resp.raise_for_status()
            meters = float(resp.json()["distance_m"])
        except Exception as exc:  # noqa: BLE001 - any transport/parse failure
            raise ProviderError(f"routing request failed: {exc}") from exc
        return meters / METERS_PER_MILE


def read_pair_distances(path) -> dict[tuple[str, str], float]:
    table = {}
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        missing = {"origin_id", "store_id", "miles"} - set(reader.fieldnames or ())
        if missing:
            raise InvalidInputError(f"{path}: missing columns {sorted(missing)}")
        for row in reader:
            table[(row["origin_id"], row["store_id"])] = float(row["miles"])
    return table


def _append_pair(path, origin_id, store_id, miles):
    new = not os.path.exists(path) or os.path.getsize(path) == 0
    with open(path, "a", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        if new:
            w.writerow(["origin_id", "store_id", "miles"])
        w.writerow([origin_id, store_id, repr(miles)])


PairSink = Callable[[str, str, float], None]


def map_proximity(center_id: str, center, candidates: Sequence[Store],
                  provider: DistanceProvider, pair_sink: PairSink | None = None) -> float:
    """Minimum provider distance from one neighborhood to its candidate stores.

    Only the minimum is returned. ``pair_sink`` receives every pair distance
    for debugging and is refused for providers whose pair data must not be
    persisted.
    """
    if len(candidates) == 0:
        raise InvalidInputError(f"{center_id}: no candidate stores")
    if pair_sink is not None and not provider.persists_pairs_ok:
        raise InvalidInputError(f"{provider.name} provider pair distances may not be dumped")
    origin = _as_coordinate(center)
    best = math.inf
    for store in candidates:
        try:
            d = provider.distance(center_id, origin, store.id, store.coord)
        except MissingDistanceError:
            raise
        except ProviderError as exc:
            raise PartialResultError(center_id, exc) from exc
        if pair_sink is not None:
            pair_sink(center_id, store.id, d)
        best = min(best, d)
    return best


def build_proximity_table(neighborhoods: Sequence[Neighborhood], stores: Sequence[Store],
                          provider: DistanceProvider | None, query_set: Iterable[str],
                          percentile: float = DEFAULT_PERCENTILE,
                          radius: float = EARTH_RADIUS_MILES,
                          pair_sink: PairSink | None = None,
                          consistency_tolerance: float = 1e-9) -> list[ProximityPair]:
    """Straight-line proximity for every neighborhood, map proximity for ``query_set``.

    Rows come back sorted by neighborhood id.
    """
    ids = [nb.id for nb in neighborhoods]
    if len(set(ids)) != len(ids):
        seen, dup = set(), set()
        for i in ids:
            (dup if i in seen else seen).add(i)
        raise InvalidInputError(f"duplicate neighborhood ids: {sorted(dup)}")
    if len(stores) == 0:
        raise InvalidInputError("store list is empty")
    query_set = set(query_set)
    unknown = query_set - set(ids)
    if unknown:
        raise InvalidInputError(f"query set has unknown ids: {sorted(unknown)}")
    if query_set and provider is None:
        raise InvalidInputError("a provider is required when neighborhoods are queried")

    nlat, nlon = _coord_arrays(neighborhoods)
    slat, slon = _coord_arrays(stores)
    d = haversine_matrix(nlat, nlon, slat, slon, radius)
    x_star = d.min(axis=1)
    store_ids = _store_ids(stores)
    by_id = {s.id: s for s in stores}

    out = []
    for row in sorted(range(len(neighborhoods)), key=ids.__getitem__):
        nb = neighborhoods[row]
        if nb.id in query_set:
            cands = [by_id[s] for s in _nearest_ids(d[row], store_ids, percentile)]
            x = map_proximity(nb.id, nb.coord, cands, provider, pair_sink)
            pair = ProximityPair(nb.id, float(x_star[row]), float(x), True)
            pair.check_consistency(consistency_tolerance)
        else:
            pair = ProximityPair(nb.id, float(x_star[row]))
        out.append(pair)
    return out

"""CSV readers and writers for neighborhoods, stores and proximity tables."""

from __future__ import annotations

import csv
import io
import math

from .errors import InvalidInputError
from .geodistance import Coordinate, Neighborhood, ProximityPair, Store

NEIGHBORHOOD_COLUMNS = ("id", "lat", "lon", "population", "cases", "metro", "county")
STORE_COLUMNS = ("id", "lat", "lon", "category")
PROXIMITY_COLUMNS = ("id", "x_star", "x", "queried")


def _rows(path, required):
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        missing = set(required) - set(reader.fieldnames or ())
        if missing:
            raise InvalidInputError(f"{path}: missing columns {sorted(missing)}")
        for lineno, row in enumerate(reader, start=2):
            yield lineno, row


def _int(value, path, lineno, name):
    try:
        f = float(value)
    except (TypeError, ValueError):
        raise InvalidInputError(f"{path}:{lineno}: {name} {value!r} is not a number") from None
    if not f.is_integer():
        raise InvalidInputError(f"{path}:{lineno}: {name} {value!r} is not an integer")
    return int(f)


def _coord(row, path, lineno):
    try:
        return Coordinate(float(row["lat"]), float(row["lon"]))
    except ValueError as exc:
        raise InvalidInputError(f"{path}:{lineno}: {exc}") from None


def read_neighborhoods(path) -> list[Neighborhood]:
    out = []
    for lineno, row in _rows(path, NEIGHBORHOOD_COLUMNS):
        metro = _int(row["metro"], path, lineno, "metro")
        if metro not in (0, 1):
            raise InvalidInputError(f"{path}:{lineno}: metro must be 0 or 1")
        out.append(Neighborhood(
            id=row["id"], coord=_coord(row, path, lineno),
            population=_int(row["population"], path, lineno, "population"),
            cases=_int(row["cases"], path, lineno, "cases"),
            metro=metro, county=row["county"]))
    return out


def read_stores(path) -> list[Store]:
    return [Store(row["id"], _coord(row, path, lineno), row["category"])
            for lineno, row in _rows(path, STORE_COLUMNS)]


def read_proximity(path) -> list[ProximityPair]:
    out = []
    for lineno, row in _rows(path, PROXIMITY_COLUMNS):
        try:
            x = float(row["x"]) if row["x"].strip() else None
            queried = _int(row["queried"], path, lineno, "queried") == 1
            out.append(ProximityPair(row["id"], float(row["x_star"]), x, queried))
        except ValueError as exc:
            raise InvalidInputError(f"{path}:{lineno}: {exc}") from None
    return out


def proximity_csv(pairs) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(PROXIMITY_COLUMNS)
    for p in pairs:
        w.writerow([p.neighborhood_id, repr(p.x_star),
                    "" if p.x is None else repr(p.x), int(p.queried)])
    return buf.getvalue()


def read_id_list(path) -> set[str]:
    """Ids from a one-column file; a leading ``id`` header is skipped."""
    with open(path, encoding="utf-8") as fh:
        ids = [line.strip().split(",")[0] for line in fh if line.strip()]
    if ids and ids[0] == "id":
        ids = ids[1:]
    return set(ids)


def write_text(path, text: str):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(text)


def finite_or_blank(v) -> str:
    return "" if v is None or not math.isfinite(v) else repr(float(v))

"""Regenerate the bundled three-county synthetic example region.

Writes neighborhoods.csv, stores.csv, adjacency.csv and pair_distances.csv
(map distances for each neighborhood's candidate stores) into
src/foodaccess/data/example/. Deterministic for a fixed seed.
"""

import csv
import os

import numpy as np

from foodaccess.geodistance import (Coordinate, FileProvider, Neighborhood, Store,
                                    build_proximity_table, candidate_stores,
                                    haversine_distance)

OUT = os.path.join(os.path.dirname(__file__), "..", "src", "foodaccess", "data", "example")
COUNTIES = ("Alder", "Birch", "Cedar")
ROWS, COLS = 5, 4          # tracts per county on a lattice
STEP = 0.035               # degrees between tract centroids


def main(seed=20240611):
    rng = np.random.default_rng(seed)
    cells = []
    for c, county in enumerate(COUNTIES):
        for r in range(ROWS):
            for k in range(COLS):
                col = c * COLS + k
                lat = 36.0 + r * STEP + rng.normal(0, 0.004)
                lon = -80.4 + col * STEP + rng.normal(0, 0.004)
                metro = int(county != "Cedar" and (county == "Alder" or r in (1, 2, 3)))
                cells.append((f"{county[0]}{r}{k}", lat, lon, county, metro, r, col))

    stores = []
    for s in range(90):
        if rng.random() < 0.7:
            lat = rng.uniform(36.0, 36.0 + (ROWS - 1) * STEP)
            lon = rng.uniform(-80.4, -80.4 + (2 * COLS - 1) * STEP)
        else:
            lat = rng.uniform(35.95, 36.0 + ROWS * STEP)
            lon = rng.uniform(-80.45, -80.4 + 3 * COLS * STEP)
        cat = rng.choice(["supermarket", "grocery", "produce"], p=[0.5, 0.35, 0.15])
        stores.append(Store(f"S{s:03d}", Coordinate(round(lat, 6), round(lon, 6)), str(cat)))

    pairs = {}
    for cid, lat, lon, *_ in cells:
        center = Coordinate(round(lat, 6), round(lon, 6))
        by_id = {s.id: s for s in stores}
        for store in (by_id[i] for i in candidate_stores(center, stores)):
            straight = haversine_distance(center, store.coord)
            pairs[(cid, store.id)] = round(straight * rng.uniform(1.15, 1.6) + 0.05, 6)

    provisional = [Neighborhood(cid, Coordinate(round(lat, 6), round(lon, 6)), 1, 0, metro, county)
                   for cid, lat, lon, county, metro, *_ in cells]
    table = build_proximity_table(provisional, stores, FileProvider(pairs),
                                  {nb.id for nb in provisional})
    x = {p.neighborhood_id: p.x for p in table}

    os.makedirs(OUT, exist_ok=True)
    with open(os.path.join(OUT, "neighborhoods.csv"), "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["id", "lat", "lon", "population", "cases", "metro", "county"])
        for cid, lat, lon, county, metro, *_ in cells:
            pop = int(rng.poisson(4095))
            cases = int(rng.poisson(pop * np.exp(-2.2 + 0.01 * x[cid] - 0.15 * metro)))
            w.writerow([cid, f"{lat:.6f}", f"{lon:.6f}", pop, cases, metro, county])
    with open(os.path.join(OUT, "stores.csv"), "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["id", "lat", "lon", "category"])
        for s in stores:
            w.writerow([s.id, f"{s.coord.lat_deg:.6f}", f"{s.coord.lon_deg:.6f}", s.category])
    with open(os.path.join(OUT, "pair_distances.csv"), "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["origin_id", "store_id", "miles"])
        for (o, s), d in sorted(pairs.items()):
            w.writerow([o, s, f"{d:.6f}"])
    pos = {(r, col): cid for cid, _, _, _, _, r, col in cells}
    with open(os.path.join(OUT, "adjacency.csv"), "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["id_a", "id_b"])
        for (r, col), cid in sorted(pos.items()):
            for nb in ((r + 1, col), (r, col + 1)):
                if nb in pos:
                    w.writerow([cid, pos[nb]])


if __name__ == "__main__":
    main()

"""Regenerate proj_points.json with PROJ (via pyproj).

    pip install pyproj && python gen_proj_points.py > proj_points.json
"""
import json
import random

import pyproj
from pyproj import Transformer

FIXED = [
    (51.0795, 10.4522),
    (0.0, 3.0),
    (-0.0001, 3.0),
    (-33.45, -70.66),
    (0.5, 0.5),
    (-1.1, -72.0),
    (27.98, 86.92),
    (-54.8, -68.3),
    (64.1, -21.9),
    (35.68, 139.69),
    (-22.9, -43.2),
    (83.5, 15.0),
    (-79.9, 166.7),
    (1.35, 103.82),
    (40.7128, -74.006),
    (-3.1, 119.6),
    (29.4, 71.6),
    (0.0, 177.0),
]


def zone_epsg(lat, lon):
    zone = min(int((lon + 180.0) // 6) + 1, 60)
    return (32600 if lat >= 0 else 32700) + zone


def main():
    rng = random.Random(20240712)
    pts = list(FIXED)
    while len(pts) < 40:
        lat = rng.uniform(-80.0, 84.0)
        lon = rng.uniform(-179.9, 179.9)
        pts.append((round(lat, 6), round(lon, 6)))
    out = []
    for lat, lon in pts:
        epsg = zone_epsg(lat, lon)
        t = Transformer.from_crs(4326, epsg, always_xy=True)
        x, y = t.transform(lon, lat)
        out.append({"lat": lat, "lon": lon, "epsg": epsg, "x": x, "y": y})
    doc = {"oracle": "PROJ " + pyproj.proj_version_str, "points": out}
    print(json.dumps(doc, indent=1))


if __name__ == "__main__":
    main()

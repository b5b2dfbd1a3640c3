"""Spatial-context linearization into pseudo-sentences.

For an anchor geo-entity, take its k nearest gazetteer neighbors by
great-circle distance, order them nearest-first, and record each neighbor's
position as a local east/north offset from the anchor. The anchor itself sits
at (0, 0) in this frame. The result is a PseudoSentence: the token-free
precursor of the neighbor-level model input.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from typing import Iterable, Sequence

from .geodata import Gazetteer, GeoEntity
from .validation import check_lat_lon, check_positive

# WGS84 mean Earth radius, km.
EARTH_RADIUS_KM = 6371.0088

# Offsets are clamped to this many units after dividing km by coord_scale,
# keeping sinusoid inputs bounded no matter how remote a neighbor is.
COORD_CLAMP = 100.0


def geodesic_distance(a: tuple[float, float], b: tuple[float, float]) -> float:
    """Haversine great-circle distance in km between (lat, lon) pairs."""
    check_lat_lon(*a, what="point a")
    check_lat_lon(*b, what="point b")
    lat1, lon1 = math.radians(a[0]), math.radians(a[1])
    lat2, lon2 = math.radians(b[0]), math.radians(b[1])
    sin_dlat = math.sin((lat2 - lat1) / 2.0)
    sin_dlon = math.sin((lon2 - lon1) / 2.0)
    h = sin_dlat * sin_dlat + math.cos(lat1) * math.cos(lat2) * sin_dlon * sin_dlon
    return 2.0 * EARTH_RADIUS_KM * math.asin(min(1.0, math.sqrt(h)))


def neighbors_of(gazetteer: Gazetteer, anchor_id: str, k: int) -> list[GeoEntity]:
    """The k nearest entities to the anchor, nearest first.

    The anchor itself is excluded; distance ties break by ascending entity
    id so results are deterministic. Returns fewer than k entities when the
    gazetteer is small.
    """
    if anchor_id not in gazetteer.by_id:
        raise KeyError(f"unknown anchor id {anchor_id!r}")
    if k < 0:
        raise ValueError("k must be >= 0")
    anchor = gazetteer.by_id[anchor_id]
    a = (anchor.lat, anchor.lon)
    ranked = sorted(
        (
            (geodesic_distance(a, (e.lat, e.lon)), e.id)
            for e in gazetteer.entities
            if e.id != anchor_id
        ),
    )
    return [gazetteer.by_id[eid] for _, eid in ranked[:k]]


@dataclass(frozen=True)
class NormalizedCoord:
    """East (x) and north (y) offsets from the anchor, in coord_scale units."""

    x: float
    y: float


def normalize_coords(
    anchor: GeoEntity, other: GeoEntity, coord_scale: float = 1.0
) -> NormalizedCoord:
    """Local east/north offset of `other` from `anchor`, scaled and clamped.

    Uses the equirectangular approximation around the anchor: x is the
    east-west arc at the anchor's latitude, y the north-south arc, both in
    km, divided by `coord_scale` and clamped to [-100, 100].
    """
    check_positive(coord_scale, "coord_scale")
    dlat = math.radians(other.lat - anchor.lat)
    dlon = other.lon - anchor.lon
    # Wrap so that crossing the antimeridian yields the short way around.
    if dlon > 180.0:
        dlon -= 360.0
    elif dlon < -180.0:
        dlon += 360.0
    dlon = math.radians(dlon)
    x_km = EARTH_RADIUS_KM * dlon * math.cos(math.radians(anchor.lat))
    y_km = EARTH_RADIUS_KM * dlat

    def clamp(v: float) -> float:
        return max(-COORD_CLAMP, min(COORD_CLAMP, v))

    return NormalizedCoord(x=clamp(x_km / coord_scale), y=clamp(y_km / coord_scale))


@dataclass
class PseudoSentence:
    """An anchor's spatial context, linearized nearest-neighbor-first."""

    anchor_id: str
    anchor_name: str
    neighbor_names: list[str]
    neighbor_coords: list[NormalizedCoord]
    distances_km: list[float]

    def check(self) -> None:
        n = len(self.neighbor_names)
        if not (len(self.neighbor_coords) == n and len(self.distances_km) == n):
            raise ValueError("neighbor lists must have equal lengths")
        for d0, d1 in zip(self.distances_km, self.distances_km[1:]):
            if d1 < d0:
                raise ValueError("distances must be nondecreasing")
        for c in self.neighbor_coords:
            if not (math.isfinite(c.x) and math.isfinite(c.y)):
                raise ValueError("neighbor coordinates must be finite")


def linearize(
    anchor: GeoEntity,
    neighbors: Sequence[GeoEntity],
    coord_scale: float = 1.0,
) -> PseudoSentence:
    """Build the PseudoSentence for an anchor and its distance-sorted neighbors.

    `neighbors` must already be sorted by distance from the anchor
    (nearest first); this is re-verified and a ValueError raised otherwise.
    """
    a = (anchor.lat, anchor.lon)
    distances = [geodesic_distance(a, (e.lat, e.lon)) for e in neighbors]
    for d0, d1 in zip(distances, distances[1:]):
        if d1 < d0:
            raise ValueError("neighbors are not sorted by distance from the anchor")
    ps = PseudoSentence(
        anchor_id=anchor.id,
        anchor_name=anchor.name,
        neighbor_names=[e.name for e in neighbors],
        neighbor_coords=[normalize_coords(anchor, e, coord_scale) for e in neighbors],
        distances_km=distances,
    )
    ps.check()
    return ps


def pseudo_to_record(ps: PseudoSentence) -> dict:
    return {
        "anchor_id": ps.anchor_id,
        "anchor_name": ps.anchor_name,
        "neighbor_names": list(ps.neighbor_names),
        "neighbor_coords": [[c.x, c.y] for c in ps.neighbor_coords],
        "distances_km": list(ps.distances_km),
    }


def pseudo_from_record(rec: dict) -> PseudoSentence:
    ps = PseudoSentence(
        anchor_id=rec["anchor_id"],
        anchor_name=rec["anchor_name"],
        neighbor_names=list(rec["neighbor_names"]),
        neighbor_coords=[NormalizedCoord(x=c[0], y=c[1]) for c in rec["neighbor_coords"]],
        distances_km=[float(d) for d in rec["distances_km"]],
    )
    ps.check()
    return ps


def write_pseudo_sentences(path, sentences: Iterable[PseudoSentence]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for ps in sentences:
            fh.write(json.dumps(pseudo_to_record(ps), ensure_ascii=False) + "\n")


def read_pseudo_sentences(path) -> list[PseudoSentence]:
    out = []
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if line:
                out.append(pseudo_from_record(json.loads(line)))
    return out

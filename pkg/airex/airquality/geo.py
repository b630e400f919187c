"""Geospatial primitives and per-location factor extraction.

Distances are great-circle (haversine) in kilometres, angles are initial
compass bearings in radians mapped to [-pi, pi] (0 = north, pi/2 = east).
"""

from __future__ import annotations

import logging
import math
from collections.abc import Iterable, Mapping, Sequence
from dataclasses import dataclass
from typing import TYPE_CHECKING

import numpy as np

from airex.airquality.conf import WEATHER_VOCAB, WIND_DIRECTIONS
from airex.airquality.exceptions import DataError, VocabularyError

if TYPE_CHECKING:
    from airex.airquality.data.schema import MeteoRecord, PoI, RoadSegment

logger = logging.getLogger(__name__)

EARTH_RADIUS_KM = 6371.0
AFFECT_RADIUS_KM = 1.0
METEO_NUMERIC_FIELDS: tuple[str, ...] = (
    "temperature",
    "pressure",
    "humidity",
    "wind_speed",
)

SchemaEntry = tuple[str, str]


@dataclass(frozen=True)
class GeoPoint:
    lat: float
    lon: float

    def __post_init__(self) -> None:
        if not (-90.0 <= self.lat <= 90.0):
            raise DataError(f"Latitude {self.lat!r} outside [-90, 90].")
        if not (-180.0 <= self.lon <= 180.0):
            raise DataError(f"Longitude {self.lon!r} outside [-180, 180].")


@dataclass(frozen=True)
class RelPos:
    distance: float
    angle: float

    def __post_init__(self) -> None:
        if self.distance < 0:
            raise DataError(f"Negative distance {self.distance!r}.")
        if not (-math.pi <= self.angle <= math.pi):
            raise DataError(f"Angle {self.angle!r} outside [-pi, pi].")


@dataclass(frozen=True, eq=False)
class FactorVector:
    """Real values labelled by an ordered (factor, field) schema.

    ``values`` is either one vector or a (steps, len(schema)) sequence.
    """

    values: np.ndarray
    schema: tuple[SchemaEntry, ...]

    def __post_init__(self) -> None:
        values = np.asarray(self.values, dtype=np.float64)
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "schema", tuple(tuple(e) for e in self.schema))
        if values.ndim not in (1, 2) or values.shape[-1] != len(self.schema):
            raise DataError(
                f"FactorVector values of shape {values.shape} do not match "
                f"a schema of {len(self.schema)} entries."
            )

    def __len__(self) -> int:
        return len(self.schema)

    def concat(self, *others: FactorVector) -> FactorVector:
        parts = (self, *others)
        if len({p.values.ndim for p in parts}) != 1:
            raise DataError("Cannot concatenate vectors with sequences.")
        schema: list[SchemaEntry] = []
        for p in parts:
            schema.extend(p.schema)
        return FactorVector(
            np.concatenate([p.values for p in parts], axis=-1), tuple(schema)
        )

    def as_dict(self) -> dict[SchemaEntry, float]:
        if self.values.ndim != 1:
            raise DataError("as_dict needs a single vector, not a sequence.")
        return dict(zip(self.schema, self.values.tolist()))


@dataclass(frozen=True)
class NormTable:
    """Per-entry maxima used to scale factors into unit range."""

    maxima: Mapping[SchemaEntry, float]

    def apply(self, factor: FactorVector) -> FactorVector:
        divisors = np.empty(len(factor.schema))
        for i, entry in enumerate(factor.schema):
            if entry not in self.maxima:
                raise DataError(f"No normalization maximum for entry {entry!r}.")
            m = self.maxima[entry]
            divisors[i] = m if m > 0 else 1.0
        return FactorVector(factor.values / divisors, factor.schema)

    def merged(self, other: NormTable) -> NormTable:
        return NormTable({**dict(self.maxima), **dict(other.maxima)})

    def to_dict(self) -> dict[str, float]:
        return {f"{factor}:{field}": m for (factor, field), m in self.maxima.items()}

    @classmethod
    def from_dict(cls, data: Mapping[str, float]) -> NormTable:
        maxima: dict[SchemaEntry, float] = {}
        for key, m in data.items():
            factor, _, field = key.partition(":")
            maxima[(factor, field)] = float(m)
        return cls(maxima)


def haversine_distance(a: GeoPoint, b: GeoPoint) -> float:
    lat1 = math.radians(a.lat)
    lat2 = math.radians(b.lat)
    dlat = lat2 - lat1
    dlon = math.radians(b.lon - a.lon)
    h = math.sin(dlat / 2) ** 2 + math.cos(lat1) * math.cos(lat2) * math.sin(dlon / 2) ** 2
    return 2 * EARTH_RADIUS_KM * math.asin(min(1.0, math.sqrt(h)))


def initial_bearing(a: GeoPoint, b: GeoPoint) -> float:
    lat1 = math.radians(a.lat)
    lat2 = math.radians(b.lat)
    dlon = math.radians(b.lon - a.lon)
    x = math.sin(dlon) * math.cos(lat2)
    y = math.cos(lat1) * math.sin(lat2) - math.sin(lat1) * math.cos(lat2) * math.cos(dlon)
    return math.atan2(x, y)


def relative_position(origin: GeoPoint, to: GeoPoint) -> RelPos:
    distance = haversine_distance(origin, to)
    if distance == 0.0:
        return RelPos(0.0, 0.0)
    return RelPos(distance, initial_bearing(origin, to))


def relpos_factor(pos: RelPos, factor: str) -> FactorVector:
    return FactorVector(
        np.array([pos.distance, pos.angle]),
        ((factor, "distance"), (factor, "angle")),
    )


def _local_xy(origin: GeoPoint, p: GeoPoint) -> tuple[float, float]:
    # equirectangular projection centred on origin, km
    x = math.radians(p.lon - origin.lon) * math.cos(math.radians(origin.lat))
    y = math.radians(p.lat - origin.lat)
    return EARTH_RADIUS_KM * x, EARTH_RADIUS_KM * y


def offset_point(origin: GeoPoint, east_km: float, north_km: float) -> GeoPoint:
    """Inverse of the local projection: move ``origin`` by a km offset."""
    lat = origin.lat + math.degrees(north_km / EARTH_RADIUS_KM)
    lon = origin.lon + math.degrees(
        east_km / (EARTH_RADIUS_KM * math.cos(math.radians(origin.lat)))
    )
    return GeoPoint(max(-90.0, min(90.0, lat)), (lon + 180.0) % 360.0 - 180.0)


def point_segment_distance(l: GeoPoint, a: GeoPoint, b: GeoPoint) -> float:
    ax, ay = _local_xy(l, a)
    bx, by = _local_xy(l, b)
    dx, dy = bx - ax, by - ay
    length_sq = dx * dx + dy * dy
    if length_sq == 0.0:
        return math.hypot(ax, ay)
    u = max(0.0, min(1.0, -(ax * dx + ay * dy) / length_sq))
    return math.hypot(ax + u * dx, ay + u * dy)


def _category_index(categories: Sequence[str]) -> dict[str, int]:
    if not categories:
        raise DataError("Category list is empty.")
    index = {c: i for i, c in enumerate(categories)}
    if len(index) != len(categories):
        raise DataError(f"Duplicate categories in {list(categories)!r}.")
    return index


def _log_unknown(kind: str, unknown: set[str]) -> None:
    if unknown:
        logger.debug("Ignoring %s with unknown categories: %s", kind, sorted(unknown))


def poi_factor(
    l: GeoPoint,
    pois: Iterable[PoI],
    categories: Sequence[str],
    radius_km: float = AFFECT_RADIUS_KM,
) -> FactorVector:
    index = _category_index(categories)
    counts = np.zeros(len(categories))
    unknown: set[str] = set()
    for poi in pois:
        slot = index.get(poi.category)
        if slot is None:
            unknown.add(poi.category)
            continue
        if haversine_distance(l, poi.location) <= radius_km:
            counts[slot] += 1
    _log_unknown("PoIs", unknown)
    return FactorVector(counts, tuple(("poi", c) for c in categories))


def road_factor(
    l: GeoPoint,
    roads: Iterable[RoadSegment],
    categories: Sequence[str],
    radius_km: float = AFFECT_RADIUS_KM,
) -> FactorVector:
    index = _category_index(categories)
    counts = np.zeros(len(categories))
    unknown: set[str] = set()
    for road in roads:
        slot = index.get(road.category)
        if slot is None:
            unknown.add(road.category)
            continue
        if point_segment_distance(l, road.start, road.end) <= radius_km:
            counts[slot] += 1
    _log_unknown("road segments", unknown)
    return FactorVector(counts, tuple(("road", c) for c in categories))


def meteo_schema(
    weather_vocab: Sequence[str] = WEATHER_VOCAB,
    wind_vocab: Sequence[str] = WIND_DIRECTIONS,
) -> tuple[SchemaEntry, ...]:
    return (
        tuple(("meteo", f"weather={w}") for w in weather_vocab)
        + tuple(("meteo", f"wind_direction={d}") for d in wind_vocab)
        + tuple(("meteo", f) for f in METEO_NUMERIC_FIELDS)
    )


def meteo_factor(
    record: MeteoRecord,
    weather_vocab: Sequence[str] = WEATHER_VOCAB,
    wind_vocab: Sequence[str] = WIND_DIRECTIONS,
) -> FactorVector:
    one_hots = []
    for field, vocab in (("weather", weather_vocab), ("wind_direction", wind_vocab)):
        value = getattr(record, field)
        if value not in vocab:
            raise VocabularyError(
                f"Meteorology field {field!r} has value {value!r} outside "
                f"vocabulary {list(vocab)!r} (city {record.city_id}, t={record.t})."
            )
        hot = np.zeros(len(vocab))
        hot[list(vocab).index(value)] = 1.0
        one_hots.append(hot)
    numeric = np.array([float(getattr(record, f)) for f in METEO_NUMERIC_FIELDS])
    return FactorVector(
        np.concatenate([*one_hots, numeric]),
        meteo_schema(weather_vocab, wind_vocab),
    )


def normalize_dataset(
    factors: Sequence[FactorVector],
    table: NormTable | None = None,
) -> tuple[list[FactorVector], NormTable]:
    """Divide each entry by its maximum absolute value over the collection.

    With ``table`` given the stored maxima are reused verbatim, as at inference.
    """
    if not factors:
        raise DataError("Cannot normalize an empty collection.")
    if table is None:
        schema = factors[0].schema
        maxima = np.zeros(len(schema))
        for f in factors:
            if f.schema != schema:
                raise DataError("All factors in a collection must share a schema.")
            rows = np.abs(f.values.reshape(-1, len(schema)))
            if rows.size:
                maxima = np.maximum(maxima, rows.max(axis=0))
        table = NormTable(dict(zip(schema, maxima.tolist())))
    return [table.apply(f) for f in factors], table

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
import pandas as pd

from airex.airquality.exceptions import DataError
from airex.airquality.geo import GeoPoint

AIR_QUALITY_COLUMNS = ["station_id", "t", "pm25"]
METEO_COLUMNS = [
    "city_id",
    "t",
    "weather",
    "temperature",
    "pressure",
    "humidity",
    "wind_speed",
    "wind_direction",
]


@dataclass(frozen=True)
class City:
    city_id: str
    name: str
    location: GeoPoint


@dataclass(frozen=True)
class Station:
    station_id: str
    city_id: str
    location: GeoPoint


@dataclass(frozen=True)
class PoI:
    poi_id: str
    location: GeoPoint
    category: str


@dataclass(frozen=True)
class RoadSegment:
    road_id: str
    start: GeoPoint
    end: GeoPoint
    category: str


@dataclass(frozen=True)
class MeteoRecord:
    city_id: str
    t: int
    weather: str
    temperature: float
    pressure: float
    humidity: float
    wind_speed: float
    wind_direction: str


@dataclass(frozen=True)
class Series:
    """A contiguous hourly series starting at ``t0``."""

    t0: int
    values: np.ndarray

    @property
    def t_last(self) -> int:
        return self.t0 + len(self.values) - 1

    def covers(self, t_start: int, t_end: int) -> bool:
        return self.t0 <= t_start and t_end <= self.t_last

    def window(self, t_start: int, t_end: int) -> np.ndarray:
        return self.values[t_start - self.t0 : t_end - self.t0 + 1]


def _empty_frame(columns: list[str]) -> pd.DataFrame:
    return pd.DataFrame({c: [] for c in columns})


@dataclass(frozen=True, eq=False)
class Dataset:
    cities: tuple[City, ...]
    stations: tuple[Station, ...]
    air_quality: pd.DataFrame = field(
        default_factory=lambda: _empty_frame(AIR_QUALITY_COLUMNS)
    )
    meteo: pd.DataFrame = field(default_factory=lambda: _empty_frame(METEO_COLUMNS))
    pois: tuple[PoI, ...] = ()
    roads: tuple[RoadSegment, ...] = ()

    @cached_property
    def city_by_id(self) -> dict[str, City]:
        return {c.city_id: c for c in self.cities}

    @cached_property
    def station_by_id(self) -> dict[str, Station]:
        return {s.station_id: s for s in self.stations}

    @cached_property
    def _stations_by_city(self) -> dict[str, tuple[Station, ...]]:
        grouped: dict[str, list[Station]] = {c.city_id: [] for c in self.cities}
        for s in self.stations:
            grouped.setdefault(s.city_id, []).append(s)
        return {
            cid: tuple(sorted(group, key=lambda s: s.station_id))
            for cid, group in grouped.items()
        }

    def city_ids(self) -> list[str]:
        return [c.city_id for c in self.cities]

    def stations_of(self, city_id: str) -> tuple[Station, ...]:
        if city_id not in self.city_by_id:
            raise DataError(f"Unknown city {city_id!r}.")
        return self._stations_by_city.get(city_id, ())

    def city_location(self, city_id: str) -> GeoPoint:
        """Representative location: centroid of the city's stations, else the
        coordinates from the city table."""
        stations = self.stations_of(city_id)
        if not stations:
            return self.city_by_id[city_id].location
        lat = float(np.mean([s.location.lat for s in stations]))
        lon = float(np.mean([s.location.lon for s in stations]))
        return GeoPoint(lat, lon)

    @cached_property
    def pm25(self) -> dict[str, Series]:
        out: dict[str, Series] = {}
        if self.air_quality.empty:
            return out
        frame = self.air_quality.sort_values(["station_id", "t"], kind="stable")
        for sid, group in frame.groupby("station_id", sort=True):
            t = group["t"].to_numpy(dtype=np.int64)
            out[str(sid)] = Series(int(t[0]), group["pm25"].to_numpy(dtype=np.float64))
        return out

    @cached_property
    def meteo_records(self) -> dict[str, tuple[int, list[MeteoRecord]]]:
        out: dict[str, tuple[int, list[MeteoRecord]]] = {}
        if self.meteo.empty:
            return out
        frame = self.meteo.sort_values(["city_id", "t"], kind="stable")
        for cid, group in frame.groupby("city_id", sort=True):
            records = [
                MeteoRecord(
                    city_id=str(row.city_id),
                    t=int(row.t),
                    weather=str(row.weather),
                    temperature=float(row.temperature),
                    pressure=float(row.pressure),
                    humidity=float(row.humidity),
                    wind_speed=float(row.wind_speed),
                    wind_direction=str(row.wind_direction),
                )
                for row in group.itertuples(index=False)
            ]
            out[str(cid)] = (records[0].t, records)
        return out

    def readings_at(self, station_ids: list[str], t: int) -> dict[str, float]:
        out: dict[str, float] = {}
        for sid in station_ids:
            series = self.pm25.get(sid)
            if series is not None and series.covers(t, t):
                out[sid] = float(series.values[t - series.t0])
        return out

    def validate(self) -> list[str]:
        """Return referential-integrity and contiguity violations."""
        violations: list[str] = []
        city_ids = set(self.city_by_id)
        if len(city_ids) != len(self.cities):
            violations.append("cities.csv: duplicate city_id values")
        if len(self.station_by_id) != len(self.stations):
            violations.append("stations.csv: duplicate station_id values")
        for s in self.stations:
            if s.city_id not in city_ids:
                violations.append(
                    f"stations.csv: station {s.station_id} references unknown city {s.city_id}"
                )
        aq = self.air_quality
        unknown = sorted(set(aq["station_id"].astype(str)) - set(self.station_by_id))
        for sid in unknown:
            violations.append(f"air_quality.csv: unknown station {sid}")
        pm25 = aq["pm25"].to_numpy(dtype=np.float64)
        for row in aq[~np.isfinite(pm25)].itertuples(index=False):
            violations.append(
                f"air_quality.csv: non-finite pm25 {row.pm25} for station {row.station_id} at t={row.t}"
            )
        negative = aq[aq["pm25"] < 0]
        for row in negative.itertuples(index=False):
            violations.append(
                f"air_quality.csv: negative pm25 {row.pm25} for station {row.station_id} at t={row.t}"
            )
        for name, frame, key in (
            ("air_quality.csv", aq, "station_id"),
            ("meteo.csv", self.meteo, "city_id"),
        ):
            for ident, group in frame.groupby(key, sort=True):
                t = np.sort(group["t"].to_numpy(dtype=np.int64))
                if len(np.unique(t)) != len(t):
                    violations.append(f"{name}: duplicate time indices for {ident}")
                elif len(t) and t[-1] - t[0] + 1 != len(t):
                    violations.append(f"{name}: time indices for {ident} are not contiguous")
        unknown_cities = sorted(set(self.meteo["city_id"].astype(str)) - city_ids)
        for cid in unknown_cities:
            violations.append(f"meteo.csv: unknown city {cid}")
        return violations

    def equals(self, other: Dataset) -> bool:
        return (
            self.cities == other.cities
            and self.stations == other.stations
            and self.pois == other.pois
            and self.roads == other.roads
            and _frames_equal(self.air_quality, other.air_quality, ["station_id", "t"])
            and _frames_equal(self.meteo, other.meteo, ["city_id", "t"])
        )


def _frames_equal(a: pd.DataFrame, b: pd.DataFrame, keys: list[str]) -> bool:
    if list(a.columns) != list(b.columns) or len(a) != len(b):
        return False
    a = a.sort_values(keys, kind="stable").reset_index(drop=True)
    b = b.sort_values(keys, kind="stable").reset_index(drop=True)
    for column in a.columns:
        left, right = a[column], b[column]
        if left.dtype.kind in "fiu" and right.dtype.kind in "fiu":
            if not np.array_equal(left.to_numpy(np.float64), right.to_numpy(np.float64)):
                return False
        elif list(left.astype(str)) != list(right.astype(str)):
            return False
    return True

"""Assembly of the target, station and city features fed to the network.

``X^tgt`` is PoI and road counts around the target plus the meteorology of its
city over the window. Each station contributes the same location factors, its
PM2.5 sequence and its relative position to the target. ``X^city`` is the
relative position of every source city to the target city.
"""

from __future__ import annotations

import logging
from collections.abc import Iterable, Mapping, Sequence
from dataclasses import dataclass
from functools import partial

import numpy as np

from airex.airquality.conf import (
    POI_CATEGORIES,
    ROAD_CATEGORIES,
    WEATHER_VOCAB,
    WIND_DIRECTIONS,
)
from airex.airquality.data.schema import Dataset, Station
from airex.airquality.exceptions import DataError, MissingDataError
from airex.airquality.geo import (
    AFFECT_RADIUS_KM,
    FactorVector,
    GeoPoint,
    NormTable,
    meteo_factor,
    meteo_schema,
    normalize_dataset,
    poi_factor,
    relative_position,
    relpos_factor,
    road_factor,
)

logger = logging.getLogger(__name__)

DEFAULT_WINDOW = 24
PM25_ENTRY = ("aq", "pm25")


@dataclass(frozen=True, eq=False)
class StationFeatures:
    station_id: str
    city_id: str
    static: FactorVector
    series: FactorVector


@dataclass(frozen=True, eq=False)
class FeatureBundle:
    target: GeoPoint
    target_city: str
    t_end: int
    window: int
    x_tgt_static: FactorVector
    x_tgt_series: FactorVector
    x_stn: Mapping[str, StationFeatures]
    x_city: Mapping[str, FactorVector]
    city_stations: Mapping[str, tuple[str, ...]]
    provenance: frozenset[str]

    @property
    def sources(self) -> tuple[str, ...]:
        return tuple(self.x_city)


def reading_key(station_id: str, t: int) -> str:
    return f"{station_id}@{t}"


class FeatureBuilder:
    """Builds feature bundles over one dataset, caching per-location factors
    and per-city meteorology matrices."""

    def __init__(
        self,
        dataset: Dataset,
        window: int = DEFAULT_WINDOW,
        norm_table: NormTable | None = None,
        poi_categories: Sequence[str] = POI_CATEGORIES,
        road_categories: Sequence[str] = ROAD_CATEGORIES,
        weather_vocab: Sequence[str] = WEATHER_VOCAB,
        wind_vocab: Sequence[str] = WIND_DIRECTIONS,
        radius_km: float = AFFECT_RADIUS_KM,
    ) -> None:
        if window < 1:
            raise DataError(f"Window must be >= 1, got {window}.")
        self.dataset = dataset
        self.window = window
        self.norm_table = norm_table
        self.poi_categories = tuple(poi_categories)
        self.road_categories = tuple(road_categories)
        self.weather_vocab = tuple(weather_vocab)
        self.wind_vocab = tuple(wind_vocab)
        self.radius_km = radius_km
        self._location_cache: dict[GeoPoint, FactorVector] = {}
        self._meteo_cache: dict[str, tuple[int, np.ndarray]] = {}

    def _normalized(self, factor: FactorVector) -> FactorVector:
        return self.norm_table.apply(factor) if self.norm_table else factor

    def location_factor(self, point: GeoPoint, normalized: bool = True) -> FactorVector:
        raw = self._location_cache.get(point)
        if raw is None:
            raw = poi_factor(
                point, self.dataset.pois, self.poi_categories, self.radius_km
            ).concat(
                road_factor(point, self.dataset.roads, self.road_categories, self.radius_km)
            )
            self._location_cache[point] = raw
        return self._normalized(raw) if normalized else raw

    def meteo_matrix(self, city_id: str) -> tuple[int, np.ndarray]:
        cached = self._meteo_cache.get(city_id)
        if cached is None:
            entry = self.dataset.meteo_records.get(city_id)
            if entry is None:
                raise MissingDataError(f"No meteorology records for city {city_id}.")
            t0, records = entry
            schema = meteo_schema(self.weather_vocab, self.wind_vocab)
            raw = FactorVector(
                np.stack(
                    [
                        meteo_factor(r, self.weather_vocab, self.wind_vocab).values
                        for r in records
                    ]
                ),
                schema,
            )
            cached = (t0, self._normalized(raw).values)
            self._meteo_cache[city_id] = cached
        return cached

    def _window(self, t_end: int) -> tuple[int, int]:
        return t_end - self.window + 1, t_end

    def meteo_series(self, city_id: str, t_end: int) -> FactorVector:
        t_start, _ = self._window(t_end)
        t0, matrix = self.meteo_matrix(city_id)
        t_last = t0 + len(matrix) - 1
        if t_start < t0 or t_end > t_last:
            raise MissingDataError(
                f"Meteorology for city {city_id} does not cover the window.",
                [f"city {city_id}: missing t={_gap(t_start, t_end, t0, t_last)}"],
            )
        return FactorVector(
            matrix[t_start - t0 : t_end - t0 + 1],
            meteo_schema(self.weather_vocab, self.wind_vocab),
        )

    def pollutant_series(self, station_id: str, t_end: int) -> FactorVector:
        t_start, _ = self._window(t_end)
        series = self.dataset.pm25.get(station_id)
        if series is None or not series.covers(t_start, t_end):
            gap = (
                f"{t_start}..{t_end}"
                if series is None
                else _gap(t_start, t_end, series.t0, series.t_last)
            )
            raise MissingDataError(
                f"PM2.5 readings of station {station_id} do not cover the window.",
                [f"station {station_id}: missing t={gap}"],
            )
        values = series.window(t_start, t_end).reshape(-1, 1)
        return self._normalized(FactorVector(values, (PM25_ENTRY,)))

    def station_features(
        self, station: Station, target: GeoPoint, t_end: int
    ) -> StationFeatures:
        relpos = relpos_factor(relative_position(station.location, target), "station_pos")
        static = self.location_factor(station.location, normalized=False).concat(relpos)
        parts: list[FactorVector] = []
        gaps: list[str] = []
        for part in (
            partial(self.meteo_series, station.city_id, t_end),
            partial(self.pollutant_series, station.station_id, t_end),
        ):
            try:
                parts.append(part())
            except MissingDataError as err:
                gaps.extend(err.errors)
        if gaps:
            raise MissingDataError(
                f"Inputs of station {station.station_id} do not cover the window.", gaps
            )
        return StationFeatures(
            station.station_id, station.city_id, self._normalized(static), parts[0].concat(parts[1])
        )

    def city_factor(self, source_city: str, target_city: str) -> FactorVector:
        pos = relative_position(
            self.dataset.city_location(source_city),
            self.dataset.city_location(target_city),
        )
        return self._normalized(relpos_factor(pos, "city_pos"))

    def city_station_features(
        self,
        city_id: str,
        target: GeoPoint,
        t_end: int,
        allowed: Iterable[str] | None = None,
        exclude: Iterable[str] = (),
    ) -> tuple[list[StationFeatures], list[str]]:
        """Features of a city's stations (canonical id order) and the coverage
        gaps of those that could not be built."""
        allowed = None if allowed is None else set(allowed)
        excluded = set(exclude)
        built: list[StationFeatures] = []
        missing: list[str] = []
        for station in self.dataset.stations_of(city_id):
            if station.station_id in excluded:
                continue
            if allowed is not None and station.station_id not in allowed:
                continue
            try:
                built.append(self.station_features(station, target, t_end))
            except MissingDataError as err:
                missing.extend(err.errors)
        return built, missing

    def build(
        self,
        target: GeoPoint,
        target_city: str,
        t_end: int,
        sources: Sequence[str],
        stations: Mapping[str, Sequence[str]] | None = None,
        exclude: Iterable[str] = (),
    ) -> FeatureBundle:
        """Features for inferring ``target`` at ``t_end`` from ``sources``.

        ``stations`` restricts each source city to a station subset (a training
        split); ``exclude`` drops stations entirely (the labelled station).
        """
        exclude = tuple(exclude)
        missing: list[str] = []
        x_stn: dict[str, StationFeatures] = {}
        city_stations: dict[str, tuple[str, ...]] = {}
        x_city: dict[str, FactorVector] = {}
        provenance: set[str] = set()
        t_start, _ = self._window(t_end)

        for city_id in sources:
            allowed = stations.get(city_id) if stations is not None else None
            built, gaps = self.city_station_features(
                city_id, target, t_end, allowed=allowed, exclude=exclude
            )
            missing.extend(gaps)
            for features in built:
                x_stn[features.station_id] = features
                provenance.update(
                    reading_key(features.station_id, t) for t in range(t_start, t_end + 1)
                )
            city_stations[city_id] = tuple(f.station_id for f in built)
            x_city[city_id] = self.city_factor(city_id, target_city)

        try:
            x_tgt_series = self.meteo_series(target_city, t_end)
        except MissingDataError as err:
            missing.extend(err.errors)
        missing = list(dict.fromkeys(missing))
        if missing:
            raise MissingDataError(
                f"Input data do not cover t={t_start}..{t_end}.", missing
            )

        return FeatureBundle(
            target=target,
            target_city=target_city,
            t_end=t_end,
            window=self.window,
            x_tgt_static=self.location_factor(target),
            x_tgt_series=x_tgt_series,
            x_stn=x_stn,
            x_city=x_city,
            city_stations=city_stations,
            provenance=frozenset(provenance),
        )


def _gap(t_start: int, t_end: int, t0: int, t_last: int) -> str:
    parts = []
    if t_start < t0:
        parts.append(f"{t_start}..{min(t_end, t0 - 1)}")
    if t_end > t_last:
        parts.append(f"{max(t_start, t_last + 1)}..{t_end}")
    return ",".join(parts)


def build_features(
    target: GeoPoint,
    target_city: str,
    t_end: int,
    window: int,
    dataset: Dataset,
    sources: Sequence[str],
    norm_table: NormTable | None = None,
    stations: Mapping[str, Sequence[str]] | None = None,
) -> FeatureBundle:
    builder = FeatureBuilder(dataset, window=window, norm_table=norm_table)
    return builder.build(target, target_city, t_end, sources, stations=stations)


def fit_norm_table(
    dataset: Dataset,
    cities: Sequence[str],
    stations: Mapping[str, Sequence[str]] | None = None,
    builder: FeatureBuilder | None = None,
) -> NormTable:
    """Maxima over the training collection: location factors and relative
    positions among training stations, their readings, the meteorology of the
    training cities and the relative positions between those cities."""
    builder = builder or FeatureBuilder(dataset)
    members: list[Station] = []
    for city_id in cities:
        allowed = set(stations[city_id]) if stations and city_id in stations else None
        members.extend(
            s
            for s in dataset.stations_of(city_id)
            if allowed is None or s.station_id in allowed
        )
    if not members:
        raise DataError("No training stations to fit normalization maxima on.")

    collections: list[list[FactorVector]] = [
        [builder.location_factor(s.location, normalized=False) for s in members],
        [
            relpos_factor(relative_position(a.location, b.location), "station_pos")
            for a in members
            for b in members
        ],
        [
            relpos_factor(
                relative_position(dataset.city_location(a), dataset.city_location(b)),
                "city_pos",
            )
            for a in cities
            for b in cities
        ],
    ]
    readings = [
        FactorVector(dataset.pm25[s.station_id].values.reshape(-1, 1), (PM25_ENTRY,))
        for s in members
        if s.station_id in dataset.pm25
    ]
    if readings:
        collections.append(readings)
    schema = meteo_schema(builder.weather_vocab, builder.wind_vocab)
    meteo = [
        FactorVector(
            np.stack(
                [
                    meteo_factor(r, builder.weather_vocab, builder.wind_vocab).values
                    for r in dataset.meteo_records[c][1]
                ]
            ),
            schema,
        )
        for c in cities
        if c in dataset.meteo_records
    ]
    if meteo:
        collections.append(meteo)

    table = NormTable({})
    for collection in collections:
        _, fitted = normalize_dataset(collection)
        table = table.merged(fitted)
    logger.debug("Fitted normalization maxima for %d entries", len(table.maxima))
    return table

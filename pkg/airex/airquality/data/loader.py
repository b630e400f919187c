"""CSV ingestion and export for datasets.

Files (UTF-8, header row, comma separated) live together in one directory::

    cities.csv       city_id,name,lat,lon
    stations.csv     station_id,city_id,lat,lon
    air_quality.csv  station_id,t,pm25
    meteo.csv        city_id,t,weather,temperature,pressure,humidity,wind_speed,wind_direction
    poi.csv          poi_id,lat,lon,category
    roads.csv        road_id,lat1,lon1,lat2,lon2,category
"""

from __future__ import annotations

import logging
from pathlib import Path

import pandas as pd

from airex.airquality.data.schema import (
    AIR_QUALITY_COLUMNS,
    METEO_COLUMNS,
    City,
    Dataset,
    PoI,
    RoadSegment,
    Station,
)
from airex.airquality.exceptions import (
    DataError,
    DatasetIntegrityError,
    DatasetParseError,
)
from airex.airquality.geo import GeoPoint

logger = logging.getLogger(__name__)

CSV_SCHEMAS: dict[str, list[str]] = {
    "cities.csv": ["city_id", "name", "lat", "lon"],
    "stations.csv": ["station_id", "city_id", "lat", "lon"],
    "air_quality.csv": AIR_QUALITY_COLUMNS,
    "meteo.csv": METEO_COLUMNS,
    "poi.csv": ["poi_id", "lat", "lon", "category"],
    "roads.csv": ["road_id", "lat1", "lon1", "lat2", "lon2", "category"],
}
FLOAT_COLUMNS = {
    "lat", "lon", "lat1", "lon1", "lat2", "lon2", "pm25",
    "temperature", "pressure", "humidity", "wind_speed",
}
INT_COLUMNS = {"t"}


class DatasetLoader:
    def __init__(self, data_dir: str | Path) -> None:
        self.data_dir = Path(data_dir)
        self.errors: list[str] = []

    def _read(self, filename: str) -> pd.DataFrame:
        path = self.data_dir / filename
        if not path.exists():
            raise DataError(f"{path}: file not found")
        try:
            frame = pd.read_csv(
                path, dtype=str, keep_default_na=False, encoding="utf-8"
            )
        except pd.errors.EmptyDataError:
            if filename == "air_quality.csv":
                raise DataError("air_quality.csv: no records") from None
            raise DatasetParseError(f"{filename}: file is empty (no header row)") from None
        expected = CSV_SCHEMAS[filename]
        if list(frame.columns) != expected:
            raise DatasetParseError(
                f"{filename}: header {list(frame.columns)!r} does not match "
                f"{expected!r}"
            )
        for column in frame.columns:
            if column in FLOAT_COLUMNS:
                frame[column] = self._convert(frame[column], filename, float)
            elif column in INT_COLUMNS:
                frame[column] = self._convert(frame[column], filename, int)
        return frame

    def _convert(self, column: pd.Series, filename: str, kind: type) -> pd.Series:
        values = []
        for i, raw in enumerate(column.tolist()):
            try:
                values.append(kind(raw))
            except ValueError:
                # header is line 1
                self.errors.append(
                    f"{filename}:{i + 2}: column {column.name!r} value {raw!r} "
                    f"is not {'an integer' if kind is int else 'a number'}"
                )
                values.append(kind(0))
        return pd.Series(values, index=column.index, name=column.name)

    def _point(self, filename: str, line: int, lat: float, lon: float) -> GeoPoint:
        try:
            return GeoPoint(lat, lon)
        except DataError as err:
            self.errors.append(f"{filename}:{line}: {err}")
            return GeoPoint(0.0, 0.0)

    def load(self) -> Dataset:
        self.errors = []
        frames = {name: self._read(name) for name in CSV_SCHEMAS}
        if frames["air_quality.csv"].empty:
            raise DataError("air_quality.csv: no records")

        cities = tuple(
            City(r.city_id, r.name, self._point("cities.csv", i + 2, r.lat, r.lon))
            for i, r in enumerate(frames["cities.csv"].itertuples(index=False))
        )
        stations = tuple(
            Station(
                r.station_id,
                r.city_id,
                self._point("stations.csv", i + 2, r.lat, r.lon),
            )
            for i, r in enumerate(frames["stations.csv"].itertuples(index=False))
        )
        pois = tuple(
            PoI(r.poi_id, self._point("poi.csv", i + 2, r.lat, r.lon), r.category)
            for i, r in enumerate(frames["poi.csv"].itertuples(index=False))
        )
        roads = tuple(
            RoadSegment(
                r.road_id,
                self._point("roads.csv", i + 2, r.lat1, r.lon1),
                self._point("roads.csv", i + 2, r.lat2, r.lon2),
                r.category,
            )
            for i, r in enumerate(frames["roads.csv"].itertuples(index=False))
        )
        if self.errors:
            raise DatasetParseError(
                f"{len(self.errors)} parse error(s) in {self.data_dir}", self.errors
            )

        dataset = Dataset(
            cities=cities,
            stations=stations,
            air_quality=frames["air_quality.csv"].reset_index(drop=True),
            meteo=frames["meteo.csv"].reset_index(drop=True),
            pois=pois,
            roads=roads,
        )
        violations = dataset.validate()
        if violations:
            raise DatasetIntegrityError(
                f"{len(violations)} integrity violation(s) in {self.data_dir}",
                violations,
            )
        logger.info(
            "Loaded dataset from %s: %d cities, %d stations, %d readings, "
            "%d PoIs, %d road segments",
            self.data_dir,
            len(cities),
            len(stations),
            len(dataset.air_quality),
            len(pois),
            len(roads),
        )
        return dataset


def load_dataset(data_dir: str | Path) -> Dataset:
    return DatasetLoader(data_dir).load()


def _format(frame: pd.DataFrame) -> pd.DataFrame:
    out = frame.copy()
    for column in out.columns:
        if column in FLOAT_COLUMNS:
            out[column] = [repr(float(v)) for v in out[column]]
        elif column in INT_COLUMNS:
            out[column] = [str(int(v)) for v in out[column]]
    return out


def dataset_frames(dataset: Dataset) -> dict[str, pd.DataFrame]:
    return {
        "cities.csv": pd.DataFrame(
            [(c.city_id, c.name, c.location.lat, c.location.lon) for c in dataset.cities],
            columns=CSV_SCHEMAS["cities.csv"],
        ),
        "stations.csv": pd.DataFrame(
            [
                (s.station_id, s.city_id, s.location.lat, s.location.lon)
                for s in dataset.stations
            ],
            columns=CSV_SCHEMAS["stations.csv"],
        ),
        "air_quality.csv": dataset.air_quality[AIR_QUALITY_COLUMNS],
        "meteo.csv": dataset.meteo[METEO_COLUMNS],
        "poi.csv": pd.DataFrame(
            [(p.poi_id, p.location.lat, p.location.lon, p.category) for p in dataset.pois],
            columns=CSV_SCHEMAS["poi.csv"],
        ),
        "roads.csv": pd.DataFrame(
            [
                (
                    r.road_id,
                    r.start.lat,
                    r.start.lon,
                    r.end.lat,
                    r.end.lon,
                    r.category,
                )
                for r in dataset.roads
            ],
            columns=CSV_SCHEMAS["roads.csv"],
        ),
    }


def save_dataset(dataset: Dataset, data_dir: str | Path) -> list[Path]:
    data_dir = Path(data_dir)
    data_dir.mkdir(parents=True, exist_ok=True)
    written: list[Path] = []
    for filename, frame in dataset_frames(dataset).items():
        path = data_dir / filename
        _format(frame).to_csv(path, index=False, encoding="utf-8", lineterminator="\n")
        written.append(path)
    logger.info("Wrote %d dataset files to %s", len(written), data_dir)
    return written

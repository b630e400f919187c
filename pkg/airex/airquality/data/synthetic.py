"""Seeded multi-city generator with a controllable north/south distribution shift.

Readings of a station are

    city level + city temporal process + diurnal cycle
    + spatially correlated station deviation + noise

clipped at zero. City levels come from two regional clusters whose gap is
``regional_shift``; station deviations are an AR(1) process in time mixed
across stations with an exponential covariance in distance.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np
import pandas as pd

from airex.airquality.conf import (
    POI_CATEGORIES,
    ROAD_CATEGORIES,
    WIND_DIRECTIONS,
)
from airex.airquality.data.schema import (
    AIR_QUALITY_COLUMNS,
    METEO_COLUMNS,
    City,
    Dataset,
    PoI,
    RoadSegment,
    Station,
)
from airex.airquality.exceptions import ConfigError
from airex.airquality.geo import GeoPoint, haversine_distance, offset_point

logger = logging.getLogger(__name__)

NORTH_CENTER = GeoPoint(39.5, 116.8)
SOUTH_CENTER = GeoPoint(22.9, 113.6)
ROAD_CATEGORY_WEIGHTS = (0.2, 0.3, 0.5)


@dataclass(frozen=True)
class SynthConfig:
    n_cities: int = 6
    stations_per_city: int = 5
    hours: int = 240
    base_level: float = 30.0
    regional_shift: float = 45.0
    city_offset_std: float = 5.0
    correlation_length_km: float = 10.0
    spatial_std: float = 6.0
    temporal_std: float = 12.0
    temporal_smoothness: float = 0.95
    diurnal_amplitude: float = 5.0
    noise_std: float = 3.0
    city_radius_km: float = 12.0
    cluster_radius_km: float = 150.0
    poi_density: float = 8.0
    road_density: float = 4.0
    window: int = 24
    seed: int = 0

    def __post_init__(self) -> None:
        for name in ("n_cities", "stations_per_city", "hours", "window"):
            if getattr(self, name) < 1:
                raise ConfigError(f"SynthConfig.{name} must be >= 1.")
        if self.hours < self.window:
            raise ConfigError(
                f"SynthConfig.hours ({self.hours}) must be >= window ({self.window})."
            )
        if not (0.0 <= self.temporal_smoothness <= 1.0):
            raise ConfigError("SynthConfig.temporal_smoothness must lie in [0, 1].")
        if self.correlation_length_km <= 0:
            raise ConfigError("SynthConfig.correlation_length_km must be > 0.")
        for name in (
            "city_offset_std", "spatial_std", "temporal_std", "diurnal_amplitude",
            "noise_std", "poi_density", "road_density", "city_radius_km",
            "cluster_radius_km",
        ):
            if getattr(self, name) < 0:
                raise ConfigError(f"SynthConfig.{name} must be >= 0.")

    def is_north(self, city_index: int) -> bool:
        return city_index < (self.n_cities + 1) // 2


def ar1(hours: int, rho: float, rng: np.random.Generator, n: int = 1) -> np.ndarray:
    """Unit-variance AR(1) paths, shape (n, hours)."""
    shocks = rng.standard_normal((n, hours))
    out = np.empty((n, hours))
    out[:, 0] = shocks[:, 0]
    innovation = math.sqrt(max(0.0, 1.0 - rho * rho))
    for h in range(1, hours):
        out[:, h] = rho * out[:, h - 1] + innovation * shocks[:, h]
    return out


def _random_in_disc(
    center: GeoPoint, radius_km: float, rng: np.random.Generator
) -> GeoPoint:
    r = radius_km * math.sqrt(rng.random())
    theta = 2 * math.pi * rng.random()
    return offset_point(center, r * math.cos(theta), r * math.sin(theta))


def spatial_deviation_field(
    locations: list[GeoPoint],
    hours: int,
    cfg: SynthConfig,
    rng: np.random.Generator,
) -> np.ndarray:
    """Station deviations of shape (stations, hours) whose correlation between
    two stations is exp(-distance / correlation_length)."""
    n = len(locations)
    dist = np.array(
        [[haversine_distance(a, b) for b in locations] for a in locations]
    ).reshape(n, n)
    cov = np.exp(-dist / cfg.correlation_length_km) + 1e-9 * np.eye(n)
    chol = np.linalg.cholesky(cov)
    paths = ar1(hours, cfg.temporal_smoothness, rng, n)
    return cfg.spatial_std * (chol @ paths)


def _meteorology(
    city_id: str,
    anomaly: np.ndarray,
    north: bool,
    cfg: SynthConfig,
    rng: np.random.Generator,
) -> pd.DataFrame:
    hours = len(anomaly)
    h = np.arange(hours)
    humidity = np.clip(65.0 + 0.4 * anomaly + rng.normal(0.0, 5.0, hours), 5.0, 100.0)
    wind_speed = np.clip(3.5 - 0.05 * anomaly + rng.normal(0.0, 0.8, hours), 0.0, None)
    temperature = (
        (16.0 if north else 26.0)
        + 6.0 * np.sin(2 * np.pi * (h - 14) / 24)
        + rng.normal(0.0, 1.0, hours)
    )
    pressure = 1012.0 + 4.0 * ar1(hours, 0.98, rng)[0]
    fog_threshold = cfg.temporal_std if cfg.temporal_std > 0 else math.inf
    weather = np.where(
        humidity > 88.0,
        "rain",
        np.where(
            (anomaly > fog_threshold) & (humidity > 70.0),
            "fog",
            np.where(humidity > 70.0, "cloudy", "sunny"),
        ),
    )
    sector = int(rng.integers(len(WIND_DIRECTIONS)))
    directions = []
    for step in rng.random(hours):
        if step < 0.05:
            sector = (sector - 1) % len(WIND_DIRECTIONS)
        elif step > 0.95:
            sector = (sector + 1) % len(WIND_DIRECTIONS)
        directions.append(WIND_DIRECTIONS[sector])
    return pd.DataFrame(
        {
            "city_id": city_id,
            "t": h.astype(np.int64),
            "weather": weather,
            "temperature": temperature,
            "pressure": pressure,
            "humidity": humidity,
            "wind_speed": wind_speed,
            "wind_direction": directions,
        },
        columns=METEO_COLUMNS,
    )


def generate_synthetic(cfg: SynthConfig) -> Dataset:
    rng = np.random.default_rng(cfg.seed)
    hours = np.arange(cfg.hours)
    regional = {
        True: ar1(cfg.hours, cfg.temporal_smoothness, rng)[0],
        False: ar1(cfg.hours, cfg.temporal_smoothness, rng)[0],
    }
    diurnal = cfg.diurnal_amplitude * np.sin(2 * np.pi * (hours - 8) / 24)
    mean_level = cfg.base_level + cfg.regional_shift / 2
    density_scale = 1.0 / mean_level if mean_level > 0 else 0.0

    cities: list[City] = []
    stations: list[Station] = []
    aq_frames: list[pd.DataFrame] = []
    meteo_frames: list[pd.DataFrame] = []
    pois: list[PoI] = []
    roads: list[RoadSegment] = []

    for i in range(cfg.n_cities):
        north = cfg.is_north(i)
        city_id = f"C{i + 1:02d}"
        region_center = NORTH_CENTER if north else SOUTH_CENTER
        east, north_km = rng.normal(0.0, cfg.cluster_radius_km / 2, 2)
        center = offset_point(region_center, float(east), float(north_km))
        level = (
            cfg.base_level
            + (cfg.regional_shift if north else 0.0)
            + float(rng.normal(0.0, cfg.city_offset_std))
        )
        own = ar1(cfg.hours, cfg.temporal_smoothness, rng)[0]
        temporal = cfg.temporal_std * (0.8 * regional[north] + 0.6 * own)

        locations = [
            _random_in_disc(center, cfg.city_radius_km, rng)
            for _ in range(cfg.stations_per_city)
        ]
        deviations = spatial_deviation_field(locations, cfg.hours, cfg, rng)
        noise = rng.normal(0.0, cfg.noise_std, (cfg.stations_per_city, cfg.hours))
        readings = np.clip(level + temporal + diurnal + deviations + noise, 0.0, None)

        city_stations = [
            Station(f"{city_id}S{j + 1:02d}", city_id, loc)
            for j, loc in enumerate(locations)
        ]
        stations.extend(city_stations)
        centroid = GeoPoint(
            float(np.mean([p.lat for p in locations])),
            float(np.mean([p.lon for p in locations])),
        )
        region_name = "North" if north else "South"
        cities.append(City(city_id, f"{region_name} City {i + 1}", centroid))
        for station, values in zip(city_stations, readings):
            aq_frames.append(
                pd.DataFrame(
                    {"station_id": station.station_id, "t": hours.astype(np.int64), "pm25": values},
                    columns=AIR_QUALITY_COLUMNS,
                )
            )
        meteo_frames.append(
            _meteorology(city_id, temporal + diurnal, north, cfg, rng)
        )

        n_poi = int(round(cfg.poi_density * cfg.stations_per_city * level * density_scale))
        for _ in range(max(0, n_poi)):
            anchor = locations[int(rng.integers(len(locations)))]
            radius = 1.5 if rng.random() < 0.5 else cfg.city_radius_km
            pois.append(
                PoI(
                    f"P{len(pois) + 1:05d}",
                    _random_in_disc(anchor, radius, rng),
                    POI_CATEGORIES[int(rng.integers(len(POI_CATEGORIES)))],
                )
            )
        n_road = int(round(cfg.road_density * cfg.stations_per_city * level * density_scale))
        for _ in range(max(0, n_road)):
            anchor = locations[int(rng.integers(len(locations)))]
            start = _random_in_disc(anchor, 2.0, rng)
            length = float(rng.uniform(0.3, 3.0))
            theta = 2 * math.pi * rng.random()
            end = offset_point(start, length * math.cos(theta), length * math.sin(theta))
            category = ROAD_CATEGORIES[
                int(rng.choice(len(ROAD_CATEGORIES), p=ROAD_CATEGORY_WEIGHTS))
            ]
            roads.append(RoadSegment(f"R{len(roads) + 1:05d}", start, end, category))

    dataset = Dataset(
        cities=tuple(cities),
        stations=tuple(stations),
        air_quality=pd.concat(aq_frames, ignore_index=True),
        meteo=pd.concat(meteo_frames, ignore_index=True),
        pois=tuple(pois),
        roads=tuple(roads),
    )
    logger.info(
        "Generated synthetic dataset: %d cities x %d stations x %d hours (seed %d)",
        cfg.n_cities,
        cfg.stations_per_city,
        cfg.hours,
        cfg.seed,
    )
    return dataset

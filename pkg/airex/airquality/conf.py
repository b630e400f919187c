from __future__ import annotations

from typing import Any

from django.conf import settings

POI_CATEGORIES: tuple[str, ...] = (
    "arts_entertainment",
    "college_university",
    "event",
    "food",
    "nightlife",
    "outdoors_recreation",
    "professional",
    "residence",
    "shop_service",
    "travel_transport",
)
ROAD_CATEGORIES: tuple[str, ...] = ("highway", "trunk", "other")
WEATHER_VOCAB: tuple[str, ...] = ("sunny", "cloudy", "rain", "fog")
WIND_DIRECTIONS: tuple[str, ...] = ("N", "NE", "E", "SE", "S", "SW", "W", "NW")

DEFAULTS: dict[str, Any] = {
    "WINDOW": 24,
    "AFFECT_RADIUS_KM": 1.0,
    "STATIONS_PER_CITY": 5,
    "EPOCHS": 100,
    "BATCH_SIZE": 32,
    "LEARNING_RATE": 0.005,
    "LAMBDA": 0.5,
    "GAMMA": 1.0,
    "ZETA": 1.0,
    "LSTM_HIDDEN": 300,
    "LSTM_LAYERS": 2,
    "BASIC_WIDTHS": [100],
    "FUSION_WIDTHS": [200, 200],
    "ATTENTION_HIDDEN": 100,
    "EXPERT_HIDDEN": 100,
    "OPTIMIZER": "adam",
    "CLIP_NORM": 5.0,
    "KNN_K": 3,
    "FNN_HIDDEN": [200, 200, 200],
    "POI_CATEGORIES": list(POI_CATEGORIES),
    "ROAD_CATEGORIES": list(ROAD_CATEGORIES),
}


def airex_setting(name: str) -> Any:
    overrides = getattr(settings, "AIREX", {}) or {}
    if name in overrides:
        return overrides[name]
    return DEFAULTS[name]

"""Evaluation protocol: hold out a target city, train every method on the
remaining cities and report RMSE on the target city's stations.

The whole split/train/evaluate cycle repeats with a fresh station sample per
repeat, and the report ends with the mean of every method over the repeats.
"""

from __future__ import annotations

import logging
from collections.abc import Sequence
from dataclasses import dataclass, replace

import pandas as pd

from airex.airquality.baselines import (
    SINGLE_SOURCE_MIN_STATIONS,
    FnnConfig,
    KnnConfig,
    fnn_rmse,
    knn_rmse,
    nearest_source_cities,
    train_fnn_baseline,
    train_single_source,
)
from airex.airquality.data.schema import Dataset
from airex.airquality.exceptions import ConfigError
from airex.airquality.features import FeatureBuilder
from airex.airquality.geo import haversine_distance
from airex.airquality.training import (
    Split,
    TrainConfig,
    TrainResult,
    derive_seed,
    evaluate_rmse,
    split_train_test,
    train,
)

logger = logging.getLogger(__name__)

REPORT_COLUMNS = ["repeat", "method", "source_city", "distance_km", "sources", "rmse"]
MEAN_REPEAT = "mean"


@dataclass(frozen=True)
class EvaluationRow:
    repeat: int | str
    method: str
    source_city: str
    distance_km: float
    sources: str
    rmse: float


def result_rmse(dataset: Dataset, result: TrainResult, split: Split) -> float:
    builder = FeatureBuilder(dataset, window=result.config.window, norm_table=result.norm_table)
    return evaluate_rmse(
        result.params,
        builder,
        split.target_city,
        split.test,
        station_subset=result.split.train,
        stride=result.config.stride,
    )


def evaluate_repeat(
    dataset: Dataset,
    split: Split,
    config: TrainConfig,
    repeat: int = 0,
    nearest_sources: int | None = None,
    knn: KnnConfig | None = None,
    fnn: FnnConfig | None = None,
    single_source: bool = True,
) -> list[EvaluationRow]:
    target = split.target_city
    multi = split
    if nearest_sources is not None:
        multi = split.restricted(
            nearest_source_cities(dataset, target, split.sources, nearest_sources)
        )
    label = " ".join(multi.sources)
    rows: list[EvaluationRow] = []

    logger.info("Repeat %d: training AIREX on %s", repeat, label)
    airex = train(dataset, config, multi)
    rows.append(
        EvaluationRow(repeat, "AIREX", "", float("nan"), label, result_rmse(dataset, airex, split))
    )

    knn = knn or KnnConfig.from_settings()
    rows.append(
        EvaluationRow(
            repeat,
            "KNN",
            "",
            float("nan"),
            " ".join(split.sources),
            knn_rmse(dataset, split, knn, window=config.window, stride=config.stride),
        )
    )

    logger.info("Repeat %d: training FNN on %s", repeat, label)
    model = train_fnn_baseline(dataset, config, multi, fnn)
    rows.append(
        EvaluationRow(
            repeat, "FNN", "", float("nan"), label, fnn_rmse(model, dataset, split, config.stride)
        )
    )

    if single_source:
        origin = dataset.city_location(target)
        for city in split.sources:
            if len(split.train[city]) < SINGLE_SOURCE_MIN_STATIONS:
                logger.warning(
                    "Repeat %d: skipping single-source model of %s, only %d training station(s)",
                    repeat,
                    city,
                    len(split.train[city]),
                )
                continue
            logger.info("Repeat %d: single-source model of %s", repeat, city)
            result = train_single_source(dataset, config, split, city)
            rows.append(
                EvaluationRow(
                    repeat,
                    "single",
                    city,
                    haversine_distance(origin, dataset.city_location(city)),
                    city,
                    result_rmse(dataset, result, split),
                )
            )
    for row in rows:
        logger.info(
            "Repeat %s %s%s: RMSE %.4f",
            row.repeat,
            row.method,
            f" ({row.source_city})" if row.source_city else "",
            row.rmse,
        )
    return rows


def report_frame(rows: Sequence[EvaluationRow]) -> pd.DataFrame:
    """Per-repeat rows followed by one mean row per method (and source city)."""
    frame = pd.DataFrame([vars(r) for r in rows], columns=REPORT_COLUMNS)
    if frame.empty:
        return frame
    means = (
        frame.groupby(["method", "source_city", "sources"], sort=False, dropna=False)
        .agg(distance_km=("distance_km", "first"), rmse=("rmse", "mean"))
        .reset_index()
    )
    means.insert(0, "repeat", MEAN_REPEAT)
    return pd.concat([frame, means[REPORT_COLUMNS]], ignore_index=True)


def run_evaluation(
    dataset: Dataset,
    target_city: str,
    config: TrainConfig,
    sources: Sequence[str] | None = None,
    repeats: int = 1,
    nearest_sources: int | None = None,
    knn: KnnConfig | None = None,
    fnn: FnnConfig | None = None,
    single_source: bool = True,
) -> pd.DataFrame:
    """Repeated evaluation; repeat ``r`` samples its stations and seeds its
    models with seeds derived from ``config.seed`` and ``r``."""
    if repeats < 1:
        raise ConfigError(f"repeats must be >= 1, got {repeats}")
    rows: list[EvaluationRow] = []
    for repeat in range(repeats):
        split = split_train_test(
            dataset,
            target_city,
            per_city=config.stations_per_city,
            seed=derive_seed(config.seed, repeat, 0),
            sources=sources,
        )
        repeat_config = replace(config, seed=derive_seed(config.seed, repeat, 1))
        rows.extend(
            evaluate_repeat(
                dataset,
                split,
                repeat_config,
                repeat=repeat,
                nearest_sources=nearest_sources,
                knn=knn,
                fnn=fnn,
                single_source=single_source,
            )
        )
    return report_frame(rows)

"""Comparison methods: k nearest stations, a feed-forward network on the
last time step, and the one-source-city reduction of the main model."""

from __future__ import annotations

import logging
import math
from collections.abc import Mapping, Sequence
from dataclasses import dataclass, replace

import numpy as np

from airex.airquality import autodiff as ad
from airex.airquality.autodiff import Node
from airex.airquality.conf import airex_setting
from airex.airquality.data.schema import Dataset, Station
from airex.airquality.exceptions import ConfigError, DataError, DivergenceError, ShapeError
from airex.airquality.features import FeatureBuilder, FeatureBundle, fit_norm_table
from airex.airquality.geo import GeoPoint, NormTable, haversine_distance
from airex.airquality.network import FcStackParams, ParamGroup, fc_stack
from airex.airquality.training import (
    SampleFeaturizer,
    Split,
    TrainConfig,
    TrainResult,
    clip_gradients,
    common_time_range,
    derive_seed,
    label_scale,
    make_meta_pairs,
    make_optimizer,
    make_training_samples,
    rmse,
    single_city_pair,
    train,
)

logger = logging.getLogger(__name__)

SINGLE_SOURCE_MIN_STATIONS = 2


@dataclass(frozen=True)
class KnnConfig:
    k: int = 3

    def __post_init__(self) -> None:
        if self.k < 1:
            raise ConfigError(f"k must be >= 1, got {self.k}")

    @classmethod
    def from_settings(cls) -> KnnConfig:
        return cls(k=airex_setting("KNN_K"))


def knn_infer(
    target: GeoPoint,
    stations: Sequence[Station],
    readings: Mapping[str, float],
    cfg: KnnConfig = KnnConfig(),
) -> float:
    """Mean reading of the k stations closest to ``target``; equal distances
    are ordered by station id."""
    candidates = sorted(
        (haversine_distance(target, s.location), s.station_id)
        for s in stations
        if s.station_id in readings
    )
    if len(candidates) < cfg.k:
        raise DataError(
            f"KNN needs {cfg.k} stations with readings, only {len(candidates)} available."
        )
    return float(np.mean([readings[sid] for _, sid in candidates[: cfg.k]]))


def knn_rmse(
    dataset: Dataset,
    split: Split,
    cfg: KnnConfig = KnnConfig(),
    window: int = 1,
    stride: int = 1,
) -> float:
    """KNN over the training stations of the source cities, evaluated at the
    same test times as the learned models."""
    stations = [dataset.station_by_id[s] for s in sorted(split.train_stations())]
    times = common_time_range(
        dataset,
        sorted({*split.train_stations(), *split.test}),
        sorted({split.target_city, *split.sources}),
        window,
    )
    predictions, truths = [], []
    for t in times[::stride]:
        readings = dataset.readings_at([s.station_id for s in stations], t)
        for sid in split.test:
            truth = dataset.readings_at([sid], t).get(sid)
            if truth is None:
                continue
            predictions.append(
                knn_infer(dataset.station_by_id[sid].location, stations, readings, cfg)
            )
            truths.append(truth)
    return rmse(predictions, truths)


@dataclass(frozen=True)
class FnnConfig:
    hidden: tuple[int, ...] = (200, 200, 200)
    epochs: int = 100
    batch_size: int = 32
    learning_rate: float = 0.005
    optimizer: str = "adam"
    clip_norm: float | None = 5.0
    seed: int = 0

    def __post_init__(self) -> None:
        object.__setattr__(self, "hidden", tuple(self.hidden))
        if not self.hidden or any(h < 1 for h in self.hidden):
            raise ConfigError(f"FNN hidden widths must be positive, got {self.hidden}")
        if self.epochs < 0 or self.batch_size < 1 or self.learning_rate < 0:
            raise ConfigError("FNN epochs/batch_size/learning_rate out of range")

    @classmethod
    def from_train_config(cls, config: TrainConfig) -> FnnConfig:
        return cls(
            hidden=tuple(airex_setting("FNN_HIDDEN")),
            epochs=config.epochs,
            batch_size=config.batch_size,
            learning_rate=config.learning_rate,
            optimizer=config.optimizer,
            clip_norm=config.clip_norm,
            seed=derive_seed(config.seed, 2),
        )


@dataclass(eq=False)
class FnnParams(ParamGroup):
    hidden: FcStackParams
    W_out: Node
    b_out: Node

    @property
    def input_dim(self) -> int:
        return self.hidden.weights[0].shape[0]

    @classmethod
    def initialize(cls, input_dim: int, cfg: FnnConfig) -> FnnParams:
        rng = np.random.default_rng(cfg.seed)
        hidden = FcStackParams.initialize(input_dim, cfg.hidden, rng)
        fan_in = cfg.hidden[-1]
        bound = 1.0 / math.sqrt(fan_in)
        return cls(
            hidden,
            ad.parameter(rng.uniform(-bound, bound, (fan_in, 1)), "W_out"),
            ad.parameter(rng.uniform(-bound, bound, (1,)), "b_out"),
        )

    def parameters(self) -> list[Node]:
        return [node for _, node in self.named("fnn")]


def fnn_forward(x: Node, params: FnnParams) -> Node:
    if x.ndim != 2 or x.shape[1] != params.input_dim:
        raise ShapeError(
            f"FNN expects rows of {params.input_dim} features, got shape {x.shape}"
        )
    out = ad.add(ad.matmul(fc_stack(x, params.hidden), params.W_out), params.b_out)
    return ad.reshape(out, (x.shape[0],))


def fnn_train(
    features: np.ndarray, labels: np.ndarray, cfg: FnnConfig
) -> tuple[FnnParams, list[float]]:
    """Mini-batch MSE training; returns the parameters and per-epoch mean loss."""
    features = np.asarray(features, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.float64)
    if features.ndim != 2 or len(features) != len(labels):
        raise ShapeError(
            f"FNN training data mismatch: features {features.shape}, labels {labels.shape}"
        )
    if len(features) == 0:
        raise DataError("FNN training set is empty.")
    params = FnnParams.initialize(features.shape[1], cfg)
    optimizer = make_optimizer(cfg.optimizer, params.parameters(), cfg.learning_rate)
    rng = np.random.default_rng(derive_seed(cfg.seed, 1))
    history = []
    for epoch in range(1, cfg.epochs + 1):
        order = rng.permutation(len(features))
        losses = []
        for index, start in enumerate(range(0, len(order), cfg.batch_size)):
            rows = order[start : start + cfg.batch_size]
            prediction = fnn_forward(ad.constant(features[rows]), params)
            loss = ad.mean(ad.square(prediction - ad.constant(labels[rows])))
            if not math.isfinite(loss.item()):
                raise DivergenceError(epoch, index, loss.item())
            for p in params.parameters():
                p.grad = None
            ad.backward(loss)
            grads, _ = clip_gradients(
                [p.grad if p.grad is not None else np.zeros_like(p.value) for p in params.parameters()],
                cfg.clip_norm,
            )
            optimizer.step(grads)
            losses.append(loss.item())
        history.append(float(np.mean(losses)))
        logger.debug("FNN epoch %d/%d: mse=%.6f", epoch, cfg.epochs, history[-1])
    return params, history


def fnn_infer(params: FnnParams, features: np.ndarray) -> np.ndarray:
    return fnn_forward(ad.constant(np.asarray(features, dtype=np.float64)), params).value.copy()


@dataclass(frozen=True)
class FnnLayout:
    """Fixed slot layout flattening a bundle's last time step: the target,
    then per city its relative position and ``max_stations`` station slots.
    Cities or slots without stations are zero."""

    cities: tuple[str, ...]
    max_stations: int
    station_width: int
    city_width: int = 2

    def flatten(self, bundle: FeatureBundle) -> np.ndarray:
        parts = [bundle.x_tgt_static.values, bundle.x_tgt_series.values[-1]]
        for city in self.cities:
            if city not in bundle.x_city:
                parts.append(
                    np.zeros(self.city_width + self.max_stations * self.station_width)
                )
                continue
            parts.append(bundle.x_city[city].values)
            ids = bundle.city_stations[city]
            if len(ids) > self.max_stations:
                raise ShapeError(f"City {city} has more than {self.max_stations} stations.")
            for sid in ids:
                s = bundle.x_stn[sid]
                parts.append(np.concatenate([s.static.values, s.series.values[-1]]))
            parts.append(np.zeros((self.max_stations - len(ids)) * self.station_width))
        return np.concatenate(parts)


@dataclass(eq=False)
class FnnModel:
    params: FnnParams
    layout: FnnLayout
    norm_table: NormTable
    window: int


def train_fnn_baseline(
    dataset: Dataset,
    config: TrainConfig,
    split: Split,
    fnn_config: FnnConfig | None = None,
) -> FnnModel:
    """FNN trained on the same meta-pair samples as the main model."""
    fnn_config = fnn_config or FnnConfig.from_train_config(config)
    sources = split.sources
    pairs = make_meta_pairs(sources) if len(sources) >= 2 else [single_city_pair(sources[0])]
    norm_table = fit_norm_table(dataset, sources, split.train)
    builder = FeatureBuilder(dataset, window=config.window, norm_table=norm_table)
    featurizer = SampleFeaturizer(builder, pairs, split)
    samples = [
        s
        for i, pair in enumerate(pairs)
        for s in make_training_samples(pair, dataset, split, config.window, config.stride, i)
    ]
    if not samples:
        raise DataError("FNN training set is empty.")
    first = featurizer.featurize(samples[0])[0]
    station = next(iter(first.x_stn.values()))
    layout = FnnLayout(
        cities=sources,
        max_stations=config.stations_per_city,
        station_width=len(station.static) + len(station.series),
    )
    features = np.stack([layout.flatten(featurizer.featurize(s)[0]) for s in samples])
    labels = np.array([s.label for s in samples]) / label_scale(norm_table)
    params, _ = fnn_train(features, labels, fnn_config)
    return FnnModel(params, layout, norm_table, config.window)


def fnn_rmse(model: FnnModel, dataset: Dataset, split: Split, stride: int = 1) -> float:
    builder = FeatureBuilder(dataset, window=model.window, norm_table=model.norm_table)
    times = common_time_range(
        dataset,
        sorted({*split.train_stations(), *split.test}),
        sorted({split.target_city, *split.sources}),
        model.window,
    )
    rows, truths = [], []
    for sid in split.test:
        station = dataset.station_by_id[sid]
        for t in times[::stride]:
            bundle = builder.build(
                station.location, split.target_city, t, split.sources, stations=split.train
            )
            rows.append(model.layout.flatten(bundle))
            truths.append(dataset.readings_at([sid], t)[sid])
    if not rows:
        raise DataError("Cannot compute RMSE of an empty test set.")
    predictions = fnn_infer(model.params, np.stack(rows)) * label_scale(model.norm_table)
    return rmse(predictions, truths)


def train_single_source(
    dataset: Dataset, config: TrainConfig, split: Split, city: str
) -> TrainResult:
    """One-city model: that city's stations as inputs, a single expert so beta
    is 1, and the mixture MSE as the only loss.

    Each sample labels one station and feeds the others, so the city needs at
    least two stations in the split.
    """
    if city not in split.train:
        raise ConfigError(f"City {city} is not a source city of this split.")
    if len(split.train[city]) < SINGLE_SOURCE_MIN_STATIONS:
        raise ConfigError(
            f"Single-source model of {city} needs at least {SINGLE_SOURCE_MIN_STATIONS} "
            f"training stations, the split has {len(split.train[city])}."
        )
    config = replace(config, lambda_=1.0, gamma=0.0, zeta=0.0)
    return train(dataset, config, split.restricted([city]), pairs=[single_city_pair(city)])


def nearest_source_cities(
    dataset: Dataset, target_city: str, sources: Sequence[str], n: int
) -> list[str]:
    """The ``n`` source cities closest to the target city (ties by id)."""
    if n < 1:
        raise ConfigError(f"n must be >= 1, got {n}")
    origin = dataset.city_location(target_city)
    ranked = sorted(
        (haversine_distance(origin, dataset.city_location(c)), c)
        for c in sources
        if c != target_city
    )
    return [c for _, c in ranked[:n]]

"""Meta-training: every source city takes a turn as an unmonitored
meta-target while the others act as its sources."""

from __future__ import annotations

import itertools
import logging
import math
from collections.abc import Iterable, Mapping, Sequence
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np
import pandas as pd

from airex.airquality import autodiff as ad
from airex.airquality.autodiff import Node
from airex.airquality.conf import airex_setting
from airex.airquality.data.schema import Dataset
from airex.airquality.exceptions import (
    ConfigError,
    DataError,
    DivergenceError,
    MissingDataError,
)
from airex.airquality.features import (
    PM25_ENTRY,
    FeatureBuilder,
    FeatureBundle,
    StationFeatures,
    fit_norm_table,
    reading_key,
)
from airex.airquality.geo import GeoPoint, NormTable
from airex.airquality.losses import (
    LossWeights,
    entropy_reg,
    loss_adversarial,
    loss_experts,
    loss_final,
    total_loss,
)
from airex.airquality.network import (
    AirexParams,
    InputDims,
    NetworkShape,
    airex_forward_batch,
    stack_bundles,
)

logger = logging.getLogger(__name__)

DEFAULT_GRID: dict[str, tuple] = {
    "epochs": (100, 200, 300),
    "batch_size": (32, 64, 128, 256, 512),
    "learning_rate": (0.005, 0.01),
}
TRACE_COLUMNS = ["epoch", "l_f", "l_m", "l_a", "r", "total", "val_rmse"]
OPTIMIZERS = ("adam", "sgd")


def derive_seed(seed: int, *keys: int) -> int:
    """Independent child seed for a sub-task (a repeat, a grid trial)."""
    return int(np.random.SeedSequence([seed, *keys]).generate_state(1)[0])


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 100
    batch_size: int = 32
    learning_rate: float = 0.005
    lambda_: float = 0.5
    gamma: float = 1.0
    zeta: float = 1.0
    sigma: float | None = None
    window: int = 24
    lstm_hidden: int = 300
    lstm_layers: int = 2
    basic_widths: tuple[int, ...] = (100,)
    fusion_widths: tuple[int, ...] = (200, 200)
    attention_hidden: int = 100
    expert_hidden: int = 100
    stations_per_city: int = 5
    optimizer: str = "adam"
    clip_norm: float | None = 5.0
    stride: int = 1
    seed: int = 0

    def __post_init__(self) -> None:
        object.__setattr__(self, "basic_widths", tuple(self.basic_widths))
        object.__setattr__(self, "fusion_widths", tuple(self.fusion_widths))
        if self.epochs < 0:
            raise ConfigError(f"epochs must be >= 0, got {self.epochs}")
        if self.learning_rate < 0:
            raise ConfigError(f"learning_rate must be >= 0, got {self.learning_rate}")
        for name in (
            "batch_size", "window", "lstm_hidden", "lstm_layers",
            "attention_hidden", "expert_hidden", "stations_per_city", "stride",
        ):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1, got {getattr(self, name)}")
        if self.optimizer not in OPTIMIZERS:
            raise ConfigError(f"Unknown optimizer {self.optimizer!r}; use one of {OPTIMIZERS}")
        if self.clip_norm is not None and self.clip_norm <= 0:
            raise ConfigError("clip_norm must be > 0 (or None to disable clipping)")
        self.loss_weights()

    @classmethod
    def from_settings(cls, **overrides) -> TrainConfig:
        values = {
            "epochs": airex_setting("EPOCHS"),
            "batch_size": airex_setting("BATCH_SIZE"),
            "learning_rate": airex_setting("LEARNING_RATE"),
            "lambda_": airex_setting("LAMBDA"),
            "gamma": airex_setting("GAMMA"),
            "zeta": airex_setting("ZETA"),
            "window": airex_setting("WINDOW"),
            "lstm_hidden": airex_setting("LSTM_HIDDEN"),
            "lstm_layers": airex_setting("LSTM_LAYERS"),
            "basic_widths": tuple(airex_setting("BASIC_WIDTHS")),
            "fusion_widths": tuple(airex_setting("FUSION_WIDTHS")),
            "attention_hidden": airex_setting("ATTENTION_HIDDEN"),
            "expert_hidden": airex_setting("EXPERT_HIDDEN"),
            "stations_per_city": airex_setting("STATIONS_PER_CITY"),
            "optimizer": airex_setting("OPTIMIZER"),
            "clip_norm": airex_setting("CLIP_NORM"),
        }
        values.update({k: v for k, v in overrides.items() if v is not None})
        return cls(**values)

    def to_dict(self) -> dict:
        data = asdict(self)
        data["basic_widths"] = list(self.basic_widths)
        data["fusion_widths"] = list(self.fusion_widths)
        return data

    @classmethod
    def from_dict(cls, data: Mapping) -> TrainConfig:
        return cls(**dict(data))

    def loss_weights(self) -> LossWeights:
        return LossWeights(self.lambda_, self.gamma, self.zeta, self.sigma)

    def network_shape(self, dims: InputDims) -> NetworkShape:
        return NetworkShape(
            dims=dims,
            window=self.window,
            lstm_hidden=self.lstm_hidden,
            lstm_layers=self.lstm_layers,
            basic_widths=self.basic_widths,
            fusion_widths=self.fusion_widths,
            attention_hidden=self.attention_hidden,
            expert_hidden=self.expert_hidden,
            max_stations=self.stations_per_city,
        )


@dataclass(frozen=True)
class MetaPair:
    meta_target: str
    meta_sources: tuple[str, ...]
    # the degenerate one-city model learns from its own city's stations
    within_city: bool = False

    def __post_init__(self) -> None:
        object.__setattr__(self, "meta_sources", tuple(self.meta_sources))
        if not self.meta_sources:
            raise ConfigError("A meta-pair needs at least one meta-source city.")
        if self.within_city:
            if self.meta_sources != (self.meta_target,):
                raise ConfigError("A within-city pair uses its own city as the only source.")
        elif self.meta_target in self.meta_sources:
            raise ConfigError(
                f"Meta-target {self.meta_target} cannot also be a meta-source."
            )


def make_meta_pairs(cities: Sequence[str]) -> list[MetaPair]:
    cities = list(cities)
    if len(cities) < 2:
        raise ConfigError(f"Meta-training needs >= 2 source cities, got {len(cities)}.")
    if len(set(cities)) != len(cities):
        raise ConfigError(f"Duplicate source cities in {cities!r}.")
    return [
        MetaPair(city, tuple(c for c in cities if c != city)) for city in cities
    ]


def single_city_pair(city: str) -> MetaPair:
    return MetaPair(city, (city,), within_city=True)


@dataclass(frozen=True)
class Split:
    target_city: str
    train: Mapping[str, tuple[str, ...]]
    test: tuple[str, ...]

    @property
    def sources(self) -> tuple[str, ...]:
        return tuple(self.train)

    def train_stations(self) -> set[str]:
        return {s for ids in self.train.values() for s in ids}

    def restricted(self, sources: Iterable[str]) -> Split:
        sources = list(sources)
        unknown = sorted(set(sources) - set(self.train))
        if unknown:
            raise ConfigError(f"Cities {unknown} are not source cities of this split.")
        return Split(self.target_city, {c: self.train[c] for c in sources}, self.test)

    def to_dict(self) -> dict:
        return {
            "target_city": self.target_city,
            "train": {c: list(ids) for c, ids in self.train.items()},
            "test": list(self.test),
        }


def split_train_test(
    dataset: Dataset,
    target_city: str,
    per_city: int = 5,
    seed: int = 0,
    sources: Sequence[str] | None = None,
) -> Split:
    """Sample up to ``per_city`` stations in every city. The target city's
    stations are test-only and the source cities' stations train-only."""
    if target_city not in dataset.city_by_id:
        raise DataError(f"Target city {target_city!r} is not in the dataset.")
    if per_city < 1:
        raise ConfigError(f"per_city must be >= 1, got {per_city}")
    if sources is None:
        sources = [c for c in dataset.city_ids() if c != target_city]
    sources = list(sources)
    if target_city in sources:
        raise ConfigError(f"Target city {target_city} cannot be a source city.")
    rng = np.random.default_rng(seed)

    def _pick(city_id: str) -> tuple[str, ...]:
        ids = [s.station_id for s in dataset.stations_of(city_id)]
        if len(ids) <= per_city:
            if len(ids) < per_city:
                logger.debug("City %s has %d stations, taking all", city_id, len(ids))
            return tuple(ids)
        chosen = rng.choice(len(ids), size=per_city, replace=False)
        return tuple(sorted(ids[i] for i in chosen))

    train = {city_id: _pick(city_id) for city_id in sources}
    test = _pick(target_city)
    if not test:
        raise DataError(f"Target city {target_city} has no stations to evaluate on.")
    return Split(target_city, train, test)


def common_time_range(
    dataset: Dataset,
    station_ids: Iterable[str],
    city_ids: Iterable[str],
    window: int,
) -> range:
    """Window end times at which every listed station and city has data."""
    starts, ends, missing = [], [], []
    for sid in station_ids:
        series = dataset.pm25.get(sid)
        if series is None:
            missing.append(f"station {sid}: no readings")
            continue
        starts.append(series.t0)
        ends.append(series.t_last)
    for cid in city_ids:
        entry = dataset.meteo_records.get(cid)
        if entry is None:
            missing.append(f"city {cid}: no meteorology")
            continue
        t0, records = entry
        starts.append(t0)
        ends.append(t0 + len(records) - 1)
    if missing:
        raise MissingDataError("Inputs have no data to build windows from.", missing)
    if not starts:
        return range(0)
    return range(max(starts) + window - 1, min(ends) + 1)


@dataclass(frozen=True)
class TrainingSample:
    pair_index: int
    station_id: str
    t_end: int
    label: float


def make_training_samples(
    pair: MetaPair,
    dataset: Dataset,
    split: Split,
    window: int,
    stride: int = 1,
    pair_index: int = 0,
) -> list[TrainingSample]:
    """One sample per (held-in meta-target station, window end time)."""
    targets = split.train.get(pair.meta_target, ())
    if not targets:
        raise DataError(f"Meta-target {pair.meta_target} has no training stations.")
    involved = set(targets)
    for city in pair.meta_sources:
        involved.update(split.train.get(city, ()))
    cities = {pair.meta_target, *pair.meta_sources}
    times = common_time_range(dataset, sorted(involved), sorted(cities), window)
    if len(times) == 0:
        raise MissingDataError(
            f"No complete {window}-step window for meta-target {pair.meta_target}."
        )
    samples = []
    for sid in targets:
        series = dataset.pm25[sid]
        for t in times[::stride]:
            samples.append(
                TrainingSample(pair_index, sid, t, float(series.values[t - series.t0]))
            )
    return samples


def label_scale(norm_table: NormTable) -> float:
    """Divisor taking readings to the network's output units."""
    scale = float(norm_table.maxima.get(PM25_ENTRY, 1.0))
    return scale if scale > 0 else 1.0


class SampleFeaturizer:
    """Turns training samples into network inputs for their meta-pair."""

    def __init__(
        self,
        builder: FeatureBuilder,
        pairs: Sequence[MetaPair],
        split: Split,
    ) -> None:
        self.builder = builder
        self.pairs = list(pairs)
        self.split = split

    def featurize(
        self, sample: TrainingSample
    ) -> tuple[FeatureBundle, list[StationFeatures]]:
        pair = self.pairs[sample.pair_index]
        station = self.builder.dataset.station_by_id[sample.station_id]
        exclude = (sample.station_id,)
        bundle = self.builder.build(
            station.location,
            pair.meta_target,
            sample.t_end,
            pair.meta_sources,
            stations=self.split.train,
            exclude=exclude,
        )
        auxiliary: list[StationFeatures] = []
        if not pair.within_city:
            auxiliary, missing = self.builder.city_station_features(
                pair.meta_target,
                station.location,
                sample.t_end,
                allowed=self.split.train.get(pair.meta_target, ()),
                exclude=exclude,
            )
            if missing:
                raise MissingDataError("Meta-target stations lack data.", missing)
        return bundle, auxiliary

    def provenance(self, sample: TrainingSample) -> set[str]:
        """Reading keys a sample's inputs and label are built from."""
        bundle, auxiliary = self.featurize(sample)
        keys = set(bundle.provenance)
        t_start = sample.t_end - self.builder.window + 1
        for s in auxiliary:
            keys.update(reading_key(s.station_id, t) for t in range(t_start, sample.t_end + 1))
        keys.add(reading_key(sample.station_id, sample.t_end))
        return keys


def audit_leakage(
    featurizer: SampleFeaturizer,
    samples: Iterable[TrainingSample],
    test_stations: Iterable[str],
) -> list[str]:
    """Reading keys of test stations found in training inputs or labels."""
    test = set(test_stations)
    violations = []
    for sample in samples:
        for key in sorted(featurizer.provenance(sample)):
            if key.rsplit("@", 1)[0] in test:
                violations.append(
                    f"sample {sample.station_id}@{sample.t_end} uses test reading {key}"
                )
    return violations


class Optimizer:
    def __init__(self, params: Sequence[Node], learning_rate: float) -> None:
        self.params = list(params)
        self.learning_rate = learning_rate

    def step(self, grads: Sequence[np.ndarray]) -> None:
        raise NotImplementedError


class Sgd(Optimizer):
    def step(self, grads: Sequence[np.ndarray]) -> None:
        for p, g in zip(self.params, grads):
            p.value = p.value - self.learning_rate * g


class Adam(Optimizer):
    def __init__(
        self,
        params: Sequence[Node],
        learning_rate: float,
        beta1: float = 0.9,
        beta2: float = 0.999,
        eps: float = 1e-8,
    ) -> None:
        super().__init__(params, learning_rate)
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = [np.zeros_like(p.value) for p in self.params]
        self.v = [np.zeros_like(p.value) for p in self.params]

    def step(self, grads: Sequence[np.ndarray]) -> None:
        self.t += 1
        correction1 = 1.0 - self.beta1**self.t
        correction2 = 1.0 - self.beta2**self.t
        for i, (p, g) in enumerate(zip(self.params, grads)):
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g * g
            update = (self.m[i] / correction1) / (np.sqrt(self.v[i] / correction2) + self.eps)
            p.value = p.value - self.learning_rate * update


def make_optimizer(name: str, params: Sequence[Node], learning_rate: float) -> Optimizer:
    if name == "adam":
        return Adam(params, learning_rate)
    if name == "sgd":
        return Sgd(params, learning_rate)
    raise ConfigError(f"Unknown optimizer {name!r}")


def clip_gradients(
    grads: Sequence[np.ndarray], max_norm: float | None
) -> tuple[list[np.ndarray], float]:
    norm = math.sqrt(sum(float((g * g).sum()) for g in grads))
    if max_norm is None or norm <= max_norm or norm == 0.0:
        return list(grads), norm
    factor = max_norm / norm
    return [g * factor for g in grads], norm


@dataclass(frozen=True)
class EpochRecord:
    epoch: int
    l_f: float
    l_m: float
    l_a: float
    r: float
    total: float
    val_rmse: float = float("nan")


def loss_trace_frame(trace: Sequence[EpochRecord]) -> pd.DataFrame:
    return pd.DataFrame([asdict(r) for r in trace], columns=TRACE_COLUMNS)


def write_loss_trace(trace: Sequence[EpochRecord], path: str | Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    loss_trace_frame(trace).to_csv(path, index=False, lineterminator="\n", float_format="%.17g")
    return path


@dataclass(eq=False)
class TrainResult:
    params: AirexParams
    norm_table: NormTable
    config: TrainConfig
    split: Split
    trace: list[EpochRecord] = field(default_factory=list)

    @property
    def sources(self) -> tuple[str, ...]:
        return self.params.cities


@dataclass(frozen=True)
class BatchLosses:
    l_f: Node
    l_m: Node
    l_a: Node
    r: Node
    total: Node


class AirexTrainer:
    """Mini-batch training over meta-pairs.

    Each batch comes from one pair and pairs take turns, so every pair sees the
    same number of batches per epoch; smaller pairs cycle reshuffled samples.
    """

    def __init__(
        self,
        dataset: Dataset,
        config: TrainConfig,
        split: Split,
        pairs: Sequence[MetaPair] | None = None,
        norm_table: NormTable | None = None,
        validation: tuple[str, Sequence[str]] | None = None,
    ) -> None:
        self.dataset = dataset
        self.config = config
        self.split = split
        self.sources = split.sources
        if pairs is None:
            pairs = (
                make_meta_pairs(self.sources)
                if len(self.sources) >= 2
                else [single_city_pair(c) for c in self.sources]
            )
        self.pairs = list(pairs)
        if not self.pairs:
            raise ConfigError("No meta-pairs to train on.")
        self.norm_table = norm_table or fit_norm_table(dataset, self.sources, split.train)
        self.scale = label_scale(self.norm_table)
        self.builder = FeatureBuilder(dataset, window=config.window, norm_table=self.norm_table)
        self.featurizer = SampleFeaturizer(self.builder, self.pairs, split)
        self.validation = validation
        self.samples = [
            make_training_samples(
                pair, dataset, split, config.window, config.stride, pair_index=i
            )
            for i, pair in enumerate(self.pairs)
        ]
        first_bundle, _ = self.featurizer.featurize(self.samples[0][0])
        shape = config.network_shape(InputDims.from_bundle(first_bundle))
        self.params = AirexParams.initialize(shape, self.sources, seed=config.seed)
        self.optimizer = make_optimizer(
            config.optimizer, self.params.parameters(), config.learning_rate
        )
        self.weights = config.loss_weights()
        self._rng = np.random.default_rng(derive_seed(config.seed, 1))
        self._warned_small_pool = False
        logger.info(
            "Training on %d meta-pairs, %d samples, %d parameters",
            len(self.pairs),
            sum(len(s) for s in self.samples),
            sum(p.value.size for p in self.params.parameters()),
        )

    def epoch_batches(self) -> list[list[TrainingSample]]:
        """Batches of one epoch, rotating across pairs."""
        size = self.config.batch_size
        longest = max(len(s) for s in self.samples)
        streams = []
        for samples in self.samples:
            order: list[int] = []
            while len(order) < longest:
                order.extend(self._rng.permutation(len(samples)).tolist())
            order = order[:longest]
            streams.append(
                [[samples[i] for i in order[j : j + size]] for j in range(0, longest, size)]
            )
        return [batch for group in zip(*streams) for batch in group]

    def batch_losses(self, batch: Sequence[TrainingSample]) -> BatchLosses:
        featurized = [self.featurizer.featurize(s) for s in batch]
        inputs = stack_bundles(
            [b for b, _ in featurized], auxiliary=[a for _, a in featurized]
        )
        labels = np.array([s.label for s in batch]) / self.scale
        result = airex_forward_batch(inputs, self.params)
        l_f = loss_final(result.y, labels)
        l_m = loss_experts(result.y_city, labels)
        auxiliary = result.auxiliary_embeddings()
        sources = result.source_embeddings()
        pooled = auxiliary is not None and auxiliary.shape[0] >= 2 and sources.shape[0] >= 2
        if self.weights.gamma and pooled:
            l_a = loss_adversarial(sources, auxiliary, self.weights.sigma)
        else:
            if self.weights.gamma and not self._warned_small_pool:
                logger.warning("Fewer than two embeddings in an MMD pool, skipping l_a for such batches.")
                self._warned_small_pool = True
            l_a = ad.constant(0.0)
        r = entropy_reg(result.beta)
        return BatchLosses(l_f, l_m, l_a, r, total_loss(l_f, l_m, l_a, r, self.weights))

    def step(self, batch: Sequence[TrainingSample], epoch: int, index: int) -> BatchLosses:
        losses = self.batch_losses(batch)
        value = losses.total.item()
        if not math.isfinite(value):
            raise DivergenceError(epoch, index, value)
        self.params.zero_grad()
        ad.backward(losses.total)
        params = self.params.parameters()
        grads = [p.grad if p.grad is not None else np.zeros_like(p.value) for p in params]
        grads, norm = clip_gradients(grads, self.config.clip_norm)
        self.optimizer.step(grads)
        logger.debug(
            "epoch %d batch %d: total=%.6f grad_norm=%.4f", epoch, index, value, norm
        )
        return losses

    def validation_rmse(self) -> float:
        if self.validation is None:
            return float("nan")
        city, stations = self.validation
        return evaluate_rmse(
            self.params,
            self.builder,
            city,
            stations,
            self.sources,
            station_subset=self.split.train,
            stride=self.config.stride,
        )

    def train(self) -> TrainResult:
        trace: list[EpochRecord] = []
        for epoch in range(1, self.config.epochs + 1):
            sums = np.zeros(5)
            batches = self.epoch_batches()
            for index, batch in enumerate(batches):
                losses = self.step(batch, epoch, index)
                sums += [
                    losses.l_f.item(),
                    losses.l_m.item(),
                    losses.l_a.item(),
                    losses.r.item(),
                    losses.total.item(),
                ]
            means = sums / max(len(batches), 1)
            record = EpochRecord(epoch, *means.tolist(), val_rmse=self.validation_rmse())
            trace.append(record)
            logger.info(
                "epoch %d/%d: l_f=%.5f l_m=%.5f l_a=%.5f r=%.5f total=%.5f val_rmse=%.4f",
                epoch,
                self.config.epochs,
                record.l_f,
                record.l_m,
                record.l_a,
                record.r,
                record.total,
                record.val_rmse,
            )
        return TrainResult(self.params, self.norm_table, self.config, self.split, trace)


def train(
    dataset: Dataset,
    config: TrainConfig,
    split: Split,
    pairs: Sequence[MetaPair] | None = None,
    validation: tuple[str, Sequence[str]] | None = None,
) -> TrainResult:
    return AirexTrainer(dataset, config, split, pairs=pairs, validation=validation).train()


@dataclass(frozen=True)
class PredictionRow:
    target: str
    lat: float
    lon: float
    t: int
    y_pred: float
    y_city: Mapping[str, float]
    beta: Mapping[str, float]
    y_true: float | None = None


def predict(
    params: AirexParams,
    builder: FeatureBuilder,
    target_city: str,
    targets: Sequence[tuple[str, GeoPoint]],
    t_ends: Iterable[int],
    station_subset: Mapping[str, Sequence[str]] | None = None,
    batch_size: int = 128,
) -> list[PredictionRow]:
    """Inferred readings for named target locations at each window end time.

    Outputs are rescaled from network units back to readings; ``y_true`` is
    filled when the target is a station with a reading at ``t``.
    """
    if builder.norm_table is None:
        raise ConfigError("Prediction needs a builder carrying the training NormTable.")
    scale = label_scale(builder.norm_table)
    sources = params.cities
    jobs = [(name, point, t) for name, point in targets for t in t_ends]
    rows: list[PredictionRow] = []
    total = len(jobs)
    last_logged_pct = -1
    for start in range(0, total, batch_size):
        chunk = jobs[start : start + batch_size]
        bundles = [
            builder.build(point, target_city, t, sources, stations=station_subset)
            for _, point, t in chunk
        ]
        result = airex_forward_batch(stack_bundles(bundles), params)
        for i, (name, point, t) in enumerate(chunk):
            truth = builder.dataset.readings_at([name], t).get(name)
            rows.append(
                PredictionRow(
                    target=name,
                    lat=point.lat,
                    lon=point.lon,
                    t=t,
                    y_pred=float(result.y.value[i]) * scale,
                    y_city={
                        c: float(result.y_city.value[i, k]) * scale
                        for k, c in enumerate(result.cities)
                    },
                    beta={c: float(result.beta.value[i, k]) for k, c in enumerate(result.cities)},
                    y_true=truth,
                )
            )
        pct = len(rows) * 100 // total
        if pct // 10 != last_logged_pct // 10:
            logger.info("Predictions: %d%% (%d/%d)", pct, len(rows), total)
            last_logged_pct = pct
    return rows


def rmse(predictions: Sequence[float], truths: Sequence[float]) -> float:
    predictions = np.asarray(predictions, dtype=np.float64)
    truths = np.asarray(truths, dtype=np.float64)
    if predictions.size == 0:
        raise DataError("Cannot compute RMSE of an empty test set.")
    if predictions.shape != truths.shape:
        raise DataError("Predictions and truths differ in length.")
    return float(np.sqrt(np.mean((predictions - truths) ** 2)))


def station_targets(dataset: Dataset, station_ids: Sequence[str]) -> list[tuple[str, GeoPoint]]:
    return [(sid, dataset.station_by_id[sid].location) for sid in station_ids]


def evaluate_rmse(
    params: AirexParams,
    builder: FeatureBuilder,
    target_city: str,
    test_stations: Sequence[str],
    sources: Sequence[str] | None = None,
    station_subset: Mapping[str, Sequence[str]] | None = None,
    stride: int = 1,
) -> float:
    """RMSE over every (test station, window end time) with complete data."""
    if not test_stations:
        raise DataError("Cannot compute RMSE of an empty test set.")
    dataset = builder.dataset
    sources = list(sources or params.cities)
    involved = set(test_stations)
    for city in sources:
        if station_subset is not None and city in station_subset:
            involved.update(station_subset[city])
        else:
            involved.update(s.station_id for s in dataset.stations_of(city))
    times = common_time_range(
        dataset, sorted(involved), sorted({target_city, *sources}), builder.window
    )
    rows = predict(
        params,
        builder,
        target_city,
        station_targets(dataset, test_stations),
        list(times[::stride]),
        station_subset=station_subset,
    )
    return rmse([r.y_pred for r in rows], [r.y_true for r in rows])


@dataclass(frozen=True)
class GridSearchResult:
    best: TrainConfig
    scores: list[tuple[TrainConfig, float]]
    validation_city: str


def grid_search(
    dataset: Dataset,
    split: Split,
    grid: Mapping[str, Sequence] | None = None,
    base: TrainConfig | None = None,
    max_trials: int | None = None,
    validation_city: str | None = None,
    seed: int = 0,
) -> GridSearchResult:
    """Train one model per grid combination with a source city held out as a
    validation target and keep the combination with the lowest RMSE there."""
    grid = dict(DEFAULT_GRID if grid is None else grid)
    if not grid or any(len(v) == 0 for v in grid.values()):
        raise ConfigError("Grid must name at least one value per parameter.")
    base = base or TrainConfig.from_settings(seed=seed)
    sources = list(split.sources)
    if len(sources) < 2:
        raise ConfigError("Grid search needs >= 2 source cities to hold one out.")
    rng = np.random.default_rng(seed)
    if validation_city is None:
        validation_city = sources[int(rng.integers(len(sources)))]
    elif validation_city not in sources:
        raise ConfigError(f"Validation city {validation_city} is not a source city.")
    remaining = [c for c in sources if c != validation_city]
    inner = Split(validation_city, {c: split.train[c] for c in remaining}, split.train[validation_city])

    keys = sorted(grid)
    combos = list(itertools.product(*(grid[k] for k in keys)))
    if max_trials is not None and max_trials < len(combos):
        picked = sorted(rng.choice(len(combos), size=max_trials, replace=False).tolist())
        combos = [combos[i] for i in picked]

    scores: list[tuple[TrainConfig, float]] = []
    for i, combo in enumerate(combos):
        config = replace(base, **dict(zip(keys, combo)), seed=derive_seed(seed, i))
        result = train(dataset, config, inner)
        builder = FeatureBuilder(dataset, window=config.window, norm_table=result.norm_table)
        score = evaluate_rmse(
            result.params,
            builder,
            validation_city,
            inner.test,
            station_subset=inner.train,
            stride=config.stride,
        )
        logger.info("Grid trial %d/%d %s: validation RMSE %.4f", i + 1, len(combos), combo, score)
        scores.append((config, score))
    best = min(scores, key=lambda item: item[1])[0]
    return GridSearchResult(best, scores, validation_city)

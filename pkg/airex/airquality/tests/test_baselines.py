import math

import numpy as np
from django.test import SimpleTestCase
from hypothesis import given, settings
from hypothesis import strategies as st

from airex.airquality import autodiff as ad
from airex.airquality.baselines import (
    FnnConfig,
    FnnParams,
    KnnConfig,
    fnn_forward,
    fnn_infer,
    fnn_rmse,
    fnn_train,
    knn_infer,
    knn_rmse,
    nearest_source_cities,
    train_fnn_baseline,
    train_single_source,
)
from airex.airquality.data.schema import Station
from airex.airquality.exceptions import ConfigError, DataError, ShapeError
from airex.airquality.features import FeatureBuilder
from airex.airquality.geo import haversine_distance, offset_point
from airex.airquality.training import Split, predict, split_train_test, station_targets
from airex.airquality.tests.factories import BEIJING, make_dataset, three_city_dataset, toy_config


def stations_east(*km: float) -> list[Station]:
    return [Station(f"S{i}", "A", offset_point(BEIJING, d, 0.0)) for i, d in enumerate(km)]


class KnnTest(SimpleTestCase):
    def test_nearest_station(self) -> None:
        stations = stations_east(5.0, 1.0, 9.0)
        readings = {"S0": 50.0, "S1": 10.0, "S2": 90.0}
        self.assertEqual(knn_infer(BEIJING, stations, readings, KnnConfig(k=1)), 10.0)

    def test_mean_of_three(self) -> None:
        stations = stations_east(1.0, 2.0, 3.0, 40.0)
        readings = {"S0": 10.0, "S1": 20.0, "S2": 30.0, "S3": 1000.0}
        self.assertEqual(knn_infer(BEIJING, stations, readings, KnnConfig(k=3)), 20.0)

    def test_stations_without_readings_are_skipped(self) -> None:
        stations = stations_east(1.0, 2.0)
        self.assertEqual(knn_infer(BEIJING, stations, {"S1": 7.0}, KnnConfig(k=1)), 7.0)

    def test_too_few_stations(self) -> None:
        with self.assertRaises(DataError):
            knn_infer(BEIJING, stations_east(1.0), {"S0": 1.0}, KnnConfig(k=2))
        with self.assertRaises(ConfigError):
            KnnConfig(k=0)

    @settings(max_examples=50, deadline=None)
    @given(
        st.lists(st.integers(100, 200_000), min_size=1, max_size=12, unique=True),
        st.integers(1, 12),
        st.integers(0, 2**32 - 1),
    )
    def test_matches_full_sort(self, metres, k, seed) -> None:
        k = min(k, len(metres))
        stations = stations_east(*(m / 1000 for m in metres))
        values = np.random.default_rng(seed).uniform(0, 300, len(stations))
        readings = {s.station_id: float(v) for s, v in zip(stations, values)}
        ranked = sorted(stations, key=lambda s: haversine_distance(BEIJING, s.location))
        expected = float(np.mean([readings[s.station_id] for s in ranked[:k]]))
        self.assertAlmostEqual(knn_infer(BEIJING, stations, readings, KnnConfig(k)), expected, places=9)

    def test_rmse_with_every_training_station(self) -> None:
        dataset = three_city_dataset()
        split = split_train_test(dataset, "C", per_city=3, seed=0)
        # the mean of all training readings is 27 + t/2; station s of C reads 40 + 2s + t/2
        expected = math.sqrt((13**2 + 15**2 + 17**2) / 3)
        self.assertAlmostEqual(knn_rmse(dataset, split, KnnConfig(k=6)), expected, places=9)

    def test_reading_copied_from_a_station_one_metre_away(self) -> None:
        noise_std = 3.0
        noisy = 50.0 + np.random.default_rng(4).normal(0.0, noise_std, 24)
        layout = {
            "A": [offset_point(BEIJING, 0.001, 0.0), offset_point(BEIJING, 15.0, 0.0)],
            "C": [BEIJING],
        }
        dataset = make_dataset(
            layout, hours=24, reading=lambda c, s, t: float(noisy[t]) + (25.0 if s == 1 else 0.0)
        )
        split = Split("C", {"A": ("AS01", "AS02")}, ("CS01",))
        error = knn_rmse(dataset, split, KnnConfig(k=1))
        self.assertLess(error, noise_std)
        self.assertEqual(error, 0.0)


class FnnTest(SimpleTestCase):
    def test_zero_weights_give_output_bias(self) -> None:
        params = FnnParams.initialize(4, FnnConfig(hidden=(3, 2)))
        for node in params.parameters():
            node.value = np.zeros_like(node.value)
        params.b_out.value = np.array([1.75])
        x = np.random.default_rng(0).normal(size=(5, 4))
        np.testing.assert_array_equal(fnn_infer(params, x), np.full(5, 1.75))

    def test_wrong_width(self) -> None:
        params = FnnParams.initialize(4, FnnConfig(hidden=(3,)))
        with self.assertRaises(ShapeError):
            fnn_forward(ad.constant(np.ones((2, 5))), params)

    def test_gradient(self) -> None:
        params = FnnParams.initialize(3, FnnConfig(hidden=(4, 3), seed=1))
        rng = np.random.default_rng(2)
        x, y = rng.normal(size=(6, 3)), rng.normal(size=6)

        def loss():
            return ad.mean(ad.square(fnn_forward(ad.constant(x), params) - ad.constant(y)))

        self.assertLess(ad.finite_diff_check(loss, params.parameters()), 1e-4)

    def test_training_fits_a_line(self) -> None:
        rng = np.random.default_rng(3)
        x = rng.uniform(0, 1, size=(64, 2))
        y = 0.5 * x[:, 0] - 0.25 * x[:, 1] + 0.3
        cfg = FnnConfig(hidden=(8,), epochs=150, batch_size=16, learning_rate=0.01)
        params, history = fnn_train(x, y, cfg)
        self.assertEqual(len(history), 150)
        self.assertLess(history[-1], history[0])
        self.assertLess(float(np.mean((fnn_infer(params, x) - y) ** 2)), float(np.var(y)))

    def test_empty_training_set(self) -> None:
        with self.assertRaises(DataError):
            fnn_train(np.zeros((0, 3)), np.zeros(0), FnnConfig(hidden=(2,)))

    def test_baseline_on_toy(self) -> None:
        dataset = three_city_dataset()
        split = split_train_test(dataset, "C", per_city=3, seed=0)
        config = toy_config(epochs=2)
        model = train_fnn_baseline(dataset, config, split, FnnConfig(hidden=(4,), epochs=2, batch_size=8))
        self.assertEqual(model.layout.cities, ("A", "B"))
        self.assertTrue(math.isfinite(fnn_rmse(model, dataset, split, stride=config.stride)))


class SingleSourceTest(SimpleTestCase):
    def test_one_expert_and_unit_beta(self) -> None:
        dataset = three_city_dataset()
        split = split_train_test(dataset, "C", per_city=3, seed=0)
        result = train_single_source(dataset, toy_config(epochs=1), split, "A")
        self.assertEqual(result.params.cities, ("A",))
        self.assertEqual(result.config.lambda_, 1.0)
        self.assertEqual(result.config.gamma, 0.0)
        self.assertEqual(result.split.sources, ("A",))
        builder = FeatureBuilder(dataset, window=3, norm_table=result.norm_table)
        rows = predict(result.params, builder, "C", station_targets(dataset, split.test), [4])
        for row in rows:
            self.assertEqual(row.beta, {"A": 1.0})
            self.assertEqual(row.y_pred, row.y_city["A"])

    def test_nearest_source_cities(self) -> None:
        layout = {
            "T": [offset_point(BEIJING, 0, 0)],
            "FAR": [offset_point(BEIJING, 300, 0)],
            "NEAR": [offset_point(BEIJING, 0, 40)],
            "MID": [offset_point(BEIJING, -120, 0)],
        }
        dataset = make_dataset(layout, hours=1)
        sources = ["FAR", "NEAR", "MID"]
        self.assertEqual(nearest_source_cities(dataset, "T", sources, 2), ["NEAR", "MID"])
        self.assertEqual(nearest_source_cities(dataset, "T", sources, 5), ["NEAR", "MID", "FAR"])
        with self.assertRaises(ConfigError):
            nearest_source_cities(dataset, "T", sources, 0)

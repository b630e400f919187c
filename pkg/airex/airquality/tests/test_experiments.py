import math
import os
from unittest import skipUnless

import numpy as np
from django.test import SimpleTestCase

from airex.airquality.baselines import FnnConfig, KnnConfig, train_single_source
from airex.airquality.data import SynthConfig, generate_synthetic
from airex.airquality.exceptions import ConfigError
from airex.airquality.experiments import MEAN_REPEAT, REPORT_COLUMNS, run_evaluation
from airex.airquality.geo import offset_point
from airex.airquality.tests.factories import (
    BAODING,
    BEIJING,
    TIANJIN,
    make_dataset,
    three_city_dataset,
    toy_config,
)
from airex.airquality.training import TrainConfig, split_train_test

TINY_FNN = FnnConfig(hidden=(4,), epochs=1, batch_size=8)


class RunEvaluationTest(SimpleTestCase):
    @classmethod
    def setUpClass(cls) -> None:
        super().setUpClass()
        cls.dataset = three_city_dataset()
        cls.report = run_evaluation(
            cls.dataset,
            "C",
            toy_config(epochs=1),
            repeats=2,
            knn=KnnConfig(k=2),
            fnn=TINY_FNN,
        )

    def test_rows(self) -> None:
        report = self.report
        self.assertEqual(list(report.columns), REPORT_COLUMNS)
        per_repeat = report[report["repeat"] != MEAN_REPEAT]
        self.assertEqual(per_repeat["repeat"].tolist(), [0] * 5 + [1] * 5)
        self.assertEqual(
            per_repeat["method"].tolist()[:5], ["AIREX", "KNN", "FNN", "single", "single"]
        )
        self.assertEqual(len(report), 15)
        for value in report["rmse"]:
            self.assertTrue(math.isfinite(value))

    def test_mean_rows_average_the_repeats(self) -> None:
        report = self.report
        per_repeat = report[report["repeat"] != MEAN_REPEAT]
        means = report[report["repeat"] == MEAN_REPEAT].reset_index(drop=True)
        self.assertEqual(
            list(zip(means["method"], means["source_city"])),
            [("AIREX", ""), ("KNN", ""), ("FNN", ""), ("single", "A"), ("single", "B")],
        )
        for row in means.itertuples(index=False):
            runs = per_repeat[
                (per_repeat["method"] == row.method) & (per_repeat["source_city"] == row.source_city)
            ]
            self.assertAlmostEqual(row.rmse, runs["rmse"].mean(), places=12)

    def test_single_source_distances(self) -> None:
        singles = self.report[
            (self.report["method"] == "single") & (self.report["repeat"] == MEAN_REPEAT)
        ].set_index("source_city")
        # Baoding lies a little closer to Beijing than to Tianjin
        self.assertLess(singles.loc["A", "distance_km"], singles.loc["B", "distance_km"])
        self.assertTrue(130 < singles.loc["A", "distance_km"] < 160)


class EvaluationOptionsTest(SimpleTestCase):
    def test_nearest_sources(self) -> None:
        report = run_evaluation(
            three_city_dataset(),
            "C",
            toy_config(epochs=0),
            nearest_sources=1,
            knn=KnnConfig(k=2),
            fnn=TINY_FNN,
            single_source=False,
        )
        rows = report[report["repeat"] != MEAN_REPEAT].set_index("method")
        self.assertEqual(rows.loc["AIREX", "sources"], "A")
        self.assertEqual(rows.loc["FNN", "sources"], "A")
        self.assertEqual(rows.loc["KNN", "sources"], "A B")
        self.assertNotIn("single", rows.index)

    def test_same_seed_same_report(self) -> None:
        def evaluate():
            return run_evaluation(
                three_city_dataset(),
                "C",
                toy_config(epochs=1, seed=3),
                knn=KnnConfig(k=2),
                fnn=TINY_FNN,
                single_source=False,
            )

        self.assertTrue(evaluate().equals(evaluate()))

    def test_invalid_repeats(self) -> None:
        with self.assertRaises(ConfigError):
            run_evaluation(three_city_dataset(), "C", toy_config(), repeats=0)

    def test_single_station_source_city_is_skipped(self) -> None:
        layout = {
            "A": [offset_point(BEIJING, 2.0 * s, 1.0 * (s % 2)) for s in range(3)],
            "B": [TIANJIN],
            "C": [offset_point(BAODING, 2.0 * s, 1.0 * (s % 2)) for s in range(3)],
        }
        dataset = make_dataset(layout, hours=12)
        config = toy_config(epochs=1)
        split = split_train_test(dataset, "C", per_city=config.stations_per_city, seed=0)
        with self.assertRaisesMessage(ConfigError, "needs at least 2 training stations"):
            train_single_source(dataset, config, split, "B")

        with self.assertLogs("airex.airquality.experiments", "WARNING") as logs:
            report = run_evaluation(dataset, "C", config, knn=KnnConfig(k=2), fnn=TINY_FNN)
        self.assertIn("skipping single-source model of B", "\n".join(logs.output))
        singles = report[report["method"] == "single"]
        self.assertEqual(set(singles["source_city"]), {"A"})
        for value in report["rmse"]:
            self.assertTrue(math.isfinite(value))


@skipUnless(os.environ.get("AIREX_SLOW_TESTS"), "set AIREX_SLOW_TESTS=1 to run transfer checks")
class TransferQualityTest(SimpleTestCase):
    """Held-out northern city of a six-city synthetic dataset, three seeds."""

    def test_airex_not_worse_than_single_source_or_fnn(self) -> None:
        dataset = generate_synthetic(
            SynthConfig(n_cities=6, stations_per_city=5, hours=160, window=6, seed=11)
        )
        airex, best_single, fnn = [], [], []
        for seed in range(3):
            config = TrainConfig(
                epochs=25,
                batch_size=16,
                learning_rate=0.01,
                window=6,
                lstm_hidden=8,
                lstm_layers=1,
                basic_widths=(8,),
                fusion_widths=(8,),
                attention_hidden=8,
                expert_hidden=8,
                stations_per_city=4,
                stride=2,
                seed=seed,
            )
            report = run_evaluation(
                dataset,
                "C01",
                config,
                fnn=FnnConfig(hidden=(16, 16), epochs=25, batch_size=16, learning_rate=0.01),
            )
            rows = report[report["repeat"] != MEAN_REPEAT]
            airex.append(rows[rows["method"] == "AIREX"]["rmse"].iloc[0])
            fnn.append(rows[rows["method"] == "FNN"]["rmse"].iloc[0])
            best_single.append(rows[rows["method"] == "single"]["rmse"].min())
        self.assertLessEqual(np.mean(airex), np.mean(best_single))
        self.assertLessEqual(np.mean(airex), np.mean(fnn))

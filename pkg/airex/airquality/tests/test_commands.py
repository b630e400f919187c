import json
import tempfile
from io import StringIO
from pathlib import Path
from unittest.mock import patch

import pandas as pd
from django.core.management import call_command
from django.db import DatabaseError
from django.test import TestCase

from airex.airquality.checkpoint import load_checkpoint
from airex.airquality.data import save_dataset
from airex.airquality.models import ExperimentRun
from airex.airquality.tests.factories import toy_synthetic

TOY_TRAIN_OPTIONS = dict(
    epochs=2,
    batch_size=8,
    lr=0.01,
    window=3,
    stations_per_city=3,
    lstm_hidden=3,
    lstm_layers=1,
    basic_widths=(3,),
    fusion_widths=(4,),
    attention_hidden=3,
    expert_hidden=3,
    stride=4,
)


class CommandTestCase(TestCase):
    def setUp(self) -> None:
        tmp = tempfile.TemporaryDirectory()
        self.addCleanup(tmp.cleanup)
        self.root = Path(tmp.name)
        self.data_dir = self.root / "data"
        save_dataset(toy_synthetic(), self.data_dir)

    def call(self, name: str, *args, **options) -> str:
        stdout = StringIO()
        call_command(name, *args, stdout=stdout, stderr=StringIO(), **options)
        return stdout.getvalue()

    def train(self, out: str, **overrides) -> Path:
        options = dict(TOY_TRAIN_OPTIONS, **overrides)
        self.call(
            "train",
            data_dir=str(self.data_dir),
            target_city="C03",
            out=str(self.root / out),
            seed=0,
            **options,
        )
        return self.root / out


class GenDataCommandTest(CommandTestCase):
    def test_writes_dataset_and_manifest(self) -> None:
        out = self.root / "generated"
        stdout = self.call(
            "gen_data", out=str(out), n_cities=3, stations_per_city=2, hours=30, window=3, seed=4
        )
        self.assertIn("Generated 3 cities, 6 stations, 180 readings.", stdout)
        for name in ("cities.csv", "stations.csv", "air_quality.csv", "meteo.csv", "poi.csv", "roads.csv"):
            self.assertTrue((out / name).exists(), name)
        manifest = json.loads((out / "manifest.json").read_text())
        self.assertEqual(manifest["format"], "airex-run-manifest")
        self.assertEqual(manifest["command"], "gen_data")
        self.assertEqual(manifest["seed"], 4)
        self.assertNotIn("verbosity", manifest["options"])
        self.assertNotIn("stdout", manifest["options"])

        run = ExperimentRun.objects.get(command="gen_data")
        self.assertEqual(run.status, ExperimentRun.Status.SUCCEEDED)
        self.assertEqual(run.results["stations"], 6)
        self.assertIsNotNone(run.finished_at)

    def test_verbose_prints_statistics(self) -> None:
        stdout = self.call(
            "gen_data", out=str(self.root / "g"), n_cities=2, hours=30, window=3, verbosity=2
        )
        self.assertIn("# of stations", stdout)

    def test_ledger_outage_does_not_fail_the_run(self) -> None:
        with patch.object(ExperimentRun.objects, "create", side_effect=DatabaseError("locked")):
            self.call("gen_data", out=str(self.root / "g"), n_cities=2, hours=30, window=3)
        self.assertTrue((self.root / "g" / "cities.csv").exists())
        self.assertFalse(ExperimentRun.objects.exists())


class DatasetStatsCommandTest(CommandTestCase):
    def test_stats_file(self) -> None:
        out = self.root / "stats"
        stdout = self.call("dataset_stats", data_dir=str(self.data_dir), out=str(out))
        table = pd.read_csv(out / "stats.csv")
        self.assertEqual(table["city_id"].tolist(), ["C01", "C02", "C03"])
        self.assertEqual(table["stations"].tolist(), [3, 3, 3])
        self.assertIn("Variance", stdout)

    def test_missing_data_dir_exits_with_error(self) -> None:
        stderr = StringIO()
        with self.assertRaises(SystemExit) as ctx:
            call_command(
                "dataset_stats",
                data_dir=str(self.root / "nowhere"),
                out=str(self.root / "stats"),
                stdout=StringIO(),
                stderr=stderr,
            )
        self.assertEqual(ctx.exception.code, 1)
        self.assertIn("file not found", stderr.getvalue())
        run = ExperimentRun.objects.get(command="dataset_stats")
        self.assertEqual(run.status, ExperimentRun.Status.FAILED)
        self.assertIn("file not found", run.results["error"])


class TrainCommandTest(CommandTestCase):
    def test_outputs(self) -> None:
        out = self.train("run")
        trace = pd.read_csv(out / "loss_trace.csv")
        self.assertEqual(trace["epoch"].tolist(), [1, 2])
        split = json.loads((out / "split.json").read_text())
        self.assertEqual(split["target_city"], "C03")
        self.assertEqual(sorted(split["train"]), ["C01", "C02"])
        checkpoint = load_checkpoint(out / "checkpoint.json")
        self.assertEqual(checkpoint.params.cities, ("C01", "C02"))
        self.assertEqual(checkpoint.config["train"]["epochs"], 2)
        self.assertEqual(checkpoint.config["split"], split)

    def test_same_seed_same_trace(self) -> None:
        first = self.train("first")
        second = self.train("second")
        self.assertEqual(
            (first / "loss_trace.csv").read_text(), (second / "loss_trace.csv").read_text()
        )

    def test_unknown_target_city(self) -> None:
        with self.assertRaises(SystemExit):
            self.call(
                "train",
                data_dir=str(self.data_dir),
                target_city="C99",
                out=str(self.root / "bad"),
                **TOY_TRAIN_OPTIONS,
            )


class InferCommandTest(CommandTestCase):
    def setUp(self) -> None:
        super().setUp()
        self.checkpoint = self.train("model") / "checkpoint.json"

    def infer(self, out: str, **options) -> pd.DataFrame:
        self.call(
            "infer",
            data_dir=str(self.data_dir),
            checkpoint=str(self.checkpoint),
            target_city="C03",
            out=str(self.root / out),
            **options,
        )
        return pd.read_csv(self.root / out / "predictions.csv")

    def test_station_predictions(self) -> None:
        frame = self.infer("pred", t_start=10, t_end=12)
        self.assertEqual(len(frame), 3 * 3)
        self.assertEqual(
            list(frame.columns),
            ["target", "lat", "lon", "t", "y_pred", "y_true", "y_C01", "y_C02", "beta_C01", "beta_C02"],
        )
        beta_sum = frame["beta_C01"] + frame["beta_C02"]
        self.assertTrue(((beta_sum - 1.0).abs() < 1e-12).all())
        self.assertFalse(frame["y_true"].isna().any())
        mixed = frame["beta_C01"] * frame["y_C01"] + frame["beta_C02"] * frame["y_C02"]
        self.assertTrue(((mixed - frame["y_pred"]).abs() < 1e-9).all())

    def test_coordinate(self) -> None:
        city = toy_synthetic().city_location("C03")
        frame = self.infer("coord", lat=city.lat, lon=city.lon, t_start=5, t_end=5)
        self.assertEqual(frame["target"].tolist(), ["coordinate"])
        self.assertTrue(frame["y_true"].isna().all())

    def test_lat_without_lon(self) -> None:
        with self.assertRaises(SystemExit):
            self.infer("half", lat=39.9)


class EvaluateCommandTest(CommandTestCase):
    def test_report(self) -> None:
        out = self.root / "eval"
        self.call(
            "evaluate",
            data_dir=str(self.data_dir),
            target_city="C03",
            out=str(out),
            repeats=1,
            knn_k=2,
            **dict(TOY_TRAIN_OPTIONS, epochs=1),
        )
        report = pd.read_csv(out / "report.csv", keep_default_na=False)
        self.assertEqual(list(report.columns), ["repeat", "method", "source_city", "distance_km", "sources", "rmse"])
        per_repeat = report[report["repeat"] != "mean"]
        self.assertEqual(per_repeat["method"].tolist(), ["AIREX", "KNN", "FNN", "single", "single"])
        self.assertEqual(per_repeat["source_city"].tolist()[-2:], ["C01", "C02"])
        self.assertEqual(len(report), 10)
        run = ExperimentRun.objects.get(command="evaluate")
        self.assertIn("AIREX", run.results["mean_rmse"])
        self.assertIn("single:C01", run.results["mean_rmse"])


class FeaturesCommandTest(CommandTestCase):
    def test_raw_features(self) -> None:
        out = self.root / "features"
        location = toy_synthetic().city_location("C03")
        self.call(
            "features",
            data_dir=str(self.data_dir),
            target_city="C03",
            lat=location.lat,
            lon=location.lon,
            t=6,
            window=3,
            out=str(out),
        )
        frame = pd.read_csv(out / "features.csv")
        self.assertEqual(
            set(frame["group"]),
            {"target_static", "target_series", "city", "station_static", "station_series"},
        )
        series = frame[frame["group"] == "target_series"]
        self.assertEqual(sorted(series["step"].unique().tolist()), [0, 1, 2])
        self.assertEqual(set(frame.loc[frame["group"] == "city", "owner"]), {"C01", "C02"})

    def test_normalized_with_checkpoint(self) -> None:
        checkpoint = self.train("model") / "checkpoint.json"
        out = self.root / "features"
        location = toy_synthetic().city_location("C01")
        self.call(
            "features",
            data_dir=str(self.data_dir),
            target_city="C03",
            lat=location.lat,
            lon=location.lon,
            t=6,
            checkpoint=str(checkpoint),
            out=str(out),
        )
        frame = pd.read_csv(out / "features.csv")
        stations = set(frame.loc[frame["group"] == "station_static", "owner"])
        split = load_checkpoint(checkpoint).config["split"]["train"]
        self.assertEqual(stations, set(split["C01"]) | set(split["C02"]))


class ReplayCommandTest(CommandTestCase):
    def test_replay_reproduces_training(self) -> None:
        original = self.train("original")
        self.call("replay", str(original / "manifest.json"), out=str(self.root / "again"))
        self.assertEqual(
            (original / "loss_trace.csv").read_text(),
            (self.root / "again" / "loss_trace.csv").read_text(),
        )
        replayed = json.loads((self.root / "again" / "manifest.json").read_text())
        self.assertEqual(replayed["options"]["out"], str(self.root / "again"))
        self.assertEqual(ExperimentRun.objects.filter(command="train").count(), 2)

    def test_bad_manifest(self) -> None:
        path = self.root / "manifest.json"
        path.write_text('{"format": "other"}', encoding="utf-8")
        with self.assertRaises(SystemExit):
            self.call("replay", str(path))

"""Shared flags and run bookkeeping for the air-quality management commands."""

from __future__ import annotations

import logging
import sys
from collections.abc import Sequence
from pathlib import Path

from django.core.management.base import BaseCommand

from airex.airquality.data.loader import load_dataset
from airex.airquality.data.schema import Dataset
from airex.airquality.exceptions import AirexError
from airex.airquality.manifest import (
    MANIFEST_NAME,
    RunManifest,
    finish_run,
    results_summary,
    start_run,
)
from airex.airquality.models import ExperimentRun
from airex.airquality.training import TrainConfig

logger = logging.getLogger(__name__)


def _widths(value: str) -> tuple[int, ...]:
    return tuple(int(w) for w in value.split(",") if w.strip())


def add_data_arguments(parser) -> None:
    parser.add_argument(
        "--data-dir",
        required=True,
        help="Directory with cities.csv, stations.csv, air_quality.csv, meteo.csv, poi.csv, roads.csv.",
    )


def add_city_arguments(parser) -> None:
    parser.add_argument(
        "--target-city",
        required=True,
        help="City treated as unmonitored.",
    )
    parser.add_argument(
        "--source-cities",
        nargs="*",
        default=None,
        metavar="CITY",
        help="Monitored cities to learn from (default: every other city).",
    )


def add_seed_argument(parser) -> None:
    parser.add_argument(
        "--seed",
        type=int,
        default=0,
        help="Master seed; every random choice of the run derives from it (default 0).",
    )


def add_train_arguments(parser) -> None:
    """Hyper-parameter flags. Unset flags fall back to settings.AIREX."""
    parser.add_argument("--epochs", type=int, default=None)
    parser.add_argument("--batch-size", type=int, default=None)
    parser.add_argument("--lr", type=float, default=None, help="Learning rate.")
    parser.add_argument(
        "--lambda",
        dest="lambda_",
        type=float,
        default=None,
        help="Weight of the mixture loss against the per-expert loss, in [0, 1].",
    )
    parser.add_argument("--gamma", type=float, default=None, help="Weight of the MMD loss.")
    parser.add_argument("--zeta", type=float, default=None, help="Weight of the beta regularizer.")
    parser.add_argument(
        "--sigma",
        type=float,
        default=None,
        help="MMD kernel bandwidth (default: median heuristic per batch).",
    )
    parser.add_argument("--window", type=int, default=None, help="Hours per input window.")
    parser.add_argument("--stations-per-city", type=int, default=None)
    parser.add_argument("--lstm-hidden", type=int, default=None)
    parser.add_argument("--lstm-layers", type=int, default=None)
    parser.add_argument(
        "--basic-widths", type=_widths, default=None, help="Comma-separated widths, e.g. 100."
    )
    parser.add_argument(
        "--fusion-widths", type=_widths, default=None, help="Comma-separated widths, e.g. 200,200."
    )
    parser.add_argument("--attention-hidden", type=int, default=None)
    parser.add_argument("--expert-hidden", type=int, default=None)
    parser.add_argument("--optimizer", choices=["adam", "sgd"], default=None)
    parser.add_argument(
        "--stride",
        type=int,
        default=None,
        help="Use every n-th window end time for samples and evaluation (default 1).",
    )


TRAIN_OPTIONS = {
    "epochs": "epochs",
    "batch_size": "batch_size",
    "lr": "learning_rate",
    "lambda_": "lambda_",
    "gamma": "gamma",
    "zeta": "zeta",
    "sigma": "sigma",
    "window": "window",
    "stations_per_city": "stations_per_city",
    "lstm_hidden": "lstm_hidden",
    "lstm_layers": "lstm_layers",
    "basic_widths": "basic_widths",
    "fusion_widths": "fusion_widths",
    "attention_hidden": "attention_hidden",
    "expert_hidden": "expert_hidden",
    "optimizer": "optimizer",
    "stride": "stride",
    "seed": "seed",
}


def train_config_from_options(options: dict) -> TrainConfig:
    overrides = {field: options.get(flag) for flag, field in TRAIN_OPTIONS.items()}
    return TrainConfig.from_settings(**overrides)


def source_cities(dataset: Dataset, options: dict) -> list[str]:
    target = options["target_city"]
    sources = options.get("source_cities")
    if not sources:
        return [c for c in dataset.city_ids() if c != target]
    return list(sources)


def json_options(options: dict) -> dict:
    """Options as plain JSON values (tuples become lists)."""
    return {
        k: list(v) if isinstance(v, tuple) else v for k, v in options.items()
    }


class AirexCommand(BaseCommand):
    """Base for commands writing a run manifest and a ledger row.

    Subclasses implement ``run`` returning a results dict and name the files
    they write in ``output_names``; the manifest lands in ``--out`` first.
    """

    output_names: Sequence[str] = ()

    def add_arguments(self, parser):
        parser.add_argument(
            "--out",
            required=True,
            help="Output directory; receives manifest.json and the command's files.",
        )
        self.add_command_arguments(parser)

    def add_command_arguments(self, parser) -> None:
        pass

    @property
    def command_name(self) -> str:
        return self.__module__.rsplit(".", 1)[-1]

    def input_paths(self, options: dict) -> list[str]:
        return [options[k] for k in ("data_dir", "checkpoint") if options.get(k)]

    def load(self, options: dict) -> Dataset:
        return load_dataset(options["data_dir"])

    def run(self, options: dict, out_dir: Path) -> dict:
        raise NotImplementedError

    def summary(self, results: dict) -> str:
        return f"{self.command_name}: done."

    def handle(self, *args, **options):
        out_dir = Path(options["out"])
        manifest = RunManifest.create(
            self.command_name,
            json_options(options),
            inputs=self.input_paths(options),
            outputs=[str(out_dir / name) for name in self.output_names],
        )
        try:
            manifest_path = manifest.write(out_dir / MANIFEST_NAME)
        except OSError as err:
            self.stderr.write(self.style.ERROR(f"Cannot write to {out_dir}: {err}"))
            sys.exit(1)
        logger.debug("Wrote %s", manifest_path)
        run = start_run(manifest, manifest_path)

        try:
            results = self.run(options, out_dir)
        except AirexError as err:
            finish_run(run, ExperimentRun.Status.FAILED, {"error": str(err)})
            self.stderr.write(self.style.ERROR(str(err)))
            sys.exit(1)
        except Exception as err:
            finish_run(run, ExperimentRun.Status.FAILED, {"error": repr(err)})
            raise
        finish_run(run, ExperimentRun.Status.SUCCEEDED, results_summary(results))
        self.stdout.write(self.style.SUCCESS(self.summary(results)))

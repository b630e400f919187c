from pathlib import Path

from airex.airquality.baselines import KnnConfig
from airex.airquality.experiments import MEAN_REPEAT, run_evaluation
from airex.airquality.management.base import (
    AirexCommand,
    add_city_arguments,
    add_data_arguments,
    add_seed_argument,
    add_train_arguments,
    train_config_from_options,
)

REPORT_FILE = "report.csv"


class Command(AirexCommand):
    help = (
        "Compare AIREX with KNN, an FNN and one single-source model per source "
        "city on a held-out target city. Repeats the station sampling "
        "--repeats times and reports per-repeat and mean RMSE."
    )
    output_names = (REPORT_FILE,)

    def add_command_arguments(self, parser):
        add_data_arguments(parser)
        add_city_arguments(parser)
        add_seed_argument(parser)
        add_train_arguments(parser)
        parser.add_argument("--repeats", type=int, default=3)
        parser.add_argument(
            "--nearest-sources",
            type=int,
            default=None,
            help="Train AIREX and FNN on the n source cities closest to the target.",
        )
        parser.add_argument("--knn-k", type=int, default=None)
        parser.add_argument(
            "--no-single-source",
            action="store_true",
            help="Skip the per-city single-source models.",
        )

    def run(self, options: dict, out_dir: Path) -> dict:
        dataset = self.load(options)
        config = train_config_from_options(options)
        knn = KnnConfig(options["knn_k"]) if options["knn_k"] else KnnConfig.from_settings()
        report = run_evaluation(
            dataset,
            options["target_city"],
            config,
            sources=options["source_cities"] or None,
            repeats=options["repeats"],
            nearest_sources=options["nearest_sources"],
            knn=knn,
            single_source=not options["no_single_source"],
        )
        report.to_csv(
            out_dir / REPORT_FILE, index=False, lineterminator="\n", float_format="%.17g"
        )
        self.stdout.write(report.to_string(index=False))
        means = report[report["repeat"] == MEAN_REPEAT]
        return {
            "rows": len(report),
            "mean_rmse": {
                f"{r.method}:{r.source_city}" if r.source_city else r.method: r.rmse
                for r in means.itertuples(index=False)
            },
        }

    def summary(self, results: dict) -> str:
        airex = results["mean_rmse"].get("AIREX")
        return f"Wrote {results['rows']} report rows; AIREX mean RMSE {airex:.4f}."

from pathlib import Path

from airex.airquality.data.stats import dataset_stats, format_stats
from airex.airquality.management.base import AirexCommand, add_data_arguments

STATS_FILE = "stats.csv"


class Command(AirexCommand):
    help = (
        "Per-city statistics of a dataset: station count, reading count and "
        "the PM2.5 range, average and population variance."
    )
    output_names = (STATS_FILE,)

    def add_command_arguments(self, parser):
        add_data_arguments(parser)

    def run(self, options: dict, out_dir: Path) -> dict:
        table = dataset_stats(self.load(options))
        table.to_csv(out_dir / STATS_FILE, index=False, lineterminator="\n")
        self.stdout.write(format_stats(table))
        return {"cities": len(table)}

    def summary(self, results: dict) -> str:
        return f"Wrote statistics of {results['cities']} cities."

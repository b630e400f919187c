from pathlib import Path

from airex.airquality.data.loader import CSV_SCHEMAS, save_dataset
from airex.airquality.data.stats import dataset_stats, format_stats
from airex.airquality.data.synthetic import SynthConfig, generate_synthetic
from airex.airquality.management.base import AirexCommand, add_seed_argument


class Command(AirexCommand):
    help = (
        "Generate a seeded synthetic multi-city dataset: two regional clusters "
        "of cities with a pollution gap between them, spatially correlated "
        "stations, city-level meteorology, PoIs and roads."
    )
    output_names = tuple(CSV_SCHEMAS)

    def add_command_arguments(self, parser):
        add_seed_argument(parser)
        parser.add_argument("--n-cities", type=int, default=6)
        parser.add_argument("--stations-per-city", type=int, default=5)
        parser.add_argument("--hours", type=int, default=240)
        parser.add_argument(
            "--regional-shift",
            type=float,
            default=SynthConfig.regional_shift,
            help="Gap in mean PM2.5 between the northern and southern cluster.",
        )
        parser.add_argument("--noise-std", type=float, default=SynthConfig.noise_std)
        parser.add_argument(
            "--correlation-length-km",
            type=float,
            default=SynthConfig.correlation_length_km,
        )
        parser.add_argument(
            "--window",
            type=int,
            default=SynthConfig.window,
            help="Smallest window the data must support (hours >= window).",
        )

    def input_paths(self, options: dict) -> list[str]:
        return []

    def run(self, options: dict, out_dir: Path) -> dict:
        cfg = SynthConfig(
            n_cities=options["n_cities"],
            stations_per_city=options["stations_per_city"],
            hours=options["hours"],
            regional_shift=options["regional_shift"],
            noise_std=options["noise_std"],
            correlation_length_km=options["correlation_length_km"],
            window=options["window"],
            seed=options["seed"],
        )
        dataset = generate_synthetic(cfg)
        save_dataset(dataset, out_dir)
        if options["verbosity"] > 1:
            self.stdout.write(format_stats(dataset_stats(dataset)))
        return {
            "cities": len(dataset.cities),
            "stations": len(dataset.stations),
            "readings": len(dataset.air_quality),
        }

    def summary(self, results: dict) -> str:
        return (
            f"Generated {results['cities']} cities, {results['stations']} stations, "
            f"{results['readings']} readings."
        )

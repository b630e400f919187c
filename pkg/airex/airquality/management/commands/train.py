import json
from pathlib import Path

from airex.airquality.checkpoint import Checkpoint, save_checkpoint
from airex.airquality.management.base import (
    AirexCommand,
    add_city_arguments,
    add_data_arguments,
    add_seed_argument,
    add_train_arguments,
    source_cities,
    train_config_from_options,
)
from airex.airquality.training import (
    grid_search,
    split_train_test,
    train,
    write_loss_trace,
)

CHECKPOINT_FILE = "checkpoint.json"
TRACE_FILE = "loss_trace.csv"
SPLIT_FILE = "split.json"


class Command(AirexCommand):
    help = (
        "Train the mixture-of-experts model: sample train/test stations, build "
        "one meta-pair per source city and train. Writes a checkpoint, the "
        "per-epoch loss trace and the station split."
    )
    output_names = (CHECKPOINT_FILE, TRACE_FILE, SPLIT_FILE)

    def add_command_arguments(self, parser):
        add_data_arguments(parser)
        add_city_arguments(parser)
        add_seed_argument(parser)
        add_train_arguments(parser)
        parser.add_argument(
            "--grid-search",
            action="store_true",
            help=(
                "Pick epochs, batch size and learning rate on a held-out source "
                "city before the final training."
            ),
        )
        parser.add_argument(
            "--max-trials",
            type=int,
            default=None,
            help="Sample at most this many grid combinations.",
        )

    def run(self, options: dict, out_dir: Path) -> dict:
        dataset = self.load(options)
        config = train_config_from_options(options)
        split = split_train_test(
            dataset,
            options["target_city"],
            per_city=config.stations_per_city,
            seed=config.seed,
            sources=source_cities(dataset, options),
        )
        if options["grid_search"]:
            search = grid_search(
                dataset,
                split,
                base=config,
                max_trials=options["max_trials"],
                seed=config.seed,
            )
            config = search.best
            self.stdout.write(
                f"Grid search on {search.validation_city}: epochs={config.epochs} "
                f"batch_size={config.batch_size} lr={config.learning_rate}"
            )
        result = train(dataset, config, split)
        save_checkpoint(
            Checkpoint(
                result.params,
                result.norm_table,
                {"train": config.to_dict(), "split": split.to_dict()},
            ),
            out_dir / CHECKPOINT_FILE,
        )
        write_loss_trace(result.trace, out_dir / TRACE_FILE)
        (out_dir / SPLIT_FILE).write_text(
            json.dumps(split.to_dict(), indent=2), encoding="utf-8"
        )
        final = result.trace[-1].total if result.trace else float("nan")
        return {"epochs": len(result.trace), "final_loss": final, "sources": list(split.sources)}

    def summary(self, results: dict) -> str:
        return (
            f"Trained {results['epochs']} epochs on {', '.join(results['sources'])}; "
            f"final loss {results['final_loss']:.6f}."
        )

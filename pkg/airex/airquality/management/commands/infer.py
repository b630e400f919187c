from pathlib import Path

import pandas as pd

from airex.airquality.checkpoint import load_checkpoint
from airex.airquality.exceptions import ConfigError, MissingDataError
from airex.airquality.features import FeatureBuilder
from airex.airquality.geo import GeoPoint
from airex.airquality.management.base import AirexCommand, add_data_arguments
from airex.airquality.training import common_time_range, predict, station_targets

PREDICTIONS_FILE = "predictions.csv"


def predictions_frame(rows, cities) -> pd.DataFrame:
    records = []
    for row in rows:
        record = {
            "target": row.target,
            "lat": row.lat,
            "lon": row.lon,
            "t": row.t,
            "y_pred": row.y_pred,
            "y_true": row.y_true,
        }
        record.update({f"y_{c}": row.y_city[c] for c in cities})
        record.update({f"beta_{c}": row.beta[c] for c in cities})
        records.append(record)
    columns = ["target", "lat", "lon", "t", "y_pred", "y_true"]
    columns += [f"y_{c}" for c in cities] + [f"beta_{c}" for c in cities]
    return pd.DataFrame(records, columns=columns)


class Command(AirexCommand):
    help = (
        "Infer PM2.5 in a target city from a trained checkpoint, for the "
        "city's stations or for one coordinate, at every window end time the "
        "inputs cover. Writes predictions with per-city expert outputs and "
        "city attention weights."
    )
    output_names = (PREDICTIONS_FILE,)

    def add_command_arguments(self, parser):
        add_data_arguments(parser)
        parser.add_argument("--checkpoint", required=True, help="checkpoint.json from train.")
        parser.add_argument("--target-city", required=True)
        parser.add_argument("--lat", type=float, default=None)
        parser.add_argument("--lon", type=float, default=None)
        parser.add_argument("--t-start", type=int, default=None, help="First window end time.")
        parser.add_argument("--t-end", type=int, default=None, help="Last window end time.")

    def run(self, options: dict, out_dir: Path) -> dict:
        dataset = self.load(options)
        checkpoint = load_checkpoint(options["checkpoint"])
        params = checkpoint.params
        target_city = options["target_city"]
        window = params.shape.window
        subset = checkpoint.config.get("split", {}).get("train")

        if (options["lat"] is None) != (options["lon"] is None):
            raise ConfigError("Give both --lat and --lon, or neither.")
        if options["lat"] is not None:
            targets = [("coordinate", GeoPoint(options["lat"], options["lon"]))]
        else:
            targets = station_targets(
                dataset, [s.station_id for s in dataset.stations_of(target_city)]
            )

        inputs = []
        for city in params.cities:
            if subset and city in subset:
                inputs.extend(subset[city])
            else:
                inputs.extend(s.station_id for s in dataset.stations_of(city))
        times = common_time_range(dataset, inputs, [target_city, *params.cities], window)
        t_start = options["t_start"] if options["t_start"] is not None else times.start
        t_end = options["t_end"] if options["t_end"] is not None else times.stop - 1
        t_ends = [t for t in times if t_start <= t <= t_end]
        if not t_ends:
            raise MissingDataError(
                f"No complete {window}-step window between t={t_start} and t={t_end}."
            )

        builder = FeatureBuilder(dataset, window=window, norm_table=checkpoint.norm_table)
        rows = predict(params, builder, target_city, targets, t_ends, station_subset=subset)
        frame = predictions_frame(rows, params.cities)
        frame.to_csv(
            out_dir / PREDICTIONS_FILE, index=False, lineterminator="\n", float_format="%.17g"
        )
        return {"rows": len(frame), "targets": len(targets)}

    def summary(self, results: dict) -> str:
        return f"Wrote {results['rows']} predictions for {results['targets']} target(s)."

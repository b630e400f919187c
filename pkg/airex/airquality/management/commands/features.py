from pathlib import Path

import pandas as pd

from airex.airquality.checkpoint import load_checkpoint
from airex.airquality.conf import airex_setting
from airex.airquality.features import build_features
from airex.airquality.geo import FactorVector, GeoPoint
from airex.airquality.management.base import (
    AirexCommand,
    add_city_arguments,
    add_data_arguments,
    source_cities,
)

FEATURES_FILE = "features.csv"
FEATURE_COLUMNS = ["group", "owner", "factor", "field", "step", "value"]


def _rows(group: str, owner: str, vector: FactorVector) -> list[tuple]:
    values = vector.values if vector.values.ndim == 2 else vector.values[None, :]
    steps = range(len(values)) if vector.values.ndim == 2 else [None]
    return [
        (group, owner, factor, field, step, float(value))
        for step, row in zip(steps, values)
        for (factor, field), value in zip(vector.schema, row)
    ]


def bundle_frame(bundle) -> pd.DataFrame:
    rows = _rows("target_static", "target", bundle.x_tgt_static)
    rows += _rows("target_series", "target", bundle.x_tgt_series)
    for city, ids in bundle.city_stations.items():
        rows += _rows("city", city, bundle.x_city[city])
        for sid in ids:
            rows += _rows("station_static", sid, bundle.x_stn[sid].static)
            rows += _rows("station_series", sid, bundle.x_stn[sid].series)
    return pd.DataFrame(rows, columns=FEATURE_COLUMNS)


class Command(AirexCommand):
    help = (
        "Dump the network inputs built for one coordinate at one time: target "
        "factors, per-station factors and per-city relative positions. With "
        "--checkpoint the values are normalized like at inference."
    )
    output_names = (FEATURES_FILE,)

    def add_command_arguments(self, parser):
        add_data_arguments(parser)
        add_city_arguments(parser)
        parser.add_argument("--lat", type=float, required=True)
        parser.add_argument("--lon", type=float, required=True)
        parser.add_argument("--t", type=int, required=True, help="Window end time.")
        parser.add_argument("--window", type=int, default=None)
        parser.add_argument("--checkpoint", default=None)

    def run(self, options: dict, out_dir: Path) -> dict:
        dataset = self.load(options)
        norm_table = None
        stations = None
        sources = source_cities(dataset, options)
        window = options["window"] or airex_setting("WINDOW")
        if options["checkpoint"]:
            checkpoint = load_checkpoint(options["checkpoint"])
            norm_table = checkpoint.norm_table
            stations = checkpoint.config.get("split", {}).get("train")
            window = options["window"] or checkpoint.params.shape.window
            if not options["source_cities"]:
                sources = list(checkpoint.params.cities)
        bundle = build_features(
            GeoPoint(options["lat"], options["lon"]),
            options["target_city"],
            options["t"],
            window,
            dataset,
            sources,
            norm_table=norm_table,
            stations=stations,
        )
        frame = bundle_frame(bundle)
        frame.to_csv(out_dir / FEATURES_FILE, index=False, lineterminator="\n", float_format="%.17g")
        return {"values": len(frame), "stations": len(bundle.x_stn), "normalized": norm_table is not None}

    def summary(self, results: dict) -> str:
        return f"Wrote {results['values']} feature values from {results['stations']} stations."

from __future__ import annotations

import numpy as np
import pandas as pd

from airex.airquality.data.schema import Dataset
from airex.airquality.exceptions import DataError

# variance is the population variance (divide by n)
STATS_COLUMNS = [
    "city_id",
    "name",
    "stations",
    "readings",
    "range_min",
    "range_max",
    "average",
    "variance",
]


def dataset_stats(dataset: Dataset) -> pd.DataFrame:
    """Per-city station count and PM2.5 range, average and variance."""
    if not dataset.cities:
        raise DataError("Dataset has no cities.")
    station_city = {s.station_id: s.city_id for s in dataset.stations}
    aq = dataset.air_quality
    city_of_reading = aq["station_id"].astype(str).map(station_city)
    rows = []
    for city in dataset.cities:
        values = aq.loc[city_of_reading == city.city_id, "pm25"].to_numpy(np.float64)
        if values.size:
            stats = (values.min(), values.max(), values.mean(), values.var(ddof=0))
        else:
            stats = (np.nan, np.nan, np.nan, np.nan)
        rows.append(
            (
                city.city_id,
                city.name,
                len(dataset.stations_of(city.city_id)),
                int(values.size),
                *(float(v) for v in stats),
            )
        )
    return pd.DataFrame(rows, columns=STATS_COLUMNS)


def format_stats(table: pd.DataFrame) -> str:
    """Aligned text rendering in the count / range / average / variance layout."""
    lines = [
        f"{'City':<16} {'# of stations':>13} {'Range':>20} {'Average':>9} {'Variance':>9}"
    ]
    for row in table.itertuples(index=False):
        value_range = f"[{row.range_min:.2f}, {row.range_max:.2f}]"
        lines.append(
            f"{row.name:<16} {row.stations:>13d} {value_range:>20} "
            f"{row.average:>9.2f} {row.variance:>9.2f}"
        )
    lines.append("Variance: population variance (divide by n).")
    return "\n".join(lines)

from airex.airquality.data.loader import load_dataset, save_dataset
from airex.airquality.data.schema import Dataset
from airex.airquality.data.stats import dataset_stats, format_stats
from airex.airquality.data.synthetic import SynthConfig, generate_synthetic

__all__ = [
    "Dataset",
    "SynthConfig",
    "dataset_stats",
    "format_stats",
    "generate_synthetic",
    "load_dataset",
    "save_dataset",
]

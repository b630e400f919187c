"""Parameter checkpoints.

A checkpoint is one UTF-8 JSON document::

    {
      "format": "airex-checkpoint",
      "version": 1,
      "shape": {...NetworkShape...},
      "cities": ["C01", ...],
      "norm_table": {"poi:food": 12.0, ...},
      "config": {...TrainConfig or free-form metadata...},
      "parameters": {"<name>": {"shape": [r, c], "values": [row-major floats]}}
    }

Floats are written with ``repr`` precision so a load restores them bit for bit.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from airex.airquality.exceptions import CheckpointError, ShapeError
from airex.airquality.geo import NormTable
from airex.airquality.network import AirexParams, NetworkShape

logger = logging.getLogger(__name__)

CHECKPOINT_FORMAT = "airex-checkpoint"
CHECKPOINT_VERSION = 1


@dataclass(eq=False)
class Checkpoint:
    params: AirexParams
    norm_table: NormTable
    config: dict = field(default_factory=dict)


def checkpoint_payload(checkpoint: Checkpoint) -> dict:
    params = checkpoint.params
    return {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "shape": params.shape.to_dict(),
        "cities": list(params.cities),
        "norm_table": checkpoint.norm_table.to_dict(),
        "config": checkpoint.config,
        "parameters": {
            name: {"shape": list(value.shape), "values": value.reshape(-1).tolist()}
            for name, value in params.snapshot().items()
        },
    }


def save_checkpoint(checkpoint: Checkpoint, path: str | Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(checkpoint_payload(checkpoint)), encoding="utf-8")
    logger.info("Saved checkpoint to %s", path)
    return path


def load_checkpoint(path: str | Path) -> Checkpoint:
    path = Path(path)
    try:
        payload = json.loads(path.read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise CheckpointError(f"{path}: checkpoint not found") from None
    except json.JSONDecodeError as err:
        raise CheckpointError(f"{path}: not a JSON checkpoint ({err})") from None

    if payload.get("format") != CHECKPOINT_FORMAT:
        raise CheckpointError(f"{path}: unknown format {payload.get('format')!r}")
    if payload.get("version") != CHECKPOINT_VERSION:
        raise CheckpointError(
            f"{path}: unsupported checkpoint version {payload.get('version')!r}"
        )
    try:
        shape = NetworkShape.from_dict(payload["shape"])
        params = AirexParams.initialize(shape, payload["cities"])
        values = {
            name: np.asarray(entry["values"], dtype=np.float64).reshape(entry["shape"])
            for name, entry in payload["parameters"].items()
        }
        params.load_values(values)
    except (KeyError, TypeError, ValueError, ShapeError) as err:
        raise CheckpointError(f"{path}: malformed checkpoint ({err})") from None
    return Checkpoint(
        params=params,
        norm_table=NormTable.from_dict(payload.get("norm_table", {})),
        config=payload.get("config", {}),
    )

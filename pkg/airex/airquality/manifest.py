"""Run manifests and the experiment-run ledger.

A manifest is written next to a command's outputs before any of them; it
holds everything needed to run the command again and get the same numbers.
"""

from __future__ import annotations

import json
import logging
from collections.abc import Mapping, Sequence
from dataclasses import asdict, dataclass, field
from pathlib import Path

from django.db import DatabaseError
from django.utils import timezone

from airex import __version__
from airex.airquality.exceptions import ConfigError
from airex.airquality.models import ExperimentRun

logger = logging.getLogger(__name__)

MANIFEST_NAME = "manifest.json"
MANIFEST_FORMAT = "airex-run-manifest"

# options every Django command carries; none of them changes results
DJANGO_OPTIONS = frozenset(
    {
        "verbosity",
        "stdout",
        "stderr",
        "settings",
        "pythonpath",
        "traceback",
        "no_color",
        "force_color",
        "skip_checks",
    }
)


@dataclass(frozen=True)
class RunManifest:
    command: str
    options: Mapping[str, object]
    seed: int | None = None
    inputs: Sequence[str] = ()
    outputs: Sequence[str] = ()
    code_version: str = __version__
    created_at: str = ""

    @classmethod
    def create(
        cls,
        command: str,
        options: Mapping[str, object],
        inputs: Sequence[str] = (),
        outputs: Sequence[str] = (),
    ) -> RunManifest:
        kept = {k: v for k, v in options.items() if k not in DJANGO_OPTIONS}
        return cls(
            command=command,
            options=kept,
            seed=kept.get("seed"),
            inputs=tuple(str(p) for p in inputs),
            outputs=tuple(str(p) for p in outputs),
            created_at=timezone.now().isoformat(),
        )

    def to_dict(self) -> dict:
        data = asdict(self)
        data["options"] = dict(self.options)
        data["inputs"] = list(self.inputs)
        data["outputs"] = list(self.outputs)
        return {"format": MANIFEST_FORMAT, **data}

    def write(self, path: str | Path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True), encoding="utf-8")
        return path

    @classmethod
    def read(cls, path: str | Path) -> RunManifest:
        path = Path(path)
        try:
            data = json.loads(path.read_text(encoding="utf-8"))
        except FileNotFoundError:
            raise ConfigError(f"{path}: manifest not found") from None
        except json.JSONDecodeError as err:
            raise ConfigError(f"{path}: not a JSON manifest ({err})") from None
        if data.pop("format", None) != MANIFEST_FORMAT:
            raise ConfigError(f"{path}: not a run manifest")
        try:
            return cls(**data)
        except TypeError as err:
            raise ConfigError(f"{path}: malformed manifest ({err})") from None

    def replay_options(self, **overrides) -> dict:
        options = dict(self.options)
        options.update({k: v for k, v in overrides.items() if v is not None})
        return options


def start_run(manifest: RunManifest, manifest_path: str | Path) -> ExperimentRun | None:
    try:
        return ExperimentRun.objects.create(
            command=manifest.command,
            seed=manifest.seed,
            options=dict(manifest.options),
            manifest_path=str(manifest_path),
            started_at=timezone.now(),
        )
    except DatabaseError as err:
        logger.warning("Run ledger unavailable, not recording %s: %s", manifest.command, err)
        return None


def finish_run(
    run: ExperimentRun | None, status: str, results: Mapping[str, object] | None = None
) -> None:
    if run is None:
        return
    run.status = status
    run.results = dict(results or {})
    run.finished_at = timezone.now()
    try:
        run.save(update_fields=["status", "results", "finished_at"])
    except DatabaseError as err:
        logger.warning("Could not update run %s in the ledger: %s", run.pk, err)


def results_summary(results: Mapping[str, object]) -> dict:
    """JSON-safe copy of a command's results for the ledger."""
    return json.loads(json.dumps(dict(results), default=str))

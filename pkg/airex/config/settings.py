"""
Django settings for the AIREX air-quality inference project.
"""

import os
from pathlib import Path

# Build paths: project root is parent of airex/
BASE_DIR = Path(__file__).resolve().parent.parent.parent

SECRET_KEY = os.environ.get(
    "DJANGO_SECRET_KEY", "django-insecure-airex-local-experiments-only"
)

DEBUG = False

ALLOWED_HOSTS: list[str] = []

INSTALLED_APPS = [
    "airex.airquality",
]

DATABASES = {
    "default": {
        "ENGINE": "django.db.backends.sqlite3",
        "NAME": os.environ.get("AIREX_DB_PATH", str(BASE_DIR / "db.sqlite3")),
    }
}

LANGUAGE_CODE = "en-us"
TIME_ZONE = "UTC"
USE_I18N = False
USE_TZ = True

DEFAULT_AUTO_FIELD = "django.db.models.BigAutoField"

# Project defaults. Hyper-parameters follow the published experimental setup;
# CLI flags override them per run.
AIREX = {
    "WINDOW": 24,
    "AFFECT_RADIUS_KM": 1.0,
    "STATIONS_PER_CITY": 5,
    "EPOCHS": 100,
    "BATCH_SIZE": 32,
    "LEARNING_RATE": 0.005,
    "LAMBDA": 0.5,
    "GAMMA": 1.0,
    "ZETA": 1.0,
    "LSTM_HIDDEN": 300,
    "LSTM_LAYERS": 2,
    "BASIC_WIDTHS": [100],
    "FUSION_WIDTHS": [200, 200],
    "ATTENTION_HIDDEN": 100,
    "EXPERT_HIDDEN": 100,
    "OPTIMIZER": "adam",
    "CLIP_NORM": 5.0,
    "KNN_K": 3,
    "FNN_HIDDEN": [200, 200, 200],
}

LOGGING = {
    "version": 1,
    "disable_existing_loggers": False,
    "formatters": {
        "simple": {
            "format": "%(levelname)s %(name)s: %(message)s",
        },
    },
    "handlers": {
        "console": {
            "class": "logging.StreamHandler",
            "formatter": "simple",
        },
    },
    "loggers": {
        "airex": {
            "level": os.environ.get("AIREX_LOG_LEVEL", "INFO"),
            "handlers": ["console"],
            "propagate": False,
        },
    },
}

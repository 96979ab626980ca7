"""
Django settings for the facesculpt project.

Stage defaults for the portrait stylization pipeline live in ``FACE_SCULPT``.
Every value there is the published default of the method; pipeline configs
only need to name what they change.
"""

from pathlib import Path

import environ

# Build paths inside the project like this: BASE_DIR / 'subdir'.
BASE_DIR = Path(__file__).resolve().parent.parent

env = environ.Env(
    DEBUG=(bool, False),
    FACE_SCULPT_THREADS=(int, 1),
    FACE_SCULPT_LOG_LEVEL=(str, "INFO"),
)
environ.Env.read_env(BASE_DIR / ".env", overwrite=False)

# No web surface is served; the key only satisfies Django's startup checks.
SECRET_KEY = env("DJANGO_SECRET_KEY", default="facesculpt-offline-only")

DEBUG = env("DEBUG")

ALLOWED_HOSTS = []


# Application definition

INSTALLED_APPS = [
    "django.contrib.auth",
    "django.contrib.contenttypes",
    "rest_framework",
    "landmarks",
    "autodiff",
    "translation",
    "meshes",
    "deformation",
    "rendering",
    "stylization",
    "pipeline",
]

# Database
# Nothing is persisted through the ORM; sqlite keeps `manage.py check` quiet.

DATABASES = {
    "default": {
        "ENGINE": "django.db.backends.sqlite3",
        "NAME": BASE_DIR / "db.sqlite3",
    }
}

DEFAULT_AUTO_FIELD = "django.db.models.BigAutoField"

LANGUAGE_CODE = "en-us"

TIME_ZONE = "UTC"

USE_I18N = False

USE_TZ = True


# Logging

LOGGING = {
    "version": 1,
    "disable_existing_loggers": False,
    "formatters": {
        "verbose": {
            "format": "{asctime} {levelname} {name} {message}",
            "style": "{",
        },
    },
    "handlers": {
        "console": {
            "class": "logging.StreamHandler",
            "formatter": "verbose",
        },
    },
    "root": {
        "handlers": ["console"],
        "level": env("FACE_SCULPT_LOG_LEVEL"),
    },
}


# Stylization pipeline defaults

FACE_SCULPT = {
    "SEED": 0,
    "THREADS": env("FACE_SCULPT_THREADS"),
    "STATS": {
        "N_LANDMARKS": 68,
        "PCA_COMPONENTS": 32,
        "CLUSTERS": 25,
        "KMEANS_MAX_ITER": 300,
        "AVERAGE_FACE_PASSES": 3,
    },
    "TRAIN": {
        "LAMBDA_RECON_Y": 1.0,
        "LAMBDA_RECON_C": 0.5,
        "LAMBDA_KL": 1.0,
        "LAMBDA_RECON_S": 1.0,
        "LAMBDA_ADV": 1.0,
        "LAMBDA_CLASS": 1.0,
        "LR": 0.0005,
        "BATCH_SIZE": 68,
        "EPOCHS": 800,
        "CLASSIFIER_EPOCHS": 200,
        "HIDDEN_WIDTH": 128,
        "STYLE_DIM": 8,
        "DTYPE": "float32",
    },
    "DEFORM": {
        "ALPHA": 1e7,
        "LR": 0.01,
        "ITERATIONS": 2000,
        "GRAD_TOL": 1e-8,
        "DIVERGENCE_PATIENCE": 100,
        "PLATEAU_PATIENCE": 20,
        "LR_DECAY": 0.2,
        "MIN_LR": 1e-12,
    },
    "RENDER": {
        "IMAGE_SIZE": 256,
        "TEXTURE_SIZE": 256,
        "BACKGROUND": 0.5,
        "AZIMUTH_RANGE": 30.0,
        "ELEVATION_RANGE": 20.0,
        "CONTACT_SHEET_VIEWS": 9,
    },
    "EXTRACTOR": {
        "MODE": "filter_bank",
        "LEVELS": 3,
        "K_MAX": 1024,
    },
    "STYLE": {
        "MODE": "multiview",
        "BETA": 1.0,
        "ITERATIONS": 600,
        "LR": 0.002,
        "RMSPROP_DECAY": 0.99,
    },
}


# Celery Configuration
CELERY_BROKER_URL = env("CELERY_BROKER_URL", default="redis://redis:6379/0")
CELERY_RESULT_BACKEND = env("CELERY_RESULT_BACKEND", default="redis://redis:6379/0")
CELERY_ACCEPT_CONTENT = ["json"]
CELERY_TASK_SERIALIZER = "json"
CELERY_RESULT_SERIALIZER = "json"
CELERY_TIMEZONE = TIME_ZONE

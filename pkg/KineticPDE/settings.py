"""
Django settings for KineticPDE project.

Generated by 'django-admin startproject' using Django 5.1.3.

For more information on this file, see
https://docs.djangoproject.com/en/5.1/topics/settings/

For the full list of settings and their values, see
https://docs.djangoproject.com/en/5.1/ref/settings/
"""

import os
from pathlib import Path

import environ

# Build paths inside the project like this: BASE_DIR / 'subdir'.
BASE_DIR = Path(__file__).resolve().parent.parent

env = environ.Env(
    DEBUG=(bool, False),
    KINETIC_SEED=(int, 0),
    KINETIC_TORCH_THREADS=(int, 1),
    KINETIC_HISTORY_TIMINGS=(bool, False),
    KINETIC_SLOW_TESTS=(bool, False),
)

# Read environment variables from .env file
if not os.getenv("DJANGO_SETTINGS_MODULE", "").endswith("test"):
    environ.Env.read_env(os.path.join(BASE_DIR, ".env"))


# SECURITY WARNING: keep the secret key used in production secret!
SECRET_KEY = env("DJANGO_SECRET_KEY", default="kinetic-pde-development-key")

DEBUG = env("DEBUG")

ALLOWED_HOSTS = env.list("ALLOWED_HOSTS", default=["127.0.0.1", "localhost"])


# Application definition
#
# There is no web surface; the application only ships management commands.

INSTALLED_APPS = [
    "KineticPDE_Discovery",
]

MIDDLEWARE = []

# No models, so no database is configured.
DATABASES = {}


# Internationalization
# https://docs.djangoproject.com/en/5.1/topics/i18n/

LANGUAGE_CODE = "en-us"

TIME_ZONE = "UTC"

USE_I18N = True

USE_TZ = True


# Logging
# https://docs.djangoproject.com/en/5.1/topics/logging/

KINETIC_LOG_LEVEL = env("KINETIC_LOG_LEVEL", default="INFO")

LOGGING = {
    "version": 1,
    "disable_existing_loggers": False,
    "formatters": {
        "verbose": {
            "format": "{asctime} {levelname} {name}: {message}",
            "style": "{",
        },
    },
    "handlers": {
        "console": {
            "class": "logging.StreamHandler",
            "formatter": "verbose",
        },
    },
    "loggers": {
        "KineticPDE_Discovery": {
            "handlers": ["console"],
            "level": KINETIC_LOG_LEVEL,
            "propagate": False,
        },
    },
}


# Experiment settings

KINETIC_OUTPUT_DIR = Path(env("KINETIC_OUTPUT_DIR", default=str(BASE_DIR / "runs")))

# Seed used when neither the config file nor --seed provides one.
KINETIC_SEED = env("KINETIC_SEED")

# Torch intra-op threads.
KINETIC_TORCH_THREADS = env("KINETIC_TORCH_THREADS")

# Write wall-clock seconds into the history CSV seconds column.
KINETIC_HISTORY_TIMINGS = env("KINETIC_HISTORY_TIMINGS")

# Enables the recovery experiments in the test suite (minutes each).
KINETIC_SLOW_TESTS = env("KINETIC_SLOW_TESTS")

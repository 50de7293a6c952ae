"""
Django settings for the nonlocal-lab project.

There is no web surface: Django provides the settings layer, the management
command that drives experiments, and form validation for config files.
"""

import os
from pathlib import Path

BASE_DIR = Path(__file__).resolve().parent.parent

SECRET_KEY = os.getenv("NLA_SECRET_KEY", "nla-insecure-local-only")

DEBUG = False

ALLOWED_HOSTS = []

INSTALLED_APPS = [
    "nla",
]

# Nothing is persisted; runs are reproducible from their config file.
DATABASES = {}

USE_I18N = False

USE_TZ = True

TIME_ZONE = "UTC"

DEFAULT_AUTO_FIELD = "django.db.models.BigAutoField"


# Lab configuration

# Worker threads for parameter sweeps (over lambda_list, p_list)
NLA_THREADS = int(os.getenv("NLA_THREADS", os.cpu_count() or 1))

# Output root for configs that do not name an out_dir
NLA_RESULTS_DIR = Path(os.getenv("NLA_RESULTS_DIR", BASE_DIR / "results"))

# Grids with fewer points per axis than this convolve by direct summation
NLA_DIRECT_CONVOLUTION_MAX_N = 256

# Mass allowed beyond |x| = L/2 before a run is aborted as DomainOverflow
NLA_DEFAULT_TAIL_TOL = 1e-6


LOGGING = {
    'version': 1,
    'disable_existing_loggers': False,
    'formatters': {
        'verbose': {
            'format': '{asctime} {levelname} {name}: {message}',
            'style': '{',
        },
    },
    'handlers': {
        'console': {
            'class': 'logging.StreamHandler',
            'formatter': 'verbose',
        },
    },
    'root': {
        'handlers': ['console'],
        'level': 'INFO',
    },
    'loggers': {
        'nla': {
            'handlers': ['console'],
            'level': os.getenv('NLA_LOG_LEVEL', 'INFO'),
            'propagate': False,
        },
    },
}

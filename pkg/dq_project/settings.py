"""
Django settings for dq_project project.

The project has no web surface and no database; Django provides the app
registry, management commands and logging configuration for the D&Q engine.
"""
import os
from pathlib import Path

from dotenv import load_dotenv

# Load environment variables from .env file
load_dotenv()

# Build paths inside the project like this: BASE_DIR / 'subdir'.
BASE_DIR = Path(__file__).resolve().parent.parent

SECRET_KEY = os.environ.get('SECRET_KEY', 'dq-engine-offline-key')

DEBUG = False

ALLOWED_HOSTS = []

# Application definition
INSTALLED_APPS = [
    # Third-party apps
    'rest_framework',

    # Local apps
    'dq_engine',
]

# No persistence layer: every artifact is a JSON/JSONL file on disk.
DATABASES = {}

USE_TZ = True
TIME_ZONE = 'UTC'

DEFAULT_AUTO_FIELD = 'django.db.models.BigAutoField'

# Environment variables consulted by dq_engine.config use this prefix,
# e.g. DQ_BACKEND_URL or DQ_BUDGET_MAX_RETRIEVER_CALLS.
DQ_ENV_PREFIX = 'DQ_'

# Optional TOML config file picked up when --config is not given
DQ_CONFIG_FILE = os.environ.get('DQ_CONFIG_FILE', '')

DQ_LOG_LEVEL = os.environ.get('DQ_LOG_LEVEL', 'INFO')

# Logging configuration
LOGGING = {
    'version': 1,
    'disable_existing_loggers': False,
    'formatters': {
        'verbose': {
            'format': '{levelname} {asctime} {module} {message}',
            'style': '{',
        },
        'json': {
            '()': 'dq_engine.log_formatters.JsonLinesFormatter',
        },
    },
    'handlers': {
        'console': {
            'level': 'DEBUG',
            'class': 'logging.StreamHandler',
            'formatter': 'verbose',
        },
    },
    'loggers': {
        'django': {
            'handlers': ['console'],
            'level': 'WARNING',
            'propagate': False,
        },
        'dq_engine': {
            'handlers': ['console'],
            'level': DQ_LOG_LEVEL,
            'propagate': False,
        },
    },
}

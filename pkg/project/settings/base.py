# project/settings/base.py
from pathlib import Path
import os
import environ
import dj_database_url




BASE_DIR = Path(__file__).resolve().parents[2]
env = environ.Env()
env.read_env(str(BASE_DIR / '.env'))

# Required by Django even though nothing is served; runs never sign anything.
SECRET_KEY = env("DJANGO_SECRET_KEY", default="absorbing-mfg-local-only")
DEBUG = env.bool("DEBUG", default=False)

# Allow local .env for development (set ENV_FILE to switch files easily)
ENV_FILE = os.environ.get("ENV_FILE", BASE_DIR / ".env")
if os.path.exists(ENV_FILE):
    environ.Env.read_env(ENV_FILE)

ALLOWED_HOSTS = []

# -----------------------------------------------------------------------------
# Installed apps
# -----------------------------------------------------------------------------
INSTALLED_APPS = [
    # Django core
    "django.contrib.contenttypes",

    # Local apps
    "meanfield",
    "experiments",
]

# -----------------------------------------------------------------------------
# Database (run history)
# -----------------------------------------------------------------------------
DATABASES = {
    "default": dj_database_url.config(
        default=f"sqlite:///{BASE_DIR / 'db.sqlite3'}",
        conn_max_age=600,
    )
}

# -----------------------------------------------------------------------------
# I18N / TZ
# -----------------------------------------------------------------------------
LANGUAGE_CODE = "en-us"
TIME_ZONE = "UTC"
USE_I18N = False
USE_TZ = True

# -----------------------------------------------------------------------------
# Solver defaults (meanfield.conf.solver_setting reads these)
# -----------------------------------------------------------------------------
MEANFIELD = {
    "DAMPING": env.float("MFG_DAMPING", default=0.5),
    "TOL": env.float("MFG_TOL", default=1e-4),
    "MAX_ITER": env.int("MFG_MAX_ITER", default=200),
    "MASS_FLOOR": env.float("MFG_MASS_FLOOR", default=1e-8),
    "MC_PARTICLES": env.int("MFG_MC_PARTICLES", default=100_000),
    "MC_CHUNK": env.int("MFG_MC_CHUNK", default=10_000),
    "WORKERS": env.int("MFG_WORKERS", default=1),
    "BOUNDARY_TOL": env.float("MFG_BOUNDARY_TOL", default=1e-9),
    "HAMILTONIAN_GRID_FALLBACK": env.bool("MFG_HAMILTONIAN_GRID_FALLBACK", default=True),
    "HAMILTONIAN_GRID_POINTS": env.int("MFG_HAMILTONIAN_GRID_POINTS", default=201),
    "GOLDEN_TOL": env.float("MFG_GOLDEN_TOL", default=1e-10),
    "OUTPUT_DIR": env("MFG_OUTPUT_DIR", default=str(BASE_DIR / "runs")),
}

# -----------------------------------------------------------------------------
# Logging
# -----------------------------------------------------------------------------
LOG_LEVEL = env("MFG_LOG_LEVEL", default="INFO")

LOGGING = {
    "version": 1,
    "disable_existing_loggers": False,
    "formatters": {
        "keyvalue": {
            "format": "ts=%(asctime)s level=%(levelname)s logger=%(name)s msg=%(message)s",
        },
    },
    "handlers": {
        "console": {
            "class": "logging.StreamHandler",
            "formatter": "keyvalue",
        },
    },
    "loggers": {
        "meanfield": {"handlers": ["console"], "level": LOG_LEVEL, "propagate": False},
        "experiments": {"handlers": ["console"], "level": LOG_LEVEL, "propagate": False},
    },
}

# -----------------------------------------------------------------------------
# Defaults
# -----------------------------------------------------------------------------
DEFAULT_AUTO_FIELD = "django.db.models.BigAutoField"

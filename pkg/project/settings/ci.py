# project/settings/ci.py
from .base import *

DEBUG = False

DATABASES = {
    "default": dj_database_url.parse("sqlite://:memory:"),
}

# Keep the test output readable; solver warnings still surface.
LOGGING["loggers"]["meanfield"]["level"] = "WARNING"
LOGGING["loggers"]["experiments"]["level"] = "WARNING"

MEANFIELD = {
    **MEANFIELD,
    "WORKERS": env.int("MFG_WORKERS", default=2),
}

# project/settings/dev.py
from .base import *

DEBUG = True
LOG_LEVEL = env("MFG_LOG_LEVEL", default="DEBUG")
LOGGING["loggers"]["meanfield"]["level"] = LOG_LEVEL
LOGGING["loggers"]["experiments"]["level"] = LOG_LEVEL

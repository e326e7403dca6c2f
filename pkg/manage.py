#!/usr/bin/env python
import os
import sys
from pathlib import Path

import environ

from project import settings_module

if __name__ == '__main__':
    BASE_DIR = Path(__file__).resolve().parent
    if (BASE_DIR / '.env').exists():
        environ.Env.read_env(BASE_DIR / '.env')

    os.environ.setdefault('DJANGO_SETTINGS_MODULE', settings_module(sys.argv))

    try:
        from django.core.management import execute_from_command_line
    except ImportError as exc:
        raise ImportError(
            "Couldn't import Django. Are you sure it's installed?"
        ) from exc

    execute_from_command_line(sys.argv)

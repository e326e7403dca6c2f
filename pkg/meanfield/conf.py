from __future__ import annotations

from django.conf import settings

# Fallbacks used when a key is missing from settings.MEANFIELD.
DEFAULTS = {
    "DAMPING": 0.5,
    "TOL": 1e-4,
    "MAX_ITER": 200,
    "MASS_FLOOR": 1e-8,
    "MC_PARTICLES": 100_000,
    "MC_CHUNK": 10_000,
    "WORKERS": 1,
    "BOUNDARY_TOL": 1e-9,
    "HAMILTONIAN_GRID_FALLBACK": True,
    "HAMILTONIAN_GRID_POINTS": 201,
    "GOLDEN_TOL": 1e-10,
    "OUTPUT_DIR": "runs",
}


def solver_setting(name: str):
    """
    Look up a solver default.

    - ``settings.MEANFIELD[name]`` when the project defines it.
    - The module default otherwise.
    """
    overrides = getattr(settings, "MEANFIELD", {}) or {}
    if name in overrides:
        return overrides[name]
    try:
        return DEFAULTS[name]
    except KeyError:
        raise KeyError(f"Unknown solver setting {name!r}.") from None

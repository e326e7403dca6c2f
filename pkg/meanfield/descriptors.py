"""
JSON model descriptors.

A descriptor names one family per coefficient slot from the closed catalog
and gives every real number as a decimal string, so a descriptor read and
written back is unchanged. Integers (indices, dimensions) stay JSON integers.
"""
from __future__ import annotations

import json
from decimal import Decimal, InvalidOperation
from pathlib import Path

import numpy as np
from django.core.exceptions import ValidationError

from .catalog import build_family, describe_family
from .model import AbsorbingDomain, ActionBox, CoefficientSet, InitialLaw, default_boundary_tol

SLOTS = {"drift": "drift_bbar", "w": "integrand_w", "f": "running_cost_f", "F": "terminal_cost_F"}
REQUIRED = ("dim_d", "dim_d0", "horizon_T", "sigma", "action_space", "domain", "bound_K", "lipschitz_Lbar") + tuple(SLOTS)
TEXT_KEYS = {"kind", "family", "name"}


def _real(value, where: str) -> float:
    if isinstance(value, bool):
        raise ValidationError({where: [f"Expected a real number, got {value!r}."]})
    if isinstance(value, (int, float)):
        return float(value)
    try:
        return float(Decimal(str(value)))
    except (InvalidOperation, ValueError):
        raise ValidationError({where: [f"Expected a decimal string, got {value!r}."]}) from None


def _decode(value, where: str):
    """Decimal strings become floats; JSON integers stay integers."""
    if isinstance(value, dict):
        return {k: (v if k in TEXT_KEYS else _decode(v, f"{where}.{k}")) for k, v in value.items()}
    if isinstance(value, list):
        return [_decode(v, f"{where}[{i}]") for i, v in enumerate(value)]
    if isinstance(value, (int, bool)) and not isinstance(value, float):
        return value
    return _real(value, where)


def _encode(value):
    if isinstance(value, dict):
        return {k: _encode(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_encode(v) for v in value]
    if isinstance(value, np.ndarray):
        return _encode(value.tolist())
    if isinstance(value, (bool, int, np.integer)) and not isinstance(value, (float, np.floating)):
        return int(value) if not isinstance(value, bool) else value
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    return value


def parse_descriptor(data: dict) -> CoefficientSet:
    missing = [key for key in REQUIRED if key not in data]
    if missing:
        raise ValidationError({key: ["This field is required."] for key in missing})
    data = _decode(data, "descriptor")
    families = {}
    for slot, attr in SLOTS.items():
        spec = data[slot]
        try:
            families[attr] = build_family(slot, spec["family"], spec.get("params", {}))
        except (KeyError, TypeError, ValueError) as exc:
            raise ValidationError({slot: [str(exc)]}) from None
    try:
        domain_spec = data["domain"]
        domain = AbsorbingDomain(
            domain_spec["kind"], domain_spec["parameters"], float(domain_spec.get("boundary_tol", default_boundary_tol()))
        )
        law = None
        if data.get("initial_law"):
            law = InitialLaw(data["initial_law"]["kind"], data["initial_law"]["parameters"])
        return CoefficientSet(
            dim_d=int(data["dim_d"]),
            dim_d0=int(data["dim_d0"]),
            horizon_T=float(data["horizon_T"]),
            sigma=np.array(data["sigma"], dtype=float),
            action_space=ActionBox(**data["action_space"]),
            domain=domain,
            bound_K=float(data["bound_K"]),
            lipschitz_Lbar=float(data["lipschitz_Lbar"]),
            initial_law=law,
            name=str(data.get("name", "")),
            **families,
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise ValidationError({"descriptor": [f"Invalid model descriptor: {exc}"]}) from None


def load_descriptor(path) -> CoefficientSet:
    path = Path(path)
    try:
        data = json.loads(path.read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise ValidationError({"model": [f"Descriptor {path} does not exist."]}) from None
    except json.JSONDecodeError as exc:
        raise ValidationError({"model": [f"Descriptor {path} is not valid JSON: {exc}"]}) from None
    return parse_descriptor(data)


def describe(coeffs: CoefficientSet) -> dict:
    out = {
        "name": coeffs.name,
        "dim_d": coeffs.dim_d,
        "dim_d0": coeffs.dim_d0,
        "horizon_T": coeffs.horizon_T,
        "sigma": coeffs.sigma,
        "action_space": {"lower": coeffs.action_space.lower, "upper": coeffs.action_space.upper},
        "domain": {
            "kind": coeffs.domain.kind,
            "parameters": coeffs.domain.parameters,
            "boundary_tol": coeffs.domain.boundary_tol,
        },
        "bound_K": coeffs.bound_K,
        "lipschitz_Lbar": coeffs.lipschitz_Lbar,
    }
    for slot, attr in SLOTS.items():
        out[slot] = describe_family(getattr(coeffs, attr))
    if coeffs.initial_law is not None:
        out["initial_law"] = {"kind": coeffs.initial_law.kind, "parameters": coeffs.initial_law.parameters}
    return _encode(out)


def dump_descriptor(coeffs: CoefficientSet, path) -> None:
    Path(path).write_text(json.dumps(describe(coeffs), indent=2, sort_keys=True) + "\n", encoding="utf-8")

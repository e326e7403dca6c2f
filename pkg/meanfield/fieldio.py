"""
Field files: CSV for people, a small binary layout for programs.

Binary layout: the 8-byte magic ``MFGFIELD``, a little-endian uint64 rank,
one uint64 per axis length, then float64 little-endian values in row-major
order.
"""
from __future__ import annotations

import csv
from pathlib import Path

import numpy as np

from .exceptions import ContractViolation

MAGIC = b"MFGFIELD"


def encode_binary(array) -> bytes:
    array = np.ascontiguousarray(np.asarray(array, dtype="<f8"))
    header = np.array((array.ndim,) + array.shape, dtype="<u8")
    return MAGIC + header.tobytes() + array.tobytes(order="C")


def write_binary(path, array) -> None:
    Path(path).write_bytes(encode_binary(array))


def read_binary(path) -> np.ndarray:
    raw = Path(path).read_bytes()
    if raw[: len(MAGIC)] != MAGIC:
        raise ContractViolation(f"{path} is not a field file.")
    offset = len(MAGIC)
    rank = int(np.frombuffer(raw, dtype="<u8", count=1, offset=offset)[0])
    offset += 8
    shape = tuple(int(v) for v in np.frombuffer(raw, dtype="<u8", count=rank, offset=offset))
    offset += 8 * rank
    return np.frombuffer(raw, dtype="<f8", count=int(np.prod(shape)), offset=offset).reshape(shape).copy()


def value_field_rows(field):
    """(t, x_1..x_d, V, dV/dx_k..., u_k...) per space-time node."""
    points = field.spacegrid.points
    d = field.spacegrid.dim
    header = (
        ["t"]
        + [f"x{k + 1}" for k in range(d)]
        + ["value"]
        + [f"grad{k + 1}" for k in range(d)]
        + [f"control{k + 1}" for k in range(d)]
    )
    rows = []
    for j, t in enumerate(field.grid.times):
        for i, x in enumerate(points):
            rows.append(
                [repr(float(t))]
                + [repr(float(v)) for v in x]
                + [repr(float(field.values[j, i]))]
                + [repr(float(v)) for v in field.gradients[j, i]]
                + [repr(float(v)) for v in field.feedback[j, i]]
            )
    return header, rows


def density_field_rows(field):
    points = field.spacegrid.points
    d = field.spacegrid.dim
    header = ["t"] + [f"x{k + 1}" for k in range(d)] + ["density"]
    rows = []
    for j, t in enumerate(field.grid.times):
        for i, x in enumerate(points):
            rows.append([repr(float(t))] + [repr(float(v)) for v in x] + [repr(float(field.densities[j, i]))])
    return header, rows


def write_csv(path, header, rows) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        writer.writerows(rows)

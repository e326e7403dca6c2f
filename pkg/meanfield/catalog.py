"""
Closed catalog of coefficient families.

Every family is a frozen dataclass evaluated on batches: states ``X`` have
shape (n, d), controls ``G`` shape (n, d), the mean ``y`` shape (d0,).
Families are selected by name from a JSON descriptor; nothing outside this
module can be plugged in as a coefficient.
"""
from __future__ import annotations

from dataclasses import dataclass, fields
from typing import ClassVar

import numpy as np


def rows_matvec(matrix: np.ndarray, X: np.ndarray) -> np.ndarray:
    """
    Row-wise ``matrix @ x`` for every row of X.

    Summation runs over columns in a fixed order, so a row gives the same bits
    whether it is evaluated alone or inside a batch.
    """
    matrix = np.asarray(matrix, dtype=float)
    X = np.atleast_2d(np.asarray(X, dtype=float))
    out = np.zeros((X.shape[0], matrix.shape[0]))
    for k in range(matrix.shape[1]):
        out += X[:, k : k + 1] * matrix[:, k]
    return out


def _vec(values) -> tuple:
    return tuple(float(v) for v in np.ravel(values))


def _mat(values) -> tuple:
    return tuple(tuple(float(v) for v in row) for row in np.atleast_2d(values))


class Family:
    family: ClassVar[str] = ""

    def params(self) -> dict:
        out = {}
        for f in fields(self):
            value = getattr(self, f.name)
            if isinstance(value, tuple):
                value = [list(v) if isinstance(v, tuple) else v for v in value]
            out[f.name] = value
        return out


# ---------------------------------------------------------------------
# Drift b̄(t, x, y)
# ---------------------------------------------------------------------

@dataclass(frozen=True)
class ConstantDrift(Family):
    family: ClassVar[str] = "constant"
    vector: tuple

    depends_on_mean: ClassVar[bool] = False

    def __post_init__(self):
        object.__setattr__(self, "vector", _vec(self.vector))

    def __call__(self, t, X, y):
        X = np.atleast_2d(X)
        return np.broadcast_to(np.array(self.vector), X.shape).copy()


@dataclass(frozen=True)
class AffineDrift(Family):
    """b̄ = A x + B y + c."""

    family: ClassVar[str] = "affine"
    state_matrix: tuple
    mean_matrix: tuple
    offset: tuple

    def __post_init__(self):
        object.__setattr__(self, "state_matrix", _mat(self.state_matrix))
        object.__setattr__(self, "mean_matrix", _mat(self.mean_matrix))
        object.__setattr__(self, "offset", _vec(self.offset))

    @property
    def depends_on_mean(self) -> bool:
        return bool(np.any(np.array(self.mean_matrix) != 0.0))

    def __call__(self, t, X, y):
        X = np.atleast_2d(X)
        out = rows_matvec(np.array(self.state_matrix), X)
        shift = rows_matvec(np.array(self.mean_matrix), np.atleast_2d(y))[0]
        return out + (shift + np.array(self.offset))


@dataclass(frozen=True)
class SaturatedMeanDrift(Family):
    """
    b̄ = offset − (|y| ∧ cap)·e_coordinate.

    With offset (0, 0, 1), coordinate 0 and cap 1/4 this is the drift of the
    degenerate counter-example.
    """

    family: ClassVar[str] = "saturated_mean"
    offset: tuple
    coordinate: int
    cap: float

    depends_on_mean: ClassVar[bool] = True

    def __post_init__(self):
        object.__setattr__(self, "offset", _vec(self.offset))
        object.__setattr__(self, "coordinate", int(self.coordinate))
        object.__setattr__(self, "cap", float(self.cap))

    def __call__(self, t, X, y):
        X = np.atleast_2d(X)
        base = np.array(self.offset)
        base[self.coordinate] -= min(float(np.linalg.norm(np.atleast_1d(y))), self.cap)
        return np.broadcast_to(base, X.shape).copy()


# ---------------------------------------------------------------------
# Measure integrand w(x)
# ---------------------------------------------------------------------

@dataclass(frozen=True)
class CoordinateIntegrand(Family):
    family: ClassVar[str] = "coordinates"
    indices: tuple

    def __post_init__(self):
        object.__setattr__(self, "indices", tuple(int(i) for i in self.indices))

    @property
    def dim(self) -> int:
        return len(self.indices)

    def __call__(self, X):
        X = np.atleast_2d(X)
        return X[:, list(self.indices)].astype(float)


@dataclass(frozen=True)
class ClippedCoordinateIntegrand(Family):
    """Coordinates clipped to [−bound, bound]; equals the plain coordinates on cl(O) when O fits."""

    family: ClassVar[str] = "clipped_coordinates"
    indices: tuple
    bound: float

    def __post_init__(self):
        object.__setattr__(self, "indices", tuple(int(i) for i in self.indices))
        object.__setattr__(self, "bound", float(self.bound))

    @property
    def dim(self) -> int:
        return len(self.indices)

    def __call__(self, X):
        X = np.atleast_2d(X)
        return np.clip(X[:, list(self.indices)], -self.bound, self.bound)


@dataclass(frozen=True)
class AffineIntegrand(Family):
    family: ClassVar[str] = "affine"
    matrix: tuple
    offset: tuple

    def __post_init__(self):
        object.__setattr__(self, "matrix", _mat(self.matrix))
        object.__setattr__(self, "offset", _vec(self.offset))

    @property
    def dim(self) -> int:
        return len(self.offset)

    def __call__(self, X):
        return rows_matvec(np.array(self.matrix), X) + np.array(self.offset)


# ---------------------------------------------------------------------
# Running cost f(t, x, y, γ)
# ---------------------------------------------------------------------
# control_rule tells hjb_kfp.hamiltonian_min how to minimise over Γ:
#   "independent" - f does not depend on γ (affine Hamiltonian, bang-bang)
#   "quadratic"   - closed form clamp(−p / (2·control_weight))
#   "separable"   - f = rest + Σ_k c_k(γ_k) with convex c_k (golden section)
#   "grid"        - non-convex, dense grid search only

@dataclass(frozen=True)
class ConstantCost(Family):
    family: ClassVar[str] = "constant"
    value: float

    depends_on_mean: ClassVar[bool] = False
    control_rule: ClassVar[str] = "independent"
    convex_in_control: ClassVar[bool] = True

    def __post_init__(self):
        object.__setattr__(self, "value", float(self.value))

    def __call__(self, t, X, y, G):
        return np.full(np.atleast_2d(X).shape[0], self.value)


@dataclass(frozen=True)
class QuadraticCost(Family):
    """f = cw·|γ|² + sw·|x|² + mw·|y|² + offset."""

    family: ClassVar[str] = "quadratic"
    control_weight: float
    state_weight: float = 0.0
    mean_weight: float = 0.0
    offset: float = 0.0

    convex_in_control: ClassVar[bool] = True

    def __post_init__(self):
        for name in ("control_weight", "state_weight", "mean_weight", "offset"):
            object.__setattr__(self, name, float(getattr(self, name)))

    @property
    def depends_on_mean(self) -> bool:
        return self.mean_weight != 0.0

    @property
    def control_rule(self) -> str:
        return "quadratic" if self.control_weight > 0.0 else "independent"

    def __call__(self, t, X, y, G):
        X = np.atleast_2d(X)
        G = np.atleast_2d(G)
        y = np.atleast_1d(y)
        return (
            self.control_weight * np.sum(G * G, axis=1)
            + self.state_weight * np.sum(X * X, axis=1)
            + self.mean_weight * float(np.dot(y, y))
            + self.offset
        )


@dataclass(frozen=True)
class AbsControlCost(Family):
    """f = offset + cw·Σ_k |γ_k| + sw·|x|²."""

    family: ClassVar[str] = "abs_control"
    control_weight: float
    state_weight: float = 0.0
    offset: float = 0.0

    depends_on_mean: ClassVar[bool] = False
    control_rule: ClassVar[str] = "separable"
    convex_in_control: ClassVar[bool] = True

    def __post_init__(self):
        for name in ("control_weight", "state_weight", "offset"):
            object.__setattr__(self, name, float(getattr(self, name)))

    def coordinate_cost(self, k: int, g: np.ndarray) -> np.ndarray:
        return self.control_weight * np.abs(g)

    def __call__(self, t, X, y, G):
        X = np.atleast_2d(X)
        G = np.atleast_2d(G)
        return self.offset + self.control_weight * np.sum(np.abs(G), axis=1) + self.state_weight * np.sum(
            X * X, axis=1
        )


@dataclass(frozen=True)
class DoubleWellCost(Family):
    """f = offset + weight·(|γ|² − 1)²; not convex in γ."""

    family: ClassVar[str] = "double_well"
    weight: float
    offset: float = 0.0

    depends_on_mean: ClassVar[bool] = False
    control_rule: ClassVar[str] = "grid"
    convex_in_control: ClassVar[bool] = False

    def __post_init__(self):
        object.__setattr__(self, "weight", float(self.weight))
        object.__setattr__(self, "offset", float(self.offset))

    def __call__(self, t, X, y, G):
        G = np.atleast_2d(G)
        r = np.sum(G * G, axis=1) - 1.0
        return self.offset + self.weight * r * r


# ---------------------------------------------------------------------
# Terminal / exit cost F(t, x)
# ---------------------------------------------------------------------
# smooth_extension records whether the family admits a C^{1,2} extension
# compatible with the boundary data; it cannot be checked numerically.

@dataclass(frozen=True)
class ConstantTerminal(Family):
    family: ClassVar[str] = "constant"
    value: float

    smooth_extension: ClassVar[bool] = True

    def __post_init__(self):
        object.__setattr__(self, "value", float(self.value))

    def __call__(self, t, X):
        return np.full(np.atleast_2d(X).shape[0], self.value)


@dataclass(frozen=True)
class QuadraticTerminal(Family):
    family: ClassVar[str] = "quadratic"
    weight: float
    offset: float = 0.0

    smooth_extension: ClassVar[bool] = True

    def __post_init__(self):
        object.__setattr__(self, "weight", float(self.weight))
        object.__setattr__(self, "offset", float(self.offset))

    def __call__(self, t, X):
        X = np.atleast_2d(X)
        return self.offset + self.weight * np.sum(X * X, axis=1)


@dataclass(frozen=True)
class BilinearTerminal(Family):
    """F = offset + scale·x_i·x_j with both coordinates clipped to [lower, upper]."""

    family: ClassVar[str] = "bilinear"
    offset: float
    scale: float
    first: int
    second: int
    lower: tuple
    upper: tuple

    smooth_extension: ClassVar[bool] = True

    def __post_init__(self):
        object.__setattr__(self, "offset", float(self.offset))
        object.__setattr__(self, "scale", float(self.scale))
        object.__setattr__(self, "first", int(self.first))
        object.__setattr__(self, "second", int(self.second))
        object.__setattr__(self, "lower", _vec(self.lower))
        object.__setattr__(self, "upper", _vec(self.upper))

    def __call__(self, t, X):
        X = np.clip(np.atleast_2d(X), np.array(self.lower), np.array(self.upper))
        return self.offset + self.scale * X[:, self.first] * X[:, self.second]


FAMILIES = {
    "drift": {cls.family: cls for cls in (ConstantDrift, AffineDrift, SaturatedMeanDrift)},
    "w": {cls.family: cls for cls in (CoordinateIntegrand, ClippedCoordinateIntegrand, AffineIntegrand)},
    "f": {cls.family: cls for cls in (ConstantCost, QuadraticCost, AbsControlCost, DoubleWellCost)},
    "F": {cls.family: cls for cls in (ConstantTerminal, QuadraticTerminal, BilinearTerminal)},
}


def build_family(slot: str, family: str, params: dict):
    try:
        cls = FAMILIES[slot][family]
    except KeyError:
        known = ", ".join(sorted(FAMILIES.get(slot, {})))
        raise KeyError(f"Unknown {slot} family {family!r} (known: {known}).") from None
    return cls(**params)


def describe_family(instance: Family) -> dict:
    return {"family": instance.family, "params": instance.params()}

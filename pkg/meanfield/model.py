"""
Model data of a mean field game with absorption.

Houses the coefficient set (b̄, w, f, F, σ, Γ, O, T) together with the initial
law ν, and the randomized probing that checks the standing assumptions.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Any

import numpy as np

from .conf import solver_setting
from .exceptions import ContractViolation, NumericalError

logger = logging.getLogger(__name__)

CONTAINMENT_TOL = 1e-12


# ---------------------------------------------------------------------
# Action box Γ
# ---------------------------------------------------------------------

@dataclass(frozen=True)
class ActionBox:
    lower: tuple
    upper: tuple

    def __post_init__(self):
        lower = tuple(float(v) for v in self.lower)
        upper = tuple(float(v) for v in self.upper)
        if len(lower) != len(upper):
            raise ContractViolation("Action box bounds must have the same dimension.")
        if any(lo > hi for lo, hi in zip(lower, upper)):
            raise ContractViolation(f"Action box needs lower <= upper, got {lower} / {upper}.")
        if not all(math.isfinite(v) for v in lower + upper):
            raise ContractViolation("Action box must be compact (finite bounds).")
        object.__setattr__(self, "lower", lower)
        object.__setattr__(self, "upper", upper)

    @property
    def dim(self) -> int:
        return len(self.lower)

    @property
    def active_mask(self) -> np.ndarray:
        """Coordinates allowed to vary; inactive ones have lower == upper."""
        return np.array(self.lower) < np.array(self.upper)

    @property
    def max_norm(self) -> float:
        corner = np.maximum(np.abs(self.lower), np.abs(self.upper))
        return float(np.linalg.norm(corner))

    def project(self, G) -> np.ndarray:
        return np.clip(np.asarray(G, dtype=float), np.array(self.lower), np.array(self.upper))

    def contains(self, G, tol: float = CONTAINMENT_TOL) -> np.ndarray:
        G = np.atleast_2d(np.asarray(G, dtype=float))
        return np.all((G >= np.array(self.lower) - tol) & (G <= np.array(self.upper) + tol), axis=1)

    def rest_action(self) -> np.ndarray:
        """Projection of 0 onto Γ: the action recorded once a player is absorbed."""
        return self.project(np.zeros(self.dim))


# ---------------------------------------------------------------------
# Absorbing domain O
# ---------------------------------------------------------------------

DOMAIN_KINDS = ("box", "ball", "halfspace_intersection", "capped_box")


@dataclass(frozen=True)
class AbsorbingDomain:
    """
    Open bounded set O.

    - ``box``: {lower < x < upper}
    - ``ball``: {|x − center| < radius}
    - ``halfspace_intersection``: {A x < b}; must be bounded
    - ``capped_box``: box ∩ {x_k < a + s·exp(x_l − c)} for every cap

    Points within ``boundary_tol`` of ∂O count as outside.
    """

    kind: str
    parameters: dict = field(hash=False)
    boundary_tol: float = 1e-9

    def __post_init__(self):
        if self.kind not in DOMAIN_KINDS:
            raise ContractViolation(f"Unknown domain kind {self.kind!r}.")
        p = dict(self.parameters)
        if self.kind in ("box", "capped_box"):
            lower, upper = np.array(p["lower"], float), np.array(p["upper"], float)
            if lower.shape != upper.shape or np.any(lower >= upper):
                raise ContractViolation("Box domain needs lower < upper componentwise.")
        elif self.kind == "ball":
            if float(p["radius"]) <= 0:
                raise ContractViolation("Ball domain needs a positive radius.")
        else:
            if "bounding_box" not in p:
                raise ContractViolation("halfspace_intersection needs a bounding_box to certify boundedness.")
        object.__setattr__(self, "parameters", p)

    # -- geometry -------------------------------------------------------

    @property
    def dim(self) -> int:
        p = self.parameters
        if self.kind in ("box", "capped_box"):
            return len(p["lower"])
        if self.kind == "ball":
            return len(p["center"])
        return len(p["bounding_box"]["lower"])

    @property
    def bounding_box(self) -> tuple[np.ndarray, np.ndarray]:
        p = self.parameters
        if self.kind in ("box", "capped_box"):
            return np.array(p["lower"], float), np.array(p["upper"], float)
        if self.kind == "ball":
            c = np.array(p["center"], float)
            r = float(p["radius"])
            return c - r, c + r
        box = p["bounding_box"]
        return np.array(box["lower"], float), np.array(box["upper"], float)

    @property
    def bounding_radius(self) -> float:
        lower, upper = self.bounding_box
        return float(np.max(np.maximum(np.abs(lower), np.abs(upper))) * math.sqrt(self.dim))

    @property
    def is_box(self) -> bool:
        return self.kind == "box"

    def margins(self, X) -> np.ndarray:
        """
        Signed slack of the tightest constraint for every row of X.

        Positive inside O, zero on ∂O, negative outside.
        """
        X = np.atleast_2d(np.asarray(X, dtype=float))
        p = self.parameters
        if self.kind in ("box", "capped_box"):
            lower, upper = self.bounding_box
            slack = np.minimum(X - lower, upper - X).min(axis=1)
            if self.kind == "capped_box":
                for cap in p.get("caps", []):
                    bound = float(cap["offset"]) + float(cap["scale"]) * np.exp(
                        X[:, int(cap["source"])] - float(cap["shift"])
                    )
                    slack = np.minimum(slack, bound - X[:, int(cap["coordinate"])])
            return slack
        if self.kind == "ball":
            c = np.array(p["center"], float)
            return float(p["radius"]) - np.linalg.norm(X - c, axis=1)
        A = np.atleast_2d(np.array(p["normals"], float))
        b = np.array(p["offsets"], float)
        slack = (b - X @ A.T).min(axis=1)
        lower, upper = self.bounding_box
        return np.minimum(slack, np.minimum(X - lower, upper - X).min(axis=1))

    def contains(self, X) -> np.ndarray:
        return self.margins(X) > self.boundary_tol

    def sample_interior(self, rng: np.random.Generator, n: int) -> np.ndarray:
        """Rejection sampling from the bounding box."""
        lower, upper = self.bounding_box
        out = []
        have = 0
        for _ in range(1000):
            draw = rng.uniform(lower, upper, size=(max(2 * (n - have), 16), self.dim))
            keep = draw[self.contains(draw)]
            out.append(keep)
            have += keep.shape[0]
            if have >= n:
                break
        points = np.concatenate(out)[:n]
        if points.shape[0] < n:
            raise ContractViolation("Domain interior too thin to sample; is O empty?")
        return points


# ---------------------------------------------------------------------
# Initial law ν
# ---------------------------------------------------------------------

LAW_KINDS = ("dirac", "product_of_atoms", "uniform_on_box", "gaussian_truncated")


@dataclass(frozen=True)
class InitialLaw:
    """
    Initial distribution ν; the N-player law is always the i.i.d. product ⊗^N ν.

    - ``dirac``: {"point": [...]}
    - ``product_of_atoms``: {"atoms": [[...], ...], "weights": [[...], ...]} per coordinate
    - ``uniform_on_box``: {"lower": [...], "upper": [...]}
    - ``gaussian_truncated``: {"mean": [...], "std": [...]}, conditioned on O
    """

    kind: str
    parameters: dict = field(hash=False)
    support_check: bool = True

    def __post_init__(self):
        if self.kind not in LAW_KINDS:
            raise ContractViolation(f"Unknown initial law kind {self.kind!r}.")
        object.__setattr__(self, "parameters", dict(self.parameters))

    @property
    def dim(self) -> int:
        p = self.parameters
        if self.kind == "dirac":
            return len(p["point"])
        if self.kind == "product_of_atoms":
            return len(p["atoms"])
        if self.kind == "uniform_on_box":
            return len(p["lower"])
        return len(p["mean"])

    def atoms(self) -> tuple[np.ndarray, np.ndarray] | None:
        """Support points and weights when ν has finite support, else None."""
        p = self.parameters
        if self.kind == "dirac":
            return np.array([p["point"]], float), np.array([1.0])
        if self.kind != "product_of_atoms":
            return None
        points = np.zeros((1, 0))
        weights = np.ones(1)
        for values, probs in zip(p["atoms"], self._coordinate_weights()):
            values = np.array(values, float)
            points = np.concatenate(
                [np.repeat(points, len(values), axis=0), np.tile(values, points.shape[0])[:, None]], axis=1
            )
            weights = np.outer(weights, probs).ravel()
        return points, weights

    def _coordinate_weights(self) -> list[np.ndarray]:
        p = self.parameters
        given = p.get("weights")
        out = []
        for i, values in enumerate(p["atoms"]):
            if given is None:
                out.append(np.full(len(values), 1.0 / len(values)))
            else:
                w = np.array(given[i], float)
                out.append(w / w.sum())
        return out

    def sample(self, rng: np.random.Generator, n: int, domain: AbsorbingDomain | None = None) -> np.ndarray:
        p = self.parameters
        if self.kind == "dirac":
            return np.tile(np.array(p["point"], float), (n, 1))
        if self.kind == "product_of_atoms":
            cols = []
            for values, probs in zip(p["atoms"], self._coordinate_weights()):
                cols.append(rng.choice(np.array(values, float), size=n, p=probs))
            return np.stack(cols, axis=1)
        if self.kind == "uniform_on_box":
            return rng.uniform(np.array(p["lower"], float), np.array(p["upper"], float), size=(n, self.dim))
        mean, std = np.array(p["mean"], float), np.array(p["std"], float)
        if domain is None:
            raise ContractViolation("gaussian_truncated sampling needs the domain to truncate to.")
        out = []
        have = 0
        for _ in range(1000):
            draw = rng.normal(mean, std, size=(max(2 * (n - have), 16), self.dim))
            keep = draw[domain.contains(draw)]
            out.append(keep)
            have += keep.shape[0]
            if have >= n:
                break
        return np.concatenate(out)[:n]

    def support_fraction(self, domain: AbsorbingDomain, draws: int = 10_000, seed: int = 0) -> float:
        """Fraction of draws inside O; must be 1 for a valid ν."""
        atoms = self.atoms()
        if atoms is not None:
            points, weights = atoms
            return float(weights[domain.contains(points)].sum())
        sample = self.sample(np.random.default_rng(seed), draws, domain)
        return float(np.mean(domain.contains(sample)))


# ---------------------------------------------------------------------
# Coefficient set
# ---------------------------------------------------------------------

@dataclass(frozen=True)
class CoefficientSet:
    dim_d: int
    dim_d0: int
    horizon_T: float
    sigma: Any
    drift_bbar: Any
    integrand_w: Any
    running_cost_f: Any
    terminal_cost_F: Any
    action_space: ActionBox
    domain: AbsorbingDomain
    bound_K: float
    lipschitz_Lbar: float
    initial_law: InitialLaw | None = None
    name: str = ""

    def __post_init__(self):
        sigma = np.array(self.sigma, dtype=float).reshape(self.dim_d, self.dim_d)
        sigma.setflags(write=False)
        object.__setattr__(self, "sigma", sigma)
        if self.horizon_T <= 0:
            raise ContractViolation("horizon_T must be positive.")
        if self.action_space.dim != self.dim_d or self.domain.dim != self.dim_d:
            raise ContractViolation("Γ, O and the state dimension d must agree.")
        if self.integrand_w.dim != self.dim_d0:
            raise ContractViolation("w must map into R^{d0}.")

    @property
    def sigma_is_degenerate(self) -> bool:
        return bool(abs(np.linalg.det(self.sigma)) < 1e-14)

    @property
    def is_decoupled(self) -> bool:
        """True when neither b̄ nor f reads the measure variable (constant best-response map)."""
        return not (self.drift_bbar.depends_on_mean or self.running_cost_f.depends_on_mean)

    def w_at_origin(self) -> np.ndarray:
        """w(0): the conditional mean reported when no player survives (δ₀ convention)."""
        return self.integrand_w(np.zeros((1, self.dim_d)))[0]

    def drift(self, t: float, X, m, G) -> np.ndarray:
        """Batched b = γ + b̄(t, x, m), no contract checks."""
        return np.atleast_2d(G) + self.drift_bbar(t, np.atleast_2d(X), np.atleast_1d(m))


def drift_full(coeffs: CoefficientSet, t: float, x, m, gamma) -> np.ndarray:
    """
    Evaluate b(t, x, m, γ) = γ + b̄(t, x, m) at a single point.

    Raises ContractViolation when γ ∉ Γ or t ∉ [0, T]; NumericalError on
    non-finite inputs.
    """
    x = np.asarray(x, dtype=float)
    m = np.atleast_1d(np.asarray(m, dtype=float))
    gamma = np.asarray(gamma, dtype=float)
    for name, value in (("t", np.asarray(t, float)), ("x", x), ("m", m), ("gamma", gamma)):
        if not np.all(np.isfinite(value)):
            raise NumericalError("Non-finite input to drift_full", argument=name)
    if not coeffs.action_space.contains(gamma)[0]:
        raise ContractViolation(f"Action {gamma.tolist()} lies outside Γ.")
    if t < -CONTAINMENT_TOL or t > coeffs.horizon_T + CONTAINMENT_TOL:
        raise ContractViolation(f"Time {t} outside [0, {coeffs.horizon_T}].")
    return coeffs.drift(t, x[None, :], m, gamma[None, :])[0]


# ---------------------------------------------------------------------
# Assumption probing
# ---------------------------------------------------------------------

@dataclass
class ValidationEntry:
    check: str
    observed: float
    limit: float
    passed: bool
    note: str = ""


@dataclass
class ValidationReport:
    probes: int
    rng_seed: int
    entries: list[ValidationEntry] = field(default_factory=list)
    notes: list[str] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return all(e.passed for e in self.entries)

    @property
    def violations(self) -> list[ValidationEntry]:
        return [e for e in self.entries if not e.passed]

    def entry(self, check: str) -> ValidationEntry:
        for e in self.entries:
            if e.check == check:
                return e
        raise KeyError(check)

    def as_dict(self) -> dict:
        return {
            "probes": self.probes,
            "rng_seed": self.rng_seed,
            "passed": self.passed,
            "entries": [vars(e) for e in self.entries],
            "notes": list(self.notes),
        }


def validate(coeffs: CoefficientSet, probes: int, rng_seed: int, lipschitz_tolerance: float = 1e-6) -> ValidationReport:
    """
    Probe the standing assumptions at random points.

    Violations are report entries, never exceptions. States are drawn inside
    O, means in [−K, K]^{d0}, actions in Γ.
    """
    if probes < 1:
        raise ContractViolation("probes must be >= 1.")
    rng = np.random.default_rng(rng_seed)
    report = ValidationReport(probes=probes, rng_seed=rng_seed)
    K = coeffs.bound_K
    T = coeffs.horizon_T
    d0 = coeffs.dim_d0

    t = rng.uniform(0.0, T, size=probes)
    X = coeffs.domain.sample_interior(rng, probes)
    X2 = coeffs.domain.sample_interior(rng, probes)
    Y = rng.uniform(-K, K, size=(probes, d0))
    Y2 = rng.uniform(-K, K, size=(probes, d0))
    lower, upper = np.array(coeffs.action_space.lower), np.array(coeffs.action_space.upper)
    G = rng.uniform(lower, upper, size=(probes, coeffs.dim_d))

    bbar = np.empty(probes)
    bbar2 = np.empty(probes)
    fvals = np.empty(probes)
    Fvals = np.empty(probes)
    wvals = np.linalg.norm(coeffs.integrand_w(X), axis=1)
    for i in range(probes):
        b1 = coeffs.drift_bbar(t[i], X[i : i + 1], Y[i])[0]
        b2 = coeffs.drift_bbar(t[i], X2[i : i + 1], Y2[i])[0]
        bbar[i] = np.linalg.norm(b1)
        bbar2[i] = np.linalg.norm(b1 - b2) / max(
            np.linalg.norm(X[i] - X2[i]) + np.linalg.norm(Y[i] - Y2[i]), 1e-300
        )
        fvals[i] = coeffs.running_cost_f(t[i], X[i : i + 1], Y[i], G[i : i + 1])[0]
        Fvals[i] = coeffs.terminal_cost_F(t[i], X[i : i + 1])[0]

    def bound_entry(check, values):
        observed = float(np.max(np.abs(values)))
        report.entries.append(ValidationEntry(check, observed, K, observed <= K))

    bound_entry("bound_bbar", bbar)
    bound_entry("bound_w", wvals)
    bound_entry("bound_f", fvals)
    bound_entry("bound_F", Fvals)

    for check, values in (("nonnegative_f", fvals), ("nonnegative_F", Fvals)):
        lowest = float(np.min(values))
        report.entries.append(ValidationEntry(check, lowest, 0.0, lowest >= 0.0))

    quotient = float(np.max(bbar2))
    limit = coeffs.lipschitz_Lbar * (1.0 + lipschitz_tolerance)
    report.entries.append(ValidationEntry("lipschitz_bbar", quotient, coeffs.lipschitz_Lbar, quotient <= limit))

    # Domain sanity: own interior sample inside, far points outside.
    far = np.zeros((1, coeffs.dim_d))
    far[0, 0] = 2.0 * coeffs.domain.bounding_radius + 1.0
    interior_ok = bool(np.all(coeffs.domain.contains(X)))
    far_ok = not bool(coeffs.domain.contains(far)[0])
    report.entries.append(
        ValidationEntry("domain_membership", float(interior_ok and far_ok), 1.0, interior_ok and far_ok)
    )

    if coeffs.initial_law is not None and coeffs.initial_law.support_check:
        fraction = coeffs.initial_law.support_fraction(coeffs.domain, draws=10_000, seed=rng_seed)
        report.entries.append(ValidationEntry("initial_law_support", fraction, 1.0, fraction >= 1.0))

    if coeffs.sigma_is_degenerate:
        report.notes.append("degenerate sigma: non-degeneracy fails, approximate-Nash results do not apply")
    if not coeffs.terminal_cost_F.smooth_extension:
        report.notes.append("F has no declared smooth extension; value-function regularity not guaranteed")

    for entry in report.violations:
        logger.warning("assumption check failed check=%s observed=%g limit=%g", entry.check, entry.observed, entry.limit)
    return report


def default_boundary_tol() -> float:
    return float(solver_setting("BOUNDARY_TOL"))

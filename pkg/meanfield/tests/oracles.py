"""Closed-form reference values used across the test modules."""
import math
from fractions import Fraction
from pathlib import Path

from django.conf import settings

DESCRIPTORS = Path(settings.BASE_DIR) / "descriptors"

# Player-1 costs under the counter-example strategy and under v = (−1, 0, 0).
COUNTEREXAMPLE_COSTS = {
    2: (Fraction(487, 192), Fraction(251, 96)),
    3: (Fraction(33, 12), Fraction(31, 12)),
    5: (Fraction(265, 96), Fraction(249, 96)),
}


def interval_survival(x: float, t: float, half_width: float, sigma: float, terms: int = 200) -> float:
    """ℙ(τ > t) for x + σW started inside (−a, a)."""
    a = half_width
    total = 0.0
    for n in range(1, 2 * terms, 2):
        total += (
            4.0
            / (n * math.pi)
            * math.sin(n * math.pi * (x + a) / (2.0 * a))
            * math.exp(-(n**2) * math.pi**2 * sigma**2 * t / (8.0 * a**2))
        )
    return total

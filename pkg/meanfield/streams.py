"""
Counter-based random streams.

Every stream is a Philox generator whose 128-bit key is built from
(master seed, purpose, replication, particle). Draws inside a stream are
consumed in step order, so a (seed, replication, particle) triple gives the
same numbers no matter which thread builds it or in what order streams are
created. No global RNG state is used anywhere in the toolkit.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

# purpose tags occupy the top 4 bits of the second key word
NOISE = 0
INITIAL = 1
BRIDGE = 2
AUXILIARY = 3

_MASK64 = (1 << 64) - 1
_MAX_REPLICATION = 1 << 28
_MAX_PARTICLE = 1 << 32


def stream_key(seed: int, replication: int, particle: int, purpose: int = NOISE) -> np.ndarray:
    if not 0 <= replication < _MAX_REPLICATION:
        raise ValueError(f"replication {replication} outside [0, 2^28).")
    if not 0 <= particle < _MAX_PARTICLE:
        raise ValueError(f"particle {particle} outside [0, 2^32).")
    low = int(seed) & _MASK64
    high = (int(purpose) << 60) | (int(replication) << 32) | int(particle)
    return np.array([low, high], dtype=np.uint64)


def generator(seed: int, replication: int, particle: int, purpose: int = NOISE) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(key=stream_key(seed, replication, particle, purpose)))


@dataclass(frozen=True)
class NoiseStream:
    """Standard normal d-vectors for one (replication, particle) pair, one per time step."""

    seed: int
    replication: int
    particle: int

    @property
    def stream_id(self) -> tuple[int, int]:
        return (self.replication, self.particle)

    def normals(self, n_steps: int, dim: int) -> np.ndarray:
        return generator(self.seed, self.replication, self.particle, NOISE).standard_normal((n_steps, dim))

    def uniforms(self, n_steps: int) -> np.ndarray:
        """Independent uniforms for the bridge-crossing test; separate key so normals are unaffected."""
        return generator(self.seed, self.replication, self.particle, BRIDGE).random(n_steps)


def noise_block(seed: int, replication: int, particles, n_steps: int, dim: int) -> np.ndarray:
    """Stack per-particle normals into shape (n_steps, n_particles, dim)."""
    particles = list(particles)
    out = np.empty((n_steps, len(particles), dim))
    for col, p in enumerate(particles):
        out[:, col, :] = NoiseStream(seed, replication, p).normals(n_steps, dim)
    return out


def bridge_block(seed: int, replication: int, particles, n_steps: int) -> np.ndarray:
    particles = list(particles)
    out = np.empty((n_steps, len(particles)))
    for col, p in enumerate(particles):
        out[:, col] = NoiseStream(seed, replication, p).uniforms(n_steps)
    return out


def initial_states(law, domain, seed: int, replication: int, particles) -> np.ndarray:
    """One draw from ν per particle, each from the particle's own INITIAL stream."""
    rows = [law.sample(generator(seed, replication, p, INITIAL), 1, domain)[0] for p in particles]
    return np.array(rows, dtype=float).reshape(len(rows), -1)

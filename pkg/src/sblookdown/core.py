"""Domain types, random streams and the configuration maps shared by both forward models.

Rate convention used throughout the package: an active individual (or
block) turns dormant at rate ``sigma``, a dormant one wakes at rate
``alpha``.  Hence dormancy lengths are Exp(alpha) and the stationary
probability of being active is ``p = alpha / (alpha + sigma)``.

Levels and particle positions are 1-based in every public function, so
that level 1 is the bottom level of the lookdown.
"""

from __future__ import annotations

import enum
import zlib
from dataclasses import dataclass, replace
from fractions import Fraction
from numbers import Real
from typing import Iterable, Iterator, Sequence

import numpy as np


class ActivityState(enum.Enum):
    ACTIVE = "a"
    DORMANT = "d"

    @classmethod
    def parse(cls, value):
        if isinstance(value, cls):
            return value
        return cls(value)

    def __str__(self):
        return self.value


ACTIVE = ActivityState.ACTIVE
DORMANT = ActivityState.DORMANT


@dataclass(frozen=True)
class ModelParams:
    """Rates and sizes of a seed-bank model.

    ``alpha`` is the wake-up rate, ``sigma`` the rate of entering dormancy.
    Rates may be given as ``Fraction`` to keep exact arithmetic downstream.
    """

    alpha: Real
    sigma: Real
    pop_size: int | None = None
    sample_size: int | None = None

    def __post_init__(self):
        for name in ("alpha", "sigma"):
            value = getattr(self, name)
            if isinstance(value, bool) or not isinstance(value, Real):
                raise TypeError(f"{name} must be a real number, got {value!r}")
            if not value > 0 or not np.isfinite(float(value)):
                raise ValueError(f"{name} must be a positive finite rate, got {value!r}")
        if self.pop_size is not None and (int(self.pop_size) != self.pop_size or self.pop_size < 1):
            raise ValueError(f"pop_size must be a positive integer, got {self.pop_size!r}")
        if self.sample_size is not None:
            if int(self.sample_size) != self.sample_size or self.sample_size < 1:
                raise ValueError(f"sample_size must be a positive integer, got {self.sample_size!r}")
            if self.pop_size is not None and self.sample_size > self.pop_size:
                raise ValueError("sample_size cannot exceed pop_size")

    @property
    def p(self):
        """Stationary probability of being active."""
        return self.alpha / (self.alpha + self.sigma)

    @property
    def p_float(self) -> float:
        return float(self.p)

    def exact(self) -> "ModelParams":
        """Copy with the rates converted to exact fractions."""
        return replace(self, alpha=Fraction(self.alpha), sigma=Fraction(self.sigma))


@dataclass(frozen=True, order=True)
class Particle:
    type_id: int
    state: ActivityState

    def __post_init__(self):
        if int(self.type_id) != self.type_id or self.type_id < 0:
            raise ValueError(f"type_id must be a non-negative integer, got {self.type_id!r}")
        object.__setattr__(self, "type_id", int(self.type_id))
        object.__setattr__(self, "state", ActivityState.parse(self.state))

    @property
    def active(self) -> bool:
        return self.state is ACTIVE

    def __iter__(self):
        yield self.type_id
        yield self.state

    def __repr__(self):
        return f"({self.type_id},{self.state.value})"


@dataclass(frozen=True)
class Configuration:
    """Ordered vector of particles; position ``i`` (1-based) is level ``i``."""

    particles: tuple[Particle, ...]

    def __post_init__(self):
        object.__setattr__(
            self,
            "particles",
            tuple(p if isinstance(p, Particle) else Particle(*p) for p in self.particles),
        )

    @classmethod
    def of(cls, pairs: Iterable) -> "Configuration":
        """Build from ``(type, state)`` pairs, e.g. ``[(0, "a"), (1, "d")]``."""
        return cls(tuple(pairs))

    def __len__(self) -> int:
        return len(self.particles)

    def __iter__(self) -> Iterator[Particle]:
        return iter(self.particles)

    def __getitem__(self, i):
        return self.particles[i]

    def level(self, i: int) -> Particle:
        return self.particles[_check_index(i, len(self))]

    def types(self) -> tuple[int, ...]:
        return tuple(p.type_id for p in self.particles)

    def states(self) -> tuple[ActivityState, ...]:
        return tuple(p.state for p in self.particles)

    def n_active(self) -> int:
        return sum(p.active for p in self.particles)

    def permuted(self, perm: Sequence[int]) -> "Configuration":
        """Configuration whose k-th particle is ``self[perm[k]]`` (0-based perm)."""
        return Configuration(tuple(self.particles[k] for k in perm))

    def as_pairs(self) -> list[tuple[int, str]]:
        return [(p.type_id, p.state.value) for p in self.particles]

    def __repr__(self):
        return "[" + ",".join(repr(p) for p in self.particles) + "]"


def _check_index(i: int, n: int) -> int:
    if int(i) != i or not 1 <= i <= n:
        raise IndexError(f"level index {i!r} out of range 1..{n}")
    return int(i) - 1


def _with_particle(z: Configuration, k: int, particle: Particle) -> Configuration:
    parts = list(z.particles)
    parts[k] = particle
    return Configuration(tuple(parts))


def phi_deactivate(z: Configuration, i: int) -> Configuration:
    k = _check_index(i, len(z))
    return _with_particle(z, k, Particle(z[k].type_id, DORMANT))


def phi_activate(z: Configuration, i: int) -> Configuration:
    k = _check_index(i, len(z))
    return _with_particle(z, k, Particle(z[k].type_id, ACTIVE))


def phi_reproduce(z: Configuration, i: int, j: int) -> Configuration:
    """Particle ``j`` adopts the type of particle ``i`` if both are active."""
    a = _check_index(i, len(z))
    b = _check_index(j, len(z))
    if a == b:
        raise ValueError("reproduction needs two distinct particles")
    if not (z[a].active and z[b].active):
        return z
    return _with_particle(z, b, Particle(z[a].type_id, z[b].state))


def _purpose_code(purpose: str) -> int:
    return zlib.crc32(purpose.encode("utf-8"))


class RandomSource:
    """Seeded random stream with independent, reproducible substreams.

    A substream is keyed by a purpose string and any number of
    non-negative integers (level index, pair indices, replicate index).
    Two sources with the same seed and key produce identical draws.
    """

    def __init__(self, seed: int, key: tuple[int, ...] = ()):
        if int(seed) != seed or seed < 0 or seed >= 2**64:
            raise ValueError(f"seed must be an integer in [0, 2**64), got {seed!r}")
        self.seed = int(seed)
        self.key = tuple(int(k) for k in key)
        self.generator = np.random.Generator(
            np.random.PCG64(np.random.SeedSequence(self.seed, spawn_key=self.key))
        )

    def substream(self, purpose: str, *indices: int) -> "RandomSource":
        return RandomSource(self.seed, self.key + (_purpose_code(purpose),) + tuple(indices))

    def uniform(self, size=None):
        return self.generator.random(size)

    def exponential(self, rate, size=None):
        return self.generator.exponential(1.0 / float(rate), size)

    def bernoulli(self, prob, size=None):
        return self.generator.random(size) < float(prob)

    def poisson_times(self, rate, horizon: float) -> np.ndarray:
        """Occurrence times of a homogeneous Poisson process on ``(0, horizon]``."""
        count = self.generator.poisson(float(rate) * horizon)
        return np.sort(self.generator.uniform(0.0, horizon, count))

    def seeds(self, count: int) -> np.ndarray:
        """Independent 32-bit seeds for compiled kernels."""
        return self.generator.integers(0, 2**32 - 1, size=count, dtype=np.uint64)

    def __repr__(self):
        return f"RandomSource(seed={self.seed}, key={self.key})"


def sample_stationary_config(
    params: ModelParams,
    typing: str = "all-distinct",
    rng: RandomSource | None = None,
    type_law: Sequence[float] | None = None,
    size: int | None = None,
) -> Configuration:
    """Draw a configuration with i.i.d. stationary activity states.

    ``typing="all-distinct"`` gives level ``i`` type ``i``;
    ``typing="iid-from-law"`` draws each type from ``type_law`` over
    ``0..len(type_law)-1``.
    """
    n = size if size is not None else params.pop_size
    if n is None:
        raise ValueError("population size is required")
    if rng is None:
        raise ValueError("a RandomSource is required")
    gen = rng.generator
    active = gen.random(n) < params.p_float
    if typing == "all-distinct":
        types = np.arange(1, n + 1)
    elif typing == "iid-from-law":
        if type_law is None:
            raise ValueError("iid-from-law typing needs a type_law")
        law = np.asarray(type_law, dtype=float)
        if np.any(law < 0) or not np.isclose(law.sum(), 1.0):
            raise ValueError("type_law must be a probability vector")
        types = gen.choice(len(law), size=n, p=law)
    else:
        raise ValueError(f"unknown typing {typing!r}")
    return Configuration(
        tuple(Particle(int(t), ACTIVE if a else DORMANT) for t, a in zip(types, active))
    )


@dataclass(frozen=True)
class ReplicateRecord:
    """Observables of one simulated replicate together with the seed behind it."""

    replicate: int
    seed: int
    tmrca: float | None = None
    psi_n: float | None = None
    rho_n: float | None = None
    fixation_time: float | None = None
    block_path: tuple | None = None

    def row(self) -> dict:
        return {
            "replicate": self.replicate,
            "seed": self.seed,
            "tmrca": self.tmrca,
            "psi_n": self.psi_n,
            "rho_n": self.rho_n,
            "fixation_time": self.fixation_time,
        }

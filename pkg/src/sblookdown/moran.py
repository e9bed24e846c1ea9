"""Event-driven simulation of the N-particle seed-bank Moran model.

Every particle carries a dormancy clock of rate ``sigma`` and a wake-up
clock of rate ``alpha`` whether or not the event would change it, and
each unordered pair carries an interaction clock of rate 1.  The total
event rate is therefore constant, ``(sigma + alpha) N + N (N - 1) / 2``,
and events that leave the configuration unchanged are kept in the
trajectory with ``effective=False``.
"""

from __future__ import annotations

import bisect
import math
from collections import Counter
from dataclasses import dataclass
from fractions import Fraction
from typing import Iterator

import numpy as np

from .core import (
    ACTIVE,
    DORMANT,
    Configuration,
    ModelParams,
    Particle,
    RandomSource,
)

DEACTIVATE = "deactivate"
ACTIVATE = "activate"
INTERACT = "interact"


@dataclass(frozen=True)
class MoranEvent:
    """One clock ring.  For interactions ``i`` is the parent and ``j`` the replaced particle."""

    time: float
    kind: str
    i: int
    j: int | None = None
    effective: bool = True

    def to_line(self) -> str:
        j = "" if self.j is None else str(self.j)
        return f"{self.time!r}\t{self.kind}\t{self.i}\t{j}\t{int(self.effective)}"


def apply_event(particles: list[Particle], event: MoranEvent) -> bool:
    """Apply ``event`` in place; return whether anything changed."""
    k = event.i - 1
    if event.kind == DEACTIVATE:
        if particles[k].state is DORMANT:
            return False
        particles[k] = Particle(particles[k].type_id, DORMANT)
        return True
    if event.kind == ACTIVATE:
        if particles[k].state is ACTIVE:
            return False
        particles[k] = Particle(particles[k].type_id, ACTIVE)
        return True
    m = event.j - 1
    src, dst = particles[k], particles[m]
    if not (src.active and dst.active) or src.type_id == dst.type_id:
        return False
    particles[m] = Particle(src.type_id, dst.state)
    return True


@dataclass(frozen=True)
class Trajectory:
    initial: Configuration
    events: tuple[MoranEvent, ...]
    horizon: float

    def state_at(self, t: float) -> Configuration:
        """Configuration right after all events with time ``<= t``."""
        if t < 0 or t > self.horizon:
            raise ValueError(f"time {t} outside [0, {self.horizon}]")
        stop = bisect.bisect_right([e.time for e in self.events], t)
        particles = list(self.initial.particles)
        for event in self.events[:stop]:
            apply_event(particles, event)
        return Configuration(tuple(particles))

    def states_at(self, times) -> list[Configuration]:
        """Configurations at several times with a single replay."""
        order = np.argsort(times, kind="stable")
        out: list[Configuration | None] = [None] * len(times)
        particles = list(self.initial.particles)
        pos = 0
        for idx in order:
            t = times[idx]
            if t < 0 or t > self.horizon:
                raise ValueError(f"time {t} outside [0, {self.horizon}]")
            while pos < len(self.events) and self.events[pos].time <= t:
                apply_event(particles, self.events[pos])
                pos += 1
            out[idx] = Configuration(tuple(particles))
        return out

    def final(self) -> Configuration:
        return self.state_at(self.horizon)

    def to_lines(self) -> Iterator[str]:
        """Line-delimited records ``time kind i j effective``."""
        yield "time\tkind\ti\tj\teffective"
        for event in self.events:
            yield event.to_line()


def simulate_moran(
    params: ModelParams,
    init: Configuration,
    horizon: float,
    rng: RandomSource,
) -> Trajectory:
    if not horizon >= 0 or not math.isfinite(horizon):
        raise ValueError(f"horizon must be a finite non-negative time, got {horizon!r}")
    n = len(init)
    sigma, alpha = float(params.sigma), float(params.alpha)
    n_pairs = n * (n - 1) // 2
    weights = np.array([sigma * n, alpha * n, float(n_pairs)])
    total = weights.sum()
    gen = rng.generator

    times = []
    t = 0.0
    # draw inter-event gaps in blocks to keep the Python loop light
    block = max(16, int(total * horizon * 1.2) + 16)
    while True:
        gaps = gen.exponential(1.0 / total, block)
        cum = t + np.cumsum(gaps)
        keep = cum[cum <= horizon]
        times.append(keep)
        if len(keep) < block:
            break
        t = cum[-1]
    times = np.concatenate(times) if times else np.empty(0)
    count = len(times)

    kinds = gen.choice(3, size=count, p=weights / total)
    first = gen.integers(0, n, size=count)
    second = gen.integers(0, max(n - 1, 1), size=count)
    coin = gen.random(count) < 0.5

    particles = list(init.particles)
    events = []
    for t, kind, a, b, flip in zip(times.tolist(), kinds.tolist(), first.tolist(), second.tolist(), coin.tolist()):
        if kind == 0:
            event = MoranEvent(t, DEACTIVATE, a + 1)
        elif kind == 1:
            event = MoranEvent(t, ACTIVATE, a + 1)
        else:
            # uniform unordered pair, then a fair coin for the parent
            if b >= a:
                b += 1
            lo, hi = (a, b) if a < b else (b, a)
            parent, child = (lo, hi) if flip else (hi, lo)
            event = MoranEvent(t, INTERACT, parent + 1, child + 1)
        changed = apply_event(particles, event)
        if not changed:
            event = MoranEvent(event.time, event.kind, event.i, event.j, effective=False)
        events.append(event)
    return Trajectory(init, tuple(events), float(horizon))


def empirical_measure(z: Configuration) -> dict[tuple[int, str], Fraction]:
    """Exact frequency table over observed ``(type, state)`` pairs."""
    counts = Counter((p.type_id, p.state.value) for p in z)
    n = len(z)
    return {key: Fraction(c, n) for key, c in sorted(counts.items())}

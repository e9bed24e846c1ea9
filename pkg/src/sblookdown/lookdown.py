"""Seed-bank lookdown construction.

Each level owns an activity timeline (alternating active/dormant
stretches) and each pair ``j < i`` owns a rate-1 Poisson clock.  A tick
of the clock ``(i, j)`` at which both levels are active makes level
``i`` adopt the current type of level ``j``; the parent is always the
lower level.
"""

from __future__ import annotations

import bisect
import math
from dataclasses import dataclass
from typing import Iterator, Sequence

import numpy as np
from scipy.linalg import expm

from .core import (
    ACTIVE,
    DORMANT,
    ActivityState,
    Configuration,
    ModelParams,
    Particle,
    RandomSource,
)


def _clone(gen: np.random.Generator) -> np.random.Generator:
    """Independent generator continuing from the same state (much cheaper than deepcopy)."""
    bit = type(gen.bit_generator)(0)
    bit.state = gen.bit_generator.state
    return np.random.Generator(bit)


class ActivityTimeline:
    """Activity path of one level.

    ``switch_times`` holds every state change drawn so far, including the
    first one past ``horizon``; the state flips at each of them and is
    right-continuous.
    """

    def __init__(self, level, initial_state, switch_times, horizon, params=None, generator=None):
        self.level = int(level)
        self.initial_state = ActivityState.parse(initial_state)
        self.switch_times = np.asarray(switch_times, dtype=float)
        self.horizon = float(horizon)
        self._params = params
        self._generator = generator
        if np.any(np.diff(self.switch_times) <= 0) or np.any(self.switch_times <= 0):
            raise ValueError("switch times must be positive and strictly increasing")

    def _check_time(self, t):
        if np.any(np.asarray(t) < 0) or np.any(np.asarray(t) > self.horizon):
            raise ValueError(f"time outside [0, {self.horizon}] for level {self.level}")

    def active_mask(self, times) -> np.ndarray:
        times = np.asarray(times, dtype=float)
        self._check_time(times)
        flips = np.searchsorted(self.switch_times, times, side="right")
        start_active = self.initial_state is ACTIVE
        return (flips % 2 == 0) == start_active

    def is_active(self, t: float) -> bool:
        return bool(self.active_mask(t))

    def state_at(self, t: float) -> ActivityState:
        return ACTIVE if self.is_active(t) else DORMANT

    def intervals(self) -> list[tuple[float, float, ActivityState]]:
        """Alternating ``(start, end, state)`` stretches covering ``[0, horizon]``."""
        out = []
        start, state = 0.0, self.initial_state
        for s in self.switch_times:
            end = min(float(s), self.horizon)
            out.append((start, end, state))
            if s >= self.horizon:
                break
            start, state = float(s), (DORMANT if state is ACTIVE else ACTIVE)
        else:
            if start < self.horizon or not out:
                out.append((start, self.horizon, state))
        return out

    def dormant_lengths(self) -> np.ndarray:
        """Lengths of dormant stretches that start at or after 0 and end inside the horizon."""
        out = []
        start, state = 0.0, self.initial_state
        for s in self.switch_times:
            if s > self.horizon:
                break
            if state is DORMANT:
                out.append(float(s) - start)
            start, state = float(s), (DORMANT if state is ACTIVE else ACTIVE)
        return np.array(out)

    def extended(self, horizon: float) -> "ActivityTimeline":
        if horizon <= self.horizon:
            return self
        if self._generator is None:
            raise ValueError("hand-built timeline cannot be extended")
        gen = _clone(self._generator)
        times = list(self.switch_times)
        _continue_timeline(times, self.initial_state, horizon, self._params, gen)
        return ActivityTimeline(self.level, self.initial_state, times, horizon, self._params, gen)

    def __repr__(self):
        return f"ActivityTimeline(level={self.level}, initial={self.initial_state}, switches={len(self.switch_times)})"


def _continue_timeline(times: list, initial_state, horizon, params, gen):
    sigma, alpha = float(params.sigma), float(params.alpha)
    active = (initial_state is ACTIVE) == (len(times) % 2 == 0)
    t = times[-1] if times else 0.0
    while t <= horizon:
        t = t + gen.exponential(1.0 / sigma if active else 1.0 / alpha)
        times.append(t)
        active = not active


def build_timeline(params: ModelParams, level: int, horizon: float, rng: RandomSource) -> ActivityTimeline:
    """Stationary activity timeline on ``[0, horizon]``.

    The level starts active with probability ``p``; active stretches are
    Exp(sigma) and dormant ones Exp(alpha), the initial stretch included
    (memorylessness makes the residual of a stationary stretch a fresh draw).
    """
    if not horizon > 0:
        raise ValueError(f"horizon must be positive, got {horizon!r}")
    gen = _clone(rng.generator)
    initial = ACTIVE if gen.random() < params.p_float else DORMANT
    times: list[float] = []
    _continue_timeline(times, initial, horizon, params, gen)
    return ActivityTimeline(level, initial, times, horizon, params, gen)


class InteractionClock:
    """Rate-1 Poisson clock of the pair ``(i, j)`` with ``j < i``."""

    def __init__(self, pair, ticks, horizon, generator=None, rate=1.0):
        i, j = pair
        if not j < i:
            raise ValueError("clock pairs are (i, j) with j < i")
        self.pair = (int(i), int(j))
        self._buffer = np.asarray(ticks, dtype=float)
        self.horizon = float(horizon)
        self._generator = generator
        self.rate = float(rate)
        self.times = self._buffer[: np.searchsorted(self._buffer, self.horizon, side="right")]

    def extended(self, horizon: float) -> "InteractionClock":
        if horizon <= self.horizon:
            return self
        if self._generator is None:
            raise ValueError("hand-built clock cannot be extended")
        gen = _clone(self._generator)
        buffer = _continue_poisson(self._buffer, horizon, self.rate, gen)
        return InteractionClock(self.pair, buffer, horizon, gen, self.rate)

    def __repr__(self):
        return f"InteractionClock(pair={self.pair}, ticks={len(self.times)})"


def _continue_poisson(buffer: np.ndarray, horizon: float, rate: float, gen) -> np.ndarray:
    # every draw is kept so that extending a clock reproduces a direct build
    chunks = [buffer]
    last = buffer[-1] if len(buffer) else 0.0
    while last <= horizon:
        size = int(rate * (horizon - last) * 1.25) + 8
        gaps = gen.exponential(1.0 / rate, size)
        ticks = np.cumsum(np.concatenate(([last], gaps)))[1:]
        chunks.append(ticks)
        last = ticks[-1]
    return np.concatenate(chunks)


def build_clock(pair, horizon: float, rng: RandomSource, rate: float = 1.0) -> InteractionClock:
    gen = _clone(rng.generator)
    buffer = _continue_poisson(np.empty(0), horizon, rate, gen)
    return InteractionClock(pair, buffer, horizon, gen, rate)


@dataclass(frozen=True)
class FixationRecord:
    fixation_time: float | None
    fixed_type: int

    @property
    def fixed(self) -> bool:
        return self.fixation_time is not None


class LookdownRealization:
    """All randomness of an N-level lookdown on ``[0, horizon]``.

    Queries never draw new randomness; ``extended`` returns a new
    realization whose restriction to the old horizon is unchanged.
    """

    def __init__(
        self,
        params: ModelParams,
        horizon: float,
        timelines: Sequence[ActivityTimeline],
        clocks: dict,
        initial_types: Sequence[int],
    ):
        self.params = params
        self.horizon = float(horizon)
        self.timelines = tuple(timelines)
        self.clocks = dict(clocks)
        self.initial_types = tuple(int(t) for t in initial_types)
        n = len(self.timelines)
        if len(self.initial_types) != n:
            raise ValueError("one initial type per level is required")
        for lv, tl in enumerate(self.timelines, start=1):
            if tl.level != lv:
                raise ValueError(f"timeline {lv} carries level {tl.level}")
        for (i, j) in self.clocks:
            if not 1 <= j < i <= n:
                raise ValueError(f"clock pair {(i, j)} out of range")
        self._effective: dict[int, tuple[np.ndarray, np.ndarray]] = {}
        self._memo: dict[tuple[int, int], int] = {}

    @property
    def size(self) -> int:
        return len(self.timelines)

    def _check(self, i, t):
        if int(i) != i or not 1 <= i <= self.size:
            raise IndexError(f"level {i!r} out of range 1..{self.size}")
        if not 0 <= t <= self.horizon:
            raise ValueError(f"time {t!r} outside [0, {self.horizon}]")

    def effective_events(self, i: int) -> tuple[np.ndarray, np.ndarray]:
        """Times and donor levels of the ticks that let level ``i`` look down."""
        cached = self._effective.get(i)
        if cached is not None:
            return cached
        times, donors = [], []
        own = self.timelines[i - 1]
        for j in range(1, i):
            clock = self.clocks.get((i, j))
            if clock is None or len(clock.times) == 0:
                continue
            ticks = clock.times
            ok = own.active_mask(ticks) & self.timelines[j - 1].active_mask(ticks)
            times.append(ticks[ok])
            donors.append(np.full(int(ok.sum()), j, dtype=np.int64))
        if times:
            t = np.concatenate(times)
            d = np.concatenate(donors)
            order = np.argsort(t, kind="stable")
            result = (t[order], d[order])
        else:
            result = (np.empty(0), np.empty(0, dtype=np.int64))
        self._effective[i] = result
        return result

    def last_interaction(self, i: int, t: float) -> tuple[float, int] | None:
        """Latest both-active tick ``<= t`` between level ``i`` and a lower level."""
        self._check(i, t)
        times, donors = self.effective_events(i)
        k = bisect.bisect_right(times, t)
        if k == 0:
            return None
        return float(times[k - 1]), int(donors[k - 1])

    def resolve_type(self, i: int, t: float) -> int:
        self._check(i, t)
        visited = []
        level, time = i, t
        while True:
            times, donors = self.effective_events(level)
            seg = bisect.bisect_right(times, time)
            key = (level, seg)
            if key in self._memo:
                value = self._memo[key]
                break
            visited.append(key)
            if seg == 0:
                value = self.initial_types[level - 1]
                break
            # the donor level strictly decreases, so this terminates
            level, time = int(donors[seg - 1]), float(times[seg - 1])
        for key in visited:
            self._memo[key] = value
        return value

    def state(self, t: float) -> Configuration:
        if not 0 <= t <= self.horizon:
            raise ValueError(f"time {t!r} outside [0, {self.horizon}]")
        return Configuration(
            tuple(
                Particle(self.resolve_type(lv, t), tl.state_at(t))
                for lv, tl in enumerate(self.timelines, start=1)
            )
        )

    def all_effective_events(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Every type-transmitting tick in time order as ``(times, recipients, donors)``."""
        ts, rs, ds = [], [], []
        for i in range(2, self.size + 1):
            t, d = self.effective_events(i)
            ts.append(t)
            ds.append(d)
            rs.append(np.full(len(t), i, dtype=np.int64))
        if not ts:
            return np.empty(0), np.empty(0, dtype=np.int64), np.empty(0, dtype=np.int64)
        t = np.concatenate(ts)
        order = np.argsort(t, kind="stable")
        return t[order], np.concatenate(rs)[order], np.concatenate(ds)[order]

    def fixation_time(self) -> FixationRecord:
        """First time every level carries the initial type of level 1, if within the horizon."""
        if len(set(self.initial_types)) != self.size:
            raise ValueError("fixation time needs all-distinct initial types")
        target = self.initial_types[0]
        if self.size == 1:
            return FixationRecord(0.0, target)
        types = list(self.initial_types)
        carriers = 1
        times, recipients, donors = self.all_effective_events()
        for t, i, j in zip(times.tolist(), recipients.tolist(), donors.tolist()):
            old, new = types[i - 1], types[j - 1]
            if old == new:
                continue
            types[i - 1] = new
            carriers += (new == target) - (old == target)
            if carriers == self.size:
                return FixationRecord(t, target)
        return FixationRecord(None, target)

    def truncated(self, k: int) -> "LookdownRealization":
        """The first ``k`` levels with their own timelines and clocks."""
        if not 1 <= k <= self.size:
            raise ValueError(f"cannot truncate {self.size} levels to {k}")
        clocks = {pair: c for pair, c in self.clocks.items() if pair[0] <= k}
        return LookdownRealization(
            self.params, self.horizon, self.timelines[:k], clocks, self.initial_types[:k]
        )

    def extended(self, horizon: float) -> "LookdownRealization":
        if horizon <= self.horizon:
            return self
        return LookdownRealization(
            self.params,
            horizon,
            [tl.extended(horizon) for tl in self.timelines],
            {pair: c.extended(horizon) for pair, c in self.clocks.items()},
            self.initial_types,
        )

    def ancestral_level(self, i: int, t: float, back: float) -> int:
        """Level occupied at time ``t - back`` by the ancestor of level ``i`` at time ``t``."""
        self._check(i, t)
        if not 0 <= back <= t:
            raise ValueError("look-back must lie in [0, t]")
        level, time = i, t
        floor = t - back
        while True:
            times, donors = self.effective_events(level)
            seg = bisect.bisect_right(times, time)
            if seg == 0 or times[seg - 1] < floor:
                return level
            level, time = int(donors[seg - 1]), float(times[seg - 1])

    def to_lines(self) -> Iterator[str]:
        """Line-delimited dump of timelines and clock ticks inside the horizon."""
        yield f"lookdown\t{self.size}\t{self.horizon!r}"
        for lv, tl in enumerate(self.timelines, start=1):
            inside = [repr(float(s)) for s in tl.switch_times if s <= self.horizon]
            yield "\t".join(["timeline", str(lv), tl.initial_state.value, *inside])
        for lv, f in enumerate(self.initial_types, start=1):
            yield f"type\t{lv}\t{f}"
        for (i, j) in sorted(self.clocks):
            yield "\t".join(["clock", str(i), str(j), *(repr(float(s)) for s in self.clocks[(i, j)].times)])


def build_realization(
    params: ModelParams,
    size: int,
    horizon: float,
    rng: RandomSource,
    typing: str = "all-distinct",
    type_law: Sequence[float] | None = None,
    initial_types: Sequence[int] | None = None,
) -> LookdownRealization:
    """Draw timelines, clocks and initial types for ``size`` levels.

    Level ``i`` uses the substream ``("timeline", i)``, the pair ``(i, j)``
    the substream ``("clock", i, j)``, so levels and pairs are independent and
    the first ``k`` levels do not depend on the total size.
    """
    if size < 1:
        raise ValueError("at least one level is required")
    timelines = [build_timeline(params, lv, horizon, rng.substream("timeline", lv)) for lv in range(1, size + 1)]
    clocks = {
        (i, j): build_clock((i, j), horizon, rng.substream("clock", i, j))
        for i in range(2, size + 1)
        for j in range(1, i)
    }
    if initial_types is None:
        if typing == "all-distinct":
            initial_types = list(range(1, size + 1))
        elif typing == "iid-from-law":
            if type_law is None:
                raise ValueError("iid-from-law typing needs a type_law")
            gen = rng.substream("types").generator
            initial_types = gen.choice(len(type_law), size=size, p=np.asarray(type_law, float)).tolist()
        else:
            raise ValueError(f"unknown typing {typing!r}")
    return LookdownRealization(params, horizon, timelines, clocks, initial_types)


def last_interaction(realization: LookdownRealization, i: int, t: float):
    return realization.last_interaction(i, t)


def resolve_type(realization: LookdownRealization, i: int, t: float) -> int:
    return realization.resolve_type(i, t)


def lookdown_state(realization: LookdownRealization, t: float) -> Configuration:
    return realization.state(t)


def fixation_time(realization: LookdownRealization) -> FixationRecord:
    return realization.fixation_time()


def _initial_horizon(params: ModelParams, size: int) -> float:
    return max(2.0 * math.log(size * params.p_float) / float(params.alpha), 1.0)


def simulate_fixation(params: ModelParams, size: int, rng: RandomSource, horizon: float | None = None):
    """Fixation time of level 1's type, doubling the horizon until it occurs.

    Returns ``(FixationRecord, realization)``.
    """
    horizon = _initial_horizon(params, size) if horizon is None else horizon
    real = build_realization(params, size, horizon, rng)
    while True:
        record = real.fixation_time()
        if record.fixed:
            return record, real
        real = real.extended(2.0 * real.horizon)


def first_coalescence_with_k(params: ModelParams, i: int, k: int, rng: RandomSource) -> float:
    """First both-active tick between level ``i`` and any of the levels ``1..k``.

    The levels involved are drawn exactly as in ``build_realization`` (same
    substream keys), so the value agrees with a full realization built from
    the same source.
    """
    if not 1 <= k < i:
        raise ValueError(f"need 1 <= k < i, got k={k}, i={i}")
    p = params.p_float
    horizon = 4.0 / (k * p * p)
    own = build_timeline(params, i, horizon, rng.substream("timeline", i))
    lower = [build_timeline(params, j, horizon, rng.substream("timeline", j)) for j in range(1, k + 1)]
    clocks = [build_clock((i, j), horizon, rng.substream("clock", i, j)) for j in range(1, k + 1)]
    while True:
        best = math.inf
        for tl, clock in zip(lower, clocks):
            ticks = clock.times
            if len(ticks) == 0:
                continue
            ok = own.active_mask(ticks) & tl.active_mask(ticks)
            if ok.any():
                best = min(best, float(ticks[np.argmax(ok)]))
        if best < math.inf:
            return best
        horizon *= 2.0
        own = own.extended(horizon)
        lower = [tl.extended(horizon) for tl in lower]
        clocks = [c.extended(horizon) for c in clocks]


def _first_coalescence_chain(params: ModelParams, k: int):
    # transient states (s, m): s = level i active, m = active among the k lower levels
    alpha, sigma, p = float(params.alpha), float(params.sigma), params.p_float
    states = [(s, m) for s in (0, 1) for m in range(k + 1)]
    index = {st: n for n, st in enumerate(states)}
    q = np.zeros((len(states), len(states)))
    start = np.zeros(len(states))
    for (s, m), a in index.items():
        if s:
            q[a, index[(0, m)]] += sigma
        else:
            q[a, index[(1, m)]] += alpha
        if m > 0:
            q[a, index[(s, m - 1)]] += m * sigma
        if m < k:
            q[a, index[(s, m + 1)]] += (k - m) * alpha
        q[a, a] = -q[a].sum() - s * m
        start[a] = (p if s else 1 - p) * math.comb(k, m) * p**m * (1 - p) ** (k - m)
    return q, start


def first_coalescence_cdf(params: ModelParams, k: int, t) -> np.ndarray:
    """Exact law of the first both-active tick with the ``k`` lowest levels.

    The pair of activity processes is a Markov chain and ticks are killed
    only while both are active, so the waiting time is phase-type; it is
    exponential only in the limit of instantly mixing activity states.
    """
    q, start = _first_coalescence_chain(params, k)
    ones = np.ones(len(start))
    ts = np.atleast_1d(np.asarray(t, dtype=float))
    out = np.array([1.0 - start @ expm(q * x) @ ones if x > 0 else 0.0 for x in ts])
    return out if np.ndim(t) else float(out[0])


def first_coalescence_mean(params: ModelParams, k: int) -> float:
    q, start = _first_coalescence_chain(params, k)
    return float(start @ np.linalg.solve(-q, np.ones(len(start))))

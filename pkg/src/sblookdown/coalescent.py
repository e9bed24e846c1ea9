"""Seed-bank coalescent on marked partitions and its block-counting chain.

Pairs of a-flagged blocks merge at rate 1, an a-flag turns into a d-flag
at rate ``sigma`` and a d-flag back into an a-flag at rate ``alpha``.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np

from . import _kernels
from .core import ACTIVE, DORMANT, ActivityState, ModelParams, RandomSource


@dataclass(frozen=True)
class MarkedPartition:
    """Partition of ``{1..k}`` whose blocks carry an activity flag.

    Blocks are stored in canonical order (by smallest element) so that
    equal partitions compare and hash equal.
    """

    blocks: tuple[frozenset, ...]
    flags: tuple[ActivityState, ...]

    def __post_init__(self):
        if len(self.blocks) != len(self.flags):
            raise ValueError("exactly one flag per block is required")
        blocks = [frozenset(int(x) for x in b) for b in self.blocks]
        if any(not b for b in blocks):
            raise ValueError("blocks must be non-empty")
        union = set().union(*blocks) if blocks else set()
        if sum(len(b) for b in blocks) != len(union):
            raise ValueError("blocks must be pairwise disjoint")
        if union != set(range(1, len(union) + 1)):
            raise ValueError("blocks must cover {1..k}")
        pairs = sorted(zip(blocks, (ActivityState.parse(f) for f in self.flags)), key=lambda bf: min(bf[0]))
        object.__setattr__(self, "blocks", tuple(b for b, _ in pairs))
        object.__setattr__(self, "flags", tuple(f for _, f in pairs))

    @classmethod
    def singletons(cls, flags) -> "MarkedPartition":
        flags = [ActivityState.parse(f) for f in flags]
        return cls(tuple(frozenset([i]) for i in range(1, len(flags) + 1)), tuple(flags))

    @property
    def k(self) -> int:
        return sum(len(b) for b in self.blocks)

    def __len__(self):
        return len(self.blocks)

    def count(self) -> "BlockCount":
        n_act = sum(f is ACTIVE for f in self.flags)
        return BlockCount(n_act, len(self.flags) - n_act)

    def merged(self, x: int, y: int) -> "MarkedPartition":
        blocks = [b for n, b in enumerate(self.blocks) if n not in (x, y)]
        flags = [f for n, f in enumerate(self.flags) if n not in (x, y)]
        return MarkedPartition(tuple(blocks) + (self.blocks[x] | self.blocks[y],), tuple(flags) + (ACTIVE,))

    def flipped(self, x: int) -> "MarkedPartition":
        flags = list(self.flags)
        flags[x] = DORMANT if flags[x] is ACTIVE else ACTIVE
        return MarkedPartition(self.blocks, tuple(flags))

    def __repr__(self):
        inner = ", ".join(
            "{" + ",".join(map(str, sorted(b))) + "}" + f.value for b, f in zip(self.blocks, self.flags)
        )
        return f"MarkedPartition({inner})"


@dataclass(frozen=True)
class BlockCount:
    n_active: int
    n_dormant: int

    def __post_init__(self):
        if self.n_active < 0 or self.n_dormant < 0 or self.n_active + self.n_dormant < 1:
            raise ValueError(f"invalid block count ({self.n_active}, {self.n_dormant})")

    @property
    def total(self) -> int:
        return self.n_active + self.n_dormant


def coalescent_transitions(pi: MarkedPartition, params: ModelParams) -> list[tuple[MarkedPartition, float]]:
    """All targets reachable in one jump, with their rates."""
    if len(pi) < 1:
        raise ValueError("partition has no blocks")
    out = []
    act = [n for n, f in enumerate(pi.flags) if f is ACTIVE]
    for x, y in itertools.combinations(act, 2):
        out.append((pi.merged(x, y), 1))
    for n, f in enumerate(pi.flags):
        out.append((pi.flipped(n), params.sigma if f is ACTIVE else params.alpha))
    return out


def stationary_flags(params: ModelParams, n: int, rng: RandomSource) -> list[ActivityState]:
    active = rng.generator.random(n) < params.p_float
    return [ACTIVE if a else DORMANT for a in active]


@dataclass
class CoalescentRun:
    tmrca: float
    rho_n: float
    psi_n: float
    block_path: list[tuple[float, BlockCount]]
    path: list[tuple[float, MarkedPartition]] = field(default_factory=list)

    def lines(self):
        yield "time\tn_active\tn_dormant"
        for t, c in self.block_path:
            yield f"{t!r}\t{c.n_active}\t{c.n_dormant}"


def simulate_coalescent(
    params: ModelParams,
    init: MarkedPartition | None,
    rng: RandomSource,
    n: int | None = None,
    record_path: bool = True,
) -> CoalescentRun:
    """Jump-chain simulation on marked partitions until one block is left.

    ``init=None`` starts from ``n`` singletons with stationary flags.

    Alongside the TMRCA the run records ``rho_n``, the first time at most
    one block remains among those that never carried a d-flag, and
    ``psi_n``, the longest first inactivity period among the lines that
    were dormant at time 0 or fell asleep (untouched so far) before
    ``rho_n``.  Both are read off this path, so ``psi_n <= tmrca`` always.
    """
    if init is None:
        if n is None:
            raise ValueError("either init or n is required")
        init = MarkedPartition.singletons(stationary_flags(params, n, rng))
    gen = rng.generator
    sigma, alpha = float(params.sigma), float(params.alpha)

    blocks = list(init.blocks)
    flags = [f is ACTIVE for f in init.flags]
    tagged = [f for f in flags]
    # start of the current dormancy, and whether it is a first inactivity period
    asleep_since = [0.0 if not f else None for f in flags]
    counts_for_psi = [not f for f in flags]

    t = 0.0
    psi = 0.0
    rho = 0.0 if sum(tagged) <= 1 else None
    block_path = [(0.0, init.count())]
    path = [(0.0, init)] if record_path else []

    while len(blocks) > 1:
        act = [n for n, f in enumerate(flags) if f]
        na = len(act)
        nd = len(blocks) - na
        r_merge = na * (na - 1) / 2.0
        r_sleep = na * sigma
        total = r_merge + r_sleep + nd * alpha
        t += gen.exponential(1.0 / total)
        u = gen.random() * total
        if u < r_merge:
            x, y = sorted(gen.choice(na, size=2, replace=False).tolist())
            x, y = act[x], act[y]
            merged = blocks[x] | blocks[y]
            tag = tagged[x] and tagged[y]
            for idx in (y, x):
                del blocks[idx], flags[idx], tagged[idx], asleep_since[idx], counts_for_psi[idx]
            blocks.append(merged)
            flags.append(True)
            tagged.append(tag)
            asleep_since.append(None)
            counts_for_psi.append(False)
        elif u < r_merge + r_sleep:
            x = act[int(gen.integers(na))]
            flags[x] = False
            asleep_since[x] = t
            counts_for_psi[x] = tagged[x] and rho is None
            tagged[x] = False
        else:
            dor = [n for n, f in enumerate(flags) if not f]
            x = dor[int(gen.integers(nd))]
            if counts_for_psi[x]:
                psi = max(psi, t - asleep_since[x])
            flags[x] = True
            asleep_since[x] = None
            counts_for_psi[x] = False
        if rho is None and sum(tagged) <= 1:
            rho = t
        na = sum(flags)
        block_path.append((t, BlockCount(na, len(flags) - na)))
        if record_path:
            path.append((t, MarkedPartition(tuple(blocks), tuple(ACTIVE if f else DORMANT for f in flags))))
    return CoalescentRun(t, rho, psi, block_path, path)


@dataclass
class BlockCountingRun:
    tmrca: float
    path: list[tuple[float, BlockCount]]


def block_counting_rates(count: BlockCount, params: ModelParams) -> dict[str, float]:
    n, m = count.n_active, count.n_dormant
    return {"merge": n * (n - 1) / 2, "sleep": n * params.sigma, "wake": m * params.alpha}


def simulate_block_counting(
    params: ModelParams, init: BlockCount, rng: RandomSource, record_path: bool = True
) -> BlockCountingRun:
    if not isinstance(init, BlockCount):
        init = BlockCount(*init)
    gen = rng.generator
    n, m = init.n_active, init.n_dormant
    t = 0.0
    path = [(0.0, init)]
    while n + m > 1:
        r_merge = n * (n - 1) / 2.0
        r_sleep = n * float(params.sigma)
        total = r_merge + r_sleep + m * float(params.alpha)
        t += gen.exponential(1.0 / total)
        u = gen.random() * total
        if u < r_merge:
            n -= 1
        elif u < r_merge + r_sleep:
            n, m = n - 1, m + 1
        else:
            n, m = n + 1, m - 1
        if record_path:
            path.append((t, BlockCount(n, m)))
    return BlockCountingRun(t, path)


def block_counting_batch(params: ModelParams, n: int, replicates: int, rng: RandomSource) -> dict[str, np.ndarray]:
    """Many stationary-start paths through the compiled kernel.

    Returns arrays ``tmrca``, ``psi_n`` (coupled, read off the same path),
    ``rho_n``, the initial ``n_active`` and the per-replicate ``seed``.
    """
    if n < 1:
        raise ValueError("n must be positive")
    gen = rng.generator
    n_active = gen.binomial(n, params.p_float, size=replicates).astype(np.int64)
    seeds = rng.seeds(replicates)
    out = _kernels.block_counting_batch(
        seeds, n_active, n - n_active, float(params.alpha), float(params.sigma)
    )
    return {
        "tmrca": out[:, 0],
        "psi_n": out[:, 1],
        "rho_n": out[:, 2],
        "n_active": n_active,
        "seed": seeds,
    }


def _kingman_dormancy_probs(params: ModelParams, n: int) -> np.ndarray:
    i = np.arange(2, n + 1)
    s2 = 2.0 * float(params.sigma)
    return s2 / (s2 + i - 1)


def sample_B_n(params: ModelParams, n: int, rng: RandomSource, size=None):
    """Sum of independent Bernoulli(2 sigma / (2 sigma + i - 1)), i = 2..n."""
    if n < 2:
        raise ValueError("n must be at least 2")
    probs = _kingman_dormancy_probs(params, n)
    shape = (() if size is None else (size,)) + probs.shape
    draws = rng.generator.random(shape) < probs
    return draws.sum(axis=-1)


def sample_M0(params: ModelParams, n: int, rng: RandomSource, size=None):
    """Number of initially dormant lines under stationary flags."""
    return rng.generator.binomial(n, 1.0 - params.p_float, size=size)


def psi_sequence(params: ModelParams, n_max: int, rng: RandomSource) -> np.ndarray:
    """Coupled ``psi_1, ..., psi_{n_max}`` built from one array of draws.

    Line ``i`` contributes its initial dormancy if it starts dormant and,
    for ``i >= 2``, its Kingman-phase dormancy ``delta_i * xi_i``; ``psi_n``
    is the running maximum, hence non-decreasing in ``n``.
    """
    gen = rng.generator
    alpha = float(params.alpha)
    dormant0 = gen.random(n_max) < 1.0 - params.p_float
    xi0 = gen.exponential(1.0 / alpha, n_max)
    delta = np.zeros(n_max, dtype=bool)
    delta[1:] = gen.random(n_max - 1) < _kingman_dormancy_probs(params, n_max)
    xi = gen.exponential(1.0 / alpha, n_max)
    contrib = np.maximum(np.where(dormant0, xi0, 0.0), np.where(delta, xi, 0.0))
    return np.maximum.accumulate(contrib)


def sample_psi_n(params: ModelParams, n: int, rng: RandomSource, size=None):
    """Largest inactivity period: max of ``M_0 + B_n`` i.i.d. Exp(alpha) lengths (0 if none)."""
    if n < 1:
        raise ValueError("n must be positive")
    gen = rng.generator
    alpha = float(params.alpha)
    probs = _kingman_dormancy_probs(params, n) if n >= 2 else np.empty(0)
    reps = 1 if size is None else size
    out = np.empty(reps)
    for r in range(reps):
        k = int(np.count_nonzero(gen.random(n) < 1.0 - params.p_float))
        k += int(np.count_nonzero(gen.random(len(probs)) < probs))
        out[r] = gen.exponential(1.0 / alpha, k).max() if k else 0.0
    return float(out[0]) if size is None else out


def psi_cdf(params: ModelParams, n: int, t, n_mix_samples: int, rng: RandomSource):
    """Mixture estimate of ``P[psi_n <= t] = E[(1 - exp(-alpha t))^(M_0 + B_n)]``."""
    t_arr = np.atleast_1d(np.asarray(t, dtype=float))
    if np.any(t_arr < 0):
        raise ValueError("t must be non-negative")
    m0 = sample_M0(params, n, rng, size=n_mix_samples)
    bn = sample_B_n(params, n, rng, size=n_mix_samples) if n >= 2 else np.zeros(n_mix_samples, int)
    # K takes few distinct values, so average over its empirical law
    values, counts = np.unique(m0 + bn, return_counts=True)
    weights = counts / counts.sum()
    base = 1.0 - np.exp(-float(params.alpha) * t_arr)
    # (1 - e^{-alpha t})^K in log space for large K; 0^0 = 1
    with np.errstate(divide="ignore", invalid="ignore"):
        logs = np.log(base)[:, None] * values[None, :].astype(float)
    powers = np.where(values[None, :] == 0, 1.0, np.exp(logs))
    vals = powers @ weights
    return vals if np.ndim(t) else float(vals[0])

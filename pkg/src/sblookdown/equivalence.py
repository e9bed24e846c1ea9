"""Exact generator comparison of the Moran and lookdown models, plus a dynamic law check.

For a finite type set the state space ``(E' x S)^N`` can be enumerated.
Averaging a generator applied to the indicator of a configuration ``w``
over all coordinate permutations of the argument gives
``(1/N!) sum_pi Q[z_pi, w]``, so the averaged identity for every test
function reduces to comparing the row-permutation sums of the two rate
matrices.  Indicators span all functions, so an exact zero there proves
the identity for every ``f``.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from fractions import Fraction
from typing import Callable, Sequence

import numpy as np
from scipy import sparse, stats as sstats

from .core import Configuration, ModelParams, Particle, RandomSource, sample_stationary_config
from .lookdown import build_realization
from .moran import simulate_moran

MAX_STATES = 10**6
MORAN = "moran"
LOOKDOWN = "lookdown"


@dataclass
class GeneratorMatrix:
    """Rate matrix over all configurations; exact rates are ``matrix / scale``.

    For exact matrices ``matrix`` holds integers and ``scale`` is a
    positive integer; otherwise ``matrix`` is float and ``scale == 1``.
    """

    size: int
    n_types: int
    variant: str
    matrix: sparse.csr_matrix
    scale: int
    exact: bool

    @property
    def n_states(self) -> int:
        return self.matrix.shape[0]

    def codes(self) -> np.ndarray:
        return _all_codes(self.size, self.n_types)

    def index_of(self, z: Configuration) -> int:
        code = np.array([[_particle_code(p, self.n_types) for p in z]])
        return int(_encode(code, self.n_types)[0])

    def configuration(self, index: int) -> Configuration:
        return _decode_config(_all_codes(self.size, self.n_types)[index])

    def rate(self, z: Configuration, w: Configuration):
        value = self.matrix[self.index_of(z), self.index_of(w)]
        return Fraction(int(value), self.scale) if self.exact else float(value)

    def row_sums(self) -> np.ndarray:
        return np.asarray(self.matrix.sum(axis=1)).ravel()


def _particle_code(p: Particle, n_types: int) -> int:
    if p.type_id >= n_types:
        raise ValueError(f"type {p.type_id} outside 0..{n_types - 1}")
    return 2 * p.type_id + (0 if p.active else 1)


def _decode_config(codes) -> Configuration:
    return Configuration(tuple(Particle(int(c) // 2, "a" if c % 2 == 0 else "d") for c in codes))


def _all_codes(size: int, n_types: int) -> np.ndarray:
    base = 2 * n_types
    idx = np.arange(base**size)
    return np.stack([(idx // base**k) % base for k in range(size)], axis=1)


def _encode(codes: np.ndarray, n_types: int) -> np.ndarray:
    base = 2 * n_types
    weights = base ** np.arange(codes.shape[1])
    return codes @ weights


def _integer_scale(values) -> int | None:
    """Common denominator turning every rate into an integer, or None if that would overflow."""
    fracs = [Fraction(v) for v in values]
    scale = math.lcm(*(f.denominator for f in fracs))
    if max(abs(f) * scale for f in fracs) > 2**40:
        return None
    return scale


def build_generator(
    params: ModelParams,
    size: int,
    n_types: int,
    variant: str,
    pair_rates: dict | None = None,
) -> GeneratorMatrix:
    """Rate matrix of the Moran (``variant="moran"``) or lookdown model.

    Moran: rate 1/2 for every ordered pair ``(i, j)``, ``i != j``, where
    ``j`` adopts the type of ``i``.  Lookdown: rate 1 for ordered pairs
    with ``i < j`` only.  ``pair_rates`` overrides the rate of single
    ordered pairs (1-based), meant for testing the checker.
    """
    if variant not in (MORAN, LOOKDOWN):
        raise ValueError(f"unknown variant {variant!r}")
    if size < 1 or n_types < 1:
        raise ValueError("size and n_types must be positive")
    n_states = (2 * n_types) ** size
    if n_states > MAX_STATES:
        raise ValueError(f"state space of {n_states} configurations exceeds {MAX_STATES}")

    pair_rates = dict(pair_rates or {})
    default_pair = Fraction(1, 2) if variant == MORAN else Fraction(1)
    scale = _integer_scale([params.sigma, params.alpha, default_pair, *pair_rates.values()])
    exact = scale is not None
    if exact:
        dtype = np.int64

        def weight_of(rate):
            return int(Fraction(rate) * scale)
    else:
        scale = 1
        dtype = np.float64

        def weight_of(rate):
            return float(rate)

    w_sigma, w_alpha = weight_of(params.sigma), weight_of(params.alpha)

    codes = _all_codes(size, n_types)
    index = np.arange(n_states)
    rows, cols, vals = [], [], []

    def add(mask, targets, weight):
        rows.append(index[mask])
        cols.append(targets[mask])
        vals.append(np.full(int(mask.sum()), weight, dtype=dtype))

    active = codes % 2 == 0
    for k in range(size):
        sleep = codes.copy()
        sleep[:, k] |= 1
        add(active[:, k], _encode(sleep, n_types), w_sigma)
        wake = codes.copy()
        wake[:, k] &= ~1
        add(~active[:, k], _encode(wake, n_types), w_alpha)
    for a, b in itertools.permutations(range(size), 2):
        if (a + 1, b + 1) in pair_rates:
            weight = weight_of(pair_rates[(a + 1, b + 1)])
        elif variant == LOOKDOWN and not a < b:
            weight = 0
        else:
            weight = weight_of(default_pair)
        if not weight:
            continue
        child = codes.copy()
        child[:, b] = (codes[:, a] & ~1) | (codes[:, b] & 1)
        changes = active[:, a] & active[:, b] & (codes[:, a] >> 1 != codes[:, b] >> 1)
        add(changes, _encode(child, n_types), weight)

    r = np.concatenate(rows)
    c = np.concatenate(cols)
    v = np.concatenate(vals)
    off = sparse.coo_matrix((v, (r, c)), shape=(n_states, n_states), dtype=dtype).tocsr()
    off.sum_duplicates()
    diag = -np.asarray(off.sum(axis=1)).ravel().astype(dtype)
    matrix = (off + sparse.diags(diag, dtype=dtype)).tocsr()
    return GeneratorMatrix(size, n_types, variant, matrix, scale, exact)


def _permutation_indices(size: int, n_types: int):
    codes = _all_codes(size, n_types)
    for perm in itertools.permutations(range(size)):
        yield _encode(codes[:, list(perm)], n_types)


def averaged_matrix(gen: GeneratorMatrix) -> sparse.csr_matrix:
    """``sum_pi Q[z_pi, :]`` for every ``z`` (the average times ``N!``)."""
    total = None
    for idx in _permutation_indices(gen.size, gen.n_types):
        rows = gen.matrix[idx]
        total = rows if total is None else total + rows
    return total.tocsr()


def averaged_discrepancy(a: GeneratorMatrix, b: GeneratorMatrix):
    """Largest gap between the two permutation-averaged generators, over all indicators."""
    if (a.size, a.n_types) != (b.size, b.n_types):
        raise ValueError("generators live on different state spaces")
    n_perms = math.factorial(a.size)
    if a.exact and b.exact:
        scale = math.lcm(a.scale, b.scale)
        diff = averaged_matrix(a) * (scale // a.scale) - averaged_matrix(b) * (scale // b.scale)
        worst = int(abs(diff).max()) if diff.nnz else 0
        return Fraction(worst, n_perms * scale)
    sa = averaged_matrix(a).astype(float) / a.scale
    sb = averaged_matrix(b).astype(float) / b.scale
    diff = sa - sb
    return float(abs(diff).max()) / n_perms if diff.nnz else 0.0


@dataclass
class EquivalenceReport:
    size: int
    n_types: int
    alpha: object
    sigma: object
    max_discrepancy: object
    exact: bool
    tolerance: float = 1e-12

    @property
    def passed(self) -> bool:
        if self.exact:
            return self.max_discrepancy == 0
        return float(self.max_discrepancy) < self.tolerance

    def as_dict(self) -> dict:
        return {
            "N": self.size,
            "types": self.n_types,
            "alpha": str(self.alpha),
            "sigma": str(self.sigma),
            "max_discrepancy": str(self.max_discrepancy),
            "exact": self.exact,
            "pass": self.passed,
        }


def check_averaged_generators(
    params: ModelParams, size: int, n_types: int, lookdown_pair_rates: dict | None = None
) -> EquivalenceReport:
    """Compare the averaged Moran and lookdown generators on ``size`` particles and ``n_types`` types."""
    if size > 6:
        raise ValueError("averaging over permutations is limited to N <= 6")
    moran = build_generator(params, size, n_types, MORAN)
    lookdown = build_generator(params, size, n_types, LOOKDOWN, pair_rates=lookdown_pair_rates)
    gap = averaged_discrepancy(moran, lookdown)
    return EquivalenceReport(size, n_types, params.alpha, params.sigma, gap, moran.exact and lookdown.exact)


def average_function(f: Callable[[Configuration], object], z: Configuration):
    """Uniform average of ``f`` over all coordinate permutations of ``z``."""
    n = len(z)
    if n > 8:
        raise ValueError("permutation averaging is limited to N <= 8")
    values = [f(z.permuted(perm)) for perm in itertools.permutations(range(n))]
    total = sum(values)
    if all(isinstance(v, (int, Fraction)) and not isinstance(v, bool) for v in values):
        return Fraction(total, math.factorial(n))
    return total / math.factorial(n)


def _summaries(z: Configuration, reference_type: int) -> tuple[float, float, int]:
    types = z.types()
    n = len(z)
    return z.n_active() / n, types.count(reference_type) / n, len(set(types))


def _most_common(types: Sequence[int]) -> int:
    counts: dict[int, int] = {}
    for t in types:
        counts[t] = counts.get(t, 0) + 1
    return min(counts, key=lambda t: (-counts[t], t))


SUMMARY_NAMES = ("fraction_active", "reference_type_frequency", "surviving_types")


def _binomial_chi_square(counts: np.ndarray, size: int, p: float):
    """Chi-square of active counts against Binomial(size, p), pooling cells with expectation < 5."""
    n = len(counts)
    observed = np.bincount(counts, minlength=size + 1).astype(float)
    expected = n * sstats.binom.pmf(np.arange(size + 1), size, p)
    obs_pooled, exp_pooled = [], []
    acc_o = acc_e = 0.0
    for o, e in zip(observed, expected):
        acc_o += o
        acc_e += e
        if acc_e >= 5:
            obs_pooled.append(acc_o)
            exp_pooled.append(acc_e)
            acc_o = acc_e = 0.0
    if acc_e > 0:
        if exp_pooled:
            obs_pooled[-1] += acc_o
            exp_pooled[-1] += acc_e
        else:
            obs_pooled.append(acc_o)
            exp_pooled.append(acc_e)
    if len(exp_pooled) < 2:
        return 0.0, 1.0
    res = sstats.chisquare(obs_pooled, exp_pooled)
    return float(res.statistic), float(res.pvalue)


def compare_empirical_laws(
    params: ModelParams,
    size: int,
    times: Sequence[float],
    replicates: int,
    rng: RandomSource,
    type_law: Sequence[float] = (0.5, 0.3, 0.2),
    threshold: float = 0.01,
) -> dict:
    """Run both models from i.i.d. exchangeable starts and compare empirical-measure summaries.

    Initial states are stationary and types i.i.d. from ``type_law``.  At
    each time the laws of the active fraction, the frequency of the
    initially most common type and the number of surviving types are
    compared by two-sample KS tests; the number of active particles of
    each model is also tested against Binomial(size, p).  All p-values
    are Bonferroni-corrected within their family.
    """
    if size > 50:
        raise ValueError("compare_empirical_laws is meant for N <= 50")
    times = [float(t) for t in times]
    horizon = max(max(times), 1e-9)
    samples = {m: np.empty((replicates, len(times), 3)) for m in (MORAN, LOOKDOWN)}
    for r in range(replicates):
        for model in (MORAN, LOOKDOWN):
            src = rng.substream(model, r)
            init = sample_stationary_config(
                params, "iid-from-law", src.substream("init"), type_law=type_law, size=size
            )
            ref = _most_common(init.types())
            if model == MORAN:
                states = simulate_moran(params, init, horizon, src.substream("dynamics")).states_at(times)
            else:
                real = build_realization(
                    params, size, horizon, src.substream("dynamics"), initial_types=init.types()
                )
                # initial activity comes from the timelines, which are stationary as well
                states = [real.state(t) for t in times]
            for k, z in enumerate(states):
                samples[model][r, k] = _summaries(z, ref)

    ks_rows = []
    for k, t in enumerate(times):
        for s, name in enumerate(SUMMARY_NAMES):
            a = samples[MORAN][:, k, s]
            b = samples[LOOKDOWN][:, k, s]
            res = sstats.ks_2samp(a, b, method="asymp")
            ks_rows.append({"time": t, "statistic": name, "ks": float(res.statistic), "p_value": float(res.pvalue)})
    for row in ks_rows:
        row["p_corrected"] = min(1.0, row["p_value"] * len(ks_rows))

    chi_rows = []
    for model in (MORAN, LOOKDOWN):
        for k, t in enumerate(times):
            counts = np.rint(samples[model][:, k, 0] * size).astype(int)
            stat, p = _binomial_chi_square(counts, size, params.p_float)
            chi_rows.append({"model": model, "time": t, "chi2": stat, "p_value": p})
    for row in chi_rows:
        row["p_corrected"] = min(1.0, row["p_value"] * len(chi_rows))

    passed = all(r["p_corrected"] > threshold for r in ks_rows + chi_rows)
    return {"ks": ks_rows, "chi_square": chi_rows, "pass": passed, "threshold": threshold}

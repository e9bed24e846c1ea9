"""Reference laws, goodness-of-fit tests and the Gumbel convergence experiments."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np
from scipy import stats as sstats

from . import _kernels
from .coalescent import block_counting_batch, sample_psi_n, simulate_coalescent
from .core import ModelParams, RandomSource
from .lookdown import simulate_fixation

EULER_GAMMA = float(np.euler_gamma)
GUMBEL_VAR = math.pi**2 / 6


@dataclass
class EmpiricalSample:
    values: np.ndarray
    seed: int | None = None
    label: str = ""

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if not np.all(np.isfinite(self.values)):
            raise ValueError("sample contains non-finite values")

    def __len__(self):
        return len(self.values)


def gumbel_cdf(t):
    return np.exp(-np.exp(-np.asarray(t, dtype=float)))


def gumbel_quantile(q):
    q = np.asarray(q, dtype=float)
    if np.any((q <= 0) | (q >= 1)):
        raise ValueError("quantile level must lie in (0, 1)")
    return -np.log(-np.log(q))


def exponential_cdf(rate: float) -> Callable:
    return lambda t: -np.expm1(-rate * np.maximum(np.asarray(t, dtype=float), 0.0))


def _check_sample(x, name="sample") -> np.ndarray:
    x = np.asarray(getattr(x, "values", x), dtype=float)
    if x.ndim != 1 or len(x) < 10:
        raise ValueError(f"{name} needs at least 10 values")
    if not np.all(np.isfinite(x)):
        raise ValueError(f"{name} contains non-finite values")
    if np.all(x == x[0]):
        raise ValueError(f"{name} is degenerate (all values equal)")
    return x


@dataclass(frozen=True)
class KSResult:
    statistic: float
    p_value: float


def ks_one_sample(sample, cdf: Callable) -> KSResult:
    """KS test of ``sample`` against ``cdf``; p-value from the asymptotic Kolmogorov law."""
    x = _check_sample(sample)
    res = sstats.kstest(x, cdf, method="asymp")
    return KSResult(float(res.statistic), float(res.pvalue))


def ks_two_sample(a, b) -> KSResult:
    x = np.asarray(getattr(a, "values", a), dtype=float)
    y = np.asarray(getattr(b, "values", b), dtype=float)
    for s, name in ((x, "first sample"), (y, "second sample")):
        if len(s) < 10 or not np.all(np.isfinite(s)):
            raise ValueError(f"{name} needs at least 10 finite values")
    res = sstats.ks_2samp(x, y, method="asymp")
    return KSResult(float(res.statistic), float(res.pvalue))


def sup_distance(sample, cdf_values: np.ndarray, grid: np.ndarray) -> float:
    """Largest gap between the empirical CDF of ``sample`` and ``cdf_values`` on ``grid``."""
    x = np.sort(np.asarray(sample, dtype=float))
    ecdf = np.searchsorted(x, grid, side="right") / len(x)
    return float(np.max(np.abs(ecdf - cdf_values)))


def mc_mean(values) -> tuple[float, float]:
    """Sample mean and its standard error."""
    v = np.asarray(values, dtype=float)
    return float(v.mean()), float(v.std(ddof=1) / math.sqrt(len(v)))


def bonferroni(p_values: Sequence[float]) -> list[float]:
    m = len(p_values)
    return [min(1.0, p * m) for p in p_values]


def gumbel_centering(params: ModelParams, n: int) -> float:
    """Location ``ln(n p) / alpha`` around which ``alpha (X - location)`` is compared with Gumbel(0, 1)."""
    return math.log(n * params.p_float) / float(params.alpha)


def center(values, params: ModelParams, n: int) -> np.ndarray:
    return float(params.alpha) * (np.asarray(values, dtype=float) - gumbel_centering(params, n))


def strictly_decreasing(values: Sequence[float]) -> bool:
    return all(b < a for a, b in zip(values, values[1:]))


def _coalescent_samples(params, n, replicates, rng):
    tm = np.empty(replicates)
    ps = np.empty(replicates)
    rh = np.empty(replicates)
    for r in range(replicates):
        run = simulate_coalescent(params, None, rng.substream("replicate", r), n=n, record_path=False)
        tm[r], ps[r], rh[r] = run.tmrca, run.psi_n, run.rho_n
    return {"tmrca": tm, "psi_n": ps, "rho_n": rh}


def tmrca_gumbel_experiment(
    params: ModelParams,
    n_list: Sequence[int],
    replicates: int,
    rng: RandomSource,
    source: str = "block-counting",
) -> list[dict]:
    """Centered TMRCA and largest-inactivity samples against Gumbel(0, 1), one row per ``n``.

    ``psi`` columns use independent draws of the largest inactivity period;
    ``coupled_psi`` columns and the ratio use the one read off each
    coalescent path.
    """
    rows = []
    for n in n_list:
        sub = rng.substream("tmrca-gumbel", n)
        if source == "block-counting":
            draws = block_counting_batch(params, n, replicates, sub.substream("coalescent"))
        elif source == "coalescent":
            draws = _coalescent_samples(params, n, replicates, sub.substream("coalescent"))
        else:
            raise ValueError(f"unknown source {source!r}")
        tm, coupled = draws["tmrca"], draws["psi_n"]
        psi = sample_psi_n(params, n, sub.substream("psi"), size=replicates)
        ct, cp, cc = center(tm, params, n), center(psi, params, n), center(coupled, params, n)
        ks_t = ks_one_sample(ct, gumbel_cdf)
        ks_p = ks_one_sample(cp, gumbel_cdf)
        ks_c = ks_one_sample(cc, gumbel_cdf)
        with np.errstate(divide="ignore", invalid="ignore"):
            ratio = tm / coupled
        rho_mean, rho_se = mc_mean(draws["rho_n"])
        rows.append(
            {
                "n": n,
                "replicates": replicates,
                "centering": gumbel_centering(params, n),
                "tmrca_mean": float(tm.mean()),
                "tmrca_ks": ks_t.statistic,
                "tmrca_ks_p": ks_t.p_value,
                "tmrca_centered_mean": float(ct.mean()),
                "tmrca_centered_var": float(ct.var(ddof=1)),
                "psi_mean": float(psi.mean()),
                "psi_ks": ks_p.statistic,
                "psi_ks_p": ks_p.p_value,
                "psi_centered_mean": float(cp.mean()),
                "psi_centered_var": float(cp.var(ddof=1)),
                "coupled_psi_ks": ks_c.statistic,
                "median_ratio": float(np.median(ratio)),
                "psi_le_tmrca_fraction": float(np.mean(coupled <= tm)),
                "rho_mean": rho_mean,
                "rho_se": rho_se,
                "gumbel_mean": EULER_GAMMA,
                "gumbel_var": GUMBEL_VAR,
            }
        )
    return rows


def fixation_samples(
    params: ModelParams, size: int, replicates: int, rng: RandomSource, backend: str = "kernel"
) -> np.ndarray:
    """Fixation times of level 1's type in ``size``-level lookdowns.

    ``backend="realization"`` builds full realizations (timelines and all
    pair clocks) and scans them; ``"kernel"`` runs the compiled streaming
    version of the same dynamics, needed for hundreds of levels.
    """
    if backend == "realization":
        out = np.empty(replicates)
        for r in range(replicates):
            record, _ = simulate_fixation(params, size, rng.substream("replicate", r))
            out[r] = record.fixation_time
        return out
    if backend == "kernel":
        seeds = rng.seeds(replicates)
        return _kernels.fixation_batch(seeds, size, float(params.alpha), float(params.sigma), params.p_float)
    raise ValueError(f"unknown backend {backend!r}")


def fixation_gumbel_experiment(
    params: ModelParams,
    n_list: Sequence[int],
    replicates: int,
    rng: RandomSource,
    backend: str = "kernel",
    tmrca_replicates: int | None = None,
) -> list[dict]:
    """Centered fixation times against Gumbel(0, 1) and against the TMRCA of the whole population."""
    rows = []
    for size in n_list:
        sub = rng.substream("fixation-gumbel", size)
        fix = fixation_samples(params, size, replicates, sub.substream("fixation"), backend)
        row = {
            "N": size,
            "replicates": replicates,
            "centering": gumbel_centering(params, size),
            "fixation_mean": float(fix.mean()),
            "predicted_mean": gumbel_centering(params, size) + EULER_GAMMA / float(params.alpha),
        }
        if size == 1:
            row.update(gumbel_ks=None, gumbel_ks_p=None, tmrca_ks=None, tmrca_ks_p=None)
            rows.append(row)
            continue
        cf = center(fix, params, size)
        ks_g = ks_one_sample(cf, gumbel_cdf)
        tm = block_counting_batch(params, size, tmrca_replicates or replicates, sub.substream("tmrca"))["tmrca"]
        ks_t = ks_two_sample(fix, tm)
        row.update(
            centered_mean=float(cf.mean()),
            gumbel_ks=ks_g.statistic,
            gumbel_ks_p=ks_g.p_value,
            tmrca_mean=float(tm.mean()),
            tmrca_ks=ks_t.statistic,
            tmrca_ks_p=ks_t.p_value,
        )
        rows.append(row)
    return rows

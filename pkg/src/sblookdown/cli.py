"""Command-line experiment runner.

Every subcommand writes CSV and JSON files into the output directory
(``--out``, else ``$SBLOOKDOWN_OUTPUT_DIR``, else the working directory).
Each file starts with the fully resolved configuration, so identical
invocations produce byte-identical files.  Exit status: 0 on success, 1
on invalid input, 2 when a verification subcommand fails its check.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import math
import os
import sys
import time
from dataclasses import asdict, dataclass, field
from fractions import Fraction
from pathlib import Path

import numpy as np

from .coalescent import (
    BlockCount,
    block_counting_batch,
    psi_cdf,
    sample_psi_n,
    simulate_block_counting,
    simulate_coalescent,
)
from .core import ModelParams, RandomSource, sample_stationary_config
from .equivalence import check_averaged_generators, compare_empirical_laws
from .lookdown import (
    build_realization,
    first_coalescence_cdf,
    first_coalescence_mean,
    first_coalescence_with_k,
)
from .moran import simulate_moran
from .stats import (
    exponential_cdf,
    fixation_gumbel_experiment,
    ks_one_sample,
    mc_mean,
    sup_distance,
    tmrca_gumbel_experiment,
)

OUTPUT_ENV = "SBLOOKDOWN_OUTPUT_DIR"


class ConfigError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise ConfigError(f"{self.prog}: {message}")


@dataclass
class ExperimentConfig:
    command: str
    alpha: str
    sigma: str
    seed: int
    options: dict = field(default_factory=dict)

    def params(self, exact: bool = False, **sizes) -> ModelParams:
        alpha, sigma = Fraction(self.alpha), Fraction(self.sigma)
        if not exact:
            alpha, sigma = float(alpha), float(sigma)
        return ModelParams(alpha, sigma, **sizes)

    def as_dict(self) -> dict:
        return asdict(self)


def _rate(text: str) -> str:
    try:
        value = Fraction(text)
    except (ValueError, ZeroDivisionError):
        raise argparse.ArgumentTypeError(f"not a rate: {text!r}")
    if value <= 0:
        raise argparse.ArgumentTypeError(f"rate must be positive: {text!r}")
    return str(value)


def _positive_int(text: str) -> int:
    try:
        value = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not an integer: {text!r}")
    if value < 1:
        raise argparse.ArgumentTypeError(f"must be a positive integer: {text!r}")
    return value


def _non_negative_float(text: str) -> float:
    try:
        value = float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a number: {text!r}")
    if not math.isfinite(value) or value < 0:
        raise argparse.ArgumentTypeError(f"must be a finite non-negative number: {text!r}")
    return value


def _seed(text: str) -> int:
    try:
        value = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not an integer seed: {text!r}")
    if not 0 <= value < 2**64:
        raise argparse.ArgumentTypeError("seed must lie in [0, 2**64)")
    return value


def _int_list(text: str) -> list[int]:
    return [_positive_int(x) for x in str(text).split(",") if x.strip()]


def _float_list(text: str) -> list[float]:
    return [_non_negative_float(x) for x in str(text).split(",") if x.strip()]


def _prob_list(text: str) -> list[float]:
    values = [float(x) for x in str(text).split(",") if x.strip()]
    if any(v < 0 for v in values) or not math.isclose(sum(values), 1.0):
        raise argparse.ArgumentTypeError("type law must be non-negative and sum to 1")
    return values


def _common(p: argparse.ArgumentParser):
    p.add_argument("--alpha", type=_rate, default="1", help="wake-up rate of dormant individuals (1/time; accepts fractions like 1/2)")
    p.add_argument("--sigma", type=_rate, default="1", help="rate of entering dormancy (1/time; accepts fractions)")
    p.add_argument("--seed", type=_seed, default=0, help="master random seed (integer)")
    p.add_argument("--out", default=None, help=f"output directory (default ${OUTPUT_ENV} or current directory)")
    p.add_argument("--config", default=None, help="JSON file with default values for any of these flags")
    p.add_argument("--record-timing", action="store_true", help="store wall time (seconds) in the JSON summary; breaks byte-identical reruns")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="sblookdown", description="Seed-bank Moran, lookdown and coalescent experiments.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("simulate-moran", help="forward SB-Moran trajectory")
    _common(p)
    p.add_argument("--N", type=_positive_int, required=True, help="population size (individuals)")
    p.add_argument("--horizon", type=_non_negative_float, default=1.0, help="simulated time span (time units)")
    p.add_argument("--typing", choices=["all-distinct", "iid-from-law"], default="all-distinct", help="initial types")
    p.add_argument("--type-law", type=_prob_list, default=[0.5, 0.3, 0.2], help="comma-separated type probabilities for iid-from-law")

    p = sub.add_parser("simulate-lookdown", help="lookdown realization and its states")
    _common(p)
    p.add_argument("--N", type=_positive_int, required=True, help="number of levels")
    p.add_argument("--horizon", type=_non_negative_float, default=1.0, help="realization time span (time units)")
    p.add_argument("--times", type=_float_list, default=None, help="comma-separated query times (time units; default: horizon)")

    p = sub.add_parser("simulate-coalescent", help="seed-bank coalescent replicates from stationary flags")
    _common(p)
    p.add_argument("--n", type=_positive_int, required=True, help="sample size (lines)")
    p.add_argument("--replicates", type=_positive_int, default=100, help="number of independent runs")
    p.add_argument("--backend", choices=["partition", "block-counting"], default="partition", help="full marked-partition chain or compiled block-counting chain")

    p = sub.add_parser("block-counting", help="block-counting chain from a given (active, dormant) count")
    _common(p)
    p.add_argument("--n-active", type=int, required=True, help="initial active blocks")
    p.add_argument("--n-dormant", type=int, default=0, help="initial dormant blocks")
    p.add_argument("--replicates", type=_positive_int, default=1, help="number of independent runs")

    p = sub.add_parser("first-coalescence", help="first both-active tick between a level and the k lowest levels")
    _common(p)
    p.add_argument("--k", type=_positive_int, required=True, help="number of lower levels")
    p.add_argument("--level", type=_positive_int, default=None, help="upper level i > k (default k+1)")
    p.add_argument("--replicates", type=_positive_int, default=10000, help="number of samples")

    p = sub.add_parser("psi", help="largest inactivity period: samples against the mixture CDF")
    _common(p)
    p.add_argument("--n", type=_positive_int, required=True, help="sample size (lines)")
    p.add_argument("--replicates", type=_positive_int, default=10000, help="number of psi draws")
    p.add_argument("--mix-samples", type=_positive_int, default=10000, help="draws of M_0 + B_n for the mixture CDF")
    p.add_argument("--grid-points", type=_positive_int, default=200, help="points of the CDF comparison grid")

    p = sub.add_parser("tmrca-gumbel", help="centered TMRCA and psi against Gumbel(0,1)")
    _common(p)
    p.add_argument("--n", type=_int_list, required=True, help="comma-separated sample sizes")
    p.add_argument("--replicates", type=_positive_int, default=10000, help="replicates per sample size")
    p.add_argument("--source", choices=["block-counting", "coalescent"], default="block-counting", help="coalescent backend")

    p = sub.add_parser("fixation-gumbel", help="centered lookdown fixation times against Gumbel(0,1) and TMRCA")
    _common(p)
    p.add_argument("--N", type=_int_list, required=True, help="comma-separated population sizes")
    p.add_argument("--replicates", type=_positive_int, default=1000, help="replicates per population size")
    p.add_argument("--backend", choices=["kernel", "realization"], default="kernel", help="compiled streaming lookdown or full realizations")

    p = sub.add_parser("check-generators", help="exact averaged-generator identity of Moran and lookdown")
    _common(p)
    p.add_argument("--N", type=_positive_int, required=True, help="number of particles (<= 6)")
    p.add_argument("--types", type=_positive_int, default=2, help="size of the finite type set")

    p = sub.add_parser("compare-laws", help="Monte Carlo comparison of Moran and lookdown empirical measures")
    _common(p)
    p.add_argument("--N", type=_positive_int, default=10, help="number of particles (<= 50)")
    p.add_argument("--times", type=_float_list, default=[0.5, 1.0, 2.0], help="comma-separated comparison times (time units)")
    p.add_argument("--replicates", type=_positive_int, default=5000, help="replicates per model")
    p.add_argument("--threshold", type=float, default=0.01, help="minimum corrected p-value")
    return parser


def _resolve(argv):
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    pre = argparse.ArgumentParser(add_help=False)
    pre.add_argument("--config")
    pre_args, _ = pre.parse_known_args(argv)
    subparsers = parser._subparsers._group_actions[0].choices
    if pre_args.config and argv and argv[0] in subparsers:
        _apply_config_file(subparsers[argv[0]], pre_args.config)
    args = parser.parse_args(argv)
    skip = ("command", "alpha", "sigma", "seed", "out", "config", "record_timing")
    opts = {k: v for k, v in vars(args).items() if k not in skip}
    return ExperimentConfig(args.command, args.alpha, args.sigma, args.seed, opts), args


def _apply_config_file(sub: argparse.ArgumentParser, path: str):
    """Use the keys of a JSON file as defaults; flags given explicitly still win."""
    try:
        values = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read config file {path}: {exc}")
    if not isinstance(values, dict):
        raise ConfigError("config file must hold a JSON object")
    actions = {a.dest: a for a in sub._actions if a.dest not in ("help", "config")}
    unknown = set(values) - set(actions)
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    defaults = {}
    for key, value in values.items():
        action = actions[key]
        if action.type is not None and not isinstance(value, bool):
            text = ",".join(map(str, value)) if isinstance(value, list) else str(value)
            try:
                value = action.type(text)
            except argparse.ArgumentTypeError as exc:
                raise ConfigError(f"config key {key}: {exc}")
        if action.choices is not None and value not in action.choices:
            raise ConfigError(f"config key {key}: {value!r} not in {sorted(action.choices)}")
        defaults[key] = value
        action.required = False
    sub.set_defaults(**defaults)


class Output:
    def __init__(self, directory, config: ExperimentConfig, record_timing: bool):
        self.dir = Path(directory or os.environ.get(OUTPUT_ENV) or ".")
        self.config = config
        self.record_timing = record_timing
        self.started = time.perf_counter()
        try:
            self.dir.mkdir(parents=True, exist_ok=True)
            probe = self.dir / ".sblookdown-write-test"
            probe.write_text("")
            probe.unlink()
        except OSError as exc:
            raise ConfigError(f"output directory {self.dir} is not writable: {exc}")
        self.header = "# config: " + json.dumps(config.as_dict(), sort_keys=True)

    def csv(self, name: str, rows: list[dict], columns: list[str] | None = None):
        columns = columns or (list(rows[0]) if rows else [])
        buf = io.StringIO()
        buf.write(self.header + "\n")
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(columns)
        for row in rows:
            writer.writerow([_fmt(row.get(c)) for c in columns])
        self._write(name, buf.getvalue())

    def text(self, name: str, lines):
        self._write(name, self.header + "\n" + "\n".join(lines) + "\n")

    def summary(self, results: dict):
        doc = {
            "config": self.config.as_dict(),
            "results": _jsonable(results),
            "wall_time_s": round(time.perf_counter() - self.started, 3) if self.record_timing else None,
        }
        self._write("summary.json", json.dumps(doc, indent=2, sort_keys=False) + "\n")

    def _write(self, name, content):
        try:
            (self.dir / name).write_text(content)
        except OSError as exc:
            raise ConfigError(f"cannot write {self.dir / name}: {exc}")


def _fmt(value):
    if value is None:
        return ""
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    if isinstance(value, (np.integer,)):
        return int(value)
    return value


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (np.floating,)):
        return float(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    if isinstance(obj, Fraction):
        return str(obj)
    if isinstance(obj, float) and not math.isfinite(obj):
        return str(obj)
    return obj


def _cmd_simulate_moran(cfg, out, opts):
    n = opts["N"]
    params = cfg.params(pop_size=n)
    rng = RandomSource(cfg.seed)
    init = sample_stationary_config(params, opts["typing"], rng.substream("init"), type_law=opts["type_law"])
    traj = simulate_moran(params, init, opts["horizon"], rng.substream("dynamics"))
    out.csv(
        "events.csv",
        [{"time": e.time, "kind": e.kind, "i": e.i, "j": e.j, "effective": int(e.effective)} for e in traj.events],
        ["time", "kind", "i", "j", "effective"],
    )
    final = traj.final()
    rows = []
    for label, z in (("initial", init), ("final", final)):
        rows += [{"when": label, "level": k, "type": p.type_id, "state": p.state.value} for k, p in enumerate(z, start=1)]
    out.csv("configurations.csv", rows, ["when", "level", "type", "state"])
    out.summary({
        "events": len(traj.events),
        "effective_events": sum(e.effective for e in traj.events),
        "final_active_fraction": final.n_active() / n,
        "final_types": len(set(final.types())),
    })
    return 0


def _cmd_simulate_lookdown(cfg, out, opts):
    n = opts["N"]
    params = cfg.params(pop_size=n)
    horizon = opts["horizon"]
    if horizon <= 0:
        raise ConfigError("--horizon must be positive for a lookdown realization")
    times = opts["times"] or [horizon]
    if max(times) > horizon:
        raise ConfigError("query times must not exceed --horizon")
    real = build_realization(params, n, horizon, RandomSource(cfg.seed))
    rows = []
    for t in times:
        z = real.state(t)
        rows += [{"time": t, "level": k, "type": p.type_id, "state": p.state.value} for k, p in enumerate(z, start=1)]
    out.csv("states.csv", rows, ["time", "level", "type", "state"])
    out.text("realization.txt", real.to_lines())
    record = real.fixation_time()
    out.summary({"fixation_time": record.fixation_time, "fixed_type": record.fixed_type, "horizon": horizon})
    return 0


def _cmd_simulate_coalescent(cfg, out, opts):
    n, reps = opts["n"], opts["replicates"]
    params = cfg.params()
    rng = RandomSource(cfg.seed)
    rows = []
    if opts["backend"] == "partition":
        for r in range(reps):
            run = simulate_coalescent(params, None, rng.substream("replicate", r), n=n, record_path=False)
            rows.append({"replicate": r, "seed": cfg.seed, "tmrca": run.tmrca, "psi_n": run.psi_n, "rho_n": run.rho_n})
    else:
        draws = block_counting_batch(params, n, reps, rng)
        for r in range(reps):
            rows.append({
                "replicate": r,
                "seed": int(draws["seed"][r]),
                "tmrca": float(draws["tmrca"][r]),
                "psi_n": float(draws["psi_n"][r]),
                "rho_n": float(draws["rho_n"][r]),
            })
    out.csv("replicates.csv", rows, ["replicate", "seed", "tmrca", "psi_n", "rho_n"])
    summary = {}
    for key in ("tmrca", "psi_n", "rho_n"):
        values = [row[key] for row in rows]
        summary[f"{key}_mean"] = float(np.mean(values))
        summary[f"{key}_se"] = mc_mean(values)[1] if len(values) > 1 else None
    out.summary(summary)
    return 0


def _cmd_block_counting(cfg, out, opts):
    try:
        init = BlockCount(opts["n_active"], opts["n_dormant"])
    except ValueError as exc:
        raise ConfigError(str(exc))
    params = cfg.params()
    rng = RandomSource(cfg.seed)
    rows, tmrcas = [], []
    for r in range(opts["replicates"]):
        run = simulate_block_counting(params, init, rng.substream("replicate", r))
        tmrcas.append(run.tmrca)
        rows += [{"replicate": r, "time": t, "n_active": c.n_active, "n_dormant": c.n_dormant} for t, c in run.path]
    out.csv("path.csv", rows, ["replicate", "time", "n_active", "n_dormant"])
    out.summary({"tmrca": tmrcas, "tmrca_mean": float(np.mean(tmrcas))})
    return 0


def _cmd_first_coalescence(cfg, out, opts):
    k = opts["k"]
    level = opts["level"] or k + 1
    if level <= k:
        raise ConfigError("--level must exceed --k")
    params = cfg.params()
    rng = RandomSource(cfg.seed)
    samples = np.array([first_coalescence_with_k(params, level, k, rng.substream("replicate", r)) for r in range(opts["replicates"])])
    out.csv("samples.csv", [{"replicate": r, "time": float(x)} for r, x in enumerate(samples)], ["replicate", "time"])
    p = params.p_float
    mean, se = mc_mean(samples) if len(samples) > 1 else (float(samples[0]), None)
    results = {"k": k, "level": level, "mean": mean, "se": se, "exact_mean": first_coalescence_mean(params, k), "exponential_mean": 1 / (k * p * p)}
    if len(samples) >= 10:
        ks_exp = ks_one_sample(samples, exponential_cdf(k * p * p))
        ks_exact = ks_one_sample(samples, lambda t: first_coalescence_cdf(params, k, t))
        results.update(ks_exponential=ks_exp.statistic, ks_exponential_p=ks_exp.p_value, ks_exact=ks_exact.statistic, ks_exact_p=ks_exact.p_value)
    out.summary(results)
    return 0


def _cmd_psi(cfg, out, opts):
    n = opts["n"]
    params = cfg.params()
    rng = RandomSource(cfg.seed)
    samples = sample_psi_n(params, n, rng.substream("samples"), size=opts["replicates"])
    hi = max(float(samples.max()), 1e-9)
    grid = np.linspace(0.0, hi * 1.05, opts["grid_points"])
    mixture = psi_cdf(params, n, grid, opts["mix_samples"], rng.substream("mixture"))
    ecdf = np.searchsorted(np.sort(samples), grid, side="right") / len(samples)
    out.csv("samples.csv", [{"replicate": r, "psi_n": float(x)} for r, x in enumerate(samples)], ["replicate", "psi_n"])
    out.csv("cdf.csv", [{"t": float(t), "empirical": float(e), "mixture": float(m)} for t, e, m in zip(grid, ecdf, mixture)], ["t", "empirical", "mixture"])
    out.summary({"n": n, "sup_distance": sup_distance(samples, mixture, grid), "psi_mean": float(samples.mean())})
    return 0


def _cmd_tmrca_gumbel(cfg, out, opts):
    params = cfg.params()
    rows = tmrca_gumbel_experiment(params, opts["n"], opts["replicates"], RandomSource(cfg.seed), opts["source"])
    out.csv("report.csv", rows)
    out.summary({"rows": rows})
    return 0


def _cmd_fixation_gumbel(cfg, out, opts):
    params = cfg.params()
    rows = fixation_gumbel_experiment(params, opts["N"], opts["replicates"], RandomSource(cfg.seed), opts["backend"])
    columns = sorted({c for row in rows for c in row}, key=lambda c: list(rows[-1]).index(c) if c in rows[-1] else 99)
    out.csv("report.csv", rows, columns)
    out.summary({"rows": rows})
    return 0


def _cmd_check_generators(cfg, out, opts):
    if opts["N"] > 6:
        raise ConfigError("--N must be at most 6")
    if (2 * opts["types"]) ** opts["N"] > 10**6:
        raise ConfigError("state space too large")
    report = check_averaged_generators(cfg.params(exact=True), opts["N"], opts["types"])
    out.csv("report.csv", [report.as_dict()])
    out.summary(report.as_dict())
    print(f"max_discrepancy={report.max_discrepancy} pass={report.passed}")
    return 0 if report.passed else 2


def _cmd_compare_laws(cfg, out, opts):
    if opts["N"] > 50:
        raise ConfigError("--N must be at most 50")
    params = cfg.params(pop_size=opts["N"])
    report = compare_empirical_laws(params, opts["N"], opts["times"], opts["replicates"], RandomSource(cfg.seed), threshold=opts["threshold"])
    out.csv("ks.csv", report["ks"])
    out.csv("chi_square.csv", report["chi_square"])
    out.summary(report)
    worst = min(r["p_corrected"] for r in report["ks"] + report["chi_square"])
    print(f"min_corrected_p={worst!r} pass={report['pass']}")
    return 0 if report["pass"] else 2


COMMANDS = {
    "simulate-moran": _cmd_simulate_moran,
    "simulate-lookdown": _cmd_simulate_lookdown,
    "simulate-coalescent": _cmd_simulate_coalescent,
    "block-counting": _cmd_block_counting,
    "first-coalescence": _cmd_first_coalescence,
    "psi": _cmd_psi,
    "tmrca-gumbel": _cmd_tmrca_gumbel,
    "fixation-gumbel": _cmd_fixation_gumbel,
    "check-generators": _cmd_check_generators,
    "compare-laws": _cmd_compare_laws,
}


def run(argv=None) -> int:
    try:
        cfg, args = _resolve(argv)
        out = Output(args.out, cfg, args.record_timing)
        return COMMANDS[cfg.command](cfg, out, cfg.options)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except SystemExit as exc:
        # --help exits through argparse
        return int(exc.code or 0)


def main():
    sys.exit(run())


if __name__ == "__main__":
    main()

"""Command-line front end.

A run is described by a line-based ``key = value`` file (``#`` starts a
comment).  One experiment is executed per config and its result table is
written as CSV, preceded by ``#`` lines echoing the config, the seed and the
package version.  Thread count is deliberately not echoed: it never changes
the numbers.
"""
from __future__ import annotations

import argparse
import csv
import io
import math
import sys
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from . import __version__
from . import bounds
from . import continuum
from . import diff_kernel as dk
from . import splitting
from .heat import KernelError, dirichlet_heat, heat_flow_values, kernel_1d_vector, l2_heat
from .simulate import SimulationError, mc_functionals
from .torus import MassProfile, TorusError, TorusSpec
from .uniformization import TruncationError

EXIT_PASS, EXIT_FAIL, EXIT_CONFIG, EXIT_NUMERIC = 0, 1, 2, 3

NUMERIC_ERRORS = (
    dk.StateSpaceTooLarge, splitting.StateSpaceTooLarge, dk.SeriesCapError, dk.RenewalDivergence,
    TruncationError, bounds.TailHorizonError, bounds.InsufficientReplicas,
    continuum.QuadratureError, SimulationError, KernelError,
)


class ConfigError(ValueError):
    def __init__(self, message: str, line: int | None = None):
        self.line = line
        super().__init__(f"line {line}: {message}" if line is not None else message)


# --------------------------------------------------------------------------
# config


def _real(text: str) -> float:
    try:
        return float(Fraction(text))
    except (ValueError, ZeroDivisionError):
        raise ValueError(f"expected a real number, got {text!r}") from None


def _integer(text: str) -> int:
    try:
        return int(text)
    except ValueError:
        raise ValueError(f"expected an integer, got {text!r}") from None


def _reals(text: str) -> tuple[float, ...]:
    items = [s for s in text.replace(",", " ").split()]
    if not items:
        raise ValueError("empty list")
    return tuple(_real(s) for s in items)


def _integers(text: str) -> tuple[int, ...]:
    items = [s for s in text.replace(",", " ").split()]
    if not items:
        raise ValueError("empty list")
    return tuple(_integer(s) for s in items)


DENSITIES: dict[str, Callable[[np.ndarray], np.ndarray]] = {
    "uniform": lambda x: np.ones_like(x),
    "cosine": lambda x: 1.0 + 0.5 * np.cos(2 * np.pi * x),
    "step": lambda x: np.where(x < 0.5, 1.5, 0.5),
}
OBSERVABLES: dict[str, Callable[[np.ndarray], np.ndarray]] = {
    "cos": lambda x: np.cos(2 * np.pi * x),
    "sin": lambda x: np.sin(2 * np.pi * x),
    "half": lambda x: (x < 0.5).astype(float),
}


def _choice(options):
    def parse(text: str) -> str:
        if text not in options:
            raise ValueError(f"expected one of {', '.join(sorted(options))}, got {text!r}")
        return text
    return parse


KEYS: dict[str, Callable[[str], object]] = {
    "experiment": str,
    "d": _integer,
    "N": _integer,
    "k": _integer,
    "p": _real,
    "replicas": _integer,
    "seed": _integer,
    "tol": _real,
    "step": _real,
    "horizon": _real,
    "t": _real,
    "times": _reals,
    "t_start": _real,
    "t_stop": _real,
    "t_step": _real,
    "t_count": _integer,
    "a": _reals,
    "a_start": _real,
    "a_stop": _real,
    "a_count": _integer,
    "Ns": _integers,
    "density": _choice(DENSITIES),
    "observable": _choice(OBSERVABLES),
    "out": str,
}


@dataclass
class ExperimentConfig:
    experiment: str
    values: dict[str, object]
    lines: dict[str, int]
    raw: dict[str, str]

    def get(self, key: str, default=None):
        return self.values.get(key, default)

    def __getitem__(self, key: str):
        return self.values[key]

    def __contains__(self, key: str) -> bool:
        return key in self.values

    @property
    def seed(self) -> int:
        return int(self.values.get("seed", 0))

    def with_seed(self, seed: int) -> "ExperimentConfig":
        values = dict(self.values, seed=seed)
        raw = dict(self.raw, seed=str(seed))
        return ExperimentConfig(self.experiment, values, dict(self.lines), raw)

    @property
    def spec(self) -> TorusSpec:
        return TorusSpec(int(self.get("d", 1)), int(self["N"]))

    def time_grid(self, prefix: str = "t", list_key: str = "times") -> tuple[float, ...]:
        return _grid(self, prefix, list_key)


def _grid(cfg: ExperimentConfig, prefix: str, list_key: str) -> tuple[float, ...]:
    single = prefix if prefix == "t" else None
    forms = [k for k in (list_key, single, f"{prefix}_start") if k and k in cfg]
    if len(forms) > 1:
        raise ConfigError(f"give the {prefix} grid one way only (found {', '.join(forms)})",
                          cfg.lines[forms[1]])
    if list_key in cfg:
        return tuple(cfg[list_key])
    if single and single in cfg:
        return (cfg[single],)
    if f"{prefix}_start" not in cfg:
        return ()
    start = cfg[f"{prefix}_start"]
    if f"{prefix}_stop" not in cfg:
        raise ConfigError(f"missing required key '{prefix}_stop'", cfg.lines[f"{prefix}_start"])
    stop = cfg[f"{prefix}_stop"]
    if stop < start:
        raise ConfigError(f"{prefix}_stop is below {prefix}_start", cfg.lines[f"{prefix}_stop"])
    step_key, count_key = f"{prefix}_step", f"{prefix}_count"
    if step_key in cfg:
        step = cfg[step_key]
        n = int(round((stop - start) / step)) + 1
        return tuple(start + step * i for i in range(n))
    if count_key in cfg:
        n = cfg[count_key]
        return tuple(float(x) for x in np.linspace(start, stop, n))
    raise ConfigError(f"grid needs {step_key} or {count_key}", cfg.lines[f"{prefix}_start"])


def _validate_value(key: str, value, line: int):
    def fail(msg):
        raise ConfigError(msg, line)

    if key == "d" and value < 1:
        fail("d must be at least 1")
    if key == "N" and value < 3:
        fail(f"N = {value} is below the minimum 3")
    if key == "Ns" and min(value) < 3:
        fail("every entry of Ns must be at least 3")
    if key == "k" and value < 1:
        fail("k must be at least 1")
    if key == "p" and not 1 <= value <= 2:
        fail(f"p = {value:g} lies outside [1, 2]")
    if key in ("replicas", "seed") and value < 0:
        fail(f"{key} must be nonnegative")
    if key in ("tol", "step", "horizon", "t_step") and not value > 0:
        fail(f"{key} must be positive")
    if key in ("t_count", "a_count") and value < 1:
        fail(f"{key} must be at least 1")
    if key in ("t", "t_start", "t_stop") and value < 0:
        fail("times must be nonnegative")
    if key == "times" and min(value) < 0:
        fail("times must be nonnegative")
    if isinstance(value, float) and not math.isfinite(value):
        fail(f"{key} must be finite")


def parse_config(text: str) -> ExperimentConfig:
    """Parse ``key = value`` lines; the first problem raises ConfigError with its line number."""
    values: dict[str, object] = {}
    lines: dict[str, int] = {}
    raw: dict[str, str] = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        body = line.split("#", 1)[0].strip()
        if not body:
            continue
        if "=" not in body:
            raise ConfigError(f"expected 'key = value', got {body!r}", lineno)
        key, value = (s.strip() for s in body.split("=", 1))
        if key not in KEYS:
            raise ConfigError(f"unknown key {key!r}", lineno)
        if key in values:
            raise ConfigError(f"duplicate key {key!r} (first set on line {lines[key]})", lineno)
        if not value:
            raise ConfigError(f"empty value for {key!r}", lineno)
        try:
            parsed = KEYS[key](value)
        except ValueError as exc:
            raise ConfigError(f"{key}: {exc}", lineno) from None
        _validate_value(key, parsed, lineno)
        values[key], lines[key], raw[key] = parsed, lineno, value
    if "experiment" not in values:
        raise ConfigError("missing required key 'experiment'")
    name = values["experiment"]
    if name not in EXPERIMENTS:
        raise ConfigError(f"unknown experiment {name!r}", lines["experiment"])
    cfg = ExperimentConfig(name, values, lines, raw)
    exp = EXPERIMENTS[name]
    for key in exp.required:
        if key == "times":
            if not cfg.time_grid():
                raise ConfigError(f"missing required key 'times' (or t, or t_start/t_stop) "
                                  f"for experiment {name}")
        elif key == "a":
            if not cfg.time_grid("a", "a"):
                raise ConfigError(f"missing required key 'a' (or a_start/a_stop) for {name}")
        elif key not in values:
            raise ConfigError(f"missing required key {key!r} for experiment {name}")
    if "N" in values:
        try:
            cfg.spec
        except TorusError as exc:
            raise ConfigError(str(exc), lines["N"]) from None
    cfg.time_grid()
    return cfg


# --------------------------------------------------------------------------
# results


@dataclass
class ResultTable:
    columns: list[str]
    rows: list[list]
    passed: bool
    summary: str
    provenance: list[tuple[str, str]] = field(default_factory=list)

    def to_csv(self) -> str:
        buf = io.StringIO()
        for key, value in self.provenance:
            buf.write(f"# {key} = {value}\n")
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(self.columns)
        for row in self.rows:
            writer.writerow([_fmt(v) for v in row])
        return buf.getvalue()


def _fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return "1" if v else "0"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return "%.17g" % float(v)
    return str(v)


def _table(columns, rows, passed, summary) -> ResultTable:
    return ResultTable(list(columns), [list(r) for r in rows], bool(passed), summary)


# --------------------------------------------------------------------------
# experiments


def _heatflow(cfg: ExperimentConfig, threads: int) -> ResultTable:
    spec = cfg.spec
    rows, ok = [], True
    for t in cfg.time_grid():
        p = kernel_1d_vector(t, spec.N)
        pi = heat_flow_values(t, spec)
        f, g = dk.f_g_closed(t, spec)
        mass = math.fsum(pi)
        good = abs(mass - 1.0) < 1e-12 and pi.min() >= 0
        ok &= good
        rows.append([t, p[0], p[1], pi[0], mass, float(l2_heat(t, spec)),
                     float(dirichlet_heat(t, spec)), f, g, good])
    cols = ["t", "p_t0", "p_t1", "pi_t_origin", "mass", "l2_sq", "dirichlet", "f", "g", "pass"]
    return _table(cols, rows, ok, f"heat flow on d={spec.d}, N={spec.N}: {len(rows)} times")


def _avg_moments(cfg: ExperimentConfig, threads: int) -> ResultTable:
    spec = cfg.spec
    times = cfg.time_grid()
    ps = sorted({1.0, 2.0, float(cfg.get("p", 2.0))})
    rows = mc_functionals(MassProfile.dirac(spec), times, cfg["replicas"], cfg.seed, spec,
                          ps=ps, threads=threads)
    gen = dk.build_generator(spec) if spec.N >= 4 else None
    e = dk.unit_index(spec)
    V = spec.n_vertices
    out, ok = [], True
    for r in rows:
        exact = float("nan")
        if gen is not None:
            S = dk.kernel_vector(gen, r.t).values
            if r.functional == "dirichlet":
                exact = spec.d * V * (S[0] - S[e])
            elif r.functional == "fluctuation":
                exact = V * S[0] - 1.0 - float(l2_heat(r.t, spec))
            elif r.functional == "lp" and r.p == 2.0:
                exact = V * S[0] - 1.0
        good = math.isnan(exact) or r.estimate.agrees(exact)
        ok &= good
        out.append([r.t, r.functional, "" if r.p is None else r.p, r.estimate.mean,
                    r.estimate.std_error, exact, good])
    cols = ["t", "functional", "p", "mc_mean", "std_error", "exact", "pass"]
    return _table(cols, out, ok, f"{sum(1 for r in out if r[-1])}/{len(out)} estimates within 3 SE")


def _renewal(cfg: ExperimentConfig, threads: int) -> ResultTable:
    spec = cfg.spec
    step = cfg.get("step", dk.DEFAULT_STEP)
    horizon = cfg.get("horizon", 20.0)
    tol = cfg.get("tol", dk.DEFAULT_TOL)
    u = dk.u_exact(spec, step, horizon, tol)
    f, g = dk.f_g_sampled(spec, step, horizon)
    ur = dk.renewal_solve(g, f)
    ut = dk.series_sum(dk.SampledFunction(step, (spec.d + 0.5) * g.values))
    err = np.abs(ur.values - u.values)
    good = err < 1e-4
    rows = zip(u.times, u.values, ur.values, ut.values, err, good)
    return _table(["t", "u_exact", "u_renewal", "u_series", "abs_error", "pass"], rows,
                  good.all(), f"renewal vs exact: sup error {err.max():.3e} (step {step:g})")


def _report_table(report: bounds.BoundReport) -> ResultTable:
    cols, rows = report.table()
    summary = report.summary(header=False)
    return _table(cols, rows, report.all_passed, summary)


def _local_smoothness(cfg, threads):
    return _report_table(bounds.verify_local_smoothness(
        cfg.spec, cfg.get("step", 1.0 / 16), cfg.get("horizon", 20.0), cfg.get("tol", dk.DEFAULT_TOL)))


def _concentration(cfg, threads):
    replicas = cfg.get("replicas", 0)
    return _report_table(bounds.verify_concentration(
        cfg.spec, cfg.get("step", 1.0 / 64), cfg.get("horizon"),
        mc_times=cfg.time_grid() if replicas else (), replicas=replicas, seed=cfg.seed,
        threads=threads))


def _gradient(cfg, threads):
    return _report_table(bounds.verify_gradient(cfg.spec, cfg.time_grid(),
                                                cfg.get("replicas", 0), cfg.seed, threads))


def _l2_bound(cfg, threads):
    return _report_table(bounds.verify_l2_bound(cfg.spec, cfg.get("step", 1.0 / 64),
                                                cfg.get("horizon"), check_times=cfg.time_grid()))


def _limit_profile(cfg, threads):
    rows = continuum.limit_profile_compare(cfg["Ns"], cfg.time_grid(), cfg["p"], cfg.get("d", 1),
                                           cfg.get("replicas", 0), cfg.seed, threads)
    out, ok = [], True
    prev: dict[float, continuum.ProfileRow] = {}
    for r in rows:
        ratio, good = float("nan"), True
        if r.t in prev:
            q = prev[r.t]
            ratio = r.discrepancy / q.discrepancy
            # first-order decay predicts ratio = N_prev / N; the window is +-40 %
            expected = q.N / r.N
            good = 0.6 * expected <= ratio <= 1.4 * expected
        prev[r.t] = r
        ok &= good
        out.append([r.N, r.t, r.p, r.discrete_value, r.continuum_value, r.discrepancy,
                    r.discrepancy_times_N, r.std_error, ratio, good])
    cols = [*continuum.PROFILE_COLUMNS, "ratio_to_previous_N", "pass"]
    return _table(cols, out, ok, "limit profile: discrepancy ratios against first-order decay")


def _hydrodynamic(cfg, threads):
    g = DENSITIES[cfg.get("density", "cosine")]
    psi = OBSERVABLES[cfg.get("observable", "cos")]
    rows = continuum.hydrodynamic_check(g, psi, cfg["Ns"], cfg.time_grid(), cfg["replicas"],
                                        cfg.seed, threads)
    out, ok = [], True
    first: dict[float, continuum.HydroRow] = {}
    for r in rows:
        base = first.setdefault(r.t, r)
        good = r.estimate.mean <= base.estimate.mean + 3 * math.hypot(
            r.estimate.std_error, base.estimate.std_error)
        ok &= good
        out.append([r.N, r.t, r.estimate.mean, r.estimate.std_error, r.initial_error,
                    r.continuum_value, r.lhs_times_N, good])
    cols = ["N", "t", "mean_abs_error", "std_error", "initial_error", "continuum_value",
            "mean_abs_error_times_N", "pass"]
    return _table(cols, out, ok, "hydrodynamic: error does not grow with N (within 3 SE)")


def _splitting_tv(cfg, threads):
    spec = TorusSpec(int(cfg.get("d", 1)), cfg["N"])
    model = splitting.build_splitting_generator(spec, cfg["k"])
    times = cfg.time_grid()
    tv = splitting.exact_tv_curve(model, times, cfg.get("tol", 1e-12))
    db = splitting.detailed_balance_error(model)
    checks = [db < 1e-12]
    lines = [f"detailed balance error {db:.3e}"]
    if model.n_states <= splitting.DENSE_CAP:
        gap = splitting.spectral_gap_check(model)
        checks.append(gap.passed)
        lines.append(f"spectral gap {gap.gap:.12g} (expected {gap.expected:.12g})")
    d0 = 1.0 - model.stationary.min()
    rows, order = [], np.argsort(times, kind="stable")
    for t, v in zip(times, tv):
        good = (abs(v - d0) <= 1e-12) if t == 0 else (v <= d0 + 1e-12)
        checks.append(good)
        rows.append([t, v, good])
    monotone = bool(np.all(np.diff(tv[order]) <= 1e-12))
    checks.append(monotone)
    lines.append(f"d_k nonincreasing: {monotone}")
    return _table(["t", "tv_exact", "pass"], rows, all(checks), "; ".join(lines))


def _cutoff_curve(cfg, threads):
    spec = TorusSpec(int(cfg.get("d", 1)), cfg["N"])
    model = splitting.build_splitting_generator(spec, cfg["k"])
    a = cfg.time_grid("a", "a")
    curve = splitting.cutoff_curve(model, a)
    dominated = curve.tv <= curve.l2_bound + 1e-12
    order = np.argsort(curve.a, kind="stable")
    monotone = bool(np.all(np.diff(curve.tv[order]) <= 1e-12))
    rows = zip(curve.a, curve.times, curve.clipped, curve.tv, curve.l2_bound, dominated)
    summary = (f"bound dominates at {int(dominated.sum())}/{len(dominated)} points; "
               f"monotone in a: {monotone}")
    return _table(["a", "T", "clipped", "tv_exact", "l2_bound", "pass"], rows,
                  dominated.all() and monotone, summary)


@dataclass(frozen=True)
class Experiment:
    required: tuple[str, ...]
    optional: tuple[str, ...]
    description: str
    runner: Callable[[ExperimentConfig, int], ResultTable]


EXPERIMENTS: dict[str, Experiment] = {
    "heatflow": Experiment(("d", "N", "times"), (), "heat kernel, L2 distance and Dirichlet form of the mean",
                           _heatflow),
    "avg-moments": Experiment(("d", "N", "times", "replicas", "seed"), ("p",),
                              "Monte Carlo functionals against exact values", _avg_moments),
    "renewal": Experiment(("d", "N"), ("step", "horizon", "tol"),
                          "renewal solver against the exact difference kernel", _renewal),
    "local-smoothness": Experiment(("d", "N"), ("step", "horizon", "tol"),
                                   "g <= u, exponential lower chain and series upper bound",
                                   _local_smoothness),
    "concentration": Experiment(("d", "N"), ("step", "horizon", "times", "replicas", "seed"),
                                "exact fluctuation by convolution, Monte Carlo comparison",
                                _concentration),
    "gradient": Experiment(("d", "N", "times"), ("replicas", "seed"),
                           "edge gradients from the pair kernel and their decay", _gradient),
    "l2-bound": Experiment(("d", "N"), ("step", "horizon", "times"),
                           "exact L2 distance by two routes and its bound shape", _l2_bound),
    "limit-profile": Experiment(("Ns", "times", "p"), ("d", "replicas", "seed"),
                                "discrete Lp distance against the continuum heat kernel",
                                _limit_profile),
    "hydrodynamic": Experiment(("Ns", "times", "replicas", "seed"), ("density", "observable"),
                               "weak convergence of the rescaled profile", _hydrodynamic),
    "splitting-tv": Experiment(("N", "k", "times"), ("d", "tol"),
                               "worst-case total variation of the splitting process",
                               _splitting_tv),
    "cutoff-curve": Experiment(("N", "k", "a"), ("d",),
                               "total variation at T(a) against the L2 bound", _cutoff_curve),
}


def list_experiments() -> str:
    lines = []
    for name, exp in EXPERIMENTS.items():
        opt = f"; optional: {', '.join(exp.optional)}" if exp.optional else ""
        lines.append(f"{name:<17} required: {', '.join(exp.required)}{opt}  ({exp.description})")
    return "\n".join(lines)


def run(cfg: ExperimentConfig, threads: int = 1) -> ResultTable:
    table = EXPERIMENTS[cfg.experiment].runner(cfg, threads)
    prov = [("avgtorus version", __version__)]
    prov += [(k, cfg.raw[k]) for k in KEYS if k in cfg.raw and k != "seed"]
    prov.append(("seed", str(cfg.seed)))
    table.provenance = prov
    return table


def output_path(cfg: ExperimentConfig, out_dir: str | None) -> Path:
    name = Path(cfg.get("out", f"{cfg.experiment}.csv"))
    if out_dir is not None:
        return Path(out_dir) / name.name
    return name


def main(argv: Sequence[str] | None = None) -> int:
    parser = argparse.ArgumentParser(prog="avgtorus",
                                     description="Averaging process on the discrete torus: experiments.")
    parser.add_argument("--config", help="experiment config file (key = value lines)")
    parser.add_argument("--seed", type=int, help="override the master seed")
    parser.add_argument("--out", help="directory for the CSV output")
    parser.add_argument("--threads", type=int, default=1, help="worker threads (speed only)")
    parser.add_argument("--list", action="store_true", help="list experiments and exit")
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_CONFIG if exc.code else EXIT_PASS
    if args.list:
        print(list_experiments())
        return EXIT_PASS
    if not args.config:
        print("error: --config is required", file=sys.stderr)
        return EXIT_CONFIG
    if args.threads < 1:
        print("error: --threads must be at least 1", file=sys.stderr)
        return EXIT_CONFIG
    try:
        text = Path(args.config).read_text(encoding="utf-8")
        cfg = parse_config(text)
        if args.seed is not None:
            if args.seed < 0:
                raise ConfigError("seed must be nonnegative")
            cfg = cfg.with_seed(args.seed)
    except (OSError, UnicodeDecodeError) as exc:
        print(f"error: cannot read config: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    try:
        table = run(cfg, args.threads)
    except NUMERIC_ERRORS as exc:
        print(f"numerical error in experiment {cfg.experiment}: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (ValueError, TorusError) as exc:
        print(f"error in experiment {cfg.experiment}: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    path = output_path(cfg, args.out)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(table.to_csv(), encoding="utf-8")
    status = "PASS" if table.passed else "FAIL"
    print(f"[{status}] {cfg.experiment}: {table.summary}")
    print(f"wrote {path}")
    return EXIT_PASS if table.passed else EXIT_FAIL


if __name__ == "__main__":
    sys.exit(main())

"""Grid-level checks of the local-smoothness, concentration, gradient and L^2 bounds.

Unspecified constants are never asserted.  Each report carries (a) exact
identities, (b) inequality chains with constructive constants, and
(c) fitted ratio constants whose stability across N is the testable
stand-in for the asymptotic statements.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.integrate import cumulative_simpson

from . import diff_kernel as dk
from .heat import l2_heat, spectral_data, xi
from .simulate import InsufficientReplicas, McEstimate, mc_functionals, simulate_ensemble
from .torus import MassProfile, TorusSpec

ATOL = 1e-12


class TailHorizonError(ArithmeticError):
    pass


@dataclass(frozen=True)
class Check:
    name: str
    value: float
    expected: float
    tolerance: float
    passed: bool


@dataclass
class BoundReport:
    name: str
    times: np.ndarray
    lhs: np.ndarray
    rhs: np.ndarray
    passed: np.ndarray
    constants: dict[str, float] = field(default_factory=dict)
    columns: dict[str, np.ndarray] = field(default_factory=dict)
    checks: list[Check] = field(default_factory=list)
    params: dict[str, object] = field(default_factory=dict)

    @property
    def pass_fraction(self) -> float:
        return float(np.mean(self.passed)) if self.passed.size else 1.0

    @property
    def all_passed(self) -> bool:
        return bool(np.all(self.passed)) and all(c.passed for c in self.checks)

    def table(self) -> tuple[list[str], list[list[float]]]:
        names = ["t", "lhs", "rhs", *self.columns, "pass"]
        rows = [
            [float(t), float(l), float(r), *(float(c[i]) for c in self.columns.values()),
             int(p)]
            for i, (t, l, r, p) in enumerate(zip(self.times, self.lhs, self.rhs, self.passed))
        ]
        return names, rows

    def summary(self, header: bool = True, max_checks: int = 8) -> str:
        status = "PASS" if self.all_passed else "FAIL"
        consts = ", ".join(f"{k}={v:.4g}" for k, v in self.constants.items())
        body = f"{100 * self.pass_fraction:.1f}% of grid points; {consts}"
        lines = [f"[{status}] {self.name}: {body}" if header else body]
        shown = self.checks
        if len(self.checks) > max_checks:
            n_ok = sum(c.passed for c in self.checks)
            lines.append(f"    {n_ok}/{len(self.checks)} identity checks passed")
            shown = [c for c in self.checks if not c.passed]
        for c in shown:
            flag = "PASS" if c.passed else "FAIL"
            lines.append(f"    [{flag}] {c.name}: value={c.value:.6g} expected={c.expected:.6g} "
                         f"tol={c.tolerance:.3g}")
        return "\n".join(lines)


def _log_slope(t: np.ndarray, y: np.ndarray) -> float:
    return float(np.polyfit(t, np.log(y), 1)[0])


def decay_rate_fit(times, values, t_rel: float, lo: float = 3.0, hi: float = 6.0) -> float:
    """Slope of log(values) on [lo*t_rel, hi*t_rel]."""
    times = np.asarray(times)
    mask = (times >= lo * t_rel) & (times <= hi * t_rel)
    return _log_slope(times[mask], np.asarray(values)[mask])


def fit_envelope(times, lhs, shape, spec: TorusSpec, rel_floor: float = 1e-12) -> tuple[float, float]:
    """Fit lhs <= C exp(B t / N^(d+2)) shape.

    B is the least-squares slope of log(lhs/shape) against t/N^(d+2) over the
    second half of the grid (clipped at 0); C is then the smallest constant
    making the envelope hold at every grid point.  Points below
    ``rel_floor * max(lhs)`` are rounding noise and are ignored.
    """
    times = np.asarray(times, dtype=float)
    lhs = np.asarray(lhs, dtype=float)
    shape = np.asarray(shape, dtype=float)
    s = times / float(spec.N) ** (spec.d + 2)
    ok = (lhs > rel_floor * lhs.max()) & (shape > 0)
    late = ok & (times >= times[ok].max() / 2)
    B = 0.0
    if late.sum() >= 2 and np.ptp(s[late]) > 0:
        B = max(0.0, float(np.polyfit(s[late], np.log(lhs[late] / shape[late]), 1)[0]))
    C = float(np.max(lhs[ok] / (shape[ok] * np.exp(B * s[ok]))))
    return C, B


def default_horizon(spec: TorusSpec, multiple: float = 8.0, minimum: float = 16.0,
                    covering: Sequence[float] = ()) -> float:
    """ceil(multiple * t_rel), at least ``minimum`` and at least every time in ``covering``."""
    need = max([minimum, multiple * spectral_data(spec.N).t_rel, *covering])
    return float(math.ceil(need))


def stability_ratio(constants: Sequence[float]) -> float:
    c = np.asarray(constants, dtype=float)
    return float(c.max() / c.min())


# --------------------------------------------------------------------------
# local smoothness


def verify_local_smoothness(spec: TorusSpec, step: float = 1.0 / 16, horizon: float = 20.0,
                            tol: float = dk.DEFAULT_TOL, atol: float = ATOL) -> BoundReport:
    """g <= u, exp(sup_{s<=t} s f(s)) g(t) <= u(t), and u <= sum_k ((d+1/2) g)^{*k}."""
    u = dk.u_exact(spec, step, horizon, tol)
    f, g = dk.f_g_sampled(spec, step, horizon)
    t = u.times
    lower = np.maximum.accumulate(np.exp(t * f.values)) * g.values
    series = dk.series_sum(dk.SampledFunction(step, (spec.d + 0.5) * g.values))
    ok = ((g.values <= u.values + atol) & (lower <= u.values + atol)
          & (u.values <= series.values + atol))
    # below ~1e-200 the ratio is pure rounding
    pos = (t > 0) & (g.values > 1e-200)
    ratio = np.full_like(t, np.nan)
    ratio[g.values > 1e-200] = u.values[g.values > 1e-200] / g.values[g.values > 1e-200]
    c1 = float(np.min((ratio[pos] - 1.0) / np.minimum(t[pos], 1.0)))
    c_lemma = float(np.min(np.log(lower[pos] / g.values[pos]) / np.minimum(t[pos], 1.0)))
    late = (t >= horizon / 2) & pos & (g.values > 1e-100)
    rate_corr = _log_slope(t[late], ratio[late])
    return BoundReport(
        "local-smoothness", t, u.values, series.values, ok,
        constants={"C1_implied": c1, "c_lower_chain": c_lemma,
                   "log_ratio_slope": rate_corr,
                   "B_implied": rate_corr * spec.N ** (spec.d + 2)},
        columns={"g": g.values, "lower_chain": lower, "ratio_u_over_g": ratio},
        params={"d": spec.d, "N": spec.N, "step": step, "horizon": horizon, "tol": tol},
    )


# --------------------------------------------------------------------------
# concentration


def fluctuation_exact(spec: TorusSpec, step: float = 1.0 / 64, horizon: float = 32.0,
                      u: dk.SampledFunction | None = None,
                      refine: bool = False) -> dk.SampledFunction:
    """E||eta_t/pi - pi_t/pi||_2^2 = d N^d (u*g)(t) on the grid.

    With ``refine`` the trapezoidal convolution is repeated at half the step and
    the two are Richardson-combined, removing the O(h^2) term.
    """
    u = u or dk.u_exact(spec, step, horizon)
    _, g = dk.f_g_sampled(spec, u.step, u.horizon)
    conv = dk.convolve(u, g).values
    if refine:
        fine_u = dk.u_exact(spec, u.step / 2, u.horizon)
        _, fine_g = dk.f_g_sampled(spec, u.step / 2, u.horizon)
        fine = dk.convolve(fine_u, fine_g).values[::2]
        conv = (4.0 * fine - conv) / 3.0
    return dk.SampledFunction(u.step, spec.d * spec.n_vertices * conv)


def verify_concentration(spec: TorusSpec, step: float = 1.0 / 64, horizon: float | None = None,
                         mc_times: Sequence[float] = (), replicas: int = 0, seed: int = 0,
                         threads: int = 1) -> BoundReport:
    """Exact fluctuation N_t = d N^d (u*g)(t), its lower chain and the Xi sandwich."""
    horizon = horizon or default_horizon(spec, 4.0, 1.0, mc_times)
    u = dk.u_exact(spec, step, horizon)
    _, g = dk.f_g_sampled(spec, step, horizon)
    scale = spec.d * spec.n_vertices
    Nt = fluctuation_exact(spec, u=u)
    gg = scale * dk.convolve(g, g).values
    t = u.times
    ok = gg <= Nt.values + ATOL
    benchmark = np.minimum(t, 1.0) * xi(t, spec)
    pos = (t > 0) & (benchmark > 1e-250)
    ratio = np.full_like(t, np.nan)
    ratio[pos] = Nt.values[pos] / benchmark[pos]
    C2, B = fit_envelope(t[pos], Nt.values[pos], benchmark[pos], spec)
    checks = []
    if mc_times:
        if replicas < 2:
            raise InsufficientReplicas("Monte Carlo comparison needs replicas >= 2")
        rows = mc_functionals(MassProfile.dirac(spec), list(mc_times), replicas, seed, spec,
                              threads=threads)
        for r in rows:
            if r.functional != "fluctuation":
                continue
            exact = Nt.at(r.t)
            if r.t > 0 and r.estimate.std_error > 0.5 * exact:
                raise InsufficientReplicas(f"standard error {r.estimate.std_error:.3g} "
                                           f"too large against {exact:.3g} at t={r.t}")
            checks.append(Check(f"mc fluctuation t={r.t:g}", r.estimate.mean, exact,
                                3 * r.estimate.std_error, r.estimate.agrees(exact)))
    return BoundReport(
        "concentration", t, Nt.values, gg, ok,
        constants={"C1_fit": float(np.nanmin(ratio)), "C2_fit": C2, "B_fit": B},
        columns={"xi_benchmark": benchmark, "ratio": ratio},
        checks=checks,
        params={"d": spec.d, "N": spec.N, "step": step, "horizon": horizon,
                "replicas": replicas, "seed": seed, "atol": ATOL},
    )


# --------------------------------------------------------------------------
# gradients


def gradient_shape(t, spec: TorusSpec):
    t = np.asarray(t, dtype=float)
    d, N = spec.d, spec.N
    t_rel = spectral_data(N).t_rel
    denom = np.maximum(np.minimum(float(N) ** (2 * d + 2), t ** (d + 1)), 1.0)
    return np.exp(-2.0 * t / t_rel) / denom


def edge_gradients(pair: np.ndarray, spec: TorusSpec) -> np.ndarray:
    """E[(eta_t(0,x) - eta_t(0,y))^2] for every edge, from the pair kernel."""
    a, b = spec.edges[:, 0], spec.edges[:, 1]
    return pair[..., a, a] + pair[..., b, b] - 2.0 * pair[..., a, b]


def verify_gradient(spec: TorusSpec, times: Sequence[float], replicas: int = 0, seed: int = 0,
                    threads: int = 1) -> BoundReport:
    times = np.asarray(times, dtype=float)
    V = spec.n_vertices
    checks = []
    se = np.zeros(len(times))
    if V * V <= dk.PAIR_STATE_CAP:
        pairs = dk.crw_pair_path(times, spec)
        grads = edge_gradients(pairs, spec)
        lhs = grads.max(axis=-1)
        mean_sq = grads.mean(axis=-1)
        mode = "exact"
        if spec.N >= 4:
            gen = dk.build_generator(spec)
            e = dk.unit_index(spec)
            for t, m in zip(times, mean_sq):
                S = dk.kernel_vector(gen, t).values
                target = 2.0 * (S[0] - S[e]) / V
                checks.append(Check(f"mean squared gradient t={t:g}", float(m), target, 1e-9,
                                    abs(m - target) <= 1e-9))
    else:
        if replicas < 2:
            raise InsufficientReplicas("state space too large for exact mode; give replicas")
        ea, eb = spec.edges[:, 0], spec.edges[:, 1]

        def reduce(states):
            return (states[..., ea] - states[..., eb]) ** 2

        vals = simulate_ensemble(np.eye(1, V)[0], times, replicas, seed, spec, reducer=reduce,
                                 threads=threads)
        est = [[McEstimate.from_samples(vals[:, i, j]) for j in range(spec.n_edges)]
               for i in range(len(times))]
        means = np.array([[e.mean for e in row] for row in est])
        ses = np.array([[e.std_error for e in row] for row in est])
        idx = means.argmax(axis=1)
        lhs = means[np.arange(len(times)), idx]
        se = ses[np.arange(len(times)), idx]
        mode = "monte-carlo"
    shape = gradient_shape(times, spec)
    ratio = lhs / shape
    pos = lhs > 0
    t_rel = spectral_data(spec.N).t_rel
    C, B = fit_envelope(times, lhs, shape, spec)
    envelope = C * shape * np.exp(B * times / float(spec.N) ** (spec.d + 2))
    consts = {"C_fit": C, "B_fit": B}
    late = (times >= 3 * t_rel) & (times <= 6 * t_rel) & pos
    if late.sum() >= 2:
        consts["decay_rate"] = _log_slope(times[late], lhs[late])
        consts["decay_rate_over_2_by_trel"] = -consts["decay_rate"] * t_rel / 2.0
    return BoundReport(
        "gradient", times, lhs, envelope, lhs <= envelope * (1 + 1e-12) + 3 * se,
        constants=consts, columns={"shape": shape, "ratio": ratio, "std_error": se},
        checks=checks, params={"d": spec.d, "N": spec.N, "mode": mode},
    )


# --------------------------------------------------------------------------
# L^2 distance


def l2_shape(t, spec: TorusSpec):
    t = np.asarray(t, dtype=float)
    d, N = spec.d, spec.N
    t_rel = spectral_data(N).t_rel
    denom = np.maximum(np.minimum(float(N) ** d, t ** (d / 2)), 1.0)
    return N**d * np.exp(-2.0 * t / t_rel) / denom


def integrated_dirichlet(u: dk.SampledFunction, spec: TorusSpec,
                         rel_tail: float = 1e-6) -> np.ndarray:
    """int_t^infty d N^d u(s) ds at every grid point.

    Simpson on the grid plus an exponential tail fitted to the last unit of time.
    """
    vals = spec.d * spec.n_vertices * u.values
    # integrate from the right so small late values are not differences of O(1) numbers
    rest = cumulative_simpson(vals[::-1], dx=u.step, initial=0.0)[::-1]
    total = rest[0]
    n_last = max(2, int(round(1.0 / u.step)))
    if min(vals[-1], vals[-1 - n_last]) <= 1e-250:
        # underflowed: nothing left to integrate
        return rest
    rate = -(math.log(vals[-1]) - math.log(vals[-1 - n_last])) / (n_last * u.step)
    if not rate > 0:
        raise TailHorizonError("u is not decaying at the end of the grid")
    tail = vals[-1] / rate
    if tail > rel_tail * max(total, 1e-300):
        raise TailHorizonError(f"tail {tail:.3g} is not negligible; extend the horizon")
    return rest + tail


def verify_l2_bound(spec: TorusSpec, step: float = 1.0 / 64, horizon: float | None = None,
                    check_times: Sequence[float] = (), rel_tol: float = 1e-4,
                    quad_tol: float = 1e-5) -> BoundReport:
    """Exact E||eta_t/pi - 1||_2^2 three ways, against the Corollary shape."""
    if not horizon:
        # the integrated route needs room to decay beyond the last check time
        horizon = default_horizon(spec, 10.0, 8.0) + math.ceil(max(check_times, default=0.0))
    u = dk.u_exact(spec, step, horizon)
    t = u.times
    Nt = fluctuation_exact(spec, u=u, refine=True)
    pyth = l2_heat(t, spec) + Nt.values
    integ = integrated_dirichlet(u, spec)
    check_times = list(check_times)
    if spec.n_vertices <= dk.SPECTRAL_CAP:
        # positive-mode sum: no cancellation once the distance is tiny
        direct_all = spec.n_vertices * dk.return_excess(check_times, spec)
    else:
        gen = dk.build_generator(spec)
        direct_all = [spec.n_vertices * dk.kernel_vector(gen, s).values[0] - 1.0
                      for s in check_times]
    checks = []
    for s, direct in zip(check_times, direct_all):
        a = pyth[int(round(s / step))]
        b = integ[int(round(s / step))]
        checks.append(Check(f"pythagoras vs integrated t={s:g}", float(a), float(b), rel_tol,
                            abs(a - b) <= rel_tol * abs(b)))
        checks.append(Check(f"integrated vs N^d S_t(0,0)-1 t={s:g}", float(b), float(direct),
                            quad_tol, abs(b - direct) <= quad_tol * abs(direct)))
    shape = l2_shape(t, spec)
    ratio = pyth / shape
    C, B = fit_envelope(t, pyth, shape, spec)
    envelope = C * shape * np.exp(B * t / float(spec.N) ** (spec.d + 2))
    visible = pyth > 1e-12 * pyth.max()
    consts = {"C_fit": C, "B_fit": B, "C_min": float(ratio[visible].min())}
    return BoundReport(
        "l2-bound", t, pyth, envelope, pyth <= envelope * (1 + 1e-12),
        constants=consts, columns={"integrated": integ, "shape": shape, "ratio": ratio},
        checks=checks, params={"d": spec.d, "N": spec.N, "step": step, "horizon": horizon,
                               "rel_tol": rel_tol, "quad_tol": quad_tol},
    )

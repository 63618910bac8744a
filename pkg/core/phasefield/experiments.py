"""
Experiments Module
==================

Runnable sweeps over disorder realizations: boundary-layer scaling, the conditional
energy difference F_n and its variance, envelope derivatives, ergodic means, the
uniqueness gap, symmetry and nested-box checks, the cut-off diagnostic and the property
diagnostics behind the ``diagnostics`` command.

Every realization is a task of ``core.workers.map_tasks``; task inputs are plain data
(``Setup``, sizes, seeds) and task outputs plain dicts, so results are folded in
realization order and never depend on the worker count. Realization ``r`` of a sweep
with base seed ``seed`` uses the disorder seed ``derive_seed(seed, "realization", r)``.
"""

import math
from dataclasses import dataclass, field, replace
from typing import Callable, Dict, List, Optional, Sequence

import numpy as np

from core.utils import derive_seed
from core.workers import map_tasks
from core.phasefield.energy import (
    EnergyProblem,
    build_potential,
    build_problem,
    cross_interaction,
    region_energy,
    total_energy,
)
from core.phasefield.kernels import (
    exterior_moment,
    exterior_moment_quadrature,
    grid_exterior_moment,
)
from core.phasefield.lattice import (
    ConstantExterior,
    Disorder,
    Grid,
    ScalarField,
    embed_grid,
    get_distribution,
    inner_mask,
    make_grid,
    negate_disorder,
    occupied_site_box,
    perturb_site,
    resample_outside,
    sample_disorder,
    site_box,
    window_exterior,
)
from core.phasefield.minimize import (
    BOUND_TOL,
    ORDERING_TOL,
    ExtremalStates,
    InitPolicy,
    SolverConfig,
    extremal_pair,
    holder_quotient,
    lattice_min_max,
    minimize,
    truncation_gain,
    truncation_stability,
)
from core.phasefield.stats import (
    SweepRecord,
    anderson_darling,
    binned_variance,
    exponent_for,
    fit_log_corrected,
    fit_power_law,
    linear_fit,
    summarize,
)

MIN_REALIZATIONS = 30


@dataclass(frozen=True)
class Setup:
    """Model and solver parameters shared by every realization of a sweep."""

    d: int = 1
    s: float = 0.5
    theta: float = 1.0
    C0: float = 1.0
    delta0: float = 0.5
    bridge: str = "quartic"
    m: int = 1
    K: Optional[float] = None
    dist: str = "uniform"
    method: str = "auto"
    cache_dir: Optional[str] = None
    solver: SolverConfig = field(default_factory=SolverConfig)

    def __post_init__(self):
        if not 0.0 < self.s < 1.0:
            raise ValueError(f"Fractional order s={self.s} must lie in (0, 1)")
        if self.theta < 0:
            raise ValueError(f"Disorder strength theta={self.theta} must be >= 0")
        self.potential()
        get_distribution(self.dist)

    def potential(self):
        return build_potential(self.C0, self.delta0, self.bridge)

    @property
    def bound(self) -> float:
        return get_distribution(self.dist).bound

    @property
    def K_star(self) -> float:
        return 1.0 + self.C0 * self.theta * self.bound

    @property
    def barrier(self) -> float:
        return self.K if self.K is not None else self.K_star

    @property
    def variance_ceiling(self) -> float:
        """4 θ^2 (1 + C_0 θ A)^2."""
        return 4.0 * self.theta**2 * self.K_star**2

    def grid(self, n: int) -> Grid:
        return make_grid(self.d, n, self.m)

    def disorder(self, grid: Grid, seed: int, pad: int = 0) -> Disorder:
        return sample_disorder(site_box(grid, pad), get_distribution(self.dist), seed)

    def problem(self, grid: Grid, disorder: Optional[Disorder]) -> EnergyProblem:
        return build_problem(
            grid, self.s, self.theta, self.potential(), disorder, self.method,
            self.cache_dir,
        )

    def pair(self, problem: EnergyProblem, k_gap: bool = False) -> ExtremalStates:
        return extremal_pair(
            self.barrier, problem.disorder, self.theta, problem.grid, self.solver,
            problem=problem, k_gap=k_gap,
        )

    def to_dict(self):
        return {
            "d": self.d,
            "s": self.s,
            "theta": self.theta,
            "C0": self.C0,
            "delta0": self.delta0,
            "bridge": self.bridge,
            "m": self.m,
            "K": self.barrier,
            "dist": self.dist,
            "method": self.method,
            "solver": self.solver.to_dict(),
        }


def realization_seed(seed: int, r: int) -> int:
    return derive_seed(seed, "realization", r)


def _require_realizations(R: int):
    if R < MIN_REALIZATIONS:
        raise ValueError(f"R={R} realizations are too few, need at least {MIN_REALIZATIONS}")


def _count(record: SweepRecord, outputs: List[Dict]):
    record.solves += len(outputs)
    record.failures += sum(1 for o in outputs if not o["converged"])


# -------------------------------------------------------------------
# Realization tasks
# -------------------------------------------------------------------


def _pair_task(args) -> Dict:
    """Extremal pair on Λ_n for one disorder seed, summarized to scalars."""
    setup, n, seed, k_gap = args
    grid = setup.grid(n)
    problem = setup.problem(grid, setup.disorder(grid, seed))
    states = setup.pair(problem, k_gap=k_gap)
    central = grid.central_mask()
    return {
        "energy_plus": states.plus.energy,
        "energy_minus": states.minus.energy,
        "energy_gap": states.energy_gap,
        "m_plus": states.v_plus.volume_average(),
        "m_minus": states.v_minus.volume_average(),
        "central_gap": float(np.max((states.v_plus.values - states.v_minus.values)[central])),
        "ordering_violation": states.ordering_violation,
        "bulk_sup": states.bulk_sup(),
        "k_gap": states.k_gap,
        "converged": states.converged,
    }


# -------------------------------------------------------------------
# Boundary-layer scaling
# -------------------------------------------------------------------


def exterior_mass(grid: Grid, s: float, cache_dir=None) -> float:
    """h^d Σ_i w_i, the collocated ∫_Λ ∫_{Λ^c} |x - y|^{-(d+2s)}."""
    return grid.cell_volume * float(np.sum(grid_exterior_moment(grid, s, cache_dir)))


def boundary_scaling_sweep(setup: Setup, s_list: Sequence[float], n_list: Sequence[int],
                           seed: int = 0, R: int = 0, jobs: int = 1,
                           on_done: Optional[Callable] = None) -> SweepRecord:
    """
    Exterior-weight mass and (for θ > 0, R > 0) extremal-pair energy differences
    against |Λ_n| = n^d, with log-log fits per s. The expected exponents are (d-2s)/d
    below s = 1/2 and (d-1)/d above; at s = 1/2 a log-corrected fit is added.
    """
    if len(n_list) < 3:
        raise ValueError(f"Scaling fits need at least 3 sizes, got {len(n_list)}")
    columns = ["s", "n", "volume", "realization", "mass", "energy_gap", "converged"]
    record = SweepRecord(
        "scaling",
        {**setup.to_dict(), "s_list": list(s_list), "n_list": list(n_list), "seed": seed,
         "R": R},
        columns,
    )
    for s in s_list:
        for n in n_list:
            grid = setup.grid(n)
            record.add_row([s, n, grid.volume, -1, exterior_mass(grid, s, setup.cache_dir),
                            math.nan, True])

    tasks = []
    if R > 0 and setup.theta > 0:
        tasks = [
            (replace(setup, s=s), n, realization_seed(seed, r), False)
            for s in s_list for n in n_list for r in range(R)
        ]
    outputs = map_tasks(_pair_task, tasks, jobs, on_done)
    _count(record, outputs)
    for (task_setup, n, _, _), r_out, k in zip(tasks, outputs, range(len(tasks))):
        grid = setup.grid(n)
        record.add_row([task_setup.s, n, grid.volume, k % R, math.nan,
                        r_out["energy_gap"], r_out["converged"]])

    expected = {}
    for s in s_list:
        expected[s] = exponent_for(setup.d, s)
        mass_rows = [r for r in record.rows if r[0] == s and r[3] == -1]
        volumes = [r[2] for r in mass_rows]
        record.fits[f"mass_s{s}"] = fit_power_law(volumes, [r[4] for r in mass_rows])
        if s == 0.5 and len(volumes) >= 4:
            record.fits[f"mass_log_s{s}"] = fit_log_corrected(
                volumes, [r[4] for r in mass_rows]
            )
        if tasks:
            worst = []
            for n in n_list:
                gaps = [abs(r[5]) for r in record.rows
                        if r[0] == s and r[1] == n and r[3] >= 0 and r[6]]
                worst.append(max(gaps) if gaps else math.nan)
            volumes_n = [setup.grid(n).volume for n in n_list]
            ok = [i for i, w in enumerate(worst) if math.isfinite(w) and w > 0]
            if len(ok) >= 3:
                record.fits[f"gap_s{s}"] = fit_power_law(
                    [volumes_n[i] for i in ok], [worst[i] for i in ok]
                )
                scaled = [worst[i] * volumes_n[i] ** (-expected[s]) for i in ok]
                trend = linear_fit([math.log(n_list[i]) for i in ok], scaled)
                record.fits[f"gap_scaled_trend_s{s}"] = trend
                record.extras.setdefault("no_upward_trend", {})[str(s)] = trend.ci_low <= 0.0
    record.extras["expected_exponent"] = {str(k): v for k, v in expected.items()}
    return record


# -------------------------------------------------------------------
# F_n: conditional energy difference given the disorder in Λ_n
# -------------------------------------------------------------------


@dataclass(frozen=True)
class FnEstimate:
    n: int
    pad: int
    M: int
    seed: int
    deltas: List[float]
    failures: int
    site0: float
    cell_plus: float
    cell_minus: float
    bias: Optional[float] = None
    bias_se: Optional[float] = None
    bias_failures: int = 0

    @property
    def estimate(self) -> float:
        return float(np.mean(self.deltas)) if self.deltas else math.nan

    @property
    def se(self) -> float:
        if len(self.deltas) < 2:
            return math.nan
        return float(np.std(self.deltas, ddof=1)) / math.sqrt(len(self.deltas))

    def to_dict(self):
        return {
            "n": self.n,
            "pad": self.pad,
            "M": self.M,
            "seed": self.seed,
            "estimate": self.estimate,
            "se": self.se,
            "failures": self.failures,
            "site0": self.site0,
            "bias": self.bias,
            "bias_se": self.bias_se,
            "bias_failures": self.bias_failures,
            "deltas": self.deltas,
        }


def resample_padding(setup: Setup, n: int, pad: int, interior_seed: int, j: int):
    """
    Disorder on Λ_{n+2P} for resample ``j``: sites hit by points of Λ_n keep the values
    of ``interior_seed``, every other site is redrawn.

    Returns:
        tuple: (base disorder, resampled disorder).
    """
    grid = setup.grid(n)
    base = setup.disorder(embed_grid(grid, pad), interior_seed)
    keep = occupied_site_box(grid)
    return base, resample_outside(base, keep, derive_seed(interior_seed, "resample", j))


def _fn_task(args) -> Dict:
    """One exterior resample: ΔG on Λ_n from the extremal pair on Λ_{n+2P}."""
    setup, n, pad, interior_seed, j = args
    grid = setup.grid(n)
    big = embed_grid(grid, pad)
    base, disorder = resample_padding(setup, n, pad, interior_seed, j)
    problem = setup.problem(big, disorder)
    states = setup.pair(problem)
    mask = inner_mask(big, grid)
    delta = (
        region_energy(states.v_plus, mask, problem).g1
        - region_energy(states.v_minus, mask, problem).g1
    )
    origin = (0,) * setup.d
    return {
        "delta": delta,
        "converged": states.converged,
        "site0": base.value(origin),
        "cell_plus": states.v_plus.cell_integral(origin),
        "cell_minus": states.v_minus.cell_integral(origin),
    }


def _fold_fn(n, pad, M, seed, outputs: List[Dict]) -> FnEstimate:
    good = [o for o in outputs if o["converged"]]
    failures = len(outputs) - len(good)
    if failures:
        print(f"⚠️ F_n(n={n}, seed={seed}): {failures}/{len(outputs)} resamples excluded")
    site0 = outputs[0]["site0"] if outputs else math.nan
    cell_plus = float(np.mean([o["cell_plus"] for o in good])) if good else math.nan
    cell_minus = float(np.mean([o["cell_minus"] for o in good])) if good else math.nan
    return FnEstimate(n, pad, M, seed, [o["delta"] for o in good], failures, site0,
                      cell_plus, cell_minus)


def _fn_tasks(setup, n, pad, M, interior_seed):
    return [(setup, n, pad, interior_seed, j) for j in range(M)]


def estimate_Fn(setup: Setup, n: int, pad: Optional[int] = None, M: int = 20,
                seed: int = 0, bias_check: bool = False, jobs: int = 1,
                on_done: Optional[Callable] = None) -> FnEstimate:
    """
    F̂_n for the interior disorder of seed ``seed``: the disorder in Λ_n is held fixed,
    the padding Λ_{n+2P} \\ Λ_n is redrawn M times, and each redraw contributes
    G_1(v⁺, Λ_n) - G_1(v⁻, Λ_n) of the extremal pair on Λ_{n+2P} (constant ±K beyond).

    Args:
        pad: Padding P in cells, n/2 by default.
        bias_check: Repeat with 2P and report the difference of the two estimates.
    """
    pad = n // 2 if pad is None else int(pad)
    if M < 2:
        raise ValueError(f"M={M} exterior resamples are too few, need at least 2")
    if pad < 0:
        raise ValueError(f"Padding P={pad} must be >= 0")
    tasks = _fn_tasks(setup, n, pad, M, seed)
    if bias_check:
        tasks += _fn_tasks(setup, n, 2 * pad, M, seed)
    outputs = map_tasks(_fn_task, tasks, jobs, on_done)
    estimate = _fold_fn(n, pad, M, seed, outputs[:M])
    if not bias_check:
        return estimate
    doubled = _fold_fn(n, 2 * pad, M, seed, outputs[M:])
    return replace(
        estimate,
        bias=doubled.estimate - estimate.estimate,
        bias_se=math.hypot(doubled.se, estimate.se),
        bias_failures=doubled.failures,
    )


def variance_sweep(setup: Setup, n_list: Sequence[int], R: int, M: int = 20,
                   pad: Optional[int] = None, seed: int = 0,
                   bins: Sequence[int] = (4, 8, 16), jobs: int = 1,
                   on_done: Optional[Callable] = None) -> SweepRecord:
    """
    F̂_n over R interior realizations per n: mean and SE (zero mean check),
    Var(F̂_n)/|Λ_n| against 4θ²(1+C_0θA)², D̂² = Var(E[F̂_n | ω(0)]) by quantile binning,
    an Anderson-Darling check of the standardized samples and the slope of F̂_n in ω(0)
    next to its envelope prediction -θ(∫_{Q(0)} v⁺ - ∫_{Q(0)} v⁻).
    """
    _require_realizations(R)
    columns = ["n", "realization", "fn", "se", "site0", "cell_plus", "cell_minus",
               "failures"]
    record = SweepRecord(
        "variance",
        {**setup.to_dict(), "n_list": list(n_list), "R": R, "M": M, "pad": pad,
         "seed": seed, "bins": list(bins)},
        columns,
    )
    tasks = []
    for n in n_list:
        p = n // 2 if pad is None else int(pad)
        for r in range(R):
            tasks += _fn_tasks(setup, n, p, M, realization_seed(seed, r))
    outputs = map_tasks(_fn_task, tasks, jobs, on_done)
    _count(record, outputs)

    eps_stat = 2.0 * math.sqrt(2.0 / (R - 1))
    k = 0
    for n in n_list:
        p = n // 2 if pad is None else int(pad)
        for r in range(R):
            est = _fold_fn(n, p, M, realization_seed(seed, r), outputs[k:k + M])
            k += M
            record.add_row([n, r, est.estimate, est.se, est.site0, est.cell_plus,
                            est.cell_minus, est.failures])
        where = {"n": n}
        summary = record.aggregate("fn", where, f"fn_n{n}")
        fn = record.column("fn", where)
        site0 = record.column("site0", where)
        finite = np.isfinite(fn)
        volume = setup.grid(n).volume
        per_volume = summary.variance / volume
        record.extras[f"n{n}"] = {
            "var_over_volume": per_volume,
            "ceiling": setup.variance_ceiling,
            "ceiling_ok": bool(per_volume <= setup.variance_ceiling * (1.0 + eps_stat)),
            "mean_within_3se": bool(abs(summary.mean) <= 3.0 * summary.se),
            "predicted_site0_slope": -setup.theta * float(
                np.nanmean(record.column("cell_plus", where))
                - np.nanmean(record.column("cell_minus", where))
            ),
        }
        for b in bins:
            if int(np.sum(finite)) >= 2 * b:
                record.fits[f"d2_n{n}_b{b}"] = binned_variance(
                    site0[finite], fn[finite], b, seed=derive_seed(seed, "d2", n)
                )
        if int(np.sum(finite)) >= 8 and summary.variance > 0:
            record.fits[f"ad_n{n}"] = anderson_darling(fn[finite])
        if int(np.sum(finite)) >= 3 and np.ptp(site0[finite]) > 0:
            record.fits[f"site0_slope_n{n}"] = linear_fit(site0[finite], fn[finite])
    return record


# -------------------------------------------------------------------
# Envelope derivative in a single site
# -------------------------------------------------------------------


@dataclass(frozen=True)
class EnvelopeReport:
    site: tuple
    theta: float
    energy: float
    cell_integral: float
    steps: List[Dict]
    scan: List[Dict]
    monotone: bool

    @property
    def sandwich_ok(self) -> bool:
        return all(step["sandwich_ok"] for step in self.steps)

    def to_dict(self):
        return {
            "site": list(self.site),
            "theta": self.theta,
            "energy": self.energy,
            "cell_integral": self.cell_integral,
            "steps": self.steps,
            "scan": self.scan,
            "monotone": self.monotone,
            "sandwich_ok": self.sandwich_ok,
        }


def _plus_task(args) -> Dict:
    setup, grid, disorder = args
    problem = setup.problem(grid, disorder)
    cfg = replace(setup.solver, init=InitPolicy.PLUS)
    result = minimize(cfg, problem, ConstantExterior(setup.barrier), level=setup.barrier)
    return {"values": np.array(result.field.values), "energy": result.energy,
            "converged": result.converged}


def envelope_derivative_check(setup: Setup, n: int, site, h_list=(1e-2, 1e-3),
                              seed: int = 0, scan: Optional[Sequence[float]] = None,
                              slack: float = 1e-9, jobs: int = 1) -> EnvelopeReport:
    """
    Perturb ω(site) -> ω(site) - h and compare ΔG = G_1(v⁺(ω_h), ω_h) - G_1(v⁺(ω), ω)
    with the two-sided bound θ h ∫_{Q(site)} v⁺(ω) >= ΔG >= θ h ∫_{Q(site)} v⁺(ω_h) and
    ΔG / h with θ ∫_{Q(site)} v⁺(ω). ``scan`` values of ω(site) check that the cell
    integral of v⁺ is nondecreasing in ω(site).
    """
    grid = setup.grid(n)
    site = tuple(int(v) for v in np.atleast_1d(site))
    if len(site) != setup.d or not np.any(grid.cell_mask(site)):
        raise ValueError(f"Site {site} has no cell inside Λ_{n}")
    disorder = setup.disorder(grid, seed)
    if scan is None:
        scan = np.linspace(-setup.bound, setup.bound, 5).tolist()
    perturbed = [perturb_site(disorder, site, -h) for h in h_list]
    scanned = [perturb_site(disorder, site, w - disorder.value(site)) for w in scan]
    tasks = [(setup, grid, g) for g in [disorder, *perturbed, *scanned]]
    outputs = map_tasks(_plus_task, tasks, jobs)

    base = outputs[0]
    cell = grid.cell_mask(site)
    hd = grid.cell_volume

    def integral(out):
        return float(np.sum(out["values"][cell]) * hd)

    base_integral = integral(base)
    steps = []
    for h, out in zip(h_list, outputs[1:1 + len(h_list)]):
        delta = out["energy"] - base["energy"]
        upper = setup.theta * h * base_integral
        lower = setup.theta * h * integral(out)
        tol = slack * max(1.0, abs(base["energy"]))
        predicted = setup.theta * base_integral
        steps.append({
            "h": h,
            "delta_g": delta,
            "upper": upper,
            "lower": lower,
            "sandwich_ok": bool(lower - tol <= delta <= upper + tol),
            "derivative_error": abs(delta / h - predicted) / max(1.0, abs(predicted)),
            "converged": out["converged"],
        })
    scan_rows = [
        {"omega": float(w), "cell_integral": integral(out), "converged": out["converged"]}
        for w, out in zip(scan, outputs[1 + len(h_list):])
    ]
    ordered = sorted(scan_rows, key=lambda row: row["omega"])
    monotone = all(
        b["cell_integral"] >= a["cell_integral"] - ORDERING_TOL * hd
        for a, b in zip(ordered, ordered[1:])
    )
    return EnvelopeReport(site, setup.theta, base["energy"], base_integral, steps,
                          scan_rows, monotone)


# -------------------------------------------------------------------
# Ergodic means, symmetry, nested boxes
# -------------------------------------------------------------------


def ergodic_means(setup: Setup, n: int, R: int, seed: int = 0, jobs: int = 1,
                  on_done: Optional[Callable] = None) -> SweepRecord:
    """Volume averages m̂± of v± over R realizations and the defect |m̂⁺ + m̂⁻|."""
    _require_realizations(R)
    columns = ["n", "realization", "m_plus", "m_minus", "energy_gap", "converged"]
    record = SweepRecord(
        "ergodic", {**setup.to_dict(), "n": n, "R": R, "seed": seed}, columns
    )
    tasks = [(setup, n, realization_seed(seed, r), False) for r in range(R)]
    outputs = map_tasks(_pair_task, tasks, jobs, on_done)
    _count(record, outputs)
    for r, out in enumerate(outputs):
        ok = out["converged"]
        record.add_row([n, r, out["m_plus"] if ok else math.nan,
                        out["m_minus"] if ok else math.nan, out["energy_gap"], ok])
    plus = record.aggregate("m_plus")
    minus = record.aggregate("m_minus")
    sums = summarize(record.column("m_plus") + record.column("m_minus"))
    record.extras.update({
        "antisymmetry_defect": abs(plus.mean + minus.mean),
        "antisymmetry_se": sums.se,
        "antisymmetric_within_2se": bool(abs(sums.mean) <= 2.0 * sums.se)
        if sums.count > 1 else False,
        "plus_within_3se_of_zero": bool(abs(plus.mean) <= 3.0 * plus.se),
        "minus_within_3se_of_zero": bool(abs(minus.mean) <= 3.0 * minus.se),
    })
    return record


def _symmetry_task(args) -> Dict:
    setup, n, seed = args
    grid = setup.grid(n)
    disorder = setup.disorder(grid, seed)
    states = setup.pair(setup.problem(grid, disorder))
    flipped = setup.pair(setup.problem(grid, negate_disorder(disorder)))
    diff = max(
        float(np.max(np.abs(states.v_plus.values + flipped.v_minus.values))),
        float(np.max(np.abs(states.v_minus.values + flipped.v_plus.values))),
    )
    return {"max_diff": diff, "converged": states.converged and flipped.converged}


def symmetry_check(setup: Setup, n: int, R: int, seed: int = 0, jobs: int = 1,
                   on_done: Optional[Callable] = None) -> SweepRecord:
    """max_x |v⁺(x, ω) + v⁻(x, -ω)| (and the mirrored pair) per realization."""
    record = SweepRecord(
        "symmetry", {**setup.to_dict(), "n": n, "R": R, "seed": seed},
        ["n", "realization", "max_diff", "converged"],
    )
    outputs = map_tasks(
        _symmetry_task, [(setup, n, realization_seed(seed, r)) for r in range(R)], jobs,
        on_done,
    )
    _count(record, outputs)
    for r, out in enumerate(outputs):
        record.add_row([n, r, out["max_diff"], out["converged"]])
    record.extras["max_diff"] = max((o["max_diff"] for o in outputs), default=0.0)
    return record


def _window_task(args) -> Dict:
    setup, n, seed, window_n = args
    grid = setup.grid(n)
    states = setup.pair(setup.problem(grid, setup.disorder(grid, seed)))
    mask = inner_mask(grid, setup.grid(window_n))
    return {"plus": np.array(states.v_plus.values[mask]),
            "minus": np.array(states.v_minus.values[mask]),
            "converged": states.converged}


def nested_box_sweep(setup: Setup, n_list: Sequence[int], seed: int = 0, jobs: int = 1,
                     on_done: Optional[Callable] = None) -> SweepRecord:
    """
    One disorder realization on growing boxes, read on the fixed central window.
    v⁺_n should not increase and v⁻_n should not decrease as n grows.
    """
    n_list = sorted(int(n) for n in n_list)
    window_n = max(2, (n_list[0] // 2) // 2 * 2)
    record = SweepRecord(
        "nested", {**setup.to_dict(), "n_list": n_list, "seed": seed, "window": window_n},
        ["n", "window_max_plus", "window_min_minus", "plus_increase", "minus_decrease",
         "converged"],
    )
    outputs = map_tasks(_window_task, [(setup, n, seed, window_n) for n in n_list], jobs,
                        on_done)
    _count(record, outputs)
    violations = 0
    previous = None
    for n, out in zip(n_list, outputs):
        up = down = math.nan
        if previous is not None:
            up = float(np.max(out["plus"] - previous["plus"]))
            down = float(np.max(previous["minus"] - out["minus"]))
            violations += int(up > ORDERING_TOL) + int(down > ORDERING_TOL)
        record.add_row([n, float(np.max(out["plus"])), float(np.min(out["minus"])), up,
                        down, out["converged"]])
        previous = out
    record.extras["monotone_violations"] = violations
    return record


# -------------------------------------------------------------------
# Uniqueness gap and the ordering sandwich
# -------------------------------------------------------------------


@dataclass(frozen=True)
class SandwichReport:
    rows: List[Dict]

    @property
    def max_violation(self) -> float:
        return max((row["violation"] for row in self.rows), default=0.0)

    @property
    def converged(self) -> bool:
        return all(row["converged"] for row in self.rows)

    def to_dict(self):
        return {"rows": self.rows, "max_violation": self.max_violation}


def boundary_conditions(grid: Grid, pad: int, seed: int):
    """Three bounded exteriors between -1 and 1: constant, random window, cosine window."""
    window = embed_grid(grid, pad)
    rng = np.random.default_rng(derive_seed(seed, "window"))
    return {
        "constant": ConstantExterior(0.5),
        "window_random": window_exterior(grid, pad, rng.uniform(-1.0, 1.0, window.size)),
        "window_cosine": window_exterior(
            grid, pad, lambda p: np.cos(0.5 * np.pi * p[:, 0])
        ),
    }


def ordering_sandwich(setup: Setup, problem: EnergyProblem,
                      states: Optional[ExtremalStates] = None,
                      pad: Optional[int] = None, seed: int = 0) -> SandwichReport:
    """
    Minimize with three bounded exteriors w and measure how far v⁻ ≤ w ≤ v⁺ is
    violated, plus the central-window distances of w to v⁺ and v⁻.
    """
    grid = problem.grid
    if states is None:
        states = setup.pair(problem)
    pad = max(2, grid.n // 4) if pad is None else int(pad)
    cfg = replace(setup.solver, init=InitPolicy.GIVEN, multistart=1)
    central = grid.central_mask()
    rows = []
    for name, exterior in boundary_conditions(grid, pad, seed).items():
        start = ScalarField(grid, np.zeros(grid.size), exterior)
        result = minimize(cfg, problem, exterior, start=start)
        w = result.field
        below = float(np.max(states.v_minus.values - w.values))
        above = float(np.max(w.values - states.v_plus.values))
        rows.append({
            "name": name,
            "violation": max(0.0, below, above),
            "dist_plus": float(np.max(np.abs(w.values - states.v_plus.values)[central])),
            "dist_minus": float(np.max(np.abs(w.values - states.v_minus.values)[central])),
            "converged": result.converged,
        })
    return SandwichReport(rows)


def _uniqueness_task(args) -> Dict:
    setup, n, seed = args
    grid = setup.grid(n)
    problem = setup.problem(grid, setup.disorder(grid, seed))
    states = setup.pair(problem)
    sandwich = ordering_sandwich(setup, problem, states, seed=seed)
    central = grid.central_mask()
    return {
        "gap": float(np.max((states.v_plus.values - states.v_minus.values)[central])),
        "sandwich_violation": sandwich.max_violation,
        "dist_plus": max(row["dist_plus"] for row in sandwich.rows),
        "dist_minus": max(row["dist_minus"] for row in sandwich.rows),
        "ordering_violation": states.ordering_violation,
        "converged": states.converged and sandwich.converged,
    }


def proved_uniqueness_regime(d: int, s: float) -> bool:
    return (d == 1 and 0.25 <= s < 1.0) or (d == 2 and 0.5 < s < 1.0)


def uniqueness_gap_sweep(setup: Setup, n_list: Sequence[int], R: int, seed: int = 0,
                         jobs: int = 1, on_done: Optional[Callable] = None) -> SweepRecord:
    """
    Central-window gap max(v⁺_n - v⁻_n) over Λ_{n/2} per realization, its median per n,
    and the sandwich of three further boundary conditions between v⁻_n and v⁺_n.
    Outside the proved regime the sweep runs as exploratory.
    """
    columns = ["n", "realization", "gap", "sandwich_violation", "dist_plus", "dist_minus",
               "ordering_violation", "converged"]
    record = SweepRecord(
        "gap", {**setup.to_dict(), "n_list": list(n_list), "R": R, "seed": seed}, columns
    )
    tasks = [(setup, n, realization_seed(seed, r)) for n in n_list for r in range(R)]
    outputs = map_tasks(_uniqueness_task, tasks, jobs, on_done)
    _count(record, outputs)
    for (_, n, _), k, out in zip(tasks, range(len(tasks)), outputs):
        record.add_row([n, k % R, out["gap"], out["sandwich_violation"], out["dist_plus"],
                        out["dist_minus"], out["ordering_violation"], out["converged"]])
    medians = []
    for n in n_list:
        record.aggregate("gap", {"n": n}, f"gap_n{n}")
        medians.append(float(np.median(record.column("gap", {"n": n}))))
    record.extras.update({
        "median_gap": dict(zip([str(n) for n in n_list], medians)),
        "strictly_decreasing": all(b < a for a, b in zip(medians, medians[1:])),
        "min_gap": float(min(r[2] for r in record.rows)) if record.rows else math.nan,
        "max_sandwich_violation": max((r[3] for r in record.rows), default=0.0),
        "proved_regime": proved_uniqueness_regime(setup.d, setup.s),
    })
    return record


# -------------------------------------------------------------------
# Cut-off diagnostic
# -------------------------------------------------------------------


@dataclass(frozen=True)
class CutoffReport:
    sides: List[int]
    interaction: List[float]
    ratio: List[float]
    doubling: List[float]
    convest_ratio: Optional[float] = None

    @property
    def decreasing(self) -> bool:
        return all(b <= a for a, b in zip(self.ratio, self.ratio[1:]))

    def to_dict(self):
        return {
            "sides": self.sides,
            "interaction": self.interaction,
            "ratio": self.ratio,
            "doubling": self.doubling,
            "decreasing": self.decreasing,
            "convest_ratio": self.convest_ratio,
        }


def _holder_norm(values: np.ndarray, grid: Grid, alpha: float) -> float:
    field_ = ScalarField(grid, values, ConstantExterior(0.0))
    return float(np.max(np.abs(values))) + holder_quotient(field_, alpha)


def convest_ratio(u: ScalarField, v: ScalarField, problem: EnergyProblem,
                  alpha: float) -> float:
    """
    I / (K |D| diam(D)^d ‖u - v‖_{C^{0,α}}) on D = Λ, where I is the difference of the
    Gagliardo sums of u and v and K = ‖u‖_{C^{0,α}} + ‖v‖_{C^{0,α}}.
    """
    grid = problem.grid
    everything = np.ones(grid.size, dtype=bool)
    gap = abs(
        region_energy(u, everything, problem).gagliardo
        - region_energy(v, everything, problem).gagliardo
    )
    distance = _holder_norm(u.values - v.values, grid, alpha)
    if distance == 0.0:
        return 0.0
    scale = _holder_norm(u.values, grid, alpha) + _holder_norm(v.values, grid, alpha)
    return gap / (scale * grid.volume * grid.diameter**grid.d * distance)


def cutoff_diagnostic(v: ScalarField, problem: EnergyProblem, sides: Sequence[int],
                      u: Optional[ScalarField] = None, alpha: float = 0.5) -> CutoffReport:
    """
    𝒲(v, Δ)/|Δ| on the centered cubes Δ of the given side lengths, with the ratio
    𝒲(v, 2Δ)/𝒲(v, Δ) wherever a doubled side is also listed.
    """
    sides = sorted(int(L) for L in sides)
    grid = problem.grid
    if sides and sides[-1] > grid.n:
        raise ValueError(f"Cube side {sides[-1]} exceeds the box side {grid.n}")
    interaction = []
    for L in sides:
        mask = grid.box_mask(L / 2.0)
        interaction.append(region_energy(v, mask, problem).w if np.any(mask) else 0.0)
    ratio = [w / L**grid.d for w, L in zip(interaction, sides)]
    lookup = dict(zip(sides, interaction))
    doubling = [
        lookup[2 * L] / lookup[L] for L in sides if 2 * L in lookup and lookup[L] > 0
    ]
    conv = convest_ratio(u, v, problem, alpha) if u is not None else None
    return CutoffReport(sides, interaction, ratio, doubling, conv)


# -------------------------------------------------------------------
# Property diagnostics
# -------------------------------------------------------------------


@dataclass(frozen=True)
class DiagnosticResult:
    name: str
    passed: bool
    value: float
    threshold: float

    def to_dict(self):
        return {"name": self.name, "passed": self.passed, "value": self.value,
                "threshold": self.threshold}


def _random_field(rng, grid, exterior, scale):
    return ScalarField(grid, rng.uniform(-scale, scale, grid.size), exterior)


def check_rearrangement(problem: EnergyProblem, pairs: int, seed: int) -> DiagnosticResult:
    """G(u∨v) + G(u∧v) <= G(u) + G(v) over random pairs sharing an exterior."""
    rng = np.random.default_rng(derive_seed(seed, "rearrangement"))
    worst = -math.inf
    exterior = ConstantExterior(0.3)
    for _ in range(pairs):
        u = _random_field(rng, problem.grid, exterior, 2.0)
        v = _random_field(rng, problem.grid, exterior, 2.0)
        upper, lower = lattice_min_max(u, v)
        lhs = total_energy(upper, problem).total + total_energy(lower, problem).total
        rhs = total_energy(u, problem).total + total_energy(v, problem).total
        worst = max(worst, (lhs - rhs) / max(1.0, abs(rhs)))
    return DiagnosticResult("rearrangement", worst <= 1e-12, worst, 1e-12)


def check_additivity(problem: EnergyProblem, fields: int, seed: int) -> DiagnosticResult:
    """
    For disjoint A, B: K_1(A∪B) = K_1(A) + K_1(B) + 𝒲(A, B) and
    G_1(A∪B) = G_1(A) + G_1(B) - 𝒲(A, B).
    """
    rng = np.random.default_rng(derive_seed(seed, "additivity"))
    grid = problem.grid
    worst = 0.0
    for _ in range(fields):
        v = _random_field(rng, grid, ConstantExterior(float(rng.uniform(-1, 1))), 1.5)
        label = rng.integers(0, 3, grid.size)
        a, b = label == 0, label == 1
        union = a | b
        ea, eb, eu = (region_energy(v, mask, problem) for mask in (a, b, union))
        cross = cross_interaction(v, a, v, b, problem.kernel)
        scale = max(1.0, abs(eu.g1), abs(eu.k1))
        worst = max(
            worst,
            abs(eu.k1 - (ea.k1 + eb.k1 + cross)) / scale,
            abs(eu.g1 - (ea.g1 + eb.g1 - cross)) / scale,
        )
    return DiagnosticResult("additivity", worst <= 1e-12, worst, 1e-12)


def check_truncation(problem: EnergyProblem, fields: int, seed: int) -> DiagnosticResult:
    """Truncation energy bound at t = 1 + C_0 θ ‖g‖_∞ on over-range random fields."""
    rng = np.random.default_rng(derive_seed(seed, "truncation"))
    g_sup = float(np.max(np.abs(problem.g_points))) if problem.g_points.size else 0.0
    t = 1.0 + problem.potential.C0 * problem.theta * g_sup
    worst = -math.inf
    for _ in range(fields):
        v = _random_field(rng, problem.grid, ConstantExterior(0.0), 3.0 * t)
        lhs, rhs = truncation_gain(v, t, problem)
        worst = max(worst, (rhs - lhs) / max(1.0, abs(lhs)))
    return DiagnosticResult("truncation", worst <= 1e-12, worst, 1e-12)


def check_gradient(problem: EnergyProblem, seed: int, step: float = 1e-5) -> DiagnosticResult:
    """Analytic gradient against central differences of the total energy."""
    rng = np.random.default_rng(derive_seed(seed, "gradient"))
    exterior = ConstantExterior(float(rng.uniform(-1.5, 1.5)))
    values = rng.uniform(-1.5, 1.5, problem.grid.size)
    grad = problem.gradient_values(values, exterior)
    fd = np.empty_like(values)
    for i in range(values.size):
        e = np.zeros_like(values)
        e[i] = step
        fd[i] = (
            problem.breakdown(values + e, exterior).total
            - problem.breakdown(values - e, exterior).total
        ) / (2.0 * step)
    err = float(np.max(np.abs(fd - grad)) / max(1.0, np.max(np.abs(grad))))
    return DiagnosticResult("gradient", err < 1e-6, err, 1e-6)


def check_exterior_moment(points: int, seed: int) -> DiagnosticResult:
    """Closed-form d=1 exterior moment against adaptive quadrature."""
    rng = np.random.default_rng(derive_seed(seed, "moment"))
    worst = 0.0
    for _ in range(points):
        L = float(rng.uniform(0.5, 8.0))
        x = float(rng.uniform(-0.95, 0.95) * L)
        s = float(rng.uniform(0.05, 0.95))
        exact = float(exterior_moment(np.array([x]), L, s)[0])
        quad = exterior_moment_quadrature(x, -L, L, s)
        worst = max(worst, abs(exact - quad) / abs(quad))
    return DiagnosticResult("exterior_moment", worst < 1e-8, worst, 1e-8)


def check_constant_cutoff(problem: EnergyProblem) -> DiagnosticResult:
    """𝒲(v, Δ) vanishes for a constant field with the same constant exterior."""
    grid = problem.grid
    v = ScalarField(grid, np.full(grid.size, 0.7), ConstantExterior(0.7))
    sides = [L for L in range(2, grid.n + 1, 2)]
    report = cutoff_diagnostic(v, problem, sides)
    worst = max((abs(w) for w in report.interaction), default=0.0)
    return DiagnosticResult("constant_cutoff", worst <= 1e-12, worst, 1e-12)


def check_minimizer_bound(setup: Setup, problem: EnergyProblem) -> DiagnosticResult:
    """
    Converged extremal states stay below max(‖v_0‖_∞, 1 + C_0 θ A) + BOUND_TOL, and
    re-minimizing from their truncation loses no energy beyond BOUND_TOL (relative).
    """
    states = setup.pair(problem)
    worst = states.bound_violation
    for result in (states.plus, states.minus):
        drop = truncation_stability(result, problem, setup.solver)
        worst = max(worst, drop / max(1.0, abs(result.energy)))
    passed = states.converged and worst <= BOUND_TOL
    return DiagnosticResult("minimizer_bound", passed, worst, BOUND_TOL)


def run_diagnostics(setup: Setup, n: int, seed: int = 0, samples: int = 20) -> List[DiagnosticResult]:
    """The property checks of the ``diagnostics`` command on Λ_n."""
    grid = setup.grid(n)
    problem = setup.problem(grid, setup.disorder(grid, seed))
    return [
        check_rearrangement(problem, samples, seed),
        check_additivity(problem, samples, seed),
        check_truncation(problem, samples, seed),
        check_minimizer_bound(setup, problem),
        check_gradient(problem, seed),
        check_exterior_moment(samples, seed),
        check_constant_cutoff(problem),
    ]

import math

import numpy as np
import pytest

from core.phasefield.experiments import (
    Setup,
    boundary_scaling_sweep,
    check_constant_cutoff,
    cutoff_diagnostic,
    envelope_derivative_check,
    ergodic_means,
    estimate_Fn,
    exterior_mass,
    nested_box_sweep,
    ordering_sandwich,
    proved_uniqueness_regime,
    realization_seed,
    resample_padding,
    run_diagnostics,
    symmetry_check,
    uniqueness_gap_sweep,
    variance_sweep,
)
from core.phasefield.lattice import ConstantExterior, ScalarField, occupied_site_box
from core.phasefield.minimize import SolverConfig, glue_cutoff

# Settings
seed = 13
solver = SolverConfig(tol=1e-10)


def small_setup(**kw):
    base = dict(d=1, s=0.5, theta=0.5, solver=solver)
    base.update(kw)
    return Setup(**base)


def test_setup_derived_constants():
    setup = small_setup(theta=2.0, C0=0.5)
    assert setup.K_star == pytest.approx(1.0 + 0.5 * 2.0 * math.sqrt(3.0))
    assert setup.barrier == setup.K_star
    assert setup.variance_ceiling == pytest.approx(4.0 * 4.0 * setup.K_star**2)
    assert small_setup(K=5.0).barrier == 5.0
    with pytest.raises(ValueError):
        small_setup(s=1.0)
    with pytest.raises(ValueError):
        small_setup(dist="cauchy")


def test_realization_seeds_are_stable_and_distinct():
    seeds = [realization_seed(seed, r) for r in range(50)]
    assert seeds == [realization_seed(seed, r) for r in range(50)]
    assert len(set(seeds)) == 50


def test_exterior_mass_grows_like_volume_power():
    setup = small_setup(theta=0.0)
    record = boundary_scaling_sweep(setup, [0.25, 0.75], [16, 32, 64, 128], R=0)
    assert abs(record.fits["mass_s0.25"].slope - 0.5) < 0.06
    # s > 1/2: the mass saturates in d = 1
    assert abs(record.fits["mass_s0.75"].slope) < 0.1
    assert record.extras["expected_exponent"]["0.25"] == pytest.approx(0.5)
    masses = [exterior_mass(setup.grid(n), 0.25) for n in (16, 32)]
    assert masses[1] > masses[0] > 0


def test_scaling_sweep_needs_three_sizes():
    with pytest.raises(ValueError):
        boundary_scaling_sweep(small_setup(), [0.5], [8, 16])


def test_scaling_sweep_with_realizations():
    setup = small_setup(s=0.3, theta=0.5)
    record = boundary_scaling_sweep(setup, [0.3], [4, 8, 16], seed=seed, R=2)
    assert record.solves == 6
    assert len(record.rows) == 3 + 6
    assert "gap_s0.3" in record.fits or record.failures > 0


def test_estimate_fn_small():
    setup = small_setup(theta=0.5)
    est = estimate_Fn(setup, 4, pad=2, M=3, seed=seed)
    assert est.pad == 2
    assert len(est.deltas) + est.failures == 3
    assert all(math.isfinite(d) for d in est.deltas)
    assert est.bias is None
    with pytest.raises(ValueError):
        estimate_Fn(setup, 4, M=1)


def test_estimate_fn_bias_check():
    setup = small_setup(theta=0.5)
    est = estimate_Fn(setup, 2, pad=1, M=2, seed=seed, bias_check=True)
    assert est.bias is not None
    assert math.isfinite(est.bias_se)


@pytest.mark.parametrize("n,pad", [(8, 4), (4, 1)])
def test_fn_resamples_every_site_outside_the_box(n, pad):
    setup = small_setup(theta=0.5)
    lo, hi = occupied_site_box(setup.grid(n))
    draws = [resample_padding(setup, n, pad, seed, j) for j in range(5)]
    base = draws[0][0]
    for site in range(base.lo[0], base.hi[0] + 1):
        kept = base.value(site)
        values = [disorder.value(site) for _, disorder in draws]
        if lo[0] <= site <= hi[0]:
            assert values == [kept] * 5
        else:
            assert kept not in values


def test_bias_check_failures_are_counted():
    setup = small_setup(theta=0.5, solver=SolverConfig(max_iter=1))
    est = estimate_Fn(setup, 2, pad=1, M=2, seed=seed, bias_check=True)
    assert est.failures == 2
    assert est.bias_failures == 2
    assert est.to_dict()["bias_failures"] == 2


def test_fn_without_disorder_vanishes():
    setup = small_setup(theta=0.0)
    est = estimate_Fn(setup, 4, pad=1, M=2, seed=seed)
    assert est.estimate == pytest.approx(0.0, abs=1e-9)


def test_variance_sweep_needs_enough_realizations():
    with pytest.raises(ValueError, match="too few"):
        variance_sweep(small_setup(), [4], R=5)
    with pytest.raises(ValueError):
        ergodic_means(small_setup(), 4, R=10)


@pytest.mark.slow
def test_variance_sweep_small():
    setup = small_setup(theta=0.3)
    record = variance_sweep(setup, [2], R=30, M=2, pad=1, seed=seed, bins=(4,))
    extras = record.extras["n2"]
    assert extras["ceiling"] == pytest.approx(setup.variance_ceiling)
    assert extras["ceiling_ok"]
    assert "fn_n2" in record.aggregates
    assert "d2_n2_b4" in record.fits


@pytest.mark.slow
def test_ergodic_means_small():
    record = ergodic_means(small_setup(theta=0.5), 4, R=30, seed=seed)
    assert record.aggregates["m_plus"].count + record.failures >= 30
    assert record.extras["antisymmetry_defect"] >= 0.0


def test_symmetry_under_disorder_flip():
    record = symmetry_check(small_setup(theta=0.8), 4, R=2, seed=seed)
    assert record.extras["max_diff"] < 1e-6
    assert record.solves == 2


def test_nested_boxes_record_window():
    record = nested_box_sweep(small_setup(theta=0.0), [8, 4], seed=seed)
    assert record.params["n_list"] == [4, 8]
    assert record.params["window"] == 2
    assert record.extras["monotone_violations"] == 0
    assert len(record.rows) == 2


def test_ordering_sandwich():
    setup = small_setup(s=0.6, theta=0.5)
    grid = setup.grid(6)
    problem = setup.problem(grid, setup.disorder(grid, seed))
    report = ordering_sandwich(setup, problem, seed=seed)
    assert [row["name"] for row in report.rows] == [
        "constant", "window_random", "window_cosine",
    ]
    assert report.converged
    assert report.max_violation < 1e-5


def test_uniqueness_gap_sweep_small():
    setup = small_setup(s=0.6, theta=0.5)
    record = uniqueness_gap_sweep(setup, [4, 8], R=2, seed=seed)
    assert set(record.extras["median_gap"]) == {"4", "8"}
    assert record.extras["proved_regime"]
    assert len(record.rows) == 4
    assert record.extras["min_gap"] >= -1e-6


@pytest.mark.parametrize("d,s,expected", [(1, 0.25, True), (1, 0.2, False), (2, 0.5, False),
                                          (2, 0.6, True)])
def test_proved_regime(d, s, expected):
    assert proved_uniqueness_regime(d, s) is expected


def test_cutoff_diagnostic_on_extremal_state():
    setup = small_setup(s=0.4, theta=0.5)
    grid = setup.grid(8)
    problem = setup.problem(grid, setup.disorder(grid, seed))
    states = setup.pair(problem)
    glued = glue_cutoff(states.v_plus, states.v_minus, grid)
    report = cutoff_diagnostic(states.v_plus, problem, [2, 4, 8], u=glued, alpha=0.7)
    assert report.sides == [2, 4, 8]
    assert len(report.doubling) == 2
    assert all(w >= 0.0 for w in report.interaction)
    assert report.convest_ratio is not None and report.convest_ratio >= 0.0
    with pytest.raises(ValueError):
        cutoff_diagnostic(states.v_plus, problem, [16])
    assert check_constant_cutoff(problem).passed


def test_cutoff_of_constant_field_is_zero():
    setup = small_setup(theta=0.0)
    grid = setup.grid(4)
    problem = setup.problem(grid, None)
    v = ScalarField(grid, np.full(grid.size, -0.2), ConstantExterior(-0.2))
    report = cutoff_diagnostic(v, problem, [2, 4])
    assert report.interaction == pytest.approx([0.0, 0.0], abs=1e-14)


def test_envelope_derivative_sandwich():
    setup = small_setup(s=0.6, theta=0.5)
    report = envelope_derivative_check(setup, 4, 0, h_list=(1e-2, 1e-3), seed=seed,
                                       scan=[-1.0, 0.0, 1.0])
    assert report.sandwich_ok
    assert report.monotone
    assert len(report.scan) == 3
    assert all(step["derivative_error"] < 0.05 for step in report.steps)
    with pytest.raises(ValueError):
        envelope_derivative_check(setup, 4, 5)


@pytest.mark.parametrize("d,n", [(1, 4), (2, 2)])
def test_property_diagnostics_pass(d, n):
    checks = run_diagnostics(small_setup(d=d, s=0.45, theta=0.7), n, seed=seed, samples=4)
    assert [c.name for c in checks] == [
        "rearrangement", "additivity", "truncation", "minimizer_bound", "gradient",
        "exterior_moment", "constant_cutoff",
    ]
    failed = [c.to_dict() for c in checks if not c.passed]
    assert not failed


def test_process_pool_after_parallel_kernels_matches_serial():
    setup = small_setup(theta=0.8)
    grid = setup.grid(6)
    # runs the parallel numba sums in this process before any pool starts
    setup.pair(setup.problem(grid, setup.disorder(grid, seed)))
    serial = symmetry_check(setup, 6, 2, seed=5, jobs=1)
    pooled = symmetry_check(setup, 6, 2, seed=5, jobs=2)
    assert pooled.rows == serial.rows
    assert pooled.extras == serial.extras

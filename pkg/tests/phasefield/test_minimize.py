import numpy as np
import pytest

from core.phasefield.energy import EnergyBreakdown, build_potential, build_problem, total_energy
from core.phasefield.lattice import (
    ConstantExterior,
    ScalarField,
    make_grid,
    sample_disorder,
    site_box,
    window_exterior,
)
from core.phasefield.minimize import (
    BOUND_TOL,
    InitPolicy,
    MinimizeResult,
    SolverConfig,
    barrier_level,
    cutoff_profile,
    extremal_pair,
    glue_report,
    holder_quotient,
    lattice_min_max,
    minimize,
    select_best,
    sup_bound,
    truncate,
    truncation_gain,
    truncation_stability,
)

# Settings
seed = 21
tol = 1e-10


def problem_for(d=1, n=8, m=1, s=0.5, theta=1.0, rng_seed=seed):
    grid = make_grid(d, n, m)
    disorder = sample_disorder(site_box(grid), seed=rng_seed) if theta > 0 else None
    return build_problem(grid, s, theta, build_potential(), disorder)


def test_solver_config_validation():
    with pytest.raises(ValueError):
        SolverConfig(method="newton")
    with pytest.raises(ValueError):
        SolverConfig(multistart=0)
    assert SolverConfig(init="minus").init is InitPolicy.MINUS


def test_pure_state_with_plus_exterior():
    problem = problem_for(theta=0.0)
    cfg = SolverConfig(tol=tol)
    result = minimize(cfg, problem, ConstantExterior(1.0), level=2.0)
    assert result.converged
    assert np.max(np.abs(result.field.values - 1.0)) < 1e-8
    assert abs(result.energy) < 1e-12


@pytest.mark.parametrize("precondition", [True, False])
def test_pgd_decreases_energy_monotonically(precondition):
    problem = problem_for(s=0.3, theta=1.5)
    cfg = SolverConfig(tol=1e-7, init=InitPolicy.RANDOM, precondition=precondition,
                       max_iter=50000)
    result = minimize(cfg, problem, ConstantExterior(0.0))
    history = np.asarray(result.history)
    assert history.size > 1
    assert np.all(np.diff(history) <= 1e-12 * np.maximum(1.0, np.abs(history[:-1])))
    assert result.converged
    assert result.residual <= 1e-7


def test_lbfgs_and_pgd_agree():
    problem = problem_for(n=8, m=2, s=0.6, theta=0.8)
    exterior = ConstantExterior(barrier_level(problem))
    pgd = minimize(SolverConfig(tol=tol), problem, exterior)
    lbfgs = minimize(SolverConfig(method="lbfgs", tol=tol), problem, exterior)
    assert pgd.converged and lbfgs.converged
    assert lbfgs.energy == pytest.approx(pgd.energy, rel=1e-9)
    assert np.max(np.abs(lbfgs.field.values - pgd.field.values)) < 1e-6


def test_non_convergence_is_reported(capsys):
    problem = problem_for(theta=1.0)
    result = minimize(SolverConfig(max_iter=1), problem, ConstantExterior(0.0))
    assert not result.converged
    assert result.iterations == 1
    assert "did not converge" in capsys.readouterr().out


def test_select_best_breaks_ties_lexicographically():
    grid = make_grid(1, 2)

    def result(values, energy):
        field = ScalarField(grid, values, ConstantExterior(0.0))
        parts = EnergyBreakdown.from_parts(energy, 0.0, 0.0, 0.0)
        return MinimizeResult(field, parts, 0.0, 0, True, "test")

    low = result([0.5, 0.1], 1.0)
    high = result([0.5, 0.2], 1.0 + 1e-12)
    worse = result([0.9, 0.9], 2.0)
    assert select_best([low, high, worse], tie_tol=1e-8) is high
    assert select_best([low, high, worse], tie_tol=0.0) is low


def test_truncation():
    problem = problem_for(theta=0.5)
    t = 1.0 + problem.potential.C0 * problem.theta * float(np.max(np.abs(problem.g_points)))
    rng = np.random.default_rng(seed)
    v = ScalarField(problem.grid, rng.uniform(-3 * t, 3 * t, problem.grid.size),
                    ConstantExterior(5.0))
    clipped = truncate(v, t)
    assert clipped.sup_norm <= t
    assert clipped.exterior.value == t
    lhs, rhs = truncation_gain(v, t, problem)
    assert lhs >= rhs - 1e-12
    with pytest.raises(ValueError):
        truncate(v, 0.0)


def test_barrier_level():
    problem = problem_for(theta=0.5)
    assert barrier_level(problem) == pytest.approx(1.0 + 0.5 * np.sqrt(3.0))
    assert barrier_level(problem_for(theta=0.0)) == 1.0


def test_extremal_pair_is_ordered():
    problem = problem_for(n=8, s=0.4, theta=1.0)
    cfg = SolverConfig(tol=tol)
    states = extremal_pair(None, problem.disorder, 1.0, problem.grid, cfg, problem=problem)
    assert states.K == pytest.approx(barrier_level(problem))
    assert states.converged
    assert states.ordering_violation <= 1e-6
    assert np.all(states.v_minus.values <= states.v_plus.values + 1e-6)
    assert states.bulk_sup() <= states.K + 1e-8


def test_extremal_pair_rejects_low_barrier():
    problem = problem_for(theta=1.0)
    with pytest.raises(ValueError, match="below"):
        extremal_pair(1.0, problem.disorder, 1.0, problem.grid, SolverConfig(),
                      problem=problem)


def test_extremal_pair_without_disorder_is_antisymmetric():
    grid = make_grid(1, 8, 2)
    states = extremal_pair(None, None, 0.0, grid, SolverConfig(tol=tol), s=0.5)
    assert np.allclose(states.v_plus.values, -states.v_minus.values, atol=1e-12)
    assert np.allclose(states.v_plus.values, 1.0, atol=1e-8)


def test_k_gap_is_small_in_the_bulk():
    problem = problem_for(n=8, s=0.7, theta=0.5)
    states = extremal_pair(None, problem.disorder, 0.5, problem.grid,
                           SolverConfig(tol=tol), problem=problem, k_gap=True)
    assert states.k_gap is not None
    assert states.k_gap_central <= states.k_gap


def test_multistart_envelope_keeps_ordering():
    problem = problem_for(n=8, s=0.5, theta=1.0)
    cfg = SolverConfig(tol=1e-9, multistart=3, seed=seed)
    states = extremal_pair(None, problem.disorder, 1.0, problem.grid, cfg, problem=problem)
    assert states.ordering_violation <= 1e-6


def test_lattice_min_max_combines_exteriors():
    grid = make_grid(1, 4)
    u = ScalarField(grid, [0.0, 1.0, -1.0, 2.0], ConstantExterior(0.5))
    w = window_exterior(grid, 1, lambda p: np.where(p[:, 0] > 0, 1.0, -1.0), tail=0.0)
    v = ScalarField(grid, [1.0, 0.0, 0.0, 0.0], w)
    upper, lower = lattice_min_max(u, v)
    assert upper.values.tolist() == [1.0, 1.0, 0.0, 2.0]
    assert lower.values.tolist() == [0.0, 0.0, -1.0, 0.0]
    assert upper.exterior.tail == 0.5
    assert lower.exterior.values.max() == 0.5


def test_cutoff_profile():
    grid = make_grid(1, 8, 2)
    psi = cutoff_profile(grid)
    dist = grid.distance_to_boundary()
    assert np.all((psi >= 0.0) & (psi <= 1.0))
    assert np.all(psi[dist >= 1.0] == 1.0)
    assert np.all(psi[dist < 1.0] < 1.0)


@pytest.mark.parametrize("d,n,s", [(1, 8, 0.3), (1, 12, 0.7), (2, 4, 0.5)])
def test_glue_identity_and_chain(d, n, s):
    problem = problem_for(d=d, n=n, s=s, theta=0.5)
    states = extremal_pair(None, problem.disorder, 0.5, problem.grid,
                           SolverConfig(tol=tol), problem=problem)
    report = glue_report(states.v_plus, states.v_minus, problem, tol=1e-8)
    assert report.identity_error < 1e-10
    assert report.chain_holds


def test_holder_quotient_of_linear_field():
    grid = make_grid(1, 6, 2)
    v = ScalarField(grid, 3.0 * grid.points[:, 0], ConstantExterior(0.0))
    assert holder_quotient(v, 1.0) == pytest.approx(3.0)
    assert holder_quotient(v, 0.5, mask=grid.central_mask()) > 0.0
    with pytest.raises(ValueError):
        holder_quotient(v, 1.5)


@pytest.mark.parametrize("d,n,s,theta", [(1, 8, 0.3, 1.0), (1, 8, 0.8, 2.0), (2, 4, 0.5, 1.0)])
def test_extremal_states_stay_below_the_ceiling(d, n, s, theta):
    problem = problem_for(d=d, n=n, s=s, theta=theta)
    cfg = SolverConfig(tol=tol)
    states = extremal_pair(None, problem.disorder, theta, problem.grid, cfg, problem=problem)
    ceiling = sup_bound(problem, states.K, ConstantExterior(states.K))
    assert ceiling == pytest.approx(barrier_level(problem))
    assert states.bound_ok
    assert max(states.v_plus.sup_norm, states.v_minus.sup_norm) <= ceiling + BOUND_TOL
    for result in (states.plus, states.minus):
        drop = truncation_stability(result, problem, cfg)
        assert drop <= BOUND_TOL * max(1.0, abs(result.energy))


def test_minimizer_from_over_range_start_obeys_the_ceiling():
    problem = problem_for(n=8, s=0.4, theta=1.0)
    t = barrier_level(problem)
    rng = np.random.default_rng(seed)
    start = ScalarField(problem.grid, rng.uniform(-3 * t, 3 * t, problem.grid.size),
                        ConstantExterior(0.2))
    cfg = SolverConfig(tol=1e-9, init=InitPolicy.GIVEN)
    result = minimize(cfg, problem, start.exterior, start=start)
    assert result.converged
    # a stationary point cannot exceed 1 + C0*theta*A
    assert result.field.sup_norm <= t + BOUND_TOL
    assert result.field.sup_norm <= sup_bound(problem, start.sup_norm, start.exterior)


def energies_of_pair(u, v, problem):
    upper, lower = lattice_min_max(u, v)
    lhs = total_energy(upper, problem).total + total_energy(lower, problem).total
    rhs = total_energy(u, problem).total + total_energy(v, problem).total
    return lhs, rhs


def test_rearrangement_is_an_equality_for_ordered_pairs():
    problem = problem_for(n=4, s=0.5, theta=1.0)
    rng = np.random.default_rng(seed)
    u_values = rng.uniform(-1.5, 1.5, problem.grid.size)
    exterior = ConstantExterior(0.3)
    u = ScalarField(problem.grid, u_values, exterior)
    v = ScalarField(problem.grid, u_values + rng.uniform(0.0, 1.0, u_values.size), exterior)
    lhs, rhs = energies_of_pair(u, v, problem)
    assert lhs == rhs


def test_rearrangement_is_strict_across_a_crossing():
    problem = problem_for(n=4, s=0.5, theta=1.0)
    exterior = ConstantExterior(0.0)
    u = ScalarField(problem.grid, [2.0, 1.0, 0.0, 0.0], exterior)
    v = ScalarField(problem.grid, [0.0, 0.0, 1.0, 2.0], exterior)
    lhs, rhs = energies_of_pair(u, v, problem)
    # only the pair terms of u - v = (2, 1, -1, -2) across the crossing differ
    assert rhs - lhs > 1.0

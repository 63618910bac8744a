import numpy as np
import pytest

from core.phasefield.energy import (
    build_potential,
    build_problem,
    cross_interaction,
    el_residual,
    exterior_interaction,
    gradient,
    interior_energy,
    region_energy,
    total_energy,
)
from core.phasefield.lattice import (
    ConstantExterior,
    ScalarField,
    constant_field,
    make_grid,
    sample_disorder,
    site_box,
    window_exterior,
)

# Settings
seed = 5
step = 1e-6
rtol = 1e-6


def random_problem(d, n, m, s, theta, method="auto", rng_seed=seed):
    grid = make_grid(d, n, m)
    disorder = sample_disorder(site_box(grid), seed=rng_seed) if theta > 0 else None
    return build_problem(grid, s, theta, build_potential(), disorder, method)


def finite_difference(problem, values, exterior):
    fd = np.empty_like(values)
    for i in range(values.size):
        e = np.zeros_like(values)
        e[i] = step
        fd[i] = (
            problem.breakdown(values + e, exterior).total
            - problem.breakdown(values - e, exterior).total
        ) / (2.0 * step)
    return fd


def test_quartic_bridge_values():
    W = build_potential(1.0, 0.5, "quartic")
    assert float(W.value(0.0)) == pytest.approx(5.0 / 16.0, rel=1e-14)
    assert float(W.value(1.0)) == 0.0
    assert float(W.value(-1.0)) == 0.0
    assert float(W.value(2.0)) == pytest.approx(0.5)
    t = np.linspace(-3.0, 3.0, 601)
    assert np.array_equal(W.value(t), W.value(-t))


@pytest.mark.parametrize("bridge", ["quartic", "cosine"])
@pytest.mark.parametrize("C0,delta0", [(1.0, 0.5), (0.5, 0.3), (2.0, 0.8)])
def test_bridge_is_c2_at_junction(bridge, C0, delta0):
    W = build_potential(C0, delta0, bridge)
    t0 = 1.0 - delta0
    eps = 1e-9
    for f in (W.value, W.derivative, W.second_derivative):
        assert float(f(t0 - eps)) == pytest.approx(float(f(t0 + eps)), abs=1e-6)
    # strictly decreasing on [0, 1]
    t = np.linspace(0.0, 1.0, 1001)
    assert np.all(np.diff(W.value(t)) < 0)
    assert W.max_curvature >= 1.0 / C0


@pytest.mark.parametrize("C0,delta0,bridge", [(0.0, 0.5, "quartic"), (1.0, 1.0, "quartic"),
                                              (1.0, 0.5, "sextic")])
def test_potential_rejects(C0, delta0, bridge):
    with pytest.raises(ValueError):
        build_potential(C0, delta0, bridge)


def test_two_point_energy_parts():
    problem = random_problem(1, 2, 1, 0.5, 0.0)
    v = ScalarField(problem.grid, [0.0, 1.0], ConstantExterior(0.0))
    parts = total_energy(v, problem)
    assert parts.gagliardo == 2.0
    assert parts.potential == pytest.approx(5.0 / 16.0)
    assert parts.disorder == 0.0
    assert interior_energy(v, None, 0.0, problem.kernel, problem.potential) == pytest.approx(
        2.0 + 5.0 / 16.0
    )


def test_constant_state_has_zero_energy():
    problem = random_problem(2, 4, 1, 0.4, 0.0)
    v = constant_field(problem.grid, 1.0)
    assert total_energy(v, problem).total == 0.0
    assert el_residual(v, problem) == 0.0


def test_disorder_term():
    problem = random_problem(1, 6, 2, 0.5, 0.7)
    v = ScalarField(problem.grid, np.linspace(-1, 1, problem.grid.size), ConstantExterior(0))
    expected = -0.7 * problem.grid.cell_volume * float(np.dot(problem.g_points, v.values))
    assert total_energy(v, problem).disorder == pytest.approx(expected)


def test_theta_needs_disorder():
    with pytest.raises(ValueError):
        build_problem(make_grid(1, 4), 0.5, 1.0)
    with pytest.raises(ValueError):
        build_problem(make_grid(1, 4), 1.5, 0.0)


@pytest.mark.parametrize("d,n,m,s,theta", [(1, 8, 1, 0.3, 1.0), (1, 4, 3, 0.7, 0.5),
                                           (2, 4, 1, 0.5, 1.0), (2, 2, 2, 0.2, 0.3)])
def test_gradient_matches_finite_differences(d, n, m, s, theta):
    problem = random_problem(d, n, m, s, theta)
    rng = np.random.default_rng(seed)
    values = rng.uniform(-1.6, 1.6, problem.grid.size)
    exterior = ConstantExterior(0.4)
    grad = gradient(ScalarField(problem.grid, values, exterior), problem).values
    fd = finite_difference(problem, values, exterior)
    assert np.allclose(grad, fd, rtol=rtol, atol=rtol * np.max(np.abs(grad)))


def test_gradient_with_window_exterior():
    problem = random_problem(1, 4, 2, 0.4, 1.0)
    exterior = window_exterior(problem.grid, 2, lambda p: np.sin(p[:, 0]), tail=-0.5)
    values = np.random.default_rng(seed).uniform(-1, 1, problem.grid.size)
    grad = problem.gradient_values(values, exterior)
    fd = finite_difference(problem, values, exterior)
    assert np.allclose(grad, fd, rtol=rtol, atol=rtol * np.max(np.abs(grad)))


def test_window_exterior_matches_direct_sum():
    problem = random_problem(1, 4, 1, 0.5, 0.0)
    grid = problem.grid
    exterior = window_exterior(grid, 2, lambda p: np.cos(p[:, 0]), tail=0.25)
    values = np.array([0.3, -0.2, 0.9, 0.1])
    window = exterior.window
    outside = np.abs(window.points[:, 0]) > grid.half_width
    expected = 0.0
    weights = problem.weights_for(exterior)
    for i, x in enumerate(grid.points[:, 0]):
        for y, u in zip(window.points[outside, 0], exterior.values[outside]):
            expected += abs(x - y) ** -2.0 * (values[i] - u) ** 2
        expected += weights.tail[i] * (values[i] - 0.25) ** 2
    expected *= 2.0
    assert problem.terms(exterior).energy(values) == pytest.approx(expected, rel=1e-12)


@pytest.mark.parametrize("d,n,m", [(1, 16, 2), (2, 6, 1)])
def test_fft_and_dense_energies_agree(d, n, m):
    dense = random_problem(d, n, m, 0.45, 0.8, method="dense")
    fft = random_problem(d, n, m, 0.45, 0.8, method="fft")
    values = np.random.default_rng(seed).uniform(-1.2, 1.2, dense.grid.size)
    exterior = ConstantExterior(-0.3)
    e1, g1 = dense.energy_and_gradient(values, exterior)
    e2, g2 = fft.energy_and_gradient(values, exterior)
    assert e2 == pytest.approx(e1, rel=1e-12)
    assert np.allclose(g1, g2, rtol=1e-10, atol=1e-12 * np.max(np.abs(g1)))


def test_region_energy_on_full_mask_is_total_energy():
    problem = random_problem(2, 4, 1, 0.6, 1.0)
    rng = np.random.default_rng(seed)
    v = ScalarField(problem.grid, rng.uniform(-1, 1, problem.grid.size), ConstantExterior(1))
    full = region_energy(v, np.ones(problem.grid.size, dtype=bool), problem)
    assert full.interaction == 0.0
    assert full.g1 == pytest.approx(total_energy(v, problem).total, rel=1e-13)


def test_region_energies_split_additively():
    problem = random_problem(1, 8, 1, 0.3, 1.0)
    rng = np.random.default_rng(seed)
    v = ScalarField(problem.grid, rng.uniform(-1, 1, problem.grid.size), ConstantExterior(-1))
    a = problem.grid.points[:, 0] < 0
    b = ~a
    ea, eb = region_energy(v, a, problem), region_energy(v, b, problem)
    union = region_energy(v, a | b, problem)
    cross = cross_interaction(v, a, v, b, problem.kernel)
    assert union.k1 == pytest.approx(ea.k1 + eb.k1 + cross, rel=1e-12)
    assert union.g1 == pytest.approx(ea.g1 + eb.g1 - cross, rel=1e-12)
    with pytest.raises(ValueError):
        cross_interaction(v, a, v, a, problem.kernel)


def test_field_grid_must_match_problem():
    problem = random_problem(1, 4, 1, 0.5, 0.0)
    with pytest.raises(ValueError):
        total_energy(constant_field(make_grid(1, 6), 0.0), problem)


def test_exterior_interaction_with_constant_exterior():
    problem = random_problem(1, 2, 1, 0.25, 0.0)
    v = ScalarField(problem.grid, [1.0, 1.0], ConstantExterior(0.0))
    # w(x) = 2 ((1 - x)^{-1/2} + (1 + x)^{-1/2}) at x = ±1/2
    w = 2.0 * (0.5**-0.5 + 1.5**-0.5)
    assert exterior_interaction(v, problem.weights) == pytest.approx(2.0 * 2.0 * w)
    same = ScalarField(problem.grid, [0.3, 0.3], ConstantExterior(0.3))
    assert exterior_interaction(same, problem.weights) == 0.0

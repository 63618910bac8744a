import math

import numpy as np
import pytest
from scipy import integrate

from core.phasefield.kernels import (
    build_kernel,
    dense_apply,
    exterior_moment,
    exterior_moment_quadrature,
    grid_exterior_moment,
    kernel_for_grid,
    pair_rows,
    row_sums_dense,
    toeplitz_apply,
)
from core.phasefield.lattice import make_grid

# Settings
seed = 3
rtol = 1e-12


def polar_moment(x, y, L, s):
    """Reference d=2 exterior moment: ∫ ρ(φ)^{-2s} / (2s) dφ over the exit distance ρ."""

    def exit_distance(phi):
        c, t = math.cos(phi), math.sin(phi)
        hits = []
        if c > 0:
            hits.append((L - x) / c)
        if c < 0:
            hits.append((-L - x) / c)
        if t > 0:
            hits.append((L - y) / t)
        if t < 0:
            hits.append((-L - y) / t)
        return min(hits)

    corners = sorted(
        math.atan2(cy - y, cx - x) % (2 * math.pi) for cx in (-L, L) for cy in (-L, L)
    )
    value, _ = integrate.quad(
        lambda phi: exit_distance(phi) ** (-2.0 * s) / (2.0 * s),
        0.0, 2.0 * math.pi, points=corners, limit=200, epsabs=0.0, epsrel=1e-12,
    )
    return value


def test_kernel_weights():
    kernel = build_kernel(1, 0.5, 1.0, 3)
    assert kernel.weight(0) == 0.0
    assert kernel.weight(1) == 1.0
    assert kernel.weight(-2) == pytest.approx(2.0**-2)
    refined = build_kernel(2, 0.25, 0.5, 2)
    # h^{2d} / |hΔ|^{d+2s} with h = 1/2, Δ = (1, 1)
    expected = 0.5**4 / (0.5 * math.sqrt(2.0)) ** 2.5
    assert refined.weight((1, -1)) == pytest.approx(expected)
    with pytest.raises(ValueError):
        refined.weight((3, 0))


@pytest.mark.parametrize("s", [0.0, 1.0, 1.2])
def test_kernel_rejects_order(s):
    with pytest.raises(ValueError):
        build_kernel(1, s, 1.0, 2)


def test_two_point_gagliardo_sum():
    grid = make_grid(1, 2)
    kernel = kernel_for_grid(grid, 0.5)
    rows, slope = pair_rows(kernel, np.array([0.0, 1.0]), grid.index)
    assert float(np.sum(rows)) == 2.0
    assert slope.tolist() == [-1.0, 1.0]


@pytest.mark.parametrize("d,n,m,s", [(1, 16, 2, 0.3), (1, 8, 1, 0.8), (2, 6, 2, 0.5),
                                     (2, 4, 1, 0.2)])
def test_fft_matches_dense(d, n, m, s):
    grid = make_grid(d, n, m)
    kernel = kernel_for_grid(grid, s)
    values = np.random.default_rng(seed).normal(size=grid.size)
    fft = toeplitz_apply(kernel, values, grid.shape)
    dense = dense_apply(kernel, values, grid.index)
    assert np.allclose(fft, dense, rtol=rtol, atol=rtol * np.max(np.abs(dense)))
    sums = toeplitz_apply(kernel, np.ones(grid.size), grid.shape)
    assert np.allclose(sums, row_sums_dense(kernel, grid.index), rtol=rtol, atol=0.0)


def test_exterior_moment_closed_form_value():
    assert exterior_moment(np.array([0.0]), 1.0, 0.25)[0] == pytest.approx(4.0, rel=1e-14)


@pytest.mark.parametrize("x,L,s", [(0.0, 1.0, 0.25), (0.7, 2.0, 0.5), (-3.1, 4.0, 0.9),
                                   (0.01, 0.5, 0.05)])
def test_exterior_moment_matches_quadrature(x, L, s):
    exact = exterior_moment(np.array([x]), L, s)[0]
    assert exact == pytest.approx(exterior_moment_quadrature(x, -L, L, s), rel=1e-8)


@pytest.mark.parametrize("x,y,L,s", [(0.0, 0.0, 1.0, 0.5), (0.3, -0.6, 1.0, 0.25),
                                     (1.2, 1.7, 2.0, 0.75), (-0.9, 0.1, 1.5, 0.1)])
def test_exterior_moment_2d_matches_polar_quadrature(x, y, L, s):
    exact = exterior_moment(np.array([[x, y]]), L, s)[0]
    assert exact == pytest.approx(polar_moment(x, y, L, s), rel=1e-8)


def test_exterior_moment_2d_symmetries():
    pts = np.array([[0.3, 1.1], [1.1, 0.3], [-0.3, 1.1], [0.3, -1.1]])
    w = exterior_moment(pts, 2.0, 0.4)
    assert np.allclose(w, w[0], rtol=1e-13, atol=0.0)


def test_exterior_moment_rejects_outside_points():
    with pytest.raises(ValueError):
        exterior_moment(np.array([1.0]), 1.0, 0.5)


def test_cache_round_trip(tmp_path):
    grid = make_grid(2, 4, 2)
    built = kernel_for_grid(grid, 0.35, cache_dir=tmp_path)
    assert len(list(tmp_path.glob("kernel_*.npz"))) == 1
    loaded = kernel_for_grid(grid, 0.35, cache_dir=tmp_path)
    assert np.array_equal(built.weights, loaded.weights)
    moment = grid_exterior_moment(grid, 0.35, cache_dir=tmp_path)
    again = grid_exterior_moment(grid, 0.35, cache_dir=tmp_path)
    assert np.array_equal(moment, again)
    assert len(list(tmp_path.glob("exterior_*.npz"))) == 1

"""
Kernel tables and nonlocal summation.

The interaction kernel is collocated at cell centers, K(Δ) = h^{2d} / |hΔ|^{d+2s} for an
integer offset Δ ≠ 0, with the diagonal excluded. Because K only depends on Δ, one weight
per offset is stored and the interaction sums are (block-)Toeplitz matrix-vector products:

    dense  -- direct pair summation in numba, parallel over rows with a sequential inner
              loop, so results do not depend on the thread count;
    fft    -- zero-padded FFT convolution (scipy.signal.fftconvolve).

Exterior moments w(x) = ∫_{B^c} |x - y|^{-(d+2s)} dy of a box B are closed form in both
dimensions (see ``exterior_moment``).
"""

from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path

import numba
import numpy as np
from scipy import integrate, signal, special

from core.utils import get_cache_dir
from core.phasefield.lattice import Grid

DENSE_MAX_POINTS = 4096


# -------------------------------------------------------------------
# numba kernels
# -------------------------------------------------------------------


@numba.njit(cache=True, parallel=True)
def _pair_rows(values, index, kernel, strides, shift):
    """
    Per-row sums over the ordered pairs of one point set:
        energy_i = Σ_{j≠i} K(i-j) (v_i - v_j)^2,   slope_i = Σ_{j≠i} K(i-j) (v_i - v_j).
    """
    n = values.shape[0]
    d = index.shape[1]
    energy = np.zeros(n)
    slope = np.zeros(n)
    for i in numba.prange(n):
        e = 0.0
        g = 0.0
        vi = values[i]
        for j in range(n):
            if j == i:
                continue
            k = 0
            for a in range(d):
                k += (index[i, a] - index[j, a] + shift) * strides[a]
            w = kernel[k]
            diff = vi - values[j]
            e += w * diff * diff
            g += w * diff
        energy[i] = e
        slope[i] = g
    return energy, slope


@numba.njit(cache=True, parallel=True)
def _cross_rows(values_a, index_a, values_b, index_b, kernel, strides, shift):
    """Per-row sums Σ_{b} K(a-b) (v_a - u_b)^2 and Σ_b K(a-b) (v_a - u_b) for disjoint sets."""
    n = values_a.shape[0]
    nb = values_b.shape[0]
    d = index_a.shape[1]
    energy = np.zeros(n)
    slope = np.zeros(n)
    for i in numba.prange(n):
        e = 0.0
        g = 0.0
        vi = values_a[i]
        for j in range(nb):
            k = 0
            for a in range(d):
                k += (index_a[i, a] - index_b[j, a] + shift) * strides[a]
            w = kernel[k]
            diff = vi - values_b[j]
            e += w * diff * diff
            g += w * diff
        energy[i] = e
        slope[i] = g
    return energy, slope


# -------------------------------------------------------------------
# Kernel table
# -------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class KernelTable:
    """
    Weights K(Δ) for every offset with |Δ_k| <= extent, stored as a centered array of
    shape (2*extent+1,)*d with a zero center.
    """

    d: int
    s: float
    h: float
    extent: int
    weights: np.ndarray = field(repr=False)

    @property
    def exponent(self) -> float:
        return self.d + 2.0 * self.s

    @cached_property
    def flat(self) -> np.ndarray:
        return np.ascontiguousarray(self.weights.ravel())

    @cached_property
    def strides(self) -> np.ndarray:
        width = 2 * self.extent + 1
        return np.array([width ** (self.d - 1 - a) for a in range(self.d)], dtype=np.int64)

    def weight(self, offset) -> float:
        offset = np.atleast_1d(np.asarray(offset, dtype=np.int64))
        if np.any(np.abs(offset) > self.extent):
            raise ValueError(f"Offset {offset.tolist()} beyond kernel extent {self.extent}")
        return float(self.weights[tuple(offset + self.extent)])

    def total(self) -> float:
        """Σ_Δ K(Δ) over the stored offsets."""
        return float(np.sum(self.weights))

    def block(self, side: int) -> np.ndarray:
        """Central sub-table covering the offsets of a grid with ``side`` points per axis."""
        if side - 1 > self.extent:
            raise ValueError(f"Kernel extent {self.extent} too small for side {side}")
        lo = self.extent - (side - 1)
        hi = self.extent + side
        return self.weights[(slice(lo, hi),) * self.d]


def build_kernel(d: int, s: float, h: float, extent: int, cache_dir=None) -> KernelTable:
    """
    Build (or load from the cache) the collocated kernel table.

    Args:
        d (int): Dimension.
        s (float): Fractional order in (0, 1).
        h (float): Grid spacing.
        extent (int): Largest per-axis offset to store.
        cache_dir: Optional cache folder; tables are keyed by (d, extent, h, s).
    """
    if not 0.0 < s < 1.0:
        raise ValueError(f"Fractional order s={s} must lie in (0, 1)")
    path = None
    if cache_dir is not None:
        path = Path(get_cache_dir(cache_dir)) / (
            f"kernel_{d}d_e{extent}_h{float(h).hex()}_s{float(s).hex()}.npz"
        )
        if path.exists():
            with np.load(path) as data:
                return KernelTable(d, float(s), float(h), int(extent), data["weights"])
    offsets = np.arange(-extent, extent + 1, dtype=np.float64)
    mesh = np.meshgrid(*([offsets] * d), indexing="ij")
    dist = np.sqrt(sum(x * x for x in mesh)) * h
    weights = np.zeros_like(dist)
    nonzero = dist > 0
    weights[nonzero] = h ** (2 * d) / dist[nonzero] ** (d + 2.0 * s)
    if path is not None:
        np.savez(path, weights=weights)
    return KernelTable(d, float(s), float(h), int(extent), weights)


def kernel_for_grid(grid: Grid, s: float, cache_dir=None) -> KernelTable:
    return build_kernel(grid.d, s, grid.h, grid.side - 1, cache_dir=cache_dir)


# -------------------------------------------------------------------
# Summation paths
# -------------------------------------------------------------------


def pair_rows(kernel: KernelTable, values: np.ndarray, index: np.ndarray):
    """Dense per-row pair sums over one point set (see ``_pair_rows``)."""
    return _pair_rows(
        np.ascontiguousarray(values, dtype=np.float64),
        np.ascontiguousarray(index, dtype=np.int64),
        kernel.flat,
        kernel.strides,
        kernel.extent,
    )


def cross_rows(kernel: KernelTable, values_a, index_a, values_b, index_b):
    """Dense per-row sums from set A against the disjoint set B."""
    return _cross_rows(
        np.ascontiguousarray(values_a, dtype=np.float64),
        np.ascontiguousarray(index_a, dtype=np.int64),
        np.ascontiguousarray(values_b, dtype=np.float64),
        np.ascontiguousarray(index_b, dtype=np.int64),
        kernel.flat,
        kernel.strides,
        kernel.extent,
    )


def toeplitz_apply(kernel: KernelTable, values: np.ndarray, shape) -> np.ndarray:
    """
    (K v)_i = Σ_j K(i-j) v_j on a full grid of the given shape via FFT convolution.

    Args:
        kernel: Table with extent >= side - 1.
        values: Flat values in C order.
        shape: Grid shape (side,)*d.
    """
    side = shape[0]
    block = kernel.block(side)
    full = signal.fftconvolve(np.reshape(values, shape), block, mode="full")
    window = (slice(side - 1, 2 * side - 1),) * len(shape)
    return full[window].ravel()


def dense_apply(kernel: KernelTable, values: np.ndarray, index: np.ndarray) -> np.ndarray:
    """(K v)_i by direct summation; reference for the FFT path."""
    _, slope = pair_rows(kernel, values, index)
    # slope_i = S_i v_i - (K v)_i
    return row_sums_dense(kernel, index) * values - slope


def row_sums_dense(kernel: KernelTable, index: np.ndarray) -> np.ndarray:
    """S_i = Σ_{j≠i} K(i-j) over one point set."""
    return _row_sums(
        np.ascontiguousarray(index, dtype=np.int64),
        kernel.flat,
        kernel.strides,
        kernel.extent,
    )


@numba.njit(cache=True, parallel=True)
def _row_sums(index, kernel, strides, shift):
    n = index.shape[0]
    d = index.shape[1]
    out = np.zeros(n)
    for i in numba.prange(n):
        acc = 0.0
        for j in range(n):
            if j == i:
                continue
            k = 0
            for a in range(d):
                k += (index[i, a] - index[j, a] + shift) * strides[a]
            acc += kernel[k]
        out[i] = acc
    return out


# -------------------------------------------------------------------
# Exterior moments
# -------------------------------------------------------------------


def _wall_integral(distance, lateral, s):
    """
    ∫ over the directions leaving through one wall at perpendicular distance D whose
    lateral extent (signed, relative to the foot of the perpendicular) ends at ``lateral``:
        (1/2s) D^{-2s} ∫_0^{atan(l/D)} cos^{2s}ψ dψ,
    with ∫_0^Ψ cos^{2s}ψ dψ = ½ B(sin²Ψ; ½, s+½) (incomplete beta).
    """
    u = lateral / distance
    x = u * u / (1.0 + u * u)
    partial = 0.5 * special.betainc(0.5, s + 0.5, x) * special.beta(0.5, s + 0.5)
    return np.sign(u) * partial * distance ** (-2.0 * s) / (2.0 * s)


def exterior_moment(points: np.ndarray, half_width: float, s: float) -> np.ndarray:
    """
    w(x) = ∫_{B^c} |x - y|^{-(d+2s)} dy for the centered box B = (-L, L)^d.

    d=1: (1/2s)[(x+L)^{-2s} + (L-x)^{-2s}].
    d=2: the polar integral Σ_walls ∫ ρ(φ)^{-2s}/(2s) dφ, where ρ is the exit distance of
    the ray from x, evaluated wall by wall in closed form.
    """
    points = np.asarray(points, dtype=np.float64)
    if points.ndim == 1:
        points = points.reshape(-1, 1)
    d = points.shape[1]
    L = float(half_width)
    if np.any(np.abs(points) >= L):
        raise ValueError("Exterior moment requested for a point outside the box")
    if d == 1:
        x = points[:, 0]
        return ((x + L) ** (-2.0 * s) + (L - x) ** (-2.0 * s)) / (2.0 * s)
    x = points[:, 0]
    y = points[:, 1]
    total = np.zeros(points.shape[0])
    # each wall: perpendicular distance, lateral extents on both sides of the foot
    walls = [
        (L - x, L - y, L + y),
        (L + x, L - y, L + y),
        (L - y, L - x, L + x),
        (L + y, L - x, L + x),
    ]
    for distance, up, down in walls:
        total += _wall_integral(distance, up, s) + _wall_integral(distance, down, s)
    return total


def exterior_moment_quadrature(x: float, a: float, b: float, s: float) -> float:
    """d=1 reference: ∫_{(-∞,a)∪(b,∞)} |x-y|^{-1-2s} dy by adaptive quadrature."""

    left, _ = integrate.quad(lambda y: (x - y) ** (-1.0 - 2.0 * s), -np.inf, a)
    right, _ = integrate.quad(lambda y: (y - x) ** (-1.0 - 2.0 * s), b, np.inf)
    return left + right


def grid_exterior_moment(grid: Grid, s: float, cache_dir=None) -> np.ndarray:
    """Exterior moments of Λ_n at the grid points, optionally cached by (d, n, m, s)."""
    path = None
    if cache_dir is not None:
        path = Path(get_cache_dir(cache_dir)) / (
            f"exterior_{grid.d}d_n{grid.n}_m{grid.m}_s{float(s).hex()}.npz"
        )
        if path.exists():
            with np.load(path) as data:
                return data["moment"]
    moment = exterior_moment(grid.points, grid.half_width, s)
    if path is not None:
        np.savez(path, moment=moment)
    return moment

"""
Energy Module
=============

The discrete energy G_1^{v_0}(v, ω, Λ) = K_1(v, ω, Λ) + 𝒲((v, Λ), (v_0, Λ^c)) on a
collocation grid:

    K_1 = Σ_{i≠j} K(i-j) (v_i - v_j)^2 + h^d Σ_i W(v_i) - θ h^d Σ_i g_1(x_i) v_i
    𝒲  = 2 Σ_i [ W_i (v_i - T_i)^2 + R_i ]

The double sum runs over ordered pairs, mirroring the symmetric double integral. For a
constant exterior v_0, W_i = h^d w_i with w_i the exterior moment of Λ, T_i = v_0 and
R_i = 0. For a window exterior (values on a larger grid, constant beyond), the pairwise
window sums and the tail moment are folded into the same per-point (W_i, T_i, R_i); T_i is
the effective exterior value seen by point i.

Normalizing constant of the fractional Laplacian is 1.
"""

import math
from dataclasses import dataclass, field
from typing import Dict, Optional

import numpy as np

from core.phasefield.lattice import (
    ConstantExterior,
    Disorder,
    Grid,
    ScalarField,
    WindowExterior,
    grid_disorder,
    inner_mask,
)
from core.phasefield.kernels import (
    DENSE_MAX_POINTS,
    KernelTable,
    build_kernel,
    cross_rows,
    exterior_moment,
    grid_exterior_moment,
    pair_rows,
    row_sums_dense,
    toeplitz_apply,
)


# -------------------------------------------------------------------
# Double-well potential
# -------------------------------------------------------------------


@dataclass(frozen=True)
class PotentialSpec:
    """
    W(t) = (|t|-1)^2 / (2 C_0) for |t| >= 1 - δ_0, and an even C^2 bridge inside.

    quartic bridge: p(t) = a + b t^2 + c t^4
    cosine bridge:  p(t) = a + b t^2 + c cos(π t / (2 t_0)),  t_0 = 1 - δ_0
    """

    C0: float
    delta0: float
    bridge: str
    a: float
    b: float
    c: float

    @property
    def t0(self) -> float:
        return 1.0 - self.delta0

    def value(self, t):
        t = np.asarray(t, dtype=np.float64)
        outer = (np.abs(t) - 1.0) ** 2 / (2.0 * self.C0)
        return np.where(np.abs(t) >= self.t0, outer, self._bridge(t, 0))

    def derivative(self, t):
        t = np.asarray(t, dtype=np.float64)
        outer = (t - np.sign(t)) / self.C0
        return np.where(np.abs(t) >= self.t0, outer, self._bridge(t, 1))

    def second_derivative(self, t):
        t = np.asarray(t, dtype=np.float64)
        return np.where(np.abs(t) >= self.t0, 1.0 / self.C0, self._bridge(t, 2))

    def _bridge(self, t, order):
        a, b, c = self.a, self.b, self.c
        if self.bridge == "quartic":
            if order == 0:
                return a + b * t**2 + c * t**4
            if order == 1:
                return 2.0 * b * t + 4.0 * c * t**3
            return 2.0 * b + 12.0 * c * t**2
        k = math.pi / (2.0 * self.t0)
        if order == 0:
            return a + b * t**2 + c * np.cos(k * t)
        if order == 1:
            return 2.0 * b * t - c * k * np.sin(k * t)
        return 2.0 * b - c * k * k * np.cos(k * t)

    @property
    def max_curvature(self) -> float:
        """max |W''| over the real line."""
        inner = np.abs(self._bridge(np.linspace(0.0, self.t0, 257), 2))
        return float(max(1.0 / self.C0, np.max(inner)))

    def to_dict(self):
        return {
            "C0": self.C0,
            "delta0": self.delta0,
            "bridge": self.bridge,
            "coefficients": [self.a, self.b, self.c],
        }


def build_potential(C0: float = 1.0, delta0: float = 0.5, bridge: str = "quartic"):
    """
    Solve the bridge so that W matches value, slope and curvature of (|t|-1)^2/(2 C_0) at
    |t| = 1 - δ_0, then check W >= 0, evenness and strict decrease on [0, 1] numerically.

    Raises:
        ValueError: invalid (C_0, δ_0) or a bridge violating (H1).
    """
    if not C0 > 0:
        raise ValueError(f"C0={C0} must be positive")
    if not 0.0 < delta0 < 1.0:
        raise ValueError(f"delta0={delta0} must lie in (0, 1)")
    t0 = 1.0 - delta0
    q0 = delta0**2 / (2.0 * C0)
    if bridge == "quartic":
        c = 1.0 / (8.0 * C0 * t0**3)
        b = (1.0 - 1.5 / t0) / (2.0 * C0)
        a = q0 - b * t0**2 - c * t0**4
    elif bridge == "cosine":
        b = 1.0 / (2.0 * C0)
        c = 2.0 * t0 / (math.pi * C0)
        a = q0 - b * t0**2
    else:
        raise ValueError(f"Unknown bridge {bridge!r}, expected 'quartic' or 'cosine'")
    spec = PotentialSpec(float(C0), float(delta0), bridge, a, b, c)

    t = np.linspace(0.0, 1.0, 4001)
    w = spec.value(t)
    if np.any(np.diff(w) >= 0.0) or np.any(w[:-1] <= 0.0) or w[-1] != 0.0:
        raise ValueError(
            f"Bridge {bridge!r} with C0={C0}, delta0={delta0} is not strictly decreasing "
            f"and positive on [0, 1)"
        )
    jumps = [
        abs(float(spec._bridge(np.float64(t0), k)) - float(
            [q0, -delta0 / C0, 1.0 / C0][k]
        ))
        for k in range(3)
    ]
    if max(jumps) > 1e-10 * max(1.0, 1.0 / C0):
        raise ValueError(f"Bridge {bridge!r} fails C^2 matching at 1-delta0: {jumps}")
    return spec


# -------------------------------------------------------------------
# Exterior weights
# -------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class ExteriorWeights:
    """
    Geometric exterior data of Λ.

    Attributes:
        moment: w_i = ∫_{Λ^c} |x_i - y|^{-(d+2s)} dy.
        window: Window grid for window exteriors, else None.
        pair_sum: Σ_e K(i-e) over window points outside Λ.
        tail: ∫_{window^c} |x_i - y|^{-(d+2s)} dy.
    """

    grid: Grid
    s: float
    moment: np.ndarray
    window: Optional[Grid] = None
    pair_sum: Optional[np.ndarray] = None
    tail: Optional[np.ndarray] = None


@dataclass(frozen=True, eq=False)
class ExteriorTerms:
    """Per-point (W_i, T_i, R_i) with 𝒲 = 2 Σ_i [W_i (v_i - T_i)^2 + R_i]."""

    weight: np.ndarray
    target: np.ndarray
    remainder: np.ndarray

    def energy(self, values) -> float:
        diff = values - self.target
        return 2.0 * float(np.sum(self.weight * diff * diff + self.remainder))

    def slope(self, values) -> np.ndarray:
        """Σ-part of the gradient: W_i (v_i - T_i)."""
        return self.weight * (values - self.target)


def build_exterior_weights(grid: Grid, s: float, window: Optional[Grid] = None,
                           kernel: Optional[KernelTable] = None, cache_dir=None):
    """Exterior moments of Λ, plus window pair sums and tail moments for a window."""
    moment = grid_exterior_moment(grid, s, cache_dir=cache_dir)
    if window is None:
        return ExteriorWeights(grid, s, moment)
    kernel = kernel or build_kernel(grid.d, s, grid.h, window.side - 1, cache_dir)
    inner = inner_mask(window, grid)
    ones = np.ones(int(np.sum(~inner)))
    pair_sum = _window_sums(grid, window, kernel, inner, ones)[1]
    tail = exterior_moment(grid.points, window.half_width, s)
    return ExteriorWeights(grid, s, moment, window, -pair_sum, tail)


def _window_sums(grid, window, kernel, inner, outside_values):
    """
    (Σ_e K(i-e) u_e^2, -Σ_e K(i-e) u_e) for the interior points i against the window
    points e outside Λ carrying values u.
    """
    offset = (window.n - grid.n) // 2 * grid.m
    index_in = grid.index + offset
    index_out = window.index[~inner]
    if grid.size * index_out.shape[0] <= DENSE_MAX_POINTS**2:
        return cross_rows(kernel, np.zeros(grid.size), index_in, outside_values, index_out)
    full = np.zeros(window.size)
    full[~inner] = outside_values
    squares = toeplitz_apply(kernel, full * full, window.shape)[inner]
    linear = toeplitz_apply(kernel, full, window.shape)[inner]
    return squares, -linear


def exterior_terms(weights: ExteriorWeights, exterior, kernel: Optional[KernelTable] = None):
    """Fold an exterior descriptor into per-point (W_i, T_i, R_i)."""
    grid = weights.grid
    hd = grid.cell_volume
    if isinstance(exterior, ConstantExterior):
        weight = hd * weights.moment
        return ExteriorTerms(
            weight, np.full(grid.size, float(exterior.value)), np.zeros(grid.size)
        )
    if not isinstance(exterior, WindowExterior):
        raise ValueError("Missing exterior descriptor")
    if weights.window != exterior.window:
        raise ValueError("Exterior weights were built for a different window")
    window = exterior.window
    kernel = kernel or build_kernel(grid.d, weights.s, grid.h, window.side - 1)
    inner = inner_mask(window, grid)
    u = exterior.values[~inner]
    squares, neg_linear = _window_sums(grid, window, kernel, inner, u)
    linear = -neg_linear
    tail_w = hd * weights.tail
    c = float(exterior.tail)
    weight = weights.pair_sum + tail_w
    target = (linear + tail_w * c) / weight
    remainder = squares + tail_w * c * c - weight * target * target
    return ExteriorTerms(weight, target, remainder)


def exterior_interaction(v: ScalarField, weights: ExteriorWeights,
                         kernel: Optional[KernelTable] = None) -> float:
    """𝒲((v, Λ), (v_0, Λ^c)) for the exterior carried by ``v``."""
    if v.exterior is None:
        raise ValueError("Missing exterior descriptor")
    return exterior_terms(weights, v.exterior, kernel).energy(v.values)


# -------------------------------------------------------------------
# Energy breakdown and problem assembly
# -------------------------------------------------------------------


@dataclass(frozen=True)
class EnergyBreakdown:
    gagliardo: float
    potential: float
    disorder: float
    exterior: float
    total: float

    @classmethod
    def from_parts(cls, gagliardo, potential, disorder, exterior):
        parts = [float(gagliardo), float(potential), float(disorder), float(exterior)]
        if not all(math.isfinite(p) for p in parts):
            raise ValueError(f"Non-finite energy part in {parts}")
        return cls(*parts, total=sum(parts))

    @property
    def interior(self) -> float:
        """K_1 = Gagliardo + potential + disorder."""
        return self.gagliardo + self.potential + self.disorder

    def to_dict(self):
        return {
            "gagliardo": self.gagliardo,
            "potential": self.potential,
            "disorder": self.disorder,
            "exterior": self.exterior,
            "interior": self.interior,
            "total": self.total,
        }


@dataclass(eq=False)
class EnergyProblem:
    """
    Everything the energy needs besides the field: grid, order s, disorder strength θ,
    potential, disorder, kernel and exterior geometry. The exterior values come with the
    field; their folded terms are cached per exterior.
    """

    grid: Grid
    s: float
    theta: float
    potential: PotentialSpec
    disorder: Optional[Disorder]
    kernel: KernelTable
    weights: ExteriorWeights
    g_points: np.ndarray
    method: str = "dense"
    cache_dir: Optional[str] = None
    _terms: Dict = field(default_factory=dict, repr=False)
    _window_weights: Dict = field(default_factory=dict, repr=False)
    _row_sums: Optional[np.ndarray] = field(default=None, repr=False)

    @property
    def row_sums(self) -> np.ndarray:
        """S_i = Σ_{j≠i} K(i-j)."""
        if self._row_sums is None:
            if self.method == "dense":
                self._row_sums = row_sums_dense(self.kernel, self.grid.index)
            else:
                # K(0) = 0, so K·1 is the off-diagonal row sum
                self._row_sums = toeplitz_apply(
                    self.kernel, np.ones(self.grid.size), self.grid.shape
                )
        return self._row_sums

    def weights_for(self, exterior) -> ExteriorWeights:
        if isinstance(exterior, WindowExterior):
            window = exterior.window
            if window not in self._window_weights:
                self._window_weights[window] = build_exterior_weights(
                    self.grid, self.s, window, self.window_kernel(window), self.cache_dir
                )
            return self._window_weights[window]
        return self.weights

    def window_kernel(self, window: Grid) -> KernelTable:
        if window.side - 1 <= self.kernel.extent:
            return self.kernel
        return build_kernel(self.grid.d, self.s, self.grid.h, window.side - 1, self.cache_dir)

    def terms(self, exterior) -> ExteriorTerms:
        key = exterior.key
        if key not in self._terms:
            kernel = (
                self.window_kernel(exterior.window)
                if isinstance(exterior, WindowExterior)
                else self.kernel
            )
            self._terms[key] = exterior_terms(self.weights_for(exterior), exterior, kernel)
        return self._terms[key]

    # -- interior pieces ----------------------------------------------------

    def pair_energy_and_slope(self, values):
        """(Σ_{i≠j} K (v_i - v_j)^2, per-point Σ_j K (v_i - v_j))."""
        if self.method == "dense":
            rows, slope = pair_rows(self.kernel, values, self.grid.index)
            return float(np.sum(rows)), slope
        slope = self.row_sums * values - toeplitz_apply(self.kernel, values, self.grid.shape)
        return 2.0 * float(np.dot(values, slope)), slope

    def breakdown(self, values, exterior) -> EnergyBreakdown:
        values = np.asarray(values, dtype=np.float64)
        hd = self.grid.cell_volume
        pair, _ = self.pair_energy_and_slope(values)
        return EnergyBreakdown.from_parts(
            pair,
            hd * float(np.sum(self.potential.value(values))),
            -self.theta * hd * float(np.dot(self.g_points, values)),
            self.terms(exterior).energy(values),
        )

    def gradient_values(self, values, exterior) -> np.ndarray:
        return self.energy_and_gradient(values, exterior)[1]

    def energy_and_gradient(self, values, exterior):
        values = np.asarray(values, dtype=np.float64)
        hd = self.grid.cell_volume
        terms = self.terms(exterior)
        pair, slope = self.pair_energy_and_slope(values)
        energy = (
            pair
            + hd * float(np.sum(self.potential.value(values)))
            - self.theta * hd * float(np.dot(self.g_points, values))
            + terms.energy(values)
        )
        grad = (
            4.0 * slope
            + hd * self.potential.derivative(values)
            - self.theta * hd * self.g_points
            + 4.0 * terms.slope(values)
        )
        return energy, grad

    def smoothness_bound(self, exterior) -> float:
        """L̂ = 4 Σ_Δ K(Δ) + h^d max|W''| + 4 max_i W_i."""
        hd = self.grid.cell_volume
        block = self.kernel.block(self.grid.side)
        return float(
            4.0 * np.sum(block)
            + hd * self.potential.max_curvature
            + 4.0 * np.max(self.terms(exterior).weight)
        )

    def preconditioner(self, exterior) -> np.ndarray:
        """Fixed Jacobi diagonal 4 S_i + 4 W_i + h^d / C_0 (field independent)."""
        hd = self.grid.cell_volume
        return 4.0 * self.row_sums + 4.0 * self.terms(exterior).weight + hd / self.potential.C0

    def with_disorder(self, disorder: Optional[Disorder]) -> "EnergyProblem":
        """Same geometry and caches, new disorder realization."""
        g_points = (
            grid_disorder(disorder, self.grid)
            if disorder is not None
            else np.zeros(self.grid.size)
        )
        return EnergyProblem(
            self.grid,
            self.s,
            self.theta,
            self.potential,
            disorder,
            self.kernel,
            self.weights,
            g_points,
            self.method,
            self.cache_dir,
            self._terms,
            self._window_weights,
            self._row_sums,
        )


def build_problem(grid: Grid, s: float, theta: float = 0.0,
                  potential: Optional[PotentialSpec] = None,
                  disorder: Optional[Disorder] = None, method: str = "auto",
                  cache_dir=None) -> EnergyProblem:
    """
    Assemble the energy setup on ``grid``.

    Args:
        method: "dense" (numba pair sums), "fft" (Toeplitz FFT path) or "auto" (dense up
            to DENSE_MAX_POINTS points).
    """
    if not 0.0 < s < 1.0:
        raise ValueError(f"Fractional order s={s} must lie in (0, 1)")
    if theta < 0:
        raise ValueError(f"Disorder strength theta={theta} must be >= 0")
    if theta > 0 and disorder is None:
        raise ValueError("theta > 0 needs a disorder realization")
    if method == "auto":
        method = "dense" if grid.size <= DENSE_MAX_POINTS else "fft"
    if method not in ("dense", "fft"):
        raise ValueError(f"Unknown summation method {method!r}")
    potential = potential or build_potential()
    kernel = build_kernel(grid.d, s, grid.h, grid.side - 1, cache_dir=cache_dir)
    weights = build_exterior_weights(grid, s, cache_dir=cache_dir)
    g_points = (
        grid_disorder(disorder, grid) if disorder is not None else np.zeros(grid.size)
    )
    return EnergyProblem(
        grid, float(s), float(theta), potential, disorder, kernel, weights, g_points,
        method, cache_dir,
    )


# -------------------------------------------------------------------
# Operations on fields
# -------------------------------------------------------------------


def _check_field(v: ScalarField, problem: EnergyProblem):
    if v.grid != problem.grid:
        raise ValueError(f"Field grid {v.grid} does not match problem grid {problem.grid}")


def interior_energy(v: ScalarField, g: Optional[Disorder], theta: float,
                    K: KernelTable, W: PotentialSpec) -> float:
    """K_1(v, ω, Λ): ordered-pair Gagliardo sum + h^d Σ W(v_i) - θ h^d Σ g_1(x_i) v_i."""
    grid = v.grid
    hd = grid.cell_volume
    rows, _ = pair_rows(K, v.values, grid.index)
    disorder_part = 0.0
    if theta != 0.0:
        if g is None:
            raise ValueError("theta != 0 needs a disorder realization")
        disorder_part = -theta * hd * float(np.dot(grid_disorder(g, grid), v.values))
    return float(np.sum(rows)) + hd * float(np.sum(W.value(v.values))) + disorder_part


def total_energy(v: ScalarField, problem: EnergyProblem) -> EnergyBreakdown:
    """G_1^{v_0}(v, ω, Λ) split into its parts; v_0 is the exterior carried by ``v``."""
    _check_field(v, problem)
    return problem.breakdown(v.values, v.exterior)


def gradient(v: ScalarField, problem: EnergyProblem) -> ScalarField:
    """
    ∂G/∂v_i = 4 Σ_{j≠i} K(i-j)(v_i - v_j) + h^d W'(v_i) - θ h^d g_1(x_i)
              + 4 W_i (v_i - T_i).
    """
    _check_field(v, problem)
    grad = problem.gradient_values(v.values, v.exterior)
    return ScalarField(v.grid, grad, ConstantExterior(0.0))


def el_residual(v: ScalarField, problem: EnergyProblem) -> float:
    """
    max_i |(-Δ)^s_h v_i + ½[W'(v_i) - θ g_1(x_i)]| with the discrete operator
    (-Δ)^s_h v_i = 2 h^{-d} [Σ_{j≠i} K(i-j)(v_i - v_j) + W_i (v_i - T_i)];
    this equals ‖∇G‖_∞ / (2 h^d).
    """
    _check_field(v, problem)
    grad = problem.gradient_values(v.values, v.exterior)
    return float(np.max(np.abs(grad))) / (2.0 * v.grid.cell_volume)


def residual_of(grad: np.ndarray, grid: Grid) -> float:
    return float(np.max(np.abs(grad))) / (2.0 * grid.cell_volume)


# -------------------------------------------------------------------
# Sub-domain energies
# -------------------------------------------------------------------


@dataclass(frozen=True)
class RegionEnergy:
    """K_1(v, A) and 𝒲(v, A) for a set A of grid points; G_1(v, A) = K_1 + 𝒲."""

    gagliardo: float
    potential: float
    disorder: float
    interaction: float
    exterior: float

    @property
    def k1(self) -> float:
        return self.gagliardo + self.potential + self.disorder

    @property
    def w(self) -> float:
        return self.interaction + self.exterior

    @property
    def g1(self) -> float:
        return self.k1 + self.w

    def to_dict(self):
        return {
            "gagliardo": self.gagliardo,
            "potential": self.potential,
            "disorder": self.disorder,
            "interaction": self.interaction,
            "exterior": self.exterior,
            "k1": self.k1,
            "g1": self.g1,
        }


def region_energy(v: ScalarField, mask, problem: EnergyProblem) -> RegionEnergy:
    """
    Energy of v on the grid subset A = ``mask``. The other grid points (with the values
    of v) and the exterior descriptor of v form the complement A^c.
    """
    _check_field(v, problem)
    mask = np.asarray(mask, dtype=bool)
    if mask.shape != (v.grid.size,):
        raise ValueError("Region mask does not match the grid")
    grid = v.grid
    hd = grid.cell_volume
    values = v.values
    inside = values[mask]
    index_in = grid.index[mask]
    rows, _ = pair_rows(problem.kernel, inside, index_in)
    interaction = 0.0
    if np.any(~mask) and inside.size:
        cross, _ = cross_rows(
            problem.kernel, inside, index_in, values[~mask], grid.index[~mask]
        )
        interaction = 2.0 * float(np.sum(cross))
    terms = problem.terms(v.exterior)
    diff = inside - terms.target[mask]
    exterior = 2.0 * float(np.sum(terms.weight[mask] * diff * diff + terms.remainder[mask]))
    return RegionEnergy(
        float(np.sum(rows)),
        hd * float(np.sum(problem.potential.value(inside))),
        -problem.theta * hd * float(np.dot(problem.g_points[mask], inside)),
        interaction,
        exterior,
    )


def cross_interaction(v: ScalarField, mask_a, u: ScalarField, mask_b,
                      kernel: KernelTable) -> float:
    """𝒲((v, A), (u, B)) = 2 Σ_{a∈A, b∈B} K(a-b) (v_a - u_b)^2 for disjoint A, B."""
    mask_a = np.asarray(mask_a, dtype=bool)
    mask_b = np.asarray(mask_b, dtype=bool)
    if v.grid != u.grid:
        raise ValueError("Cross interaction needs fields on the same grid")
    if np.any(mask_a & mask_b):
        raise ValueError("Cross interaction needs disjoint point sets")
    if not np.any(mask_a) or not np.any(mask_b):
        return 0.0
    rows, _ = cross_rows(
        kernel, v.values[mask_a], v.grid.index[mask_a], u.values[mask_b],
        u.grid.index[mask_b],
    )
    return 2.0 * float(np.sum(rows))

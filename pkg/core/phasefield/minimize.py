"""
Minimize Module
===============

Descent to stationary points of G_1^{v_0}, truncation, extremal pairs (approximate
maximal / minimal minimizers under the ±K barriers) and the boundary-layer glue.

Two solvers are available:

    pgd    -- Jacobi-preconditioned gradient descent with Armijo backtracking. Every
              accepted step lowers the energy.
    lbfgs  -- scipy L-BFGS-B, followed by a pgd polish down to the residual tolerance.

Stopping is on the Euler-Lagrange residual ‖∇G‖_∞ / (2 h^d) (see ``energy.el_residual``).
"""

import math
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import List, Optional

import numpy as np
from scipy import optimize

from core.utils import derive_seed
from core.phasefield.energy import (
    EnergyBreakdown,
    EnergyProblem,
    build_potential,
    build_problem,
    cross_interaction,
    region_energy,
    residual_of,
    total_energy,
)
from core.phasefield.lattice import (
    ConstantExterior,
    Disorder,
    Grid,
    ScalarField,
    WindowExterior,
)

ORDERING_TOL = 1e-6
BOUND_TOL = 1e-6


class InitPolicy(Enum):
    PLUS = "plus"
    MINUS = "minus"
    RANDOM = "random"
    GIVEN = "given"


@dataclass(frozen=True)
class SolverConfig:
    """
    Attributes:
        method: "pgd" or "lbfgs".
        tol: EL residual tolerance.
        max_iter: Iteration cap per start (line-search trials not counted).
        multistart: Number of starts; starts after the first are uniform in [-K, K].
        init: Policy of the first start.
        armijo: Sufficient-decrease constant.
        precondition: Use the Jacobi metric (initial step 1 there); without it the
            initial step is 1/L̂ of the plain metric.
        tie_tol: Relative energy window inside which stationary points count as tied.
        seed: Base seed of the random starts.
    """

    method: str = "pgd"
    tol: float = 1e-8
    max_iter: int = 20000
    multistart: int = 1
    init: InitPolicy = InitPolicy.PLUS
    armijo: float = 1e-4
    precondition: bool = True
    tie_tol: float = 1e-8
    seed: int = 0

    def __post_init__(self):
        if self.method not in ("pgd", "lbfgs"):
            raise ValueError(f"Unknown solver method {self.method!r}")
        if not self.tol > 0:
            raise ValueError(f"Solver tolerance {self.tol} must be positive")
        if self.multistart < 1:
            raise ValueError(f"multistart={self.multistart} must be >= 1")
        if self.max_iter < 1:
            raise ValueError(f"max_iter={self.max_iter} must be >= 1")
        if not 0.0 < self.armijo < 0.5:
            raise ValueError(f"Armijo constant {self.armijo} must lie in (0, 1/2)")
        if not isinstance(self.init, InitPolicy):
            object.__setattr__(self, "init", InitPolicy(self.init))

    def to_dict(self):
        return {
            "method": self.method,
            "tol": self.tol,
            "max_iter": self.max_iter,
            "multistart": self.multistart,
            "init": self.init.value,
            "armijo": self.armijo,
            "precondition": self.precondition,
            "tie_tol": self.tie_tol,
            "seed": self.seed,
        }


@dataclass(frozen=True, eq=False)
class MinimizeResult:
    field: ScalarField
    breakdown: EnergyBreakdown
    residual: float
    iterations: int
    converged: bool
    init: str
    history: List[float] = field(default_factory=list, repr=False)

    @property
    def energy(self) -> float:
        return self.breakdown.total

    def to_dict(self):
        return {
            "energy": self.breakdown.to_dict(),
            "residual": self.residual,
            "iterations": self.iterations,
            "converged": self.converged,
            "init": self.init,
            "sup_norm": self.field.sup_norm,
        }


# -------------------------------------------------------------------
# Truncation
# -------------------------------------------------------------------


def truncate(v: ScalarField, t: float) -> ScalarField:
    """v^t = t ∧ v ∨ (-t), exterior clamped the same way."""
    if not t > 0:
        raise ValueError(f"Truncation level t={t} must be positive")
    return ScalarField(v.grid, np.clip(v.values, -t, t), v.exterior.clamp(t))


def truncation_gain(v: ScalarField, t: float, problem: EnergyProblem):
    """
    Both sides of the truncation inequality
        K_1(v) - K_1(v^t) >= Σ_{|v_i| > t} h^d (C_0^{-1}(t - 1) - θ‖g‖_∞)(|v_i| - t),
    valid for t >= 1 + C_0 θ ‖g‖_∞.

    Returns:
        tuple: (left-hand side, right-hand side).
    """
    mask = np.ones(v.grid.size, dtype=bool)
    before = region_energy(v, mask, problem).k1
    after = region_energy(truncate(v, t), mask, problem).k1
    g_sup = float(np.max(np.abs(problem.g_points))) if problem.g_points.size else 0.0
    over = np.abs(v.values) > t
    rate = (t - 1.0) / problem.potential.C0 - problem.theta * g_sup
    rhs = v.grid.cell_volume * rate * float(np.sum(np.abs(v.values[over]) - t))
    return before - after, rhs


def barrier_level(problem: EnergyProblem) -> float:
    """K* = 1 + C_0 θ A, A the almost-sure disorder bound."""
    bound = problem.disorder.bound if problem.disorder is not None else 0.0
    return 1.0 + problem.potential.C0 * problem.theta * bound


def sup_bound(problem: EnergyProblem, start_sup: float, exterior) -> float:
    """max(‖v_0‖_∞, ‖start‖_∞, 1 + C_0 θ A), the L∞ ceiling of a descent result."""
    return max(float(start_sup), exterior.sup_norm, barrier_level(problem))


def truncation_stability(result: "MinimizeResult", problem: EnergyProblem,
                         cfg: SolverConfig) -> float:
    """
    Energy lost by re-minimizing from the truncation of ``result`` at the L∞ ceiling;
    a minimizer gives at most the solver tolerance.
    """
    exterior = result.field.exterior
    t = max(exterior.sup_norm, barrier_level(problem))
    start = ScalarField(problem.grid, np.clip(result.field.values, -t, t), exterior)
    again = minimize(replace(cfg, init=InitPolicy.GIVEN, multistart=1), problem, exterior,
                     start=start)
    return result.energy - again.energy


# -------------------------------------------------------------------
# Descent
# -------------------------------------------------------------------


def _pgd(cfg: SolverConfig, problem: EnergyProblem, exterior, values, max_iter: int,
         history: List[float]):
    grid = problem.grid
    precond = problem.preconditioner(exterior) if cfg.precondition else None
    alpha = 1.0 if cfg.precondition else 1.0 / problem.smoothness_bound(exterior)
    energy, grad = problem.energy_and_gradient(values, exterior)
    if not history:
        history.append(energy)
    iterations = 0
    while iterations < max_iter:
        if residual_of(grad, grid) <= cfg.tol:
            return values, iterations, True
        direction = -grad / precond if precond is not None else -grad
        slope = float(np.dot(grad, direction))
        while True:
            trial = values + alpha * direction
            trial_energy, trial_grad = problem.energy_and_gradient(trial, exterior)
            if trial_energy <= energy + cfg.armijo * alpha * slope:
                break
            alpha *= 0.5
            if alpha < 1e-20:
                # no representable decrease left along the descent direction
                return values, iterations, False
        values, energy, grad = trial, trial_energy, trial_grad
        history.append(energy)
        iterations += 1
        alpha = min(2.0 * alpha, 1e6)
    return values, iterations, residual_of(grad, grid) <= cfg.tol


def _lbfgs(cfg: SolverConfig, problem: EnergyProblem, exterior, values, history):
    hd = problem.grid.cell_volume

    def record(intermediate_result):
        history.append(float(intermediate_result.fun))

    history.append(problem.energy_and_gradient(values, exterior)[0])
    result = optimize.minimize(
        lambda x: problem.energy_and_gradient(x, exterior),
        values,
        jac=True,
        method="L-BFGS-B",
        callback=record,
        options={"maxiter": cfg.max_iter, "gtol": 2.0 * hd * cfg.tol, "ftol": 0.0},
    )
    return np.asarray(result.x, dtype=np.float64), int(result.nit)


def _start_values(cfg: SolverConfig, problem: EnergyProblem, k: int, level: float,
                  start: Optional[ScalarField]):
    size = problem.grid.size
    policy = cfg.init if k == 0 else InitPolicy.RANDOM
    if policy is InitPolicy.PLUS:
        return np.full(size, level), "constant(+K)"
    if policy is InitPolicy.MINUS:
        return np.full(size, -level), "constant(-K)"
    if policy is InitPolicy.GIVEN:
        if start is None:
            raise ValueError("Init policy 'given' needs a start field")
        return np.array(start.values, dtype=np.float64), "given"
    rng = np.random.default_rng(derive_seed(cfg.seed, "start", k))
    return rng.uniform(-level, level, size), f"random{k}"


def _solve_one(cfg, problem, exterior, values, label) -> MinimizeResult:
    history: List[float] = []
    iterations = 0
    if cfg.method == "lbfgs":
        values, iterations = _lbfgs(cfg, problem, exterior, values, history)
    values, more, converged = _pgd(
        cfg, problem, exterior, values, max(cfg.max_iter - iterations, 1), history
    )
    iterations += more
    v = ScalarField(problem.grid, values, exterior)
    breakdown = problem.breakdown(v.values, exterior)
    residual = residual_of(problem.gradient_values(v.values, exterior), problem.grid)
    if not converged:
        print(
            f"⚠️ Solver did not converge from {label}: residual {residual:.3e} > "
            f"tol {cfg.tol:.1e} after {iterations} iterations"
        )
    return MinimizeResult(v, breakdown, residual, iterations, converged, label, history)


def minimize_all(cfg: SolverConfig, problem: EnergyProblem, exterior,
                 start: Optional[ScalarField] = None,
                 level: Optional[float] = None) -> List[MinimizeResult]:
    """One result per start, in start order."""
    if exterior is None:
        raise ValueError("Missing exterior descriptor")
    if level is None:
        level = max(exterior.sup_norm, barrier_level(problem))
    return [
        _solve_one(cfg, problem, exterior, *_start_values(cfg, problem, k, level, start))
        for k in range(cfg.multistart)
    ]


def _lex_greater(a: np.ndarray, b: np.ndarray) -> bool:
    diff = np.nonzero(a != b)[0]
    return bool(diff.size) and a[diff[0]] > b[diff[0]]


def _tied(results: List[MinimizeResult], tie_tol: float) -> List[MinimizeResult]:
    best = min(r.energy for r in results)
    window = tie_tol * max(1.0, abs(best))
    return [r for r in results if r.energy - best <= window]


def select_best(results: List[MinimizeResult], tie_tol: float) -> MinimizeResult:
    """Lowest energy; ties broken by the lexicographically larger field."""
    chosen = None
    for r in _tied(results, tie_tol):
        if chosen is None or _lex_greater(r.field.values, chosen.field.values):
            chosen = r
    return chosen


def minimize(cfg: SolverConfig, problem: EnergyProblem, exterior,
             start: Optional[ScalarField] = None,
             level: Optional[float] = None) -> MinimizeResult:
    """
    Descend G_1^{v_0} from every configured start and keep the best stationary point.

    Args:
        cfg (SolverConfig): Solver settings.
        problem (EnergyProblem): Assembled energy.
        exterior: Exterior descriptor v_0.
        start (ScalarField): Start field for the GIVEN policy.
        level (float): Barrier K for constant and random starts; defaults to
            max(‖v_0‖_∞, 1 + C_0 θ A).

    Returns:
        MinimizeResult: ``converged=False`` (with a warning) when the residual target
        was not reached; the partial result is still returned.
    """
    return select_best(minimize_all(cfg, problem, exterior, start, level), cfg.tie_tol)


# -------------------------------------------------------------------
# Extremal states
# -------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class ExtremalStates:
    K: float
    plus: MinimizeResult
    minus: MinimizeResult
    ordering_violation: float
    k_gap: Optional[float] = None
    k_gap_central: Optional[float] = None
    bound_violation: float = 0.0

    @property
    def v_plus(self) -> ScalarField:
        return self.plus.field

    @property
    def v_minus(self) -> ScalarField:
        return self.minus.field

    @property
    def converged(self) -> bool:
        return self.plus.converged and self.minus.converged

    @property
    def bound_ok(self) -> bool:
        """‖v±‖_∞ <= K up to BOUND_TOL."""
        return self.bound_violation <= BOUND_TOL

    @property
    def energy_gap(self) -> float:
        """G_1(v⁺) - G_1(v⁻)."""
        return self.plus.energy - self.minus.energy

    def bulk_sup(self, fraction: float = 0.5) -> float:
        mask = self.v_plus.grid.central_mask(fraction)
        return float(
            max(np.max(np.abs(self.v_plus.values[mask])),
                np.max(np.abs(self.v_minus.values[mask])))
        )

    def to_dict(self):
        return {
            "K": self.K,
            "plus": self.plus.to_dict(),
            "minus": self.minus.to_dict(),
            "ordering_violation": self.ordering_violation,
            "k_gap": self.k_gap,
            "k_gap_central": self.k_gap_central,
            "bulk_sup": self.bulk_sup(),
            "bound_violation": self.bound_violation,
        }


def _envelope(results: List[MinimizeResult], cfg: SolverConfig, problem: EnergyProblem,
              exterior, upper: bool) -> MinimizeResult:
    tied = _tied(results, cfg.tie_tol)
    if len(tied) == 1:
        return tied[0]
    stack = np.stack([r.field.values for r in tied])
    values = np.max(stack, axis=0) if upper else np.min(stack, axis=0)
    polish = replace(cfg, init=InitPolicy.GIVEN, multistart=1)
    result = minimize(polish, problem, exterior, start=ScalarField(problem.grid, values,
                                                                    exterior))
    return replace(result, init="envelope")


def _pair_at(K: float, problem: EnergyProblem, cfg: SolverConfig):
    upper = ConstantExterior(float(K))
    lower = ConstantExterior(-float(K))
    plus = _envelope(
        minimize_all(replace(cfg, init=InitPolicy.PLUS), problem, upper, level=K),
        cfg, problem, upper, upper=True,
    )
    minus = _envelope(
        minimize_all(replace(cfg, init=InitPolicy.MINUS), problem, lower, level=K),
        cfg, problem, lower, upper=False,
    )
    return plus, minus


def extremal_pair(K: Optional[float], g: Optional[Disorder], theta: float, grid: Grid,
                  cfg: SolverConfig, s: float = 0.5, potential=None,
                  problem: Optional[EnergyProblem] = None, k_gap: bool = False,
                  method: str = "auto", cache_dir=None) -> ExtremalStates:
    """
    Approximate maximal and minimal minimizers on ``grid``.

    v⁺ descends from CONSTANT(+K) with exterior +K, v⁻ from CONSTANT(-K) with exterior
    -K. With ``multistart > 1`` equal-energy stationary points are merged into their
    pointwise max (v⁺) or min (v⁻) and re-polished.

    Args:
        K: Barrier level, at least 1 + C_0 θ A; None selects exactly that value.
        k_gap: Also solve at 2K and report ‖v^{±,K} - v^{±,2K}‖_∞.
    """
    if problem is None:
        problem = build_problem(
            grid, s, theta, potential or build_potential(), g, method, cache_dir
        )
    elif problem.grid != grid or problem.theta != theta:
        raise ValueError("Problem does not match the requested grid / theta")
    floor = barrier_level(problem)
    if K is None:
        K = floor
    if K < floor - 1e-12:
        raise ValueError(f"Barrier K={K} below 1 + C0*theta*A = {floor}")
    plus, minus = _pair_at(K, problem, cfg)
    violation = max(0.0, float(np.max(minus.field.values - plus.field.values)))
    if violation > ORDERING_TOL:
        print(f"⚠️ Ordering violation {violation:.3e} between v- and v+ (K={K})")
    ceiling = sup_bound(problem, K, ConstantExterior(K))
    over = max(0.0, max(plus.field.sup_norm, minus.field.sup_norm) - ceiling)
    if over > BOUND_TOL:
        print(f"⚠️ Extremal state exceeds the L∞ ceiling {ceiling:.6g} by {over:.3e}")
    gap = gap_central = None
    if k_gap:
        plus2, minus2 = _pair_at(2.0 * K, problem, cfg)
        diff = np.maximum(
            np.abs(plus.field.values - plus2.field.values),
            np.abs(minus.field.values - minus2.field.values),
        )
        gap = float(np.max(diff))
        gap_central = float(np.max(diff[grid.central_mask()]))
    return ExtremalStates(float(K), plus, minus, violation, gap, gap_central, over)


# -------------------------------------------------------------------
# Lattice operations and the glue construction
# -------------------------------------------------------------------


def _as_window(exterior, window: Grid) -> WindowExterior:
    if isinstance(exterior, WindowExterior):
        return exterior
    return WindowExterior(window, np.full(window.size, exterior.value), exterior.value)


def _combine_exteriors(a, b, op):
    if isinstance(a, ConstantExterior) and isinstance(b, ConstantExterior):
        return ConstantExterior(float(op(a.value, b.value)))
    window = a.window if isinstance(a, WindowExterior) else b.window
    a, b = _as_window(a, window), _as_window(b, window)
    if a.window != b.window:
        raise ValueError("Cannot combine window exteriors on different windows")
    return WindowExterior(window, op(a.values, b.values), float(op(a.tail, b.tail)))


def lattice_min_max(u: ScalarField, v: ScalarField):
    """(u ∨ v, u ∧ v) pointwise, exteriors combined the same way."""
    if u.grid != v.grid:
        raise ValueError(f"Grids differ: {u.grid} vs {v.grid}")
    upper = ScalarField(
        u.grid, np.maximum(u.values, v.values),
        _combine_exteriors(u.exterior, v.exterior, np.maximum),
    )
    lower = ScalarField(
        u.grid, np.minimum(u.values, v.values),
        _combine_exteriors(u.exterior, v.exterior, np.minimum),
    )
    return upper, lower


def cutoff_profile(grid: Grid, width: float = 1.0) -> np.ndarray:
    """Ψ = 3t^2 - 2t^3 with t = min(dist(x, Λ^c) / width, 1)."""
    t = np.clip(grid.distance_to_boundary() / width, 0.0, 1.0)
    return t * t * (3.0 - 2.0 * t)


def glue_cutoff(v_plus: ScalarField, v_minus: ScalarField, grid: Grid) -> ScalarField:
    """ũ = Ψ v⁺ + (1 - Ψ) v⁻ inside Λ, equal to the exterior of v⁻ outside."""
    if v_plus.grid != grid or v_minus.grid != grid:
        raise ValueError("Glue needs both fields on the given grid")
    psi = cutoff_profile(grid)
    values = psi * v_plus.values + (1.0 - psi) * v_minus.values
    return ScalarField(grid, values, v_minus.exterior)


@dataclass(frozen=True)
class GlueReport:
    r1: float
    r2: float
    r3: float
    glued_energy: float
    plus_energy: float
    minus_energy: float
    identity_error: float
    chain_slack: float
    boundary_scale: float

    @property
    def chain_holds(self) -> bool:
        return self.chain_slack >= 0.0

    def to_dict(self):
        return {
            "r1": self.r1,
            "r2": self.r2,
            "r3": self.r3,
            "glued_energy": self.glued_energy,
            "plus_energy": self.plus_energy,
            "minus_energy": self.minus_energy,
            "identity_error": self.identity_error,
            "chain_slack": self.chain_slack,
            "boundary_scale": self.boundary_scale,
            "chain_holds": self.chain_holds,
        }


def glue_report(v_plus: ScalarField, v_minus: ScalarField, problem: EnergyProblem,
                tol: float = 1e-6) -> GlueReport:
    """
    Split G_1^{v⁻}(ũ) = G_1^{v⁺}(v⁺) + R_1 + R_2 + R_3 with ∂Λ the layer of points
    within distance 1 of Λ^c:

        R_1 = K_1(ũ, ∂Λ) - K_1(v⁺, ∂Λ)
        R_2 = 𝒲((v⁺, Λ∖∂Λ), (ũ, ∂Λ)) - 𝒲((v⁺, Λ∖∂Λ), (v⁺, ∂Λ))
        R_3 = 𝒲((ũ, Λ), (v⁻, Λ^c)) - 𝒲((v⁺, Λ), (v⁺, Λ^c))

    ``chain_slack`` is G_1^{v⁻}(ũ) + tol - G_1^{v⁻}(v⁻), nonnegative when v⁻ is (up to
    ``tol``) minimal for its exterior.
    """
    grid = problem.grid
    glued = glue_cutoff(v_plus, v_minus, grid)
    layer = grid.distance_to_boundary() <= 1.0
    bulk = ~layer
    r1 = (
        region_energy(glued, layer, problem).k1
        - region_energy(v_plus, layer, problem).k1
    )
    r2 = (
        cross_interaction(v_plus, bulk, glued, layer, problem.kernel)
        - cross_interaction(v_plus, bulk, v_plus, layer, problem.kernel)
    )
    r3 = (
        problem.terms(v_minus.exterior).energy(glued.values)
        - problem.terms(v_plus.exterior).energy(v_plus.values)
    )
    glued_energy = total_energy(glued, problem).total
    plus_energy = total_energy(v_plus, problem).total
    minus_energy = total_energy(v_minus, problem).total
    identity = abs(glued_energy - (plus_energy + r1 + r2 + r3))
    scale = max(1.0, abs(glued_energy))
    return GlueReport(
        r1, r2, r3, glued_energy, plus_energy, minus_energy, identity / scale,
        glued_energy + tol - minus_energy, grid.volume ** ((grid.d - 1) / grid.d),
    )


def holder_quotient(v: ScalarField, alpha: float, mask=None, chunk: int = 512) -> float:
    """max_{i≠j} |v_i - v_j| / |x_i - x_j|^α over the (masked) grid points."""
    if not 0.0 < alpha <= 1.0:
        raise ValueError(f"Hölder exponent {alpha} must lie in (0, 1]")
    points = v.grid.points
    values = v.values
    if mask is not None:
        points, values = points[mask], values[mask]
    best = 0.0
    for start in range(0, values.size, chunk):
        block = slice(start, start + chunk)
        dist = np.sqrt(
            np.sum((points[block, None, :] - points[None, :, :]) ** 2, axis=2)
        )
        diff = np.abs(values[block, None] - values[None, :])
        off = dist > 0
        if np.any(off):
            best = max(best, float(np.max(diff[off] / dist[off] ** alpha)))
    return best if math.isfinite(best) else float("inf")

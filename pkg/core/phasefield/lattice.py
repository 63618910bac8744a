"""
Lattice Module
==============

Grids on the cube-like boxes Λ_n = (-n/2, n/2)^d, the integer-lattice random field
g(z, ω) with its piecewise-constant lift g_1, lattice translations, sign flips and the
field/exterior containers the energy works on.

Conventions:
    - A grid with side ``n`` and refinement ``m`` has ``n*m`` collocation points per axis,
      spacing ``h = 1/m``, at coordinates ``(k + 1/2 - n*m/2) / m``, ``k = 0..n*m-1``.
      Points are stored flattened in C order (last axis fastest).
    - Disorder cells are ``z + [-1/2, 1/2)^d``; the half-open convention is the tie-break
      for points sitting on a cell face. A point ``x`` belongs to site ``floor(x + 1/2)``.
    - Site values are a pure function of ``(seed, site)``: they are drawn in fixed tiles
      of ``TILE_SIZE**d`` sites, each tile seeded from ``derive_seed(seed, "tile", *t)``.

Example:
```python
from core.phasefield.lattice import make_grid, sample_disorder, site_box, lift_points

grid = make_grid(1, 8, 2)
g = sample_disorder(site_box(grid), seed=7)
g1 = lift_points(g, grid.points)
```
"""

import json
import math
from dataclasses import dataclass, field, replace
from functools import cached_property
from pathlib import Path
from typing import Optional, Tuple, Union

import numpy as np

from core.utils import derive_seed

SQRT3 = math.sqrt(3.0)
SQRT6 = math.sqrt(6.0)

TILE_SIZE = 64

# name -> bound A of the variance-one member of the family
KNOWN_DISTRIBUTIONS = {
    "uniform": SQRT3,
    "triangular": SQRT6,
}


# -------------------------------------------------------------------
# Grid
# -------------------------------------------------------------------


@dataclass(frozen=True)
class Grid:
    d: int
    n: int
    m: int = 1

    @property
    def h(self) -> float:
        return 1.0 / self.m

    @property
    def side(self) -> int:
        """Collocation points per axis."""
        return self.n * self.m

    @property
    def shape(self) -> Tuple[int, ...]:
        return (self.side,) * self.d

    @property
    def size(self) -> int:
        return self.side**self.d

    @property
    def cell_volume(self) -> float:
        return self.h**self.d

    @property
    def volume(self) -> float:
        return float(self.n**self.d)

    @property
    def diameter(self) -> float:
        return self.n * math.sqrt(self.d)

    @property
    def half_width(self) -> float:
        return self.n / 2.0

    @cached_property
    def axis(self) -> np.ndarray:
        k = np.arange(self.side, dtype=np.float64)
        return (k + 0.5 - self.side / 2) / self.m

    @cached_property
    def index(self) -> np.ndarray:
        """Integer per-axis index of every point, shape (N, d)."""
        grids = np.meshgrid(*([np.arange(self.side)] * self.d), indexing="ij")
        return np.stack([g.ravel() for g in grids], axis=1).astype(np.int64)

    @cached_property
    def points(self) -> np.ndarray:
        """Coordinates of every point, shape (N, d)."""
        return self.axis[self.index]

    @cached_property
    def sites(self) -> np.ndarray:
        """Disorder site of every point, shape (N, d), computed in exact integers."""
        twice = 2 * self.index + 1 - self.side + self.m
        return np.floor_divide(twice, 2 * self.m)

    def distance_to_boundary(self) -> np.ndarray:
        """dist(x, Λ^c) for every point."""
        return np.min(self.half_width - np.abs(self.points), axis=1)

    def box_mask(self, half_width: float) -> np.ndarray:
        """Points inside the centered cube (-half_width, half_width)^d."""
        return np.all(np.abs(self.points) < half_width, axis=1)

    def central_mask(self, fraction: float = 0.5) -> np.ndarray:
        """Points of the central window Λ_{fraction * n}."""
        return self.box_mask(fraction * self.half_width)

    def cell_mask(self, site) -> np.ndarray:
        """Points whose disorder cell is ``site``."""
        site = np.asarray(site, dtype=np.int64).reshape(1, self.d)
        return np.all(self.sites == site, axis=1)

    def to_dict(self):
        return {"d": self.d, "n": self.n, "m": self.m}


def make_grid(d: int, n: int, m: int = 1) -> Grid:
    """
    Build the collocation grid of Λ_n = (-n/2, n/2)^d.

    Args:
        d (int): Dimension, 1 or 2.
        n (int): Side length in units of the disorder correlation length; must be even
            so that Λ_n is centered on the lattice.
        m (int): Collocation points per unit cell per axis.

    Returns:
        Grid: Grid with ``(n*m)**d`` points.
    """
    if d not in (1, 2):
        raise ValueError(f"Dimension d={d} not supported, expected 1 or 2")
    if int(n) != n or n < 2 or n % 2 != 0:
        raise ValueError(f"Side n={n} must be an even integer >= 2")
    if int(m) != m or m < 1:
        raise ValueError(f"Refinement m={m} must be an integer >= 1")
    return Grid(int(d), int(n), int(m))


def embed_grid(grid: Grid, pad: int) -> Grid:
    """Grid of Λ_{n+2*pad} with the same refinement; ``grid`` sits in its center."""
    if int(pad) != pad or pad < 0:
        raise ValueError(f"Padding {pad} must be a non-negative integer")
    return make_grid(grid.d, grid.n + 2 * int(pad), grid.m)


def inner_mask(outer: Grid, inner: Grid) -> np.ndarray:
    """
    Mask of the points of ``outer`` that are points of the centered ``inner`` grid.
    Selected points come out in the C order of ``inner``.
    """
    if outer.d != inner.d or outer.m != inner.m or outer.n < inner.n:
        raise ValueError("Inner grid must be a centered sub-grid of the outer grid")
    if (outer.n - inner.n) % 2:
        raise ValueError("Inner grid must be centered in the outer grid")
    offset = (outer.n - inner.n) // 2 * outer.m
    idx = outer.index
    return np.all((idx >= offset) & (idx < offset + inner.side), axis=1)


# -------------------------------------------------------------------
# Disorder
# -------------------------------------------------------------------


@dataclass(frozen=True)
class DisorderDistribution:
    """Descriptor of the single-site law: symmetric, mean 0, variance 1, |g| <= bound."""

    name: str = "uniform"
    bound: float = SQRT3
    mean: float = 0.0
    variance: float = 1.0
    symmetric: bool = True

    def validate(self):
        if self.name not in KNOWN_DISTRIBUTIONS:
            raise ValueError(
                f"Unknown distribution {self.name!r}, "
                f"expected one of {sorted(KNOWN_DISTRIBUTIONS)}"
            )
        expected = KNOWN_DISTRIBUTIONS[self.name]
        if not self.symmetric or self.mean != 0.0:
            raise ValueError(f"Distribution {self.name!r} must be symmetric with mean 0")
        if abs(self.variance - 1.0) > 1e-12 or abs(self.bound - expected) > 1e-12:
            raise ValueError(
                f"Unnormalized distribution {self.name!r}: variance={self.variance}, "
                f"bound={self.bound}; the variance-one member has bound {expected!r}"
            )
        return self

    def sample(self, rng: np.random.Generator, size) -> np.ndarray:
        if self.name == "uniform":
            return rng.uniform(-self.bound, self.bound, size)
        return rng.triangular(-self.bound, 0.0, self.bound, size)

    def to_dict(self):
        return {
            "name": self.name,
            "bound": self.bound,
            "mean": self.mean,
            "variance": self.variance,
            "symmetric": self.symmetric,
        }


def get_distribution(name: str = "uniform") -> DisorderDistribution:
    if name not in KNOWN_DISTRIBUTIONS:
        raise ValueError(f"Unknown distribution {name!r}")
    return DisorderDistribution(name=name, bound=KNOWN_DISTRIBUTIONS[name]).validate()


@dataclass(frozen=True, eq=False)
class Disorder:
    """
    Values g(z, ω) on the inclusive site box ``lo <= z <= hi``.

    ``label`` records the transformations applied after sampling (translation, sign
    flip, resampling, site perturbation); a pristine realization has an empty label.
    """

    seed: int
    lo: Tuple[int, ...]
    hi: Tuple[int, ...]
    values: np.ndarray
    dist: DisorderDistribution = field(default_factory=DisorderDistribution)
    label: str = ""

    def __post_init__(self):
        values = np.array(self.values, dtype=np.float64)
        shape = tuple(b - a + 1 for a, b in zip(self.lo, self.hi))
        if values.shape != shape:
            raise ValueError(f"Disorder values shape {values.shape} != box shape {shape}")
        values.flags.writeable = False
        object.__setattr__(self, "values", values)

    @property
    def d(self) -> int:
        return len(self.lo)

    @property
    def bound(self) -> float:
        """The almost-sure bound A of the distribution."""
        return self.dist.bound

    @property
    def sup_norm(self) -> float:
        return float(np.max(np.abs(self.values))) if self.values.size else 0.0

    def covers(self, lo, hi) -> bool:
        return all(a >= l and b <= h for a, b, l, h in zip(lo, hi, self.lo, self.hi))

    def at(self, sites: np.ndarray) -> np.ndarray:
        """Values at an (K, d) array of sites; sites outside the box raise."""
        sites = np.asarray(sites, dtype=np.int64).reshape(-1, self.d)
        lo = np.asarray(self.lo)
        hi = np.asarray(self.hi)
        if np.any(sites < lo) or np.any(sites > hi):
            raise ValueError(
                f"Site outside disorder support box lo={self.lo}, hi={self.hi}"
            )
        local = sites - lo
        return self.values[tuple(local.T)]

    def value(self, site) -> float:
        return float(self.at(np.atleast_1d(site))[0])

    def to_dict(self):
        return {
            "header": {
                "d": self.d,
                "box": {"lo": list(self.lo), "hi": list(self.hi)},
                "seed": int(self.seed),
                "dist": self.dist.to_dict(),
                "label": self.label,
            },
            "values": self.values.ravel().tolist(),
        }

    @classmethod
    def from_dict(cls, payload):
        header = payload["header"]
        lo = tuple(int(v) for v in header["box"]["lo"])
        hi = tuple(int(v) for v in header["box"]["hi"])
        shape = tuple(b - a + 1 for a, b in zip(lo, hi))
        values = np.asarray(payload["values"], dtype=np.float64).reshape(shape)
        dist = DisorderDistribution(**header["dist"])
        return cls(int(header["seed"]), lo, hi, values, dist, header.get("label", ""))


def _as_box(box) -> Tuple[Tuple[int, ...], Tuple[int, ...]]:
    lo, hi = box
    lo = tuple(int(v) for v in np.atleast_1d(lo))
    hi = tuple(int(v) for v in np.atleast_1d(hi))
    if len(lo) != len(hi) or len(lo) not in (1, 2):
        raise ValueError(f"Site box {box} must have matching 1-d or 2-d corners")
    if any(b < a for a, b in zip(lo, hi)):
        raise ValueError(f"Empty site box {box}")
    return lo, hi


def site_box(grid: Grid, pad: int = 0):
    """Inclusive site box of every cell meeting Λ_{n + 2*pad}."""
    half = grid.n // 2 + int(pad)
    return (-half,) * grid.d, (half,) * grid.d


def occupied_site_box(grid: Grid):
    """
    Inclusive box of the sites hit by the collocation points of ``grid``.

    At m = 1 the site -n/2 is not hit: its cell only reaches Λ_n on a sliver that holds
    no point, so it is one site narrower than ``site_box`` on the low side.
    """
    sites = grid.sites
    return tuple(int(v) for v in sites.min(axis=0)), tuple(int(v) for v in sites.max(axis=0))


def _tile_values(seed: int, tile: Tuple[int, ...], d: int, dist) -> np.ndarray:
    rng = np.random.default_rng(derive_seed(seed, "tile", *tile))
    return dist.sample(rng, (TILE_SIZE,) * d)


def _site_values(seed: int, lo, hi, dist) -> np.ndarray:
    d = len(lo)
    shape = tuple(b - a + 1 for a, b in zip(lo, hi))
    out = np.empty(shape, dtype=np.float64)
    tile_lo = [a // TILE_SIZE for a in lo]
    tile_hi = [b // TILE_SIZE for b in hi]
    ranges = [range(a, b + 1) for a, b in zip(tile_lo, tile_hi)]
    for tile in np.ndindex(*[len(r) for r in ranges]):
        t = tuple(r[i] for r, i in zip(ranges, tile))
        values = _tile_values(seed, t, d, dist)
        dst, src = [], []
        for axis in range(d):
            start = max(lo[axis], t[axis] * TILE_SIZE)
            stop = min(hi[axis], t[axis] * TILE_SIZE + TILE_SIZE - 1) + 1
            dst.append(slice(start - lo[axis], stop - lo[axis]))
            src.append(slice(start - t[axis] * TILE_SIZE, stop - t[axis] * TILE_SIZE))
        out[tuple(dst)] = values[tuple(src)]
    return out


def sample_disorder(box, dist: Optional[DisorderDistribution] = None, seed: int = 0):
    """
    Sample i.i.d. site values on an inclusive site box.

    Args:
        box: ``(lo, hi)`` corners, ints for d=1 or tuples.
        dist (DisorderDistribution): Single-site law, uniform on [-√3, √3] by default.
        seed (int): Base seed; values are a pure function of (seed, site).

    Returns:
        Disorder
    """
    dist = (dist or DisorderDistribution()).validate()
    lo, hi = _as_box(box)
    return Disorder(int(seed), lo, hi, _site_values(int(seed), lo, hi, dist), dist)


def lift_g1(disorder: Disorder, x) -> float:
    """g_1(x, ω) = g(z, ω) for the unique z with x in z + [-1/2, 1/2)^d."""
    x = np.atleast_1d(np.asarray(x, dtype=np.float64))
    if x.shape != (disorder.d,):
        raise ValueError(f"Point {x} has wrong dimension for d={disorder.d} disorder")
    return float(lift_points(disorder, x.reshape(1, -1))[0])


def lift_points(disorder: Disorder, points: np.ndarray) -> np.ndarray:
    """Vectorized g_1 on an (N, d) array of points."""
    points = np.asarray(points, dtype=np.float64)
    sites = np.floor(points + 0.5).astype(np.int64)
    return disorder.at(sites)


def grid_disorder(disorder: Disorder, grid: Grid) -> np.ndarray:
    """g_1 at every grid point, using the grid's exact integer site map."""
    return disorder.at(grid.sites)


def translate_disorder(disorder: Disorder, y) -> Disorder:
    """(T_y ω)(z) = ω(z + y): same values, support shifted by -y."""
    y = tuple(int(v) for v in np.atleast_1d(y))
    if len(y) != disorder.d:
        raise ValueError(f"Shift {y} has wrong dimension for d={disorder.d}")
    if not any(y):
        return disorder
    lo = tuple(a - b for a, b in zip(disorder.lo, y))
    hi = tuple(a - b for a, b in zip(disorder.hi, y))
    label = f"{disorder.label}|shift{list(y)}".lstrip("|")
    return replace(disorder, lo=lo, hi=hi, label=label)


def negate_disorder(disorder: Disorder) -> Disorder:
    label = f"{disorder.label}|neg".lstrip("|")
    return replace(disorder, values=-disorder.values, label=label)


def resample_outside(disorder: Disorder, keep, seed: int) -> Disorder:
    """
    Keep the values on the site box ``keep`` and redraw every other site of the support
    from the per-site stream of ``seed``.
    """
    keep_lo, keep_hi = _as_box(keep)
    if not disorder.covers(keep_lo, keep_hi):
        raise ValueError(f"Keep box {keep} is not inside the disorder support")
    values = _site_values(int(seed), disorder.lo, disorder.hi, disorder.dist)
    inner = tuple(
        slice(a - l, b - l + 1) for a, b, l in zip(keep_lo, keep_hi, disorder.lo)
    )
    values[inner] = disorder.values[inner]
    label = f"{disorder.label}|resample{int(seed)}".lstrip("|")
    return replace(disorder, values=values, label=label)


def perturb_site(disorder: Disorder, site, delta: float) -> Disorder:
    """ω(site) -> ω(site) + delta, everything else unchanged."""
    site = tuple(int(v) for v in np.atleast_1d(site))
    if not disorder.covers(site, site):
        raise ValueError(f"Site {site} outside the disorder support")
    values = disorder.values.copy()
    values[tuple(a - l for a, l in zip(site, disorder.lo))] += delta
    label = f"{disorder.label}|site{list(site)}{delta:+.3g}".lstrip("|")
    return replace(disorder, values=values, label=label)


def save_disorder(disorder: Disorder, path: Union[str, Path]):
    """
    Write a snapshot: ``.json`` (header + values) or ``.bin`` (one JSON header line,
    then little-endian float64 values in C order).
    """
    path = Path(path)
    payload = disorder.to_dict()
    if path.suffix == ".json":
        with open(path, "w", encoding="utf-8", newline="\n") as f:
            json.dump(payload, f)
        return path
    with open(path, "wb") as f:
        f.write(json.dumps(payload["header"]).encode("utf-8") + b"\n")
        f.write(disorder.values.astype("<f8").tobytes(order="C"))
    return path


def load_disorder(path: Union[str, Path]) -> Disorder:
    path = Path(path)
    if path.suffix == ".json":
        with open(path, "r", encoding="utf-8") as f:
            return Disorder.from_dict(json.load(f))
    with open(path, "rb") as f:
        header = json.loads(f.readline().decode("utf-8"))
        values = np.frombuffer(f.read(), dtype="<f8").astype(np.float64)
    return Disorder.from_dict({"header": header, "values": values})


# -------------------------------------------------------------------
# Fields and exterior descriptors
# -------------------------------------------------------------------


@dataclass(frozen=True)
class ConstantExterior:
    """v = value on all of Λ^c."""

    value: float

    kind = "constant"

    @property
    def sup_norm(self) -> float:
        return abs(self.value)

    @property
    def key(self):
        return ("constant", float(self.value))

    def clamp(self, t: float) -> "ConstantExterior":
        return ConstantExterior(float(np.clip(self.value, -t, t)))

    def negate(self) -> "ConstantExterior":
        return ConstantExterior(-self.value)

    def to_dict(self):
        return {"kind": self.kind, "value": self.value}


@dataclass(frozen=True, eq=False)
class WindowExterior:
    """
    v given on the points of a larger centered ``window`` grid and equal to ``tail``
    beyond it. Entries of ``values`` at points of Λ itself are ignored.
    """

    window: Grid
    values: np.ndarray
    tail: float = 0.0

    kind = "window"

    def __post_init__(self):
        values = np.array(self.values, dtype=np.float64).ravel()
        if values.shape != (self.window.size,):
            raise ValueError(
                f"Window values have {values.size} entries, window has {self.window.size}"
            )
        if not np.all(np.isfinite(values)) or not math.isfinite(self.tail):
            raise ValueError("Window exterior values must be finite")
        values.flags.writeable = False
        object.__setattr__(self, "values", values)

    @property
    def sup_norm(self) -> float:
        return max(float(np.max(np.abs(self.values))), abs(self.tail))

    @cached_property
    def key(self):
        return ("window", self.window, float(self.tail), self.values.tobytes())

    def clamp(self, t: float) -> "WindowExterior":
        return WindowExterior(
            self.window, np.clip(self.values, -t, t), float(np.clip(self.tail, -t, t))
        )

    def negate(self) -> "WindowExterior":
        return WindowExterior(self.window, -self.values, -self.tail)

    def to_dict(self):
        return {
            "kind": self.kind,
            "window": self.window.to_dict(),
            "tail": self.tail,
            "values": self.values.tolist(),
        }


Exterior = Union[ConstantExterior, WindowExterior]


@dataclass(frozen=True, eq=False)
class ScalarField:
    """Interior values on the points of ``grid`` plus the exterior descriptor."""

    grid: Grid
    values: np.ndarray
    exterior: Exterior

    def __post_init__(self):
        values = np.array(self.values, dtype=np.float64).ravel()
        if values.shape != (self.grid.size,):
            raise ValueError(
                f"Field has {values.size} values, grid has {self.grid.size} points"
            )
        if not np.all(np.isfinite(values)):
            raise ValueError("Field values must be finite")
        if isinstance(self.exterior, WindowExterior):
            w = self.exterior.window
            if w.d != self.grid.d or w.m != self.grid.m or w.n < self.grid.n:
                raise ValueError("Window exterior grid must contain the field grid")
            if (w.n - self.grid.n) % 2:
                raise ValueError("Window exterior grid must be centered on the field grid")
        values.flags.writeable = False
        object.__setattr__(self, "values", values)

    @property
    def sup_norm(self) -> float:
        return float(np.max(np.abs(self.values)))

    @property
    def exterior_sup_norm(self) -> float:
        return self.exterior.sup_norm

    def as_array(self) -> np.ndarray:
        return self.values.reshape(self.grid.shape)

    def with_values(self, values) -> "ScalarField":
        return ScalarField(self.grid, values, self.exterior)

    def negate(self) -> "ScalarField":
        return ScalarField(self.grid, -self.values, self.exterior.negate())

    def cell_integral(self, site) -> float:
        """∫_{Q(site) ∩ Λ} v, the collocation sum over the points of one disorder cell."""
        mask = self.grid.cell_mask(site)
        return float(np.sum(self.values[mask]) * self.grid.cell_volume)

    def volume_average(self) -> float:
        """|Λ|^{-1} ∫_Λ v."""
        return float(np.sum(self.values) * self.grid.cell_volume / self.grid.volume)

    def rows(self):
        """(coordinates..., value) rows for CSV dumps."""
        for point, value in zip(self.grid.points, self.values):
            yield (*point.tolist(), float(value))


def constant_field(grid: Grid, value: float, exterior: Optional[Exterior] = None):
    exterior = exterior if exterior is not None else ConstantExterior(float(value))
    return ScalarField(grid, np.full(grid.size, float(value)), exterior)


def window_exterior(grid: Grid, pad: int, values, tail: float = 0.0) -> WindowExterior:
    """
    Window exterior on Λ_{n+2*pad}. ``values`` is an array over the window points or a
    callable mapping the (N_w, d) window coordinates to values.
    """
    window = embed_grid(grid, pad)
    if callable(values):
        values = values(window.points)
    return WindowExterior(window, np.asarray(values, dtype=np.float64), float(tail))

"""
Sweep records and the statistics run on them: power-law fits with t-based confidence
intervals, sample summaries, binned conditional variances and normality checks.
"""

import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence

import numpy as np
from scipy import stats

from core.utils import derive_seed, write_csv

FITS_HEADER = ["quantity", "statistic", "value", "stderr", "ci_low", "ci_high", "r2", "count"]


# -------------------------------------------------------------------
# Summaries
# -------------------------------------------------------------------


@dataclass(frozen=True)
class Summary:
    count: int
    mean: float
    variance: float
    se: float

    def to_dict(self):
        return {"count": self.count, "mean": self.mean, "variance": self.variance,
                "se": self.se}


def summarize(values: Sequence[float]) -> Summary:
    """Mean, unbiased variance and standard error of the mean; NaNs are dropped."""
    x = np.asarray(values, dtype=np.float64)
    x = x[np.isfinite(x)]
    if x.size == 0:
        return Summary(0, math.nan, math.nan, math.nan)
    if x.size == 1:
        return Summary(1, float(x[0]), math.nan, math.nan)
    var = float(np.var(x, ddof=1))
    return Summary(int(x.size), float(np.mean(x)), var, math.sqrt(var / x.size))


# -------------------------------------------------------------------
# Fits
# -------------------------------------------------------------------


@dataclass(frozen=True)
class PowerLawFit:
    """log y = intercept + slope * log x."""

    slope: float
    intercept: float
    stderr: float
    ci_low: float
    ci_high: float
    r2: float
    count: int
    rss: float

    def contains(self, value: float) -> bool:
        return self.ci_low <= value <= self.ci_high

    def to_dict(self):
        return {
            "slope": self.slope,
            "intercept": self.intercept,
            "stderr": self.stderr,
            "ci_low": self.ci_low,
            "ci_high": self.ci_high,
            "r2": self.r2,
            "count": self.count,
            "rss": self.rss,
        }


def _check_points(x, y):
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape:
        raise ValueError("Fit abscissae and ordinates differ in length")
    if x.size < 3:
        raise ValueError(f"A fit needs at least 3 points, got {x.size}")
    return x, y


def linear_fit(x, y, confidence: float = 0.95) -> PowerLawFit:
    """Least squares y = a + b x with a two-sided t interval on b."""
    x, y = _check_points(x, y)
    res = stats.linregress(x, y)
    dof = x.size - 2
    half = float(stats.t.ppf(0.5 + confidence / 2.0, dof)) * res.stderr
    resid = y - (res.intercept + res.slope * x)
    return PowerLawFit(
        float(res.slope), float(res.intercept), float(res.stderr),
        float(res.slope - half), float(res.slope + half), float(res.rvalue**2),
        int(x.size), float(np.sum(resid * resid)),
    )


def fit_power_law(x, y, confidence: float = 0.95) -> PowerLawFit:
    """
    Fit y ≈ C x^slope by regressing log y on log x.

    Raises:
        ValueError: fewer than 3 points or non-positive data.
    """
    x, y = _check_points(x, y)
    if np.any(x <= 0) or np.any(y <= 0):
        raise ValueError("Power-law fit needs positive data")
    return linear_fit(np.log(x), np.log(y), confidence)


@dataclass(frozen=True)
class LogCorrectedFit:
    """log y = c0 + slope * log x + gamma * log log x, compared with the plain fit."""

    slope: float
    gamma: float
    rss: float
    plain: PowerLawFit

    @property
    def improvement(self) -> float:
        """Relative residual reduction from adding the log log x regressor."""
        if self.plain.rss == 0:
            return 0.0
        return 1.0 - self.rss / self.plain.rss

    def to_dict(self):
        return {
            "slope": self.slope,
            "gamma": self.gamma,
            "rss": self.rss,
            "plain_rss": self.plain.rss,
            "improvement": self.improvement,
        }


def fit_log_corrected(x, y) -> LogCorrectedFit:
    x, y = _check_points(x, y)
    if np.any(x <= 1) or np.any(y <= 0):
        raise ValueError("Log-corrected fit needs x > 1 and y > 0")
    if x.size < 4:
        raise ValueError(f"Log-corrected fit needs at least 4 points, got {x.size}")
    lx = np.log(x)
    design = np.column_stack([np.ones_like(lx), lx, np.log(lx)])
    coef, _, _, _ = np.linalg.lstsq(design, np.log(y), rcond=None)
    resid = np.log(y) - design @ coef
    return LogCorrectedFit(
        float(coef[1]), float(coef[2]), float(np.sum(resid * resid)), fit_power_law(x, y)
    )


def exponent_for(d: int, s: float) -> float:
    """Boundary-energy growth exponent in |Λ|: (d-2s)/d below s=1/2, (d-1)/d above."""
    if s < 0.5:
        return (d - 2.0 * s) / d
    return (d - 1.0) / d


# -------------------------------------------------------------------
# Conditional variance by binning
# -------------------------------------------------------------------


@dataclass(frozen=True)
class BinnedVariance:
    """
    D̂² = Var over quantile bins of x of the bin means of y, with the noise term
    E[σ_b² / n_b] subtracted (``d2``) and kept (``d2_raw``).
    """

    bins: int
    d2_raw: float
    d2: float
    se: float
    bin_means: List[float]
    bin_counts: List[int]

    def to_dict(self):
        return {
            "bins": self.bins,
            "d2_raw": self.d2_raw,
            "d2": self.d2,
            "se": self.se,
            "bin_means": self.bin_means,
            "bin_counts": self.bin_counts,
        }


def _binned(x, y, bins):
    edges = np.quantile(x, np.linspace(0.0, 1.0, bins + 1))
    label = np.clip(np.searchsorted(edges, x, side="right") - 1, 0, bins - 1)
    means, counts, noise = [], [], []
    for b in range(bins):
        yb = y[label == b]
        if yb.size == 0:
            continue
        means.append(float(np.mean(yb)))
        counts.append(int(yb.size))
        if yb.size > 1:
            noise.append(float(np.var(yb, ddof=1)) / yb.size)
    means_arr = np.asarray(means)
    # equal-mass bins: population variance of the bin means
    raw = float(np.var(means_arr)) if means_arr.size > 1 else math.nan
    corrected = raw - (float(np.mean(noise)) if noise else 0.0)
    return raw, corrected, means, counts


def binned_variance(x, y, bins: int = 8, n_boot: int = 200, seed: int = 0) -> BinnedVariance:
    """
    Estimate Var(E[y | x]) by grouping the samples into ``bins`` quantile bins of x.
    The standard error is a pairs bootstrap over the samples.
    """
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape:
        raise ValueError("Binning needs paired samples")
    if bins < 2 or x.size < 2 * bins:
        raise ValueError(f"{x.size} samples are too few for {bins} bins")
    raw, corrected, means, counts = _binned(x, y, bins)
    rng = np.random.default_rng(derive_seed(seed, "bootstrap", bins))
    boot = []
    for _ in range(n_boot):
        pick = rng.integers(0, x.size, x.size)
        boot.append(_binned(x[pick], y[pick], bins)[1])
    boot = np.asarray(boot)
    boot = boot[np.isfinite(boot)]
    se = float(np.std(boot, ddof=1)) if boot.size > 1 else math.nan
    return BinnedVariance(bins, raw, corrected, se, means, counts)


@dataclass(frozen=True)
class NormalityCheck:
    statistic: float
    critical_5: float
    count: int

    @property
    def rejected(self) -> bool:
        return self.statistic > self.critical_5

    def to_dict(self):
        return {"statistic": self.statistic, "critical_5": self.critical_5,
                "count": self.count, "rejected": self.rejected}


def anderson_darling(samples) -> NormalityCheck:
    """Anderson-Darling test of the standardized samples against the normal law."""
    x = np.asarray(samples, dtype=np.float64)
    x = x[np.isfinite(x)]
    if x.size < 8:
        raise ValueError(f"Normality check needs at least 8 samples, got {x.size}")
    std = float(np.std(x, ddof=1))
    z = (x - np.mean(x)) / std if std > 0 else x - np.mean(x)
    res = stats.anderson(z, dist="norm")
    level = list(res.significance_level).index(5.0)
    return NormalityCheck(float(res.statistic), float(res.critical_values[level]), int(x.size))


# -------------------------------------------------------------------
# Sweep record
# -------------------------------------------------------------------


@dataclass
class SweepRecord:
    """
    Per-realization scalars of one experiment plus everything derived from them.

    ``rows`` keeps one list per realization aligned with ``columns``; ``aggregates`` and
    ``fits`` are recomputed from the rows, never the other way round.
    """

    experiment: str
    params: Dict
    columns: List[str]
    rows: List[list] = field(default_factory=list)
    aggregates: Dict[str, Summary] = field(default_factory=dict)
    fits: Dict[str, object] = field(default_factory=dict)
    extras: Dict = field(default_factory=dict)
    failures: int = 0
    solves: int = 0

    def add_row(self, row):
        if len(row) != len(self.columns):
            raise ValueError(f"Row has {len(row)} entries, expected {len(self.columns)}")
        self.rows.append(list(row))

    def column(self, name: str, where: Optional[Dict] = None) -> np.ndarray:
        k = self.columns.index(name)
        picked = self.rows
        if where:
            keys = {self.columns.index(c): v for c, v in where.items()}
            picked = [r for r in self.rows if all(r[i] == v for i, v in keys.items())]
        return np.asarray([r[k] for r in picked], dtype=np.float64)

    def aggregate(self, name: str, where: Optional[Dict] = None, label: Optional[str] = None):
        summary = summarize(self.column(name, where))
        self.aggregates[label or name] = summary
        return summary

    @property
    def failure_rate(self) -> float:
        return self.failures / self.solves if self.solves else 0.0

    def fit_rows(self):
        for name, summary in self.aggregates.items():
            yield [name, "mean", summary.mean, summary.se, None, None, None, summary.count]
            yield [name, "variance", summary.variance, None, None, None, None, summary.count]
        for name, fit in self.fits.items():
            if isinstance(fit, PowerLawFit):
                yield [name, "slope", fit.slope, fit.stderr, fit.ci_low, fit.ci_high,
                       fit.r2, fit.count]
            elif isinstance(fit, LogCorrectedFit):
                yield [name, "log_slope", fit.slope, None, None, None, None,
                       fit.plain.count]
                yield [name, "log_improvement", fit.improvement, None, None, None, None,
                       fit.plain.count]
            elif isinstance(fit, BinnedVariance):
                yield [name, "d2", fit.d2, fit.se, None, None, None, sum(fit.bin_counts)]
                yield [name, "d2_raw", fit.d2_raw, None, None, None, None,
                       sum(fit.bin_counts)]
            elif isinstance(fit, NormalityCheck):
                yield [name, "anderson_darling", fit.statistic, None, None,
                       fit.critical_5, None, fit.count]
            else:
                yield [name, "value", float(fit), None, None, None, None, None]

    def to_dict(self):
        def view(fit):
            return fit.to_dict() if hasattr(fit, "to_dict") else fit

        return {
            "experiment": self.experiment,
            "params": self.params,
            "aggregates": {k: v.to_dict() for k, v in self.aggregates.items()},
            "fits": {k: view(v) for k, v in self.fits.items()},
            "extras": self.extras,
            "failures": self.failures,
            "solves": self.solves,
            "rows": len(self.rows),
        }

    def write(self, out_dir, stem: str):
        """Write ``<stem>.csv`` (per realization) and ``<stem>_fits.csv``."""
        out_dir = Path(out_dir)
        rows_path = out_dir / f"{stem}.csv"
        fits_path = out_dir / f"{stem}_fits.csv"
        write_csv(rows_path, self.columns, self.rows)
        write_csv(fits_path, FITS_HEADER, self.fit_rows())
        return rows_path, fits_path

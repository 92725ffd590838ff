"""Tail diagnostics: empirical CCDFs, log-log slopes, Hill estimates, knees.

All operations are pure functions over 1-d arrays of positive (linear-scale)
sample values or over already-built curves, so they can run concurrently
without any shared state.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import AnalysisError

DEFAULT_GRID = 200


@dataclass(frozen=True)
class CcdfCurve:
    """Empirical P[X > x] on an increasing grid."""

    grid: np.ndarray
    ccdf: np.ndarray
    n_samples: int
    log_domain: bool = False

    def __post_init__(self):
        if np.any(np.diff(self.grid) <= 0):
            raise AnalysisError("grid must increase strictly")
        if np.any(self.ccdf < 0) or np.any(self.ccdf > 1):
            raise AnalysisError("ccdf values must lie in [0, 1]")
        if np.any(np.diff(self.ccdf) > 0):
            raise AnalysisError("ccdf must be nonincreasing")


@dataclass(frozen=True)
class SlopeFit:
    slope: float
    intercept: float
    stderr: float
    x_lo: float
    x_hi: float
    r_squared: float
    n_points: int


@dataclass(frozen=True)
class PiecewiseFit:
    """Two-segment log-log fit with the knee chosen by total squared error."""

    knee: float
    slope_left: float
    slope_right: float
    total_sq_error: float
    stderr_left: float
    stderr_right: float
    degenerate: bool


@dataclass(frozen=True)
class HillEstimate:
    alpha: float
    stderr: float
    k: int


@dataclass(frozen=True)
class LightTailProbe:
    is_lighter: bool
    slopes: tuple[float, ...]
    stderrs: tuple[float, ...]


def _as_sample_array(samples) -> np.ndarray:
    arr = np.asarray(getattr(samples, "samples", samples), dtype=float)
    if hasattr(samples, "samples"):  # a TailSampleSet stores logs
        arr = np.exp(arr)
    if arr.ndim != 1:
        raise AnalysisError("samples must be one-dimensional")
    return arr


def empirical_ccdf(samples, n_grid: int = DEFAULT_GRID) -> CcdfCurve:
    """Rank-counted CCDF on a log-spaced grid.

    The grid spans the 50th to the (1 - 10/n) * 100th percentile, so the last
    point keeps about ten exceedances above it.
    """
    xs = _as_sample_array(samples)
    n = xs.size
    if n < 100:
        raise AnalysisError(f"need at least 100 samples, got {n}")
    if np.any(xs <= 0):
        raise AnalysisError("samples must be positive")
    xs = np.sort(xs)
    lo = float(np.quantile(xs, 0.5))
    hi = float(np.quantile(xs, 1.0 - 10.0 / n))
    if not hi > lo:
        # degenerate upper tail (many ties); nudge to a one-point-ish grid
        hi = lo * (1.0 + 1e-9)
    grid = np.exp(np.linspace(math.log(lo), math.log(hi), n_grid))
    grid = np.unique(grid)
    ccdf = 1.0 - np.searchsorted(xs, grid, side="right") / n
    return CcdfCurve(grid=grid, ccdf=ccdf, n_samples=n)


def ccdf_at(samples, x: np.ndarray) -> np.ndarray:
    xs = np.sort(_as_sample_array(samples))
    return 1.0 - np.searchsorted(xs, np.asarray(x, dtype=float), side="right") / xs.size


def default_fit_window(samples) -> tuple[float, float]:
    """x range from the 90th percentile up to the value with ~50 exceedances."""
    xs = np.sort(_as_sample_array(samples))
    lo = float(np.quantile(xs, 0.9))
    hi = float(xs[max(0, xs.size - 50)])
    return lo, max(hi, lo * (1 + 1e-9))


def loglog_slope(curve: CcdfCurve, x_lo: float, x_hi: float) -> SlopeFit:
    """Ordinary least squares of log ccdf on log x over [x_lo, x_hi]."""
    mask = (curve.grid >= x_lo) & (curve.grid <= x_hi) & (curve.ccdf > 0)
    if int(mask.sum()) < 10:
        raise AnalysisError(f"only {int(mask.sum())} usable grid points in "
                            f"[{x_lo:g}, {x_hi:g}]; need at least 10")
    lx = np.log(curve.grid[mask])
    ly = np.log(curve.ccdf[mask])
    return _ols(lx, ly, x_lo, x_hi)


def _ols(lx: np.ndarray, ly: np.ndarray, x_lo: float, x_hi: float) -> SlopeFit:
    n = lx.size
    mx, my = lx.mean(), ly.mean()
    sxx = float(np.sum((lx - mx) ** 2))
    if sxx == 0:
        raise AnalysisError("degenerate x range in slope fit")
    slope = float(np.sum((lx - mx) * (ly - my)) / sxx)
    intercept = my - slope * mx
    resid = ly - (intercept + slope * lx)
    sse = float(np.sum(resid**2))
    dof = max(n - 2, 1)
    stderr = math.sqrt(sse / dof / sxx)
    syy = float(np.sum((ly - my) ** 2))
    r2 = 1.0 - sse / syy if syy > 0 else 1.0
    return SlopeFit(slope=slope, intercept=float(intercept), stderr=stderr,
                    x_lo=x_lo, x_hi=x_hi, r_squared=r2, n_points=n)


def hill_estimator(samples, k: int) -> HillEstimate:
    """Hill tail-index estimate from the top ``k`` order statistics.

    alpha_hat = k / sum_i log(X_(i) / X_(k+1)); its standard error is
    alpha_hat / sqrt(k).  Ratios are formed before taking logs, so rescaling
    every sample by a common factor cancels exactly.
    """
    xs = _as_sample_array(samples)
    n = xs.size
    if not 10 <= k < n:
        raise AnalysisError(f"k must satisfy 10 <= k < n (= {n})")
    top = np.partition(xs, n - k - 1)[n - k - 1:]
    top = np.sort(top)[::-1]  # top[0..k-1] exceed top[k]
    denom = float(np.sum(np.log(top[:k] / top[k])))
    if denom == 0.0:
        raise AnalysisError("tied order statistics make the Hill denominator zero")
    alpha = k / denom
    return HillEstimate(alpha=alpha, stderr=alpha / math.sqrt(k), k=k)


def double_pareto_fit(curve: CcdfCurve) -> PiecewiseFit:
    """Best two-segment log-log fit over every knee with >= 10 points per side."""
    usable = curve.ccdf > 0
    lx = np.log(curve.grid[usable])
    ly = np.log(curve.ccdf[usable])
    m = lx.size
    if m < 30:
        raise AnalysisError(f"need at least 30 positive grid points, got {m}")
    best = None
    for cut in range(10, m - 9):
        left = _ols(lx[:cut], ly[:cut], float(curve.grid[0]), float(np.exp(lx[cut - 1])))
        right = _ols(lx[cut:], ly[cut:], float(np.exp(lx[cut])), float(curve.grid[-1]))
        sse = _sse(lx[:cut], ly[:cut], left) + _sse(lx[cut:], ly[cut:], right)
        if best is None or sse < best[0]:
            best = (sse, cut, left, right)
    sse, cut, left, right = best
    pooled = math.hypot(left.stderr, right.stderr)
    return PiecewiseFit(knee=float(np.exp(lx[cut])), slope_left=left.slope,
                        slope_right=right.slope, total_sq_error=sse,
                        stderr_left=left.stderr, stderr_right=right.stderr,
                        degenerate=abs(left.slope - right.slope) < 2 * pooled)


def _sse(lx: np.ndarray, ly: np.ndarray, fit: SlopeFit) -> float:
    return float(np.sum((ly - (fit.intercept + fit.slope * lx)) ** 2))


def single_fit_error(curve: CcdfCurve) -> float:
    usable = curve.ccdf > 0
    lx = np.log(curve.grid[usable])
    ly = np.log(curve.ccdf[usable])
    fit = _ols(lx, ly, float(curve.grid[0]), float(curve.grid[-1]))
    return _sse(lx, ly, fit)


def lighter_than_power_probe(samples, n_windows: int = 5) -> LightTailProbe:
    """Nested-window slope diagnostic.

    Fits the log-log slope over windows with increasing lower cutoffs; a real
    power law keeps a stable slope while anything lighter steepens.  Reports
    lighter when the slopes steepen strictly window over window and the total
    steepening is significant both against the pooled standard error and
    relative to the first window's slope (rank-order curvature at the grid
    top produces a small spurious drift on exact power laws otherwise).
    """
    xs = _as_sample_array(samples)
    if xs.size < 10_000:
        raise AnalysisError(f"need at least 10^4 samples, got {xs.size}")
    xs_sorted = np.sort(xs)
    curve = empirical_ccdf(xs, n_grid=400)
    hi = float(xs_sorted[xs.size - 50])
    cut_q = np.linspace(0.5, 0.99, n_windows) if n_windows != 5 \
        else np.asarray([0.5, 0.8, 0.95, 0.98, 0.99])
    cuts = []
    prev = -math.inf
    for q in cut_q:
        lo = float(np.quantile(xs_sorted, q))
        if lo <= prev:  # ties in concentrated samples: step to the next value
            pos = np.searchsorted(xs_sorted, prev, side="right")
            if pos >= xs.size:
                break
            lo = float(xs_sorted[pos])
        cuts.append(lo)
        prev = lo
    if len(cuts) < n_windows:
        raise AnalysisError("insufficient tail structure for nested windows")
    slopes, ses = [], []
    for lo in cuts:
        try:
            fit = loglog_slope(curve, lo, hi)
        except AnalysisError as exc:
            raise AnalysisError(f"insufficient tail mass above {lo:g}") from exc
        slopes.append(fit.slope)
        ses.append(fit.stderr)
    mags = np.abs(slopes)
    strictly_steeper = bool(np.all(np.diff(mags) > 0))
    pooled = math.sqrt(float(np.sum(np.square(ses))))
    grown = (mags[-1] - mags[0]) > max(2.0 * pooled, 0.15 * mags[0])
    return LightTailProbe(is_lighter=strictly_steeper and grown,
                          slopes=tuple(float(s) for s in slopes),
                          stderrs=tuple(float(s) for s in ses))


def plateau_median(samples, alpha: float, x_lo: float, x_hi: float,
                   n_grid: int = 40) -> float:
    """Median of x^alpha * P[X > x] over a log-spaced grid; the tail prefactor."""
    xs = _as_sample_array(samples)
    grid = np.exp(np.linspace(math.log(x_lo), math.log(x_hi), n_grid))
    cc = ccdf_at(xs, grid)
    vals = np.power(grid, alpha) * cc
    vals = vals[cc > 0]
    if vals.size == 0:
        raise AnalysisError("no positive ccdf values in the plateau window")
    return float(np.median(vals))


# ---------------------------------------------------------------------------
# CSV serialization
# ---------------------------------------------------------------------------

def curve_to_csv(path, curve: CcdfCurve, fit: SlopeFit | None = None,
                 meta: dict | None = None) -> None:
    """Write ``x,ccdf[,fit]`` with one comment header carrying run metadata."""
    meta = dict(meta or {})
    header_items = " ".join(f"{k}={v}" for k, v in sorted(meta.items()))
    lines = [f"# {header_items}".rstrip()]
    if fit is not None:
        lines.append("x,ccdf,fit")
        for x, c in zip(curve.grid, curve.ccdf):
            f = math.exp(fit.intercept) * x**fit.slope
            lines.append(f"{float(x)!r},{float(c)!r},{float(f)!r}")
    else:
        lines.append("x,ccdf")
        for x, c in zip(curve.grid, curve.ccdf):
            lines.append(f"{float(x)!r},{float(c)!r}")
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def curve_from_csv(path) -> CcdfCurve:
    grid, ccdf = [], []
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if not line or line.startswith("#") or line.startswith("x,"):
                continue
            parts = line.split(",")
            grid.append(float(parts[0]))
            ccdf.append(float(parts[1]))
    if len(grid) < 2:
        raise AnalysisError(f"no curve data found in {path}")
    return CcdfCurve(grid=np.asarray(grid), ccdf=np.asarray(ccdf), n_samples=0)

"""Limiting cumulant of the multiplier process, its root, and tail constants.

The cumulant ``psi(alpha) = lim n^{-1} log E[(product of n multipliers)^alpha]``
has three backings: a closed form for i.i.d. multipliers, the log
Perron-Frobenius eigenvalue of the tilted transition matrix for Markov
multipliers, and the log moment generating function for the continuous
increment models.  Its positive root is the power-law tail exponent; the
remaining estimators turn ladder-height statistics and stationary samples
into the multiplicative constants in front of the power law.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy import integrate

from .engine import CYCLE_STEP_CAP, NEAR_CRITICAL_DRIFT, TailSampleSet, _iid_step
from .errors import (AnalysisError, DomainError, DriftError, NoPositiveRootError,
                     SpecError)
from .rng import RngStream
from .sampling import offspring_sum_batch
from .specs import (IncrementSource, LogIncrementModel, ModulatorSpec, OffspringSpec,
                    TailFunction, drift_of)

ROOT_TOL = 1e-10
EIGEN_REL_TOL = 1e-12


# ---------------------------------------------------------------------------
# the limiting cumulant
# ---------------------------------------------------------------------------

@dataclass
class PsiFunction:
    """Evaluable limiting cumulant with a small memo cache."""

    backing: str  # "iid_closed" | "markov_eigen" | "increment_model"
    modulator: ModulatorSpec | None = None
    values: np.ndarray | None = None
    model: LogIncrementModel | None = None
    _cache: dict = field(default_factory=dict, repr=False)

    def __call__(self, alpha: float) -> float:
        return psi_eval(self, alpha)

    @property
    def drift(self) -> float:
        if self.backing == "increment_model":
            return self.model.mean_log
        return self.modulator.mean_log_value(self.values)

    def domain_sup(self) -> float:
        if self.backing == "increment_model":
            return self.model.mgf_domain_sup
        return math.inf

    def max_log_value(self) -> float:
        if self.backing == "increment_model":
            return math.inf
        vals = self.values
        with np.errstate(divide="ignore"):
            return float(np.max(np.log(np.maximum(vals, 0.0))))


def psi_iid(modulator: ModulatorSpec, means: np.ndarray | None = None) -> PsiFunction:
    """Closed form: psi(alpha) = log sum_j p_j v_j^alpha."""
    if modulator.kind != "iid":
        raise SpecError("psi_iid needs an i.i.d. modulator")
    vals = modulator.values_array if means is None else np.asarray(means, dtype=float)
    return PsiFunction(backing="iid_closed", modulator=modulator, values=vals)


def psi_markov(modulator: ModulatorSpec, means: np.ndarray | None = None) -> PsiFunction:
    """Eigenvalue backing: psi(alpha) = log of the Perron root of q(i,j) v_j^alpha."""
    if modulator.kind != "markov":
        raise SpecError("psi_markov needs a markov modulator")
    vals = modulator.values_array if means is None else np.asarray(means, dtype=float)
    return PsiFunction(backing="markov_eigen", modulator=modulator, values=vals)


def psi_model(model: LogIncrementModel) -> PsiFunction:
    return PsiFunction(backing="increment_model", model=model)


def psi_for(source: IncrementSource, means: np.ndarray | None = None) -> PsiFunction:
    if isinstance(source, ModulatorSpec):
        return psi_iid(source, means) if source.kind == "iid" else psi_markov(source, means)
    if means is not None:
        raise SpecError("offspring means only combine with a finite-state modulator")
    return psi_model(source)


def psi_eval(psi: PsiFunction, alpha: float) -> float:
    alpha = float(alpha)
    if alpha in psi._cache:
        return psi._cache[alpha]
    if psi.backing == "iid_closed":
        probs = np.asarray(psi.modulator.probs, dtype=float)
        vals = psi.values
        with np.errstate(divide="ignore"):
            terms = probs * np.power(vals, alpha)
        if not np.all(np.isfinite(terms)):
            raise DomainError(f"E[value^{alpha}] has a divergent term")
        out = float(np.log(terms.sum()))
    elif psi.backing == "markov_eigen":
        out = float(np.log(_perron_root(psi, alpha)))
    else:
        out = float(psi.model.log_mgf(alpha))
    psi._cache[alpha] = out
    return out


def _perron_root(psi: PsiFunction, alpha: float) -> float:
    """Perron-Frobenius eigenvalue of the tilted matrix by power iteration.

    Values are normalized by their maximum so the tilt cannot overflow; the
    start vector is uniform, which makes alpha = 0 exact in one step.
    """
    trans = np.asarray(psi.modulator.transition, dtype=float)
    vals = np.asarray(psi.values, dtype=float)
    vmax = float(vals.max())
    if vmax <= 0:
        raise DomainError("all tilted values vanish")
    with np.errstate(divide="ignore"):
        scaled = np.power(vals / vmax, alpha)
    if not np.all(np.isfinite(scaled)):
        raise DomainError(f"tilted matrix has a divergent entry at alpha={alpha}")
    q = trans * scaled[np.newaxis, :]
    k = q.shape[0]
    v = np.full(k, 1.0 / k)
    lam = 1.0
    for _ in range(200_000):
        w = q @ v
        new_lam = float(w.sum() / v.sum())
        w_sum = w.sum()
        if w_sum <= 0:
            raise DomainError("tilted matrix lost irreducibility numerically")
        v = w / w_sum
        if abs(new_lam - lam) <= EIGEN_REL_TOL * abs(new_lam):
            lam = new_lam
            break
        lam = new_lam
    return lam * math.exp(alpha * math.log(vmax)) if vmax != 1.0 else lam


# ---------------------------------------------------------------------------
# the tail exponent
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class AlphaStar:
    """Positive root of the cumulant, with slope and bracketing information."""

    value: float
    psi_slope_at_root: float
    bracket: tuple[float, float]
    tolerance: float


def solve_alpha_star(psi: PsiFunction, bracket_start: float = 1.0,
                     level: float = 0.0) -> AlphaStar:
    """Bisection root of ``psi(alpha) = level`` on (0, inf).

    ``level = 0`` is the stationary-tail exponent; a positive level solves the
    exponent of a geometrically stopped run, where the stop rate replaces
    zero.  The bracket grows by doubling (or crawls toward a finite domain
    boundary).  Raises NoPositiveRootError when psi never reaches the level
    on its finite domain, the regime whose tail is lighter than any power law.
    """
    drift = psi.drift
    if level == 0.0:
        if not drift < 0:
            raise DriftError(f"psi'(0) = {drift:.4g} >= 0; no stationary tail "
                             "to solve for")
        if psi.max_log_value() <= 0:
            # every multiplier contracts: psi < 0 for all positive alpha
            raise NoPositiveRootError("all multipliers are <= 1; the tail is lighter "
                                      "than any power law")
    elif level < 0:
        raise SpecError("level must be nonnegative")
    hi = _find_positive_end(psi, bracket_start, level)
    if hi is None:
        raise NoPositiveRootError(f"psi never exceeds {level:g} on its finite domain")
    lo = 1e-12
    mid = hi
    f_mid = psi_eval(psi, hi) - level
    for _ in range(300):
        mid = 0.5 * (lo + hi)
        f_mid = psi_eval(psi, mid) - level
        if abs(f_mid) < ROOT_TOL:
            break
        if f_mid > 0:
            hi = mid
        else:
            lo = mid
    else:
        raise AnalysisError(f"bisection stalled; |psi - level| = {abs(f_mid):.2e} at {mid}")
    h = max(1e-7, 1e-7 * mid)
    slope = (psi_eval(psi, mid + h) - psi_eval(psi, mid - h)) / (2 * h)
    if not slope > 0:
        raise AnalysisError(f"root found at {mid} but the slope {slope:.3g} is not "
                            "positive; conditions for a power law fail")
    return AlphaStar(value=mid, psi_slope_at_root=slope, bracket=(lo, hi),
                     tolerance=abs(f_mid))


def _find_positive_end(psi: PsiFunction, start: float, level: float = 0.0) -> float | None:
    sup = psi.domain_sup()
    hi = min(start, 0.9 * sup) if math.isfinite(sup) else start
    for _ in range(200):
        try:
            if psi_eval(psi, hi) > level:
                return hi
        except DomainError:
            pass
        if math.isfinite(sup):
            nxt = 0.5 * (hi + sup)  # crawl toward the divergence
            if nxt - hi < 1e-13 * max(1.0, sup):
                return None
            hi = nxt
        else:
            hi *= 2.0
            if hi > 1e9:
                return None
    return None


# ---------------------------------------------------------------------------
# ladder statistics
# ---------------------------------------------------------------------------

@dataclass
class LadderStats:
    """Monte Carlo summary of ascending ladder heights and descent overshoots."""

    ascend_prob: float
    ascend_se: float
    ladder_heights: np.ndarray
    overshoots: np.ndarray
    n_cycles: int

    @property
    def degenerate(self) -> bool:
        return not 0.0 < self.ascend_prob < 1.0


def estimate_ladder_stats(source: IncrementSource, n_cycles: int, rng: RngStream,
                          step_cap: int = CYCLE_STEP_CAP,
                          allow_near_critical: bool = False) -> LadderStats:
    """Simulate i.i.d. cycles of the log walk.

    Each cycle records the overshoot at the first passage below zero and,
    tracking the walk past that point if needed, whether it ever climbs
    strictly above zero and the height of that first ascent.  Walks are
    abandoned as no-ascent once so deep that the remaining ascent probability
    is negligible (below exp(-40)).
    """
    if isinstance(source, ModulatorSpec) and source.kind != "iid":
        raise SpecError("ladder estimation requires i.i.d. multipliers")
    drift = drift_of(source)
    if not drift < 0:
        raise DriftError(f"ladder estimation needs negative drift, got {drift:.4g}")
    if abs(drift) < NEAR_CRITICAL_DRIFT and not allow_near_critical:
        raise DriftError(f"drift {drift:.2e} is nearly critical; pass "
                         "allow_near_critical=True to insist")
    abandon = -_abandon_depth(source)
    gen = rng.generator()
    n = int(n_cycles)
    s = np.zeros(n)
    heights = np.full(n, np.nan)
    overshoot = np.full(n, np.nan)
    need_descent = np.ones(n, dtype=bool)
    need_ascent = np.ones(n, dtype=bool)
    steps = 0
    while True:
        active = need_descent | need_ascent
        if not active.any():
            break
        steps += 1
        if steps > step_cap:
            raise DriftError(f"ladder cycle exceeded the {step_cap}-step cap")
        idx = np.nonzero(active)[0]
        s[idx] += _iid_step(source, gen, idx.size)
        si = s[idx]
        newly_down = idx[(si <= 0.0) & need_descent[idx]]
        overshoot[newly_down] = s[newly_down]
        need_descent[newly_down] = False
        newly_up = idx[(si > 0.0) & need_ascent[idx]]
        heights[newly_up] = s[newly_up]
        need_ascent[newly_up] = False
        lost = idx[(si < abandon) & need_ascent[idx]]
        need_ascent[lost] = False
    ascended = ~np.isnan(heights)
    prob = float(ascended.mean())
    se = math.sqrt(max(prob * (1 - prob), 1e-300) / n)
    stats = LadderStats(ascend_prob=prob, ascend_se=se,
                        ladder_heights=heights[ascended],
                        overshoots=overshoot[~np.isnan(overshoot)], n_cycles=n)
    if 0 < stats.ladder_heights.size and _looks_lattice(stats.ladder_heights):
        warnings.warn("ladder heights look lattice-valued; the nonlattice constants "
                      "may not apply", RuntimeWarning)
    return stats


def _abandon_depth(source: IncrementSource) -> float:
    try:
        root = solve_alpha_star(psi_for(source))
        return 40.0 / root.value
    except (NoPositiveRootError, DriftError, DomainError):
        # ascent probability from depth d then decays faster than any e^{-a d}
        if isinstance(source, ModulatorSpec):
            spread = float(np.abs(source.log_values).max())
        else:
            spread = abs(source.mean_log) + 3.0 * math.sqrt(source.var_log)
        return 50.0 * max(spread, 1.0)


def _looks_lattice(heights: np.ndarray, rel_tol: float = 1e-9) -> bool:
    base = float(heights.min())
    if base <= 0:
        return False
    ratios = heights / base
    return bool(np.all(np.abs(ratios - np.rint(ratios)) < rel_tol))


# ---------------------------------------------------------------------------
# asymptotic constants
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ConstantEstimate:
    value: float
    stderr: float


def _check_usable(stats: LadderStats) -> None:
    if stats.degenerate:
        raise AnalysisError(f"ladder statistics are degenerate (ascend_prob = "
                            f"{stats.ascend_prob}); the constant is undefined")


def goldie_constant_rmp(stats: LadderStats, alpha_star: float) -> ConstantEstimate:
    """Tail prefactor of the reflected multiplicative process.

    Estimates (1 - p) / (alpha * p * E[H e^{alpha H} | ascent]) where p is the
    ascent probability; p times the tilted conditional mean is the Monte
    Carlo version of the tilted first moment of the defective ladder-height
    law.  The standard error combines both estimates by the delta method.
    """
    _check_usable(stats)
    a = float(alpha_star)
    p = stats.ascend_prob
    tilted = stats.ladder_heights * np.exp(a * stats.ladder_heights)
    m = float(tilted.mean())
    m_se = float(tilted.std(ddof=1) / math.sqrt(tilted.size)) if tilted.size > 1 else 0.0
    value = (1.0 - p) / (a * p * m)
    dp = -value / (1.0 - p) - value / p  # d/dp of (1-p)/(a p m)
    dm = -value / m
    stderr = math.sqrt((dp * stats.ascend_se) ** 2 + (dm * m_se) ** 2)
    return ConstantEstimate(value=value, stderr=stderr)


def cycle_max_constant(stats: LadderStats, alpha_star: float) -> ConstantEstimate:
    """Cycle-maximum prefactor: the reflected constant times 1 - E[e^{alpha S_tau}].

    The overshoot S_tau at the descent epoch is nonpositive, so the extra
    factor lies in (0, 1).
    """
    _check_usable(stats)
    if stats.overshoots.size == 0:
        raise AnalysisError("no completed cycles to estimate the overshoot factor")
    base = goldie_constant_rmp(stats, alpha_star)
    a = float(alpha_star)
    damp = np.exp(a * stats.overshoots)
    factor = 1.0 - float(damp.mean())
    if not 0.0 < factor < 1.0:
        raise AnalysisError(f"overshoot factor {factor:.4g} outside (0, 1); "
                            "check the drift and exponent")
    f_se = float(damp.std(ddof=1) / math.sqrt(damp.size)) if damp.size > 1 else 0.0
    value = base.value * factor
    stderr = math.sqrt((factor * base.stderr) ** 2 + (base.value * f_se) ** 2)
    return ConstantEstimate(value=value, stderr=stderr)


def mbp_implicit_constant(lambda_samples: TailSampleSet, modulator: ModulatorSpec,
                          offspring: OffspringSpec, alpha_star: float,
                          rng: RngStream) -> ConstantEstimate:
    """Implicit-renewal constant for the reflected branching process.

    For each stationary draw, one fresh environment state and offspring sum
    give the one-step update; the mean of (updated)^alpha - (mean-field)^alpha
    over the analytic tilted-log-mean denominator is the tail prefactor.
    """
    if modulator.kind != "iid":
        raise SpecError("the implicit constant requires an i.i.d. modulator")
    if lambda_samples.kind != "rmbp":
        raise SpecError("lambda_samples must hold reflected branching draws")
    barrier = int(lambda_samples.meta.get("barrier", 1))
    a = float(alpha_star)
    probs = np.asarray(modulator.probs, dtype=float)
    means = offspring.means
    log_means = np.where(means > 0, np.log(np.maximum(means, 1e-300)), 0.0)
    tilted = np.where(means > 0, np.power(means, a) * log_means, 0.0)
    denom = a * float(np.dot(probs, tilted))
    if not denom > 0:
        raise AnalysisError(f"tilted log-mean denominator {denom:.4g} is not positive")
    lam = np.rint(lambda_samples.linear()).astype(np.int64)
    gen = rng.generator()
    cum = np.cumsum(probs)
    states = np.searchsorted(cum, gen.random(lam.size), side="right")
    updated = np.maximum(offspring_sum_batch(offspring, states, lam, gen), barrier)
    terms = np.power(updated.astype(float), a) - np.power(means[states] * lam, a)
    value = float(terms.mean()) / denom
    stderr = float(terms.std(ddof=1) / math.sqrt(terms.size)) / denom
    if _looks_lattice(np.log(means[means > 1e-300])) and np.all(means > 0):
        warnings.warn("log mean-offspring looks lattice-valued; the nonlattice "
                      "constant may not apply", RuntimeWarning)
    return ConstantEstimate(value=value, stderr=stderr)


# ---------------------------------------------------------------------------
# heavy traffic
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class HeavyTrafficLaw:
    """Rescaling exponent and the universal limit tail P[Y > y] = y^{-2}."""

    rescale_exponent: float
    reference_slope: float = 2.0


def heavy_traffic_prediction(m: float, sigma2: float) -> HeavyTrafficLaw:
    if not m < 0:
        raise DriftError(f"heavy-traffic rescaling needs m < 0, got {m}")
    if not sigma2 > 0:
        raise SpecError("variance must be positive")
    return HeavyTrafficLaw(rescale_exponent=-m / sigma2)


# ---------------------------------------------------------------------------
# geometrically stopped construction
# ---------------------------------------------------------------------------

def mg1_alpha_star(gbar: TailFunction, rho: float, tol: float = 1e-12) -> float:
    """Root of integral(e^{alpha y} Gbar) = integral(Gbar) / rho."""
    if not 0 < rho < 1:
        raise SpecError("rho must lie strictly inside (0, 1)")
    target = gbar.integral() / rho

    def f(alpha: float) -> float:
        return gbar.exp_moment(alpha) - target

    lo = 0.0
    sup = gbar.exp_moment_sup
    hi = 1.0 if not math.isfinite(sup) else 0.5 * sup
    for _ in range(200):
        try:
            if f(hi) > 0:
                break
        except DomainError:
            pass
        hi = hi * 2.0 if not math.isfinite(sup) else 0.5 * (hi + sup)
    else:
        raise AnalysisError("could not bracket the stopped-process exponent")
    for _ in range(300):
        mid = 0.5 * (lo + hi)
        if f(mid) > 0:
            hi = mid
        else:
            lo = mid
        if hi - lo < tol * max(1.0, hi):
            break
    return 0.5 * (lo + hi)


def mg1_stop_constant(gbar: TailFunction, rho: float, alpha_star: float,
                      consistency_tol: float = 1e-8) -> float:
    """Prefactor (1-rho) I0 / (alpha rho I1) of the stopped-product tail.

    I0 = integral(Gbar), I1 = integral(y e^{alpha y} Gbar); the supplied
    exponent must satisfy the defining moment identity to ``consistency_tol``.
    """
    if not 0 < rho < 1:
        raise SpecError("rho must lie strictly inside (0, 1)")
    if rho < 1e-6:
        raise SpecError("rho below 1e-6: the constant diverges as 1/rho; refusing")
    a = float(alpha_star)
    i0 = gbar.integral()
    lhs = gbar.exp_moment(a)
    residual = abs(lhs - i0 / rho) / (i0 / rho)
    if residual > consistency_tol:
        raise AnalysisError(f"alpha_star fails the moment identity by {residual:.2e}")
    i1 = gbar.x_exp_moment(a)
    if not math.isfinite(i1):
        raise AnalysisError("tilted first moment did not converge")
    return (1.0 - rho) * i0 / (a * rho * i1)

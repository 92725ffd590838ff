"""Canonical experiment presets and their built-in consistency checks.

Each preset builds desk-scale configurations by default (10^6 draws or less);
``full=True`` restores the larger sample counts where the canonical setup
uses them.  Checks compare simulation output against the analytic exponents
and constants and are what ``reproduce`` reports (and the CLI turns into its
exit code).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Callable

import numpy as np

from . import analytics, engine, taillab
from .config import ExperimentConfig
from .errors import ConfigError
from .rng import RngStream
from .specs import (ExponentialTail, ExpDifference, GeometricStop, MG1Increment,
                    ModulatorSpec, NormalIncrement, OffspringSpec, Poisson,
                    TailEquilibrium)

DESK_N = 1_000_000


@dataclass(frozen=True)
class Preset:
    name: str
    description: str
    configs: Callable[[bool], list[ExperimentConfig]]
    check: Callable[[list, bool], list]


def _outcome(name: str, passed: bool, detail: str):
    from .harness import CheckOutcome

    return CheckOutcome(name=name, passed=bool(passed), detail=detail)


# ---------------------------------------------------------------------------
# shared model pieces
# ---------------------------------------------------------------------------

def mm1_increments(arrival_rate: float = 1.0, service_rate: float = 2.0) -> ExpDifference:
    """log J = S - T for the M/M/1 waiting-time recursion (stable when
    arrival_rate < service_rate); the stationary tail is
    (arrival/service) * x^-(service-arrival)."""
    return ExpDifference(plus_rate=service_rate, minus_rate=arrival_rate)


def bernoulli_increments(p: float = 0.3, q: float = 0.5) -> ModulatorSpec:
    """log J = A - C with A ~ Bernoulli(p), C ~ Bernoulli(q) independent."""
    up = p * (1 - q)
    down = q * (1 - p)
    return ModulatorSpec.iid(values=(math.e, 1.0, 1.0 / math.e),
                             probs=(up, 1.0 - up - down, down))


def two_state_markov(u: float = 2.0, p: float = 0.3, q: float = 0.1) -> ModulatorSpec:
    """Two-state chain on {u, 1/u} with exit rates p (from u) and q (from 1/u)."""
    return ModulatorSpec.markov(values=(u, 1.0 / u),
                                transition=((1 - p, p), (q, 1 - q)))


def two_state_alpha_closed_form(u: float = 2.0, p: float = 0.3, q: float = 0.1) -> float:
    return (math.log(1 - q) - math.log(1 - p)) / math.log(u)


def double_pareto_modulator(p12: float = 1 / 5000, p21: float = 1 / 10) -> ModulatorSpec:
    """Four-state expansion of a two-regime chain with random multipliers.

    Regime 1 multiplies by 1.2 or 0.6 (half/half), regime 2 by 1.7 or 0.25
    (0.6/0.4); the multiplier coin is folded into the state space so the
    chain stays finite-state with deterministic per-state values.
    """
    r1 = (0.5, 0.5)
    r2 = (0.6, 0.4)
    rows = (
        ((1 - p12) * r1[0], (1 - p12) * r1[1], p12 * r2[0], p12 * r2[1]),
        ((1 - p12) * r1[0], (1 - p12) * r1[1], p12 * r2[0], p12 * r2[1]),
        (p21 * r1[0], p21 * r1[1], (1 - p21) * r2[0], (1 - p21) * r2[1]),
        (p21 * r1[0], p21 * r1[1], (1 - p21) * r2[0], (1 - p21) * r2[1]),
    )
    return ModulatorSpec.markov(values=(1.2, 0.6, 1.7, 0.25), transition=rows)


def poisson_pair_modulator() -> ModulatorSpec:
    """Bernoulli environment: state 1 with probability 0.4, else state 0."""
    return ModulatorSpec.iid(values=(0.6, 1.5), probs=(0.6, 0.4))


def poisson_pair_offspring() -> OffspringSpec:
    """Poisson offspring with means 0.6 (state 0) and 1.5 (state 1)."""
    return OffspringSpec(per_state=(Poisson(0.6), Poisson(1.5)))


def _ccdf_geq(samples_linear: np.ndarray, grid: np.ndarray) -> np.ndarray:
    xs = np.sort(samples_linear)
    return 1.0 - np.searchsorted(xs, grid, side="left") / xs.size


# ---------------------------------------------------------------------------
# preset: example1 (M/M/1 dual)
# ---------------------------------------------------------------------------

def _example1_configs(full: bool) -> list[ExperimentConfig]:
    return [ExperimentConfig(kind="rmp", modulator=mm1_increments(), barriers=(1.0,),
                             horizon=16, n_replications=DESK_N,
                             slope_window=(5.0, 100.0), constants=("goldie",),
                             n_cycles=DESK_N, label="mm1")]


def _example1_check(results, full) -> list:
    res = results[0]
    sset = res.sample_sets[1.0]
    out = []
    slope = res.summary.estimates["slope"].value
    out.append(_outcome("slope_minus_one", abs(slope + 1.0) <= 0.05,
                        f"slope = {slope:.4f} (want -1.00 +- 0.05)"))
    plateau = taillab.plateau_median(sset, 1.0, 10.0, 100.0)
    out.append(_outcome("plateau_half", abs(plateau - 0.5) <= 0.05,
                        f"x*P[M>x] plateau = {plateau:.4f} (want 0.5 +- 0.05)"))
    goldie = res.summary.estimates["constant_goldie"]
    out.append(_outcome("ladder_constant", abs(goldie.value - 0.5) <= 3 * goldie.stderr,
                        f"ladder constant = {goldie.value:.4f} +- {goldie.stderr:.4f} "
                        "(want 0.5 within 3 se)"))
    rel = abs(goldie.value - plateau) / plateau
    out.append(_outcome("constant_vs_plateau", rel <= 0.10,
                        f"|constant - plateau|/plateau = {rel:.3f} (want <= 0.10)"))
    return out


# ---------------------------------------------------------------------------
# preset: example2 (Bernoulli geometric bounds)
# ---------------------------------------------------------------------------

def _example2_configs(full: bool) -> list[ExperimentConfig]:
    return [ExperimentConfig(kind="rmp", modulator=bernoulli_increments(),
                             barriers=(1.0,), n_replications=DESK_N, label="bernoulli")]


def _example2_check(results, full) -> list:
    res = results[0]
    sset = res.sample_sets[1.0]
    rho = (0.3 * 0.5) / (0.5 * 0.7)
    expo = math.log(1.0 / rho)
    grid = np.exp(np.linspace(math.log(2.0), math.log(1000.0), 20))
    # the envelope sandwiches the stair function rho^floor(ln x); the waiting
    # level is integer-valued, so the ccdf is sampled at the atom below x
    atoms = np.exp(np.floor(np.log(grid)))
    p_hat = _ccdf_geq(sset.linear(), atoms)
    lower = np.power(grid, -expo)
    upper = lower / rho
    se = np.sqrt(np.maximum(p_hat * (1 - p_hat), 1e-12) / sset.n)
    ok_low = p_hat >= lower - 3 * se
    ok_high = p_hat <= upper + 3 * se
    bad = int(np.sum(~(ok_low & ok_high)))
    return [_outcome("geometric_bounds", bad == 0,
                     f"{bad}/20 grid points violate the rho=3/7 envelope")]


# ---------------------------------------------------------------------------
# preset: example3 (two-state Markov closed form)
# ---------------------------------------------------------------------------

def _example3_configs(full: bool) -> list[ExperimentConfig]:
    return [ExperimentConfig(kind="rmp", modulator=two_state_markov(), barriers=(1.0,),
                             n_replications=DESK_N, label="markov2")]


def _example3_check(results, full) -> list:
    res = results[0]
    closed = two_state_alpha_closed_form()
    eigen = res.summary.estimates["alpha_star"].value
    out = [_outcome("closed_form_vs_eigen", abs(closed - eigen) <= 1e-8,
                    f"closed form {closed:.10f} vs eigen root {eigen:.10f}")]
    slope = res.summary.estimates["slope"].value
    rel = abs(-slope - closed) / closed
    out.append(_outcome("slope_matches_alpha", rel <= 0.10,
                        f"slope = {slope:.4f}, alpha* = {closed:.4f}, "
                        f"rel err {rel:.3f} (want <= 0.10)"))
    return out


# ---------------------------------------------------------------------------
# preset: figure1 (double Pareto)
# ---------------------------------------------------------------------------

def _figure1_configs(full: bool) -> list[ExperimentConfig]:
    # the slow regime switches every ~5000 steps, so the value process mixes
    # far slower than the drift heuristic suggests; harvest long paths instead
    n = 50_000_000 if full else DESK_N
    return [ExperimentConfig(kind="rmp", modulator=double_pareto_modulator(),
                             barriers=(1.0,), n_replications=n, n_grid=200,
                             burn_in=20_000, harvest_paths=5000, harvest_thin=100,
                             label="double_pareto")]


def _figure1_check(results, full) -> list:
    res = results[0]
    curve = res.curves[1.0]
    fit = taillab.double_pareto_fit(curve)
    ratio = max(abs(fit.slope_left), abs(fit.slope_right)) / \
        max(min(abs(fit.slope_left), abs(fit.slope_right)), 1e-12)
    out = [_outcome("two_regimes", (not fit.degenerate) and ratio >= 1.5,
                    f"slopes {fit.slope_left:.3f} / {fit.slope_right:.3f}, "
                    f"ratio {ratio:.2f} (want >= 1.5 and non-degenerate)")]
    interior = curve.grid[0] < fit.knee < curve.grid[-1]
    out.append(_outcome("knee_interior", interior, f"knee at x = {fit.knee:.1f}"))
    return out


# ---------------------------------------------------------------------------
# preset: figure2 (RMBP, convergence in the barrier)
# ---------------------------------------------------------------------------

def _figure2_configs(full: bool) -> list[ExperimentConfig]:
    n = 10_000_000 if full else DESK_N
    return [ExperimentConfig(kind="rmbp", modulator=poisson_pair_modulator(),
                             offspring=poisson_pair_offspring(),
                             barriers=(1.0, 5.0, 13.0, 21.0), burn_in=160,
                             horizon=8, n_replications=n, hill_k=n // 100,
                             label="rmbp")]


def _figure2_check(results, full) -> list:
    res = results[0]
    psi = analytics.psi_iid(poisson_pair_modulator(),
                            means=poisson_pair_offspring().means)
    alpha = analytics.solve_alpha_star(psi).value
    hill = res.summary.estimates["alpha_hill[l=1]"]
    tol = 0.10 if full else 0.15
    rel = abs(hill.value - alpha) / alpha
    out = [_outcome("hill_matches_alpha", rel <= tol,
                    f"hill = {hill.value:.4f}, alpha* = {alpha:.4f}, rel err "
                    f"{rel:.3f} (want <= {tol})")]
    grid = np.exp(np.linspace(0.0, math.log(100.0), 200))
    curves = {}
    for level in (13.0, 21.0):
        curves[level] = _ccdf_geq(res.sample_sets[level].linear() / level, grid)
    # lattice phase mismatch just above the barrier keeps the absolute sup
    # distance near 0.02 however many draws are taken, so the overlay claim
    # is quantified on the log scale of the plotted curves instead; points
    # with fewer than 300 exceedances are skipped as pure noise
    n = res.sample_sets[13.0].n
    usable = np.minimum(curves[13.0], curves[21.0]) >= 300.0 / n
    log_gap = float(np.max(np.abs(np.log10(curves[13.0][usable])
                                  - np.log10(curves[21.0][usable]))))
    out.append(_outcome("barrier_convergence", log_gap < 0.05,
                        f"sup |log10 ccdf_13 - log10 ccdf_21| = {log_gap:.4f} "
                        "on [1, 100] (want < 0.05)"))
    return out


# ---------------------------------------------------------------------------
# preset: stopped_mg1 (geometrically stopped construction)
# ---------------------------------------------------------------------------

def _stopped_configs(full: bool) -> list[ExperimentConfig]:
    gbar = ExponentialTail(1.0)
    rho = 0.5
    stopped = ExperimentConfig(kind="stopped_product",
                               modulator=TailEquilibrium(gbar),
                               stop=GeometricStop(rho), barriers=(1.0,),
                               n_replications=DESK_N, slope_window=(10.0, 3000.0),
                               constants=("mg1",), label="stopped")
    dual = ExperimentConfig(kind="rmp", modulator=MG1Increment(gbar, rho),
                            barriers=(1.0,), n_replications=DESK_N,
                            slope_window=(10.0, 3000.0), label="dual_rmp")
    return [stopped, dual]


def _stopped_check(results, full) -> list:
    from scipy import stats as sps

    stopped, dual = results
    sset = stopped.sample_sets[1.0]
    out = []
    slope = stopped.summary.estimates["slope"].value
    out.append(_outcome("slope_half", abs(slope + 0.5) <= 0.05,
                        f"slope = {slope:.4f} (want -0.50 +- 0.05)"))
    alpha = stopped.summary.estimates["alpha_star_mg1"].value
    const = stopped.summary.estimates["constant_mg1"].value
    plateau = taillab.plateau_median(sset, alpha, 10.0, 3000.0)
    out.append(_outcome("plateau_half", abs(plateau - 0.5) <= 0.10,
                        f"x^a*P plateau = {plateau:.4f} (want 0.5 +- 0.10)"))
    out.append(_outcome("quadrature_constant", abs(const - 0.5) <= 1e-6,
                        f"analytic constant = {const:.8f} (want 0.5)"))
    rel = abs(const - plateau) / max(plateau, 1e-12)
    out.append(_outcome("constant_vs_plateau", rel <= 0.10,
                        f"|constant - plateau|/plateau = {rel:.3f} (want <= 0.10)"))
    ks = sps.ks_2samp(sset.samples, dual.sample_sets[1.0].samples)
    out.append(_outcome("ks_vs_dual", ks.pvalue > 0.01,
                        f"KS p = {ks.pvalue:.4f} vs the constructed reflected run"))
    return out


# ---------------------------------------------------------------------------
# preset: heavy_traffic (drift sweep)
# ---------------------------------------------------------------------------

_HT_DRIFTS = (-0.1, -0.03, -0.01)
# reaching tail level x takes ~x/psi'(a*) steps plus fluctuations, and here
# a* = 2|m|, so the burn-in must grow like 1/m^2 as the drift vanishes
_HT_BURN = {-0.1: 1_500, -0.03: 12_000, -0.01: 100_000}
HT_WINDOW = (2.0, 8.0)  # rescaled-variable fit window


def _heavy_traffic_configs(full: bool) -> list[ExperimentConfig]:
    return [ExperimentConfig(kind="rmp", modulator=NormalIncrement(m, 1.0),
                             barriers=(1.0,), n_replications=DESK_N,
                             burn_in=_HT_BURN[m], harvest_paths=5000,
                             harvest_thin=200, label=f"m{m:g}")
            for m in _HT_DRIFTS]


def _heavy_traffic_check(results, full) -> list:
    out = []
    plateaus = []
    slopes = []
    for m, res in zip(_HT_DRIFTS, results):
        law = analytics.heavy_traffic_prediction(m, 1.0)
        ys = res.sample_sets[1.0].powered(law.rescale_exponent)
        fit = taillab.loglog_slope(taillab.empirical_ccdf(ys), *HT_WINDOW)
        slopes.append(-fit.slope)
        plateaus.append(taillab.plateau_median(ys, 2.0, *HT_WINDOW))
    final = slopes[-1]
    out.append(_outcome("limit_slope_two", abs(final - 2.0) <= 0.1,
                        f"rescaled slope at m=-0.01 is {final:.3f} (want 2.0 +- 0.1)"))
    gaps = [abs(p - 1.0) for p in plateaus]
    monotone = all(gaps[i + 1] <= gaps[i] + 0.02 for i in range(len(gaps) - 1))
    out.append(_outcome("plateau_to_one", monotone,
                        "plateau gaps to the y^-2 law: "
                        + ", ".join(f"{g:.3f}" for g in gaps)))
    return out


# ---------------------------------------------------------------------------
# preset: absorbing (arrival/evolution/absorption aggregate)
# ---------------------------------------------------------------------------

def _absorbing_configs(full: bool) -> list[ExperimentConfig]:
    n = 1_000_000 if full else 200_000
    return [ExperimentConfig(kind="absorbing", modulator=poisson_pair_modulator(),
                             offspring=poisson_pair_offspring(), arrival_rate=1.0,
                             barriers=(1.0,), slots="auto", n_replications=n,
                             label="hotspot")]


def _absorbing_check(results, full) -> list:
    res = results[0]
    psi = analytics.psi_iid(poisson_pair_modulator(),
                            means=poisson_pair_offspring().means)
    alpha = analytics.solve_alpha_star(psi).value
    slope = res.summary.estimates["slope"].value
    rel = abs(-slope - alpha) / alpha
    out = [_outcome("slope_matches_alpha", rel <= 0.15,
                    f"slope = {slope:.4f}, alpha* = {alpha:.4f}, rel err "
                    f"{rel:.3f} (want <= 0.15)")]
    spec = engine.AbsorbingSystemSpec(arrival_rate=1.0,
                                      offspring=poisson_pair_offspring(),
                                      modulator=poisson_pair_modulator(), barrier=1)
    lifetimes = engine.estimate_absorption_time(
        spec, RngStream(res.config.seed).child(0x11FE), 300_000)
    qep = 1.0 * float(lifetimes.mean())
    mean_alive = res.extras["mean_alive"]
    rel_little = abs(mean_alive - qep) / qep
    out.append(_outcome("littles_law", rel_little < 0.05,
                        f"E[N] = {mean_alive:.4f} vs q*E[P] = {qep:.4f}, rel err "
                        f"{rel_little:.4f} (want < 0.05)"))
    return out


# ---------------------------------------------------------------------------
# registry
# ---------------------------------------------------------------------------

PRESETS: dict[str, Preset] = {
    "example1": Preset("example1", "M/M/1 waiting-time dual: exponent 1, constant 0.5",
                       _example1_configs, _example1_check),
    "example2": Preset("example2", "Bernoulli increments: geometric envelope bounds",
                       _example2_configs, _example2_check),
    "example3": Preset("example3", "two-state Markov multiplier: closed-form exponent",
                       _example3_configs, _example3_check),
    "figure1": Preset("figure1", "two-regime modulation: double Pareto tail",
                      _figure1_configs, _figure1_check),
    "figure2": Preset("figure2", "Poisson-offspring reflected branching: tails "
                      "collapse as the barrier grows", _figure2_configs,
                      _figure2_check),
    "stopped_mg1": Preset("stopped_mg1", "geometrically stopped products and their "
                          "reflected dual", _stopped_configs, _stopped_check),
    "heavy_traffic": Preset("heavy_traffic", "drift-to-zero sweep onto the y^-2 law",
                            _heavy_traffic_configs, _heavy_traffic_check),
    "absorbing": Preset("absorbing", "arrival/absorption aggregate population",
                        _absorbing_configs, _absorbing_check),
}


def get(name: str) -> Preset:
    if name not in PRESETS:
        raise ConfigError(f"unknown preset {name!r}; available: "
                          + ", ".join(sorted(PRESETS)))
    return PRESETS[name]


def primary_config(name: str) -> ExperimentConfig:
    """The canonical (paper-scale) configuration a preset name expands to."""
    return get(name).configs(True)[0]

"""Experiment orchestration: chunked replication, analysis, artifact emission.

Replications are grouped into fixed-size chunks and chunk ``k`` always draws
from the same derived stream, so the merged sample multiset is byte-identical
no matter how many worker threads execute the chunks.
"""

from __future__ import annotations

import math
import time
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import analytics, engine, taillab
from .config import ExperimentConfig
from .engine import AbsorbingSystemSpec, TailSampleSet
from .errors import ConfigError, EngineError, NoPositiveRootError, RmbpError
from .rng import RngStream
from .specs import (GeometricStop, MG1Increment, ModulatorSpec, TailEquilibrium)

CHUNK_SIZE = 1 << 16
_DOM_SAMPLES = 0x5A17
_DOM_LADDER = 0x1ADD
_DOM_IMPLICIT = 0x1417
ARTIFACT_VERSION = "1"


@dataclass(frozen=True)
class Estimate:
    """A reported number; ``stderr=None`` marks it exact rather than sampled."""

    value: float
    stderr: float | None = None

    @property
    def exact(self) -> bool:
        return self.stderr is None


@dataclass
class RunSummary:
    n_samples: int
    estimates: dict[str, Estimate] = field(default_factory=dict)
    checks: dict[str, bool] = field(default_factory=dict)
    wall_time_s: float = 0.0
    master_seed: int = 0
    n_chunks: int = 0
    config_hash: str = ""

    def to_text(self) -> str:
        lines = [f"n_samples={self.n_samples}",
                 f"master_seed={self.master_seed}",
                 f"n_chunks={self.n_chunks}",
                 f"config_hash={self.config_hash}",
                 f"artifact_version={ARTIFACT_VERSION}",
                 f"wall_time_s={self.wall_time_s:.3f}"]
        for name in sorted(self.estimates):
            est = self.estimates[name]
            lines.append(f"estimate.{name}={float(est.value)!r}")
            if est.exact:
                lines.append(f"estimate.{name}.tag=exact")
            else:
                lines.append(f"estimate.{name}.stderr={float(est.stderr)!r}")
        for name in sorted(self.checks):
            lines.append(f"check.{name}={'pass' if self.checks[name] else 'fail'}")
        return "\n".join(lines) + "\n"


@dataclass
class ExperimentResult:
    config: ExperimentConfig
    summary: RunSummary
    sample_sets: dict[float, TailSampleSet]
    curves: dict[float, taillab.CcdfCurve]
    extras: dict = field(default_factory=dict)
    files: list[str] = field(default_factory=list)


# ---------------------------------------------------------------------------
# chunked sampling
# ---------------------------------------------------------------------------

def _chunk_plan(n: int) -> list[tuple[int, int]]:
    return [(k, min(CHUNK_SIZE, n - k * CHUNK_SIZE))
            for k in range((n + CHUNK_SIZE - 1) // CHUNK_SIZE)]


def _run_chunks(fn, n: int, workers: int):
    plan = _chunk_plan(n)
    results: list = [None] * len(plan)
    failures: list[tuple[int, Exception]] = []

    def run_one(item):
        k, count = item
        try:
            results[k] = fn(k, count)
        except RmbpError as exc:
            failures.append((k, exc))

    if workers <= 1 or len(plan) == 1:
        for item in plan:
            run_one(item)
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            list(pool.map(run_one, plan))
    if failures:
        raise EngineError(sorted(failures, key=lambda f: f[0]))
    return results, len(plan)


def _log_draw_fn(cfg: ExperimentConfig, barrier: float, base: RngStream):
    """Chunk sampler returning log-domain draws for every tail-producing kind."""
    pc = cfg.path_config(barrier)
    mod = cfg.modulator
    kind = cfg.kind

    if kind == "rmp":
        return lambda k, n: engine.sample_rmp(mod, pc, base.child(k), n, force=cfg.force)
    if kind == "queue":
        return lambda k, n: engine.sample_queue(mod, pc, base.child(k), n, force=cfg.force)
    if kind == "rmbp":
        return lambda k, n: np.log(engine.sample_rmbp(
            mod, cfg.offspring, pc, base.child(k), n, force=cfg.force).astype(float))
    if kind == "truncated":
        if cfg.offspring is not None:
            return lambda k, n: np.log(engine.sample_truncated(
                mod, pc, base.child(k), n, offspring=cfg.offspring,
                force=cfg.force).astype(float))
        return lambda k, n: engine.sample_truncated(mod, pc, base.child(k), n,
                                                    force=cfg.force)
    if kind == "backward_sup":
        return lambda k, n: engine.sample_backward_sup(mod, None, base.child(k), n)
    if kind == "stopped_product":
        return lambda k, n: engine.sample_stopped_product(mod, cfg.stop,
                                                          base.child(k), n)
    if kind == "stopped_branching":
        return lambda k, n: np.log(engine.sample_stopped_branching(
            mod, cfg.offspring, cfg.stop, cfg.z0, base.child(k), n).astype(float))
    if kind == "cycle_max":
        return lambda k, n: engine.sample_cycle_max(mod, base.child(k), n).log_max
    raise ConfigError(f"kind {kind!r} is not a sampling process", key="process.kind")


def _collect_samples(cfg: ExperimentConfig, barrier: float, barrier_idx: int,
                     workers: int) -> tuple[TailSampleSet, dict]:
    base = RngStream(cfg.seed).child(_DOM_SAMPLES).child(barrier_idx)
    extras: dict = {}
    if cfg.kind == "absorbing":
        spec = AbsorbingSystemSpec(arrival_rate=cfg.arrival_rate,
                                   offspring=cfg.offspring, modulator=cfg.modulator,
                                   barrier=int(barrier))
        results, n_chunks = _run_chunks(
            lambda k, n: engine.sample_absorbing_aggregate(spec, cfg.slots,
                                                           base.child(k), n),
            cfg.n_replications, workers)
        draws = np.concatenate([r[0] for r in results])
        alive = np.array([r[1].mean_alive for r in results])
        counts = np.array([len(r[0]) for r in results], dtype=float)
        lifetimes_n = sum(r[1].completed_lifetimes for r in results)
        lifetimes_sum = sum(r[1].mean_lifetime * r[1].completed_lifetimes
                            for r in results if r[1].completed_lifetimes)
        extras["mean_alive"] = float(np.average(alive, weights=counts))
        extras["mean_lifetime_in_system"] = (lifetimes_sum / lifetimes_n
                                             if lifetimes_n else float("nan"))
        zero_frac = float((draws == 0).mean())
        logs = np.log(draws[draws > 0].astype(float))
        extras["zero_fraction"] = zero_frac
        meta = {"barrier": barrier, "zero_fraction": zero_frac}
        kind = "absorbing_aggregate"
    elif cfg.kind == "rmp" and cfg.harvest_paths is not None:
        logs = engine.sample_rmp_harvest(cfg.modulator, cfg.path_config(barrier),
                                         base, cfg.n_replications,
                                         n_paths=cfg.harvest_paths,
                                         thin=cfg.harvest_thin, force=cfg.force)
        n_chunks = 1
        meta = {"barrier": barrier, "harvest_paths": cfg.harvest_paths}
        kind = cfg.kind
    else:
        fn = _log_draw_fn(cfg, barrier, base)
        results, n_chunks = _run_chunks(fn, cfg.n_replications, workers)
        logs = np.concatenate(results)
        meta = {"barrier": barrier}
        kind = cfg.kind
    meta.update(seed=cfg.seed, config_hash=cfg.config_hash())
    return TailSampleSet(samples=logs, kind=kind, meta=meta), {**extras,
                                                               "n_chunks": n_chunks}


# ---------------------------------------------------------------------------
# analysis
# ---------------------------------------------------------------------------

def _analytic_alpha(cfg: ExperimentConfig) -> analytics.AlphaStar | None:
    try:
        if cfg.kind in ("rmbp", "stopped_branching", "absorbing", "truncated") \
                and cfg.offspring is not None:
            psi = analytics.psi_for(cfg.modulator, means=cfg.offspring.means)
        else:
            psi = analytics.psi_for(cfg.modulator)
        level = 0.0
        if cfg.kind in ("stopped_product", "stopped_branching"):
            if not isinstance(cfg.stop, GeometricStop):
                return None
            level = cfg.stop.log_tail_rate
        return analytics.solve_alpha_star(psi, level=level)
    except NoPositiveRootError:
        raise
    except RmbpError:
        return None


def _fit_window(cfg: ExperimentConfig, samples: TailSampleSet) -> tuple[float, float]:
    if cfg.slope_window is not None:
        return cfg.slope_window
    return taillab.default_fit_window(samples)


def _ladder_source(cfg: ExperimentConfig):
    if cfg.kind in ("rmp", "queue", "cycle_max", "stopped_product"):
        return cfg.modulator
    raise ConfigError("ladder-based constants need a multiplicative process kind",
                      key="analysis.constants")


def run_experiment(cfg: ExperimentConfig, workers: int | None = None) -> ExperimentResult:
    """Run all replications, analyze tails, optionally write CSV artifacts."""
    t0 = time.monotonic()
    workers = cfg.threads if workers is None else workers
    summary = RunSummary(n_samples=0, master_seed=cfg.seed,
                         config_hash=cfg.config_hash())
    sample_sets: dict[float, TailSampleSet] = {}
    curves: dict[float, taillab.CcdfCurve] = {}
    extras: dict = {}
    multi = len(cfg.barriers) > 1

    for bidx, barrier in enumerate(cfg.barriers):
        sset, info = _collect_samples(cfg, barrier, bidx, workers)
        sample_sets[barrier] = sset
        extras.update({f"{k}[l={barrier:g}]" if multi else k: v
                       for k, v in info.items() if k != "n_chunks"})
        summary.n_chunks = info["n_chunks"]
        summary.n_samples += sset.n
        suffix = f"[l={barrier:g}]" if multi else ""
        try:
            curve = taillab.empirical_ccdf(sset, n_grid=cfg.n_grid)
            curves[barrier] = curve
        except taillab.AnalysisError:
            continue
        try:
            lo, hi = _fit_window(cfg, sset)
            fit = taillab.loglog_slope(curve, lo, hi)
            summary.estimates[f"slope{suffix}"] = Estimate(fit.slope, fit.stderr)
            if fit.slope < 0:
                summary.estimates[f"alpha_hat{suffix}"] = Estimate(-fit.slope, fit.stderr)
            else:
                warnings.warn("fitted slope is nonnegative; no tail exponent reported",
                              RuntimeWarning)
        except taillab.AnalysisError as exc:
            warnings.warn(f"slope fit skipped: {exc}", RuntimeWarning)
        if cfg.hill_k is not None:
            hill = taillab.hill_estimator(sset, cfg.hill_k)
            summary.estimates[f"alpha_hill{suffix}"] = Estimate(hill.alpha, hill.stderr)

    alpha = None
    try:
        alpha = _analytic_alpha(cfg)
    except NoPositiveRootError:
        summary.estimates["no_positive_root"] = Estimate(1.0)
    if alpha is not None:
        summary.estimates["alpha_star"] = Estimate(alpha.value)
        summary.estimates["psi_slope_at_root"] = Estimate(alpha.psi_slope_at_root)

    _compute_constants(cfg, summary, sample_sets, alpha)

    for name, est in summary.estimates.items():
        if name.startswith("alpha") and not est.exact:
            assert est.value > 0, "reported exponents must be positive"

    summary.wall_time_s = time.monotonic() - t0
    result = ExperimentResult(config=cfg, summary=summary, sample_sets=sample_sets,
                              curves=curves, extras=extras)
    if cfg.out_prefix:
        _write_artifacts(result)
    return result


def _compute_constants(cfg: ExperimentConfig, summary: RunSummary,
                       sample_sets: dict[float, TailSampleSet],
                       alpha: analytics.AlphaStar | None) -> None:
    if not cfg.constants:
        return
    stats = None
    for name in cfg.constants:
        if name in ("goldie", "cycle_max"):
            if alpha is None:
                raise ConfigError(f"constant {name!r} needs a solvable exponent",
                                  key="analysis.constants")
            if stats is None:
                stats = analytics.estimate_ladder_stats(
                    _ladder_source(cfg), cfg.n_cycles,
                    RngStream(cfg.seed).child(_DOM_LADDER))
            est = (analytics.goldie_constant_rmp if name == "goldie"
                   else analytics.cycle_max_constant)(stats, alpha.value)
            summary.estimates[f"constant_{name}"] = Estimate(est.value, est.stderr)
        elif name == "implicit":
            if cfg.kind != "rmbp":
                raise ConfigError("the implicit constant applies to rmbp runs",
                                  key="analysis.constants")
            if alpha is None:
                raise ConfigError("the implicit constant needs a solvable exponent",
                                  key="analysis.constants")
            barrier = cfg.barriers[0]
            est = analytics.mbp_implicit_constant(
                sample_sets[barrier], cfg.modulator, cfg.offspring, alpha.value,
                RngStream(cfg.seed).child(_DOM_IMPLICIT))
            summary.estimates["constant_implicit"] = Estimate(est.value, est.stderr)
        elif name == "mg1":
            model = cfg.modulator
            if not (cfg.kind == "stopped_product"
                    and isinstance(model, TailEquilibrium)
                    and isinstance(cfg.stop, GeometricStop)):
                raise ConfigError("the mg1 constant needs a geometrically stopped "
                                  "equilibrium-increment run", key="analysis.constants")
            a = analytics.mg1_alpha_star(model.gbar, cfg.stop.rho)
            c = analytics.mg1_stop_constant(model.gbar, cfg.stop.rho, a)
            summary.estimates["alpha_star_mg1"] = Estimate(a)
            summary.estimates["constant_mg1"] = Estimate(c)


# ---------------------------------------------------------------------------
# artifacts
# ---------------------------------------------------------------------------

def _barrier_tag(barrier: float) -> str:
    return f"l{barrier:g}".replace(".", "p")


def _write_artifacts(result: ExperimentResult) -> None:
    cfg = result.config
    meta = {"config_hash": cfg.config_hash(), "seed": cfg.seed,
            "version": ARTIFACT_VERSION}
    multi = len(cfg.barriers) > 1
    for barrier, curve in sorted(result.curves.items()):
        name = (f"{cfg.out_prefix}_{_barrier_tag(barrier)}_ccdf.csv" if multi
                else f"{cfg.out_prefix}_ccdf.csv")
        taillab.curve_to_csv(name, curve, meta=meta)
        result.files.append(name)
    summary_path = f"{cfg.out_prefix}_summary.txt"
    with open(summary_path, "w") as fh:
        fh.write(result.summary.to_text())
    result.files.append(summary_path)


# ---------------------------------------------------------------------------
# preset reproduction
# ---------------------------------------------------------------------------

@dataclass
class CheckOutcome:
    name: str
    passed: bool
    detail: str


@dataclass
class PresetReport:
    preset: str
    results: list[ExperimentResult]
    checks: list[CheckOutcome]
    files: list[str]

    @property
    def all_passed(self) -> bool:
        return all(c.passed for c in self.checks)


def reproduce(name: str, full: bool = False, seed: int = 1234,
              out_prefix: str | None = None, workers: int | None = None) -> PresetReport:
    """Run a canonical preset, emit its artifacts, and evaluate its checks."""
    from dataclasses import replace

    from . import presets

    preset = presets.get(name)
    cfgs = preset.configs(full)
    results = []
    for i, cfg in enumerate(cfgs):
        label = cfg.label or str(i)
        prefix = None if out_prefix is None else (
            f"{out_prefix}_{name}" if len(cfgs) == 1
            else f"{out_prefix}_{name}_{label}")
        cfg = replace(cfg, seed=seed, out_prefix=prefix)
        results.append(run_experiment(cfg, workers=workers))
    checks = preset.check(results, full)
    for res in results:
        for c in checks:
            res.summary.checks[c.name] = c.passed
        if res.config.out_prefix:  # refresh summaries with check outcomes
            path = f"{res.config.out_prefix}_summary.txt"
            with open(path, "w") as fh:
                fh.write(res.summary.to_text())
    files = [f for r in results for f in r.files]
    return PresetReport(preset=name, results=results, checks=checks, files=files)

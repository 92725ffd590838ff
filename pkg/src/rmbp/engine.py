"""Process engine: reflected, stopped, absorbed, and truncated runs.

All multiplicative quantities are handled in the log domain throughout; raw
products of hundreds of multipliers overflow doubles almost immediately.
Every operation comes in a scalar form (one draw, optionally with a recorded
trajectory) and a batch form that vectorizes across replications.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import DriftError, SpecError
from .rng import RngStream
from .sampling import initial_states, offspring_sum_batch, step_states
from .specs import (IncrementSource, LogIncrementModel, ModulatorSpec, OffspringSpec,
                    StopSpec, check_offspring_states, drift_of)

NEAR_CRITICAL_DRIFT = 1e-4
CYCLE_STEP_CAP = 10**9
BACKWARD_TV_TARGET = 1e-3
_AUTO_BURN_FACTOR = 50.0
_MAX_AUTO_BURN = 1_000_000


# ---------------------------------------------------------------------------
# configuration and result containers
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class PathConfig:
    """Barrier placement and run length for reflected runs.

    A sampling run advances ``burn_in + horizon`` steps and returns the final
    value as the stationary draw; a recorded trajectory covers the last
    ``horizon`` steps.  ``burn_in="auto"`` resolves to ``ceil(50/|drift|)``
    steps, enough that the mass missed by truncating the backward
    representation is a factor ~e^{-50*alpha} below the tail itself.
    """

    barrier: float = 1.0
    upper_barrier: float | None = None
    horizon: int = 16
    burn_in: int | str = "auto"
    initial_value: float | None = None

    def __post_init__(self):
        if not (self.barrier > 0 and math.isfinite(self.barrier)):
            raise SpecError("barrier must be positive and finite")
        if self.upper_barrier is not None and self.upper_barrier < self.barrier:
            raise SpecError("upper barrier must not lie below the lower barrier")
        if self.horizon < 0:
            raise SpecError("horizon must be nonnegative")
        if isinstance(self.burn_in, str):
            if self.burn_in != "auto":
                raise SpecError("burn_in must be an integer or 'auto'")
        elif self.burn_in < 0:
            raise SpecError("burn_in must be nonnegative")
        if self.initial_value is not None and self.initial_value < self.barrier:
            raise SpecError("initial value must not start below the barrier")

    @property
    def start_value(self) -> float:
        return self.barrier if self.initial_value is None else self.initial_value

    def integer_barrier(self) -> int:
        if int(self.barrier) != self.barrier or self.barrier < 1:
            raise SpecError("branching runs need an integer barrier >= 1")
        return int(self.barrier)


@dataclass
class TrajectorySample:
    """One recorded path.  ``values`` are logs when ``log_domain`` is set."""

    values: np.ndarray
    log_domain: bool
    regeneration_indices: np.ndarray
    absorption_index: int | None = None

    def validate_floor(self, floor: float) -> None:
        if self.values.size and float(self.values.min()) < floor:
            raise AssertionError("reflected path fell below its barrier")


@dataclass
class TailSampleSet:
    """Stationary draws of a positive quantity, stored as natural logs."""

    samples: np.ndarray
    kind: str
    meta: dict = field(default_factory=dict)

    _FLOORED = ("rmp", "rmbp", "queue", "truncated")

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=float)
        if self.kind in self._FLOORED and "barrier" in self.meta:
            floor = math.log(self.meta["barrier"])
            if self.samples.size and float(self.samples.min()) < floor - 1e-12:
                raise SpecError(f"{self.kind} samples fall below the barrier")

    @property
    def n(self) -> int:
        return int(self.samples.size)

    def linear(self) -> np.ndarray:
        """Samples on the original (linear) scale."""
        return np.exp(self.samples)

    def powered(self, beta: float) -> np.ndarray:
        """exp(beta * log sample); rescaling used by the heavy-traffic checks."""
        scaled = beta * self.samples
        if scaled.size and scaled.max() > 700:
            warnings.warn("powered samples overflow doubles; clipping", RuntimeWarning)
            scaled = np.minimum(scaled, 700)
        return np.exp(scaled)


@dataclass(frozen=True)
class AbsorbingSystemSpec:
    """Arrival/evolution/absorption system: Poisson arrivals of branching objects.

    Each arriving object starts at the barrier and is removed once its size
    falls back to the barrier or below.
    """

    arrival_rate: float
    offspring: OffspringSpec
    modulator: ModulatorSpec
    barrier: int = 1

    def __post_init__(self):
        if not (self.arrival_rate >= 0 and math.isfinite(self.arrival_rate)):
            raise SpecError("arrival rate must be nonnegative and finite")
        if self.modulator.kind != "iid":
            raise SpecError("the absorbing aggregate requires an i.i.d. modulator")
        check_offspring_states(self.offspring, self.modulator)
        if int(self.barrier) != self.barrier or self.barrier < 1:
            raise SpecError("barrier must be an integer >= 1")
        if not self.offspring.mean_log_mean(self.modulator) < 0:
            raise DriftError("absorbing aggregate needs E[log mean-offspring] < 0")


# ---------------------------------------------------------------------------
# increment streams
# ---------------------------------------------------------------------------

class IncrementStream:
    """Per-batch source of log-multiplier increments, one vector per time step."""

    def __init__(self, source: IncrementSource, gen: np.random.Generator, n: int):
        self.source = source
        self.n = n
        if isinstance(source, ModulatorSpec):
            self._log_values = source.log_values
            self._states = initial_states(source, gen, n) if source.kind == "markov" else None
        else:
            self._states = None

    def step(self, gen: np.random.Generator) -> np.ndarray:
        src = self.source
        if isinstance(src, ModulatorSpec):
            if src.kind == "iid":
                cum = np.cumsum(src.probs)
                states = np.searchsorted(cum, gen.random(self.n), side="right")
                return self._log_values[states]
            x = self._log_values[self._states]
            self._states = step_states(src, self._states, gen)
            return x
        return src.sample(gen, self.n)


def _require_negative_drift(drift: float, force: bool, what: str) -> None:
    if not drift < 0:
        if force:
            warnings.warn(f"{what}: drift {drift:.4g} >= 0, no stationary limit exists",
                          RuntimeWarning)
            return
        raise DriftError(
            f"{what}: E[log multiplier] = {drift:.4g} >= 0; stationary sampling "
            "refused (pass force=True to override)")


def resolve_burn_in(burn_in: int | str, drift: float) -> int:
    if not isinstance(burn_in, str):
        return int(burn_in)
    if drift >= 0:
        return 0  # only reachable under force=True; no stationary target exists
    steps = math.ceil(_AUTO_BURN_FACTOR / abs(drift))
    if steps > _MAX_AUTO_BURN:
        raise DriftError(
            f"auto burn-in of {steps} steps at drift {drift:.3g} is impractical; "
            "pass an explicit burn_in")
    return steps


# ---------------------------------------------------------------------------
# unreflected branching
# ---------------------------------------------------------------------------

def run_mbp(modulator: ModulatorSpec, offspring: OffspringSpec, initial: int,
            horizon: int, rng: RngStream) -> TrajectorySample:
    """Unreflected branching path; stops early at absorption and records where."""
    check_offspring_states(offspring, modulator)
    if initial < 1:
        raise SpecError("initial population must be >= 1")
    gen = rng.generator()
    values = [np.int64(initial)]
    state = int(initial_states(modulator, gen, 1)[0])
    pop = np.asarray([initial], dtype=np.int64)
    absorption = None
    for t in range(horizon):
        pop = offspring_sum_batch(offspring, np.asarray([state]), pop, gen, step=t + 1)
        values.append(pop[0])
        if modulator.kind == "markov":
            state = int(step_states(modulator, np.asarray([state]), gen)[0])
        else:
            state = int(initial_states(modulator, gen, 1)[0])
        if pop[0] == 0:
            absorption = t + 1
            break
    return TrajectorySample(values=np.asarray(values, dtype=np.int64), log_domain=False,
                            regeneration_indices=np.asarray([], dtype=np.int64),
                            absorption_index=absorption)


def sample_absorption_times(modulator: ModulatorSpec, offspring: OffspringSpec,
                            initial: int, horizon: int, rng: RngStream,
                            n: int) -> np.ndarray:
    """Absorption step per path (``horizon + 1`` marks survival past the horizon)."""
    check_offspring_states(offspring, modulator)
    gen = rng.generator()
    pop = np.full(n, initial, dtype=np.int64)
    states = initial_states(modulator, gen, n)
    out = np.full(n, horizon + 1, dtype=np.int64)
    active = pop > 0
    for t in range(1, horizon + 1):
        if not active.any():
            break
        idx = np.nonzero(active)[0]
        pop[idx] = offspring_sum_batch(offspring, states[idx], pop[idx], gen, step=t)
        died = idx[pop[idx] == 0]
        out[died] = t
        active[died] = False
        states = step_states(modulator, states, gen) if modulator.kind == "markov" \
            else initial_states(modulator, gen, n)
    return out


# ---------------------------------------------------------------------------
# reflected branching
# ---------------------------------------------------------------------------

def _rmbp_setup(modulator: ModulatorSpec, offspring: OffspringSpec, cfg: PathConfig,
                force: bool) -> tuple[int, int, int]:
    check_offspring_states(offspring, modulator)
    barrier = cfg.integer_barrier()
    if offspring.min_mean <= 0:
        warnings.warn("some state has zero mean offspring; power-law asymptotics "
                      "do not apply", RuntimeWarning)
    drift = offspring.mean_log_mean(modulator)
    _require_negative_drift(drift, force, "reflected branching run")
    burn = resolve_burn_in(cfg.burn_in, drift)
    start = int(cfg.start_value)
    if start != cfg.start_value:
        raise SpecError("branching runs need an integer initial value")
    return barrier, burn, start


def sample_rmbp(modulator: ModulatorSpec, offspring: OffspringSpec, cfg: PathConfig,
                rng: RngStream, n: int, force: bool = False) -> np.ndarray:
    """``n`` independent stationary draws of the reflected branching process."""
    barrier, burn, start = _rmbp_setup(modulator, offspring, cfg, force)
    gen = rng.generator()
    pop = np.full(n, start, dtype=np.int64)
    states = initial_states(modulator, gen, n)
    lo = np.int64(barrier)
    for t in range(burn + cfg.horizon):
        pop = np.maximum(offspring_sum_batch(offspring, states, pop, gen, step=t + 1), lo)
        states = step_states(modulator, states, gen) if modulator.kind == "markov" \
            else initial_states(modulator, gen, n)
    return pop


def run_rmbp(modulator: ModulatorSpec, offspring: OffspringSpec, cfg: PathConfig,
             rng: RngStream, force: bool = False, record_path: bool = False):
    """One stationary draw; optionally also the recorded post-burn-in path."""
    barrier, burn, start = _rmbp_setup(modulator, offspring, cfg, force)
    gen = rng.generator()
    pop = np.asarray([start], dtype=np.int64)
    state = initial_states(modulator, gen, 1)
    lo = np.int64(barrier)
    recorded = []
    for t in range(burn + cfg.horizon):
        pop = np.maximum(offspring_sum_batch(offspring, state, pop, gen, step=t + 1), lo)
        state = step_states(modulator, state, gen) if modulator.kind == "markov" \
            else initial_states(modulator, gen, 1)
        if record_path and t >= burn:
            recorded.append(pop[0])
    draw = int(pop[0])
    if not record_path:
        return draw
    values = np.asarray(recorded, dtype=np.int64)
    traj = TrajectorySample(values=values, log_domain=False,
                            regeneration_indices=np.nonzero(values == barrier)[0])
    traj.validate_floor(barrier)
    return draw, traj


def run_rmbp_coupled(modulator: ModulatorSpec, offspring: OffspringSpec,
                     barriers: Sequence[int], horizon: int,
                     rng: RngStream) -> np.ndarray:
    """Paths for several barrier levels driven by one shared offspring array.

    Individual i at step n consumes the same offspring draw in every coupled
    copy, so a higher barrier dominates pathwise, not just in distribution.
    """
    check_offspring_states(offspring, modulator)
    from .sampling import _individual_draws  # per-individual reference sampler
    gen = rng.generator()
    levels = np.asarray(sorted(int(b) for b in barriers), dtype=np.int64)
    if np.any(levels < 1):
        raise SpecError("barriers must be integers >= 1")
    pops = levels.copy()
    out = np.empty((len(levels), horizon + 1), dtype=np.int64)
    out[:, 0] = pops
    state = int(initial_states(modulator, gen, 1)[0])
    for t in range(horizon):
        need = int(pops.max())
        draws = _individual_draws(offspring.per_state[state], need, gen)
        prefix = np.concatenate([[0], np.cumsum(draws)])
        pops = np.maximum(prefix[pops], levels)
        out[:, t + 1] = pops
        state = int(step_states(modulator, np.asarray([state]), gen)[0]) \
            if modulator.kind == "markov" else int(initial_states(modulator, gen, 1)[0])
    return out


def sample_rmbp_shared_env_pair(modulator: ModulatorSpec, offspring: OffspringSpec,
                                y1: int, y2: int, steps: int, rng: RngStream,
                                n: int) -> tuple[np.ndarray, np.ndarray]:
    """Joint draws of two reflected runs sharing the environment path.

    The two copies see identical modulator states but independent offspring
    noise, the coupling under which the barrier is subadditive in
    distribution.
    """
    check_offspring_states(offspring, modulator)
    gen = rng.generator()
    p1 = np.full(n, int(y1), dtype=np.int64)
    p2 = np.full(n, int(y2), dtype=np.int64)
    states = initial_states(modulator, gen, n)
    for t in range(steps):
        p1 = np.maximum(offspring_sum_batch(offspring, states, p1, gen, step=t + 1), y1)
        p2 = np.maximum(offspring_sum_batch(offspring, states, p2, gen, step=t + 1), y2)
        states = step_states(modulator, states, gen) if modulator.kind == "markov" \
            else initial_states(modulator, gen, n)
    return p1, p2


# ---------------------------------------------------------------------------
# reflected multiplicative process and its queueing dual
# ---------------------------------------------------------------------------

def _sample_reflected_log(source: IncrementSource, gen: np.random.Generator, n: int,
                          steps: int, floor_log: float, init_log: float,
                          upper_log: float | None = None,
                          record: bool = False):
    q = np.full(n, init_log, dtype=float)
    stream = IncrementStream(source, gen, n)
    recorded = np.empty((steps, n)) if record else None
    for t in range(steps):
        q = np.maximum(q + stream.step(gen), floor_log)
        if upper_log is not None:
            q = np.minimum(q, upper_log)
        if record:
            recorded[t] = q
    return (q, recorded) if record else q


def sample_rmp(source: IncrementSource, cfg: PathConfig, rng: RngStream, n: int,
               force: bool = False) -> np.ndarray:
    """Stationary draws of the reflected multiplicative process, as logs."""
    drift = drift_of(source)
    _require_negative_drift(drift, force, "reflected multiplicative run")
    burn = resolve_burn_in(cfg.burn_in, drift)
    return _sample_reflected_log(source, rng.generator(), n, burn + cfg.horizon,
                                 math.log(cfg.barrier), math.log(cfg.start_value))


def sample_rmp_harvest(source: IncrementSource, cfg: PathConfig, rng: RngStream,
                       n: int, n_paths: int = 5000, thin: int = 100,
                       force: bool = False) -> np.ndarray:
    """``n`` stationary draws harvested from long paths (log domain).

    Runs ``n_paths`` independent reflected walks through the burn-in and then
    records each path every ``thin`` steps until ``n`` values are collected.
    Draws from the same path are correlated, so this sampler suits slope and
    plateau estimation in near-critical or long-memory regimes where fully
    independent draws would need one run of the whole burn-in each; it is not
    a substitute where independence matters (KS tests).
    """
    drift = drift_of(source)
    _require_negative_drift(drift, force, "reflected multiplicative run")
    burn = resolve_burn_in(cfg.burn_in, drift)
    gen = rng.generator()
    floor = math.log(cfg.barrier)
    q = np.full(n_paths, math.log(cfg.start_value))
    stream = IncrementStream(source, gen, n_paths)
    for _ in range(burn):
        q = np.maximum(q + stream.step(gen), floor)
    rounds = (n + n_paths - 1) // n_paths
    out = np.empty(rounds * n_paths)
    out[:n_paths] = q
    for r in range(1, rounds):
        for _ in range(thin):
            q = np.maximum(q + stream.step(gen), floor)
        out[r * n_paths:(r + 1) * n_paths] = q
    return out[:n]


def run_rmp(source: IncrementSource, cfg: PathConfig, rng: RngStream,
            force: bool = False, record_path: bool = False):
    """One stationary draw (log domain), optionally with the recorded path."""
    drift = drift_of(source)
    _require_negative_drift(drift, force, "reflected multiplicative run")
    burn = resolve_burn_in(cfg.burn_in, drift)
    floor = math.log(cfg.barrier)
    gen = rng.generator()
    if not record_path:
        return float(_sample_reflected_log(source, gen, 1, burn + cfg.horizon, floor,
                                           math.log(cfg.start_value))[0])
    q, rec = _sample_reflected_log(source, gen, 1, burn + cfg.horizon, floor,
                                   math.log(cfg.start_value), record=True)
    values = rec[burn:, 0]
    traj = TrajectorySample(values=values, log_domain=True,
                            regeneration_indices=np.nonzero(values == floor)[0])
    traj.validate_floor(floor)
    return float(q[0]), traj


def sample_queue(source: IncrementSource, cfg: PathConfig, rng: RngStream, n: int,
                 force: bool = False) -> np.ndarray:
    """Stationary waiting-time draws: the same recursion as sample_rmp floored at 0."""
    drift = drift_of(source)
    _require_negative_drift(drift, force, "waiting-time run")
    burn = resolve_burn_in(cfg.burn_in, drift)
    return _sample_reflected_log(source, rng.generator(), n, burn + cfg.horizon, 0.0,
                                 math.log(cfg.start_value))


def run_queue(source: IncrementSource, cfg: PathConfig, rng: RngStream,
              force: bool = False, record_path: bool = False):
    drift = drift_of(source)
    _require_negative_drift(drift, force, "waiting-time run")
    burn = resolve_burn_in(cfg.burn_in, drift)
    gen = rng.generator()
    if not record_path:
        return float(_sample_reflected_log(source, gen, 1, burn + cfg.horizon, 0.0,
                                           math.log(cfg.start_value))[0])
    q, rec = _sample_reflected_log(source, gen, 1, burn + cfg.horizon, 0.0,
                                   math.log(cfg.start_value), record=True)
    values = rec[burn:, 0]
    traj = TrajectorySample(values=values, log_domain=True,
                            regeneration_indices=np.nonzero(values == 0.0)[0])
    traj.validate_floor(0.0)
    return float(q[0]), traj


def sample_truncated(source: IncrementSource, cfg: PathConfig, rng: RngStream, n: int,
                     offspring: OffspringSpec | None = None,
                     modulator: ModulatorSpec | None = None,
                     force: bool = False) -> np.ndarray:
    """Two-barrier runs: each step is clamped into [barrier, upper_barrier].

    Returns logs for multiplicative runs and integer counts for branching runs
    (pass ``offspring`` together with ``modulator``).
    """
    if cfg.upper_barrier is None:
        raise SpecError("truncated runs need an upper barrier")
    if offspring is not None:
        mod = modulator if modulator is not None else source
        if not isinstance(mod, ModulatorSpec):
            raise SpecError("branching truncation needs a finite-state modulator")
        barrier, burn, start = _rmbp_setup(mod, offspring, cfg, force)
        hi = np.int64(int(cfg.upper_barrier))
        gen = rng.generator()
        pop = np.minimum(np.full(n, start, dtype=np.int64), hi)
        states = initial_states(mod, gen, n)
        for t in range(burn + cfg.horizon):
            raw = offspring_sum_batch(offspring, states, pop, gen, step=t + 1)
            pop = np.minimum(np.maximum(raw, np.int64(barrier)), hi)
            states = step_states(mod, states, gen) if mod.kind == "markov" \
                else initial_states(mod, gen, n)
        return pop
    drift = drift_of(source)
    _require_negative_drift(drift, force, "truncated multiplicative run")
    burn = resolve_burn_in(cfg.burn_in, drift)
    return _sample_reflected_log(source, rng.generator(), n, burn + cfg.horizon,
                                 math.log(cfg.barrier),
                                 min(math.log(cfg.start_value), math.log(cfg.upper_barrier)),
                                 upper_log=math.log(cfg.upper_barrier))


# ---------------------------------------------------------------------------
# backward representation
# ---------------------------------------------------------------------------

def backward_horizon(drift: float, tv_target: float = BACKWARD_TV_TARGET) -> int:
    """Steps after which the residual running-product supremum is negligible."""
    return math.ceil(-(math.log(tv_target) + 40.0) / drift)


def sample_backward_sup(source: IncrementSource, horizon: int | None, rng: RngStream,
                        n: int) -> np.ndarray:
    """Draws of the supremum of backward partial products (log domain)."""
    drift = drift_of(source)
    if not drift < 0:
        raise DriftError(f"backward supremum needs E[log multiplier] < 0, got {drift:.4g}")
    steps = backward_horizon(drift) if horizon is None else int(horizon)
    gen = rng.generator()
    s = np.zeros(n)
    best = np.zeros(n)  # the empty product contributes sup >= 1
    stream = IncrementStream(source, gen, n)
    for _ in range(steps):
        s = s + stream.step(gen)
        np.maximum(best, s, out=best)
    return best


def backward_sup(source: IncrementSource, horizon: int | None, rng: RngStream) -> float:
    return float(sample_backward_sup(source, horizon, rng, 1)[0])


# ---------------------------------------------------------------------------
# cycles with an absorbing barrier
# ---------------------------------------------------------------------------

@dataclass
class CycleMaxSamples:
    """Per-cycle maxima (log domain), cycle lengths, and terminal overshoots."""

    log_max: np.ndarray
    length: np.ndarray
    overshoot: np.ndarray


def _check_cycle_source(source: IncrementSource, allow_near_critical: bool) -> float:
    if isinstance(source, ModulatorSpec) and source.kind != "iid":
        raise SpecError("cycle simulation requires i.i.d. multipliers")
    drift = drift_of(source)
    if not drift < 0:
        raise DriftError(f"cycle simulation needs E[log multiplier] < 0, got {drift:.4g}")
    if abs(drift) < NEAR_CRITICAL_DRIFT and not allow_near_critical:
        raise DriftError(
            f"drift {drift:.2e} is nearly critical; cycles would be enormous "
            "(pass allow_near_critical=True to insist)")
    return drift


def sample_cycle_max(source: IncrementSource, rng: RngStream, n: int,
                     step_cap: int = CYCLE_STEP_CAP,
                     allow_near_critical: bool = False) -> CycleMaxSamples:
    """Simulate ``n`` cycles of the log walk until first passage below 0."""
    _check_cycle_source(source, allow_near_critical)
    gen = rng.generator()
    s = np.zeros(n)
    best = np.full(n, -np.inf)
    length = np.zeros(n, dtype=np.int64)
    overshoot = np.zeros(n)
    active = np.ones(n, dtype=bool)
    steps = 0
    while active.any():
        steps += 1
        if steps > step_cap:
            raise DriftError(f"cycle exceeded the {step_cap}-step cap; drift is "
                             "likely near-critical")
        idx = np.nonzero(active)[0]
        x = _iid_step(source, gen, idx.size)
        s[idx] += x
        best[idx] = np.maximum(best[idx], s[idx])
        done = idx[s[idx] <= 0.0]
        length[done] = steps
        overshoot[done] = s[done]
        active[done] = False
    return CycleMaxSamples(log_max=best, length=length, overshoot=overshoot)


def _iid_step(source: IncrementSource, gen: np.random.Generator, size: int) -> np.ndarray:
    if isinstance(source, ModulatorSpec):
        cum = np.cumsum(source.probs)
        states = np.searchsorted(cum, gen.random(size), side="right")
        return source.log_values[states]
    return source.sample(gen, size)


def run_cycle_max(source: IncrementSource, rng: RngStream,
                  step_cap: int = CYCLE_STEP_CAP,
                  allow_near_critical: bool = False) -> tuple[float, int, float]:
    """One cycle: (cycle maximum on the linear scale, cycle length, overshoot)."""
    out = sample_cycle_max(source, rng, 1, step_cap, allow_near_critical)
    return float(math.exp(out.log_max[0])), int(out.length[0]), float(out.overshoot[0])


# ---------------------------------------------------------------------------
# randomly stopped runs
# ---------------------------------------------------------------------------

def sample_stopped_product(source: IncrementSource, stop: StopSpec, rng: RngStream,
                           n: int) -> np.ndarray:
    """log of the product of N multipliers, N drawn from the stop rule.

    N = 0 yields the empty product (log 0 ... = 0.0 in the log domain, i.e.
    the product 1); the stop count is independent of the path.
    """
    gen = rng.generator()
    ns = stop.sample(gen, n)
    s = np.zeros(n)
    stream = IncrementStream(source, gen, n)
    active = ns > 0
    t = 0
    while active.any():
        t += 1
        x = stream.step(gen)
        s[active] += x[active]
        active = ns > t
    return s


def run_stopped_product(source: IncrementSource, stop: StopSpec, rng: RngStream) -> float:
    return float(sample_stopped_product(source, stop, rng, 1)[0])


def sample_stopped_branching(modulator: ModulatorSpec, offspring: OffspringSpec,
                             stop: StopSpec, initial: int, rng: RngStream,
                             n: int) -> np.ndarray:
    """Z_N draws for a stop count independent of the branching noise."""
    check_offspring_states(offspring, modulator)
    if offspring.min_support < 1:
        raise SpecError("stopped branching requires offspring support >= 1 in every state")
    if initial < 1:
        raise SpecError("initial population must be >= 1")
    gen = rng.generator()
    ns = stop.sample(gen, n)
    pop = np.full(n, initial, dtype=np.int64)
    states = initial_states(modulator, gen, n)
    t = 0
    active = ns > 0
    while active.any():
        t += 1
        idx = np.nonzero(active)[0]
        pop[idx] = offspring_sum_batch(offspring, states[idx], pop[idx], gen, step=t)
        states = step_states(modulator, states, gen) if modulator.kind == "markov" \
            else initial_states(modulator, gen, n)
        active = ns > t
    return pop


def run_stopped_branching(modulator: ModulatorSpec, offspring: OffspringSpec,
                          stop: StopSpec, initial: int, rng: RngStream) -> int:
    return int(sample_stopped_branching(modulator, offspring, stop, initial, rng, 1)[0])


# ---------------------------------------------------------------------------
# absorbing aggregate
# ---------------------------------------------------------------------------

@dataclass
class AbsorbingRunStats:
    mean_alive: float
    alive_se: float
    completed_lifetimes: int
    mean_lifetime: float


def estimate_absorption_time(spec: AbsorbingSystemSpec, rng: RngStream, n: int,
                             cap: int = 100_000) -> np.ndarray:
    """Standalone lifetimes of single objects started at the barrier."""
    gen = rng.generator()
    pop = np.full(n, spec.barrier, dtype=np.int64)
    out = np.zeros(n, dtype=np.int64)
    active = np.ones(n, dtype=bool)
    t = 0
    while active.any():
        t += 1
        if t > cap:
            out[active] = cap
            warnings.warn("some object lifetimes hit the simulation cap", RuntimeWarning)
            break
        idx = np.nonzero(active)[0]
        states = initial_states(spec.modulator, gen, idx.size)
        pop[idx] = offspring_sum_batch(spec.offspring, states, pop[idx], gen, step=t)
        done = idx[pop[idx] <= spec.barrier]
        out[done] = t
        active[done] = False
    return out


def sample_absorbing_aggregate(spec: AbsorbingSystemSpec, horizon: int | str,
                               rng: RngStream, n: int,
                               ) -> tuple[np.ndarray, AbsorbingRunStats]:
    """Total object size at the final slot across ``n`` independent systems."""
    pilot = estimate_absorption_time(spec, rng.child(0x9111), 512)
    ep = float(pilot.mean())
    if isinstance(horizon, str):
        if horizon != "auto":
            raise SpecError("horizon must be an integer or 'auto'")
        slots = int(math.ceil(25 * ep)) + 5
    else:
        slots = int(horizon)
        if slots <= 20 * ep:
            raise SpecError(f"horizon {slots} does not exceed 20 estimated "
                            f"absorption times (~{20 * ep:.1f} slots)")
    gen = rng.generator()
    obj_rep = np.empty(0, dtype=np.int64)
    obj_size = np.empty(0, dtype=np.int64)
    final_sizes = np.zeros(n, dtype=np.int64)
    alive_counts = np.zeros(n, dtype=np.int64)
    lifetimes_sum = 0
    lifetimes_n = 0
    obj_birth = np.empty(0, dtype=np.int64)
    burn_slot = slots - max(1, int(math.ceil(ep)))  # lifetime stats from a dedicated run
    for t in range(slots):
        if obj_rep.size:
            states = initial_states(spec.modulator, gen, obj_rep.size)
            obj_size = offspring_sum_batch(spec.offspring, states, obj_size, gen, step=t)
            gone = obj_size <= spec.barrier
            if gone.any():
                lifetimes_sum += int(np.sum(t - obj_birth[gone]))
                lifetimes_n += int(gone.sum())
            keep = ~gone
            obj_rep, obj_size, obj_birth = obj_rep[keep], obj_size[keep], obj_birth[keep]
        arrivals = gen.poisson(spec.arrival_rate, size=n)
        total_new = int(arrivals.sum())
        if total_new:
            new_reps = np.repeat(np.arange(n, dtype=np.int64), arrivals)
            obj_rep = np.concatenate([obj_rep, new_reps])
            obj_size = np.concatenate([obj_size,
                                       np.full(total_new, spec.barrier, dtype=np.int64)])
            obj_birth = np.concatenate([obj_birth, np.full(total_new, t, dtype=np.int64)])
        if t == slots - 1:
            np.add.at(final_sizes, obj_rep, obj_size)
            alive_counts = np.bincount(obj_rep, minlength=n)
    mean_alive = float(alive_counts.mean())
    alive_se = float(alive_counts.std(ddof=1) / math.sqrt(n)) if n > 1 else 0.0
    mean_lifetime = lifetimes_sum / lifetimes_n if lifetimes_n else float("nan")
    return final_sizes, AbsorbingRunStats(mean_alive=mean_alive, alive_se=alive_se,
                                          completed_lifetimes=lifetimes_n,
                                          mean_lifetime=mean_lifetime)


def run_absorbing_aggregate(spec: AbsorbingSystemSpec, horizon: int | str,
                            rng: RngStream) -> int:
    draws, _ = sample_absorbing_aggregate(spec, horizon, rng, 1)
    return int(draws[0])

"""Sampling primitives: environment paths and offspring sums.

Offspring sums exploit closure under convolution so that the sum over a large
population costs one draw: n Poisson(m) copies fold into Poisson(n*m), a
two-point law into a binomial count, a general finite law into conditional
binomials (an exact multinomial).  Populations above the spec's
``normal_threshold`` fall back to a moment-matched Normal.
"""

from __future__ import annotations

import numpy as np

from .errors import SaturationError, SpecError
from .rng import RngStream
from .specs import (Deterministic, GeneralDiscrete, ModulatorSpec, OffspringDist,
                    OffspringSpec, Poisson, TwoPoint)

# saturation guard: stay well inside signed 64-bit so intermediate sums cannot wrap
COUNT_LIMIT = np.int64(2**62)
_POISSON_LAM_LIMIT = 4.0e18  # numpy's sampler rejects larger rates


def sample_state_path(spec: ModulatorSpec, horizon: int, rng: RngStream) -> np.ndarray:
    """One realization of the environment over ``horizon`` steps.

    Markov paths start from a draw of the spec's initial distribution, which
    defaults to the stationary one so forward runs begin in steady state.
    """
    if horizon < 1:
        raise SpecError("horizon must be >= 1")
    gen = rng.generator()
    if spec.kind == "iid":
        cum = np.cumsum(spec.probs)
        return np.searchsorted(cum, gen.random(horizon), side="right").astype(np.int64)
    cum_rows = spec.transition_cum
    out = np.empty(horizon, dtype=np.int64)
    state = int(np.searchsorted(np.cumsum(spec.initial_dist), gen.random(), side="right"))
    us = gen.random(horizon)
    for t in range(horizon):
        out[t] = state
        state = int(np.searchsorted(cum_rows[state], us[t], side="right"))
    return out


def initial_states(spec: ModulatorSpec, gen: np.random.Generator, size: int) -> np.ndarray:
    cum = np.cumsum(spec.initial_dist)
    return np.searchsorted(cum, gen.random(size), side="right").astype(np.int64)


def step_states(spec: ModulatorSpec, states: np.ndarray,
                gen: np.random.Generator) -> np.ndarray:
    """Advance one step: fresh i.i.d. draws, or one Markov transition per path."""
    if spec.kind == "iid":
        cum = np.cumsum(spec.probs)
        return np.searchsorted(cum, gen.random(states.shape[0]), side="right").astype(np.int64)
    out = np.empty_like(states)
    u = gen.random(states.shape[0])
    cum_rows = spec.transition_cum
    for s in range(spec.n_states):
        mask = states == s
        if mask.any():
            out[mask] = np.searchsorted(cum_rows[s], u[mask], side="right")
    return out


# ---------------------------------------------------------------------------
# offspring sums
# ---------------------------------------------------------------------------

def sample_offspring_sum(spec: OffspringSpec, state: int, n: int, rng: RngStream) -> int:
    """Draw the total offspring of ``n`` individuals in the given state."""
    if n < 0:
        raise SpecError("population count must be nonnegative")
    gen = rng.generator()
    out = _sum_batch(spec.per_state[state], np.asarray([n], dtype=np.int64), gen,
                     spec.normal_threshold, spec.variances[state])
    _check_saturation(out, step=None)
    return int(out[0])


def sample_offspring_individuals(spec: OffspringSpec, state: int, n: int,
                                 rng: RngStream) -> np.ndarray:
    """Explicit per-individual draws (reference path for the convolution shortcuts)."""
    gen = rng.generator()
    return _individual_draws(spec.per_state[state], n, gen)


def offspring_sum_batch(spec: OffspringSpec, states: np.ndarray, counts: np.ndarray,
                        gen: np.random.Generator, step: int | None = None) -> np.ndarray:
    """Vectorized offspring sums for one time step across many paths."""
    if _all_poisson(spec) and counts.size and counts.max() <= spec.normal_threshold:
        # single fused draw; folding n Poisson(m) copies into Poisson(n*m)
        lam = counts * spec.means[states]
        if float(lam.max()) > _POISSON_LAM_LIMIT:
            raise SaturationError("poisson rate exceeded the sampler's range", step=step)
        out = gen.poisson(lam).astype(np.int64, copy=False)
        _check_saturation(out, step)
        return out
    out = np.zeros(counts.shape[0], dtype=np.int64)
    for s in range(spec.n_states):
        mask = states == s
        if mask.any():
            out[mask] = _sum_batch(spec.per_state[s], counts[mask], gen,
                                   spec.normal_threshold, spec.variances[s])
    _check_saturation(out, step)
    return out


def _all_poisson(spec: OffspringSpec) -> bool:
    flag = getattr(spec, "_all_poisson_flag", None)
    if flag is None:
        flag = all(isinstance(d, Poisson) for d in spec.per_state)
        object.__setattr__(spec, "_all_poisson_flag", flag)
    return flag


def _check_saturation(values: np.ndarray, step: int | None) -> None:
    if values.size and int(values.max()) >= COUNT_LIMIT:
        raise SaturationError("population count saturated the 64-bit range", step=step)


def _sum_batch(dist: OffspringDist, n: np.ndarray, gen: np.random.Generator,
               normal_threshold: float, variance: float) -> np.ndarray:
    out = np.zeros(n.shape[0], dtype=np.int64)
    big = n.astype(float) > normal_threshold
    exact = ~big
    if exact.any():
        out[exact] = _sum_exact(dist, n[exact], gen)
    if big.any():
        out[big] = _sum_normal(dist.mean, variance, n[big], gen)
    return out


def _sum_exact(dist: OffspringDist, n: np.ndarray, gen: np.random.Generator) -> np.ndarray:
    if isinstance(dist, Deterministic):
        out = n * np.int64(dist.count)
        if dist.count and np.any(out // dist.count != n):
            raise SaturationError("deterministic offspring product overflowed")
        return out
    if isinstance(dist, Poisson):
        lam = n.astype(float) * dist.mean_offspring
        if np.any(lam > _POISSON_LAM_LIMIT):
            raise SaturationError("poisson rate exceeded the sampler's range")
        return gen.poisson(lam).astype(np.int64)
    if isinstance(dist, TwoPoint):
        k = gen.binomial(n, dist.p)
        return k * np.int64(dist.a) + (n - k) * np.int64(dist.b)
    if isinstance(dist, GeneralDiscrete):
        return _multinomial_sum(dist, n, gen)
    raise SpecError(f"unknown offspring distribution {dist!r}")


def _multinomial_sum(dist: GeneralDiscrete, n: np.ndarray,
                     gen: np.random.Generator) -> np.ndarray:
    # exact multinomial via sequential conditional binomials, vectorized over paths
    remaining = n.copy()
    remaining_p = 1.0
    total = np.zeros(n.shape[0], dtype=np.int64)
    for value, p in zip(dist.support[:-1], dist.probs[:-1]):
        if remaining_p <= 0:
            break
        frac = min(1.0, p / remaining_p)
        k = gen.binomial(remaining, frac)
        total += k * np.int64(value)
        remaining = remaining - k
        remaining_p -= p
    total += remaining * np.int64(dist.support[-1])
    return total


def _sum_normal(mean: float, variance: float, n: np.ndarray,
                gen: np.random.Generator) -> np.ndarray:
    mu = n.astype(float) * mean
    sd = np.sqrt(n.astype(float) * variance)
    draw = np.rint(gen.normal(mu, sd))
    draw = np.maximum(draw, 0.0)
    if np.any(draw >= float(COUNT_LIMIT)):
        raise SaturationError("normal-approximated offspring sum saturated")
    return draw.astype(np.int64)


def _individual_draws(dist: OffspringDist, n: int, gen: np.random.Generator) -> np.ndarray:
    if isinstance(dist, Deterministic):
        return np.full(n, dist.count, dtype=np.int64)
    if isinstance(dist, Poisson):
        return gen.poisson(dist.mean_offspring, size=n).astype(np.int64)
    if isinstance(dist, TwoPoint):
        pick = gen.random(n) < dist.p
        return np.where(pick, np.int64(dist.a), np.int64(dist.b))
    if isinstance(dist, GeneralDiscrete):
        cum = np.cumsum(dist.probs)
        idx = np.searchsorted(cum, gen.random(n), side="right")
        return np.asarray(dist.support, dtype=np.int64)[np.clip(idx, 0, len(dist.support) - 1)]
    raise SpecError(f"unknown offspring distribution {dist!r}")

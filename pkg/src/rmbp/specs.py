"""Model specifications: environments, offspring laws, increment models, stop rules.

All spec objects are frozen dataclasses, validated at construction, and safe
to share across concurrently running replications.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import Union

import numpy as np
from scipy import integrate

from .errors import DomainError, SpecError

_PROB_TOL = 1e-12


def _check_probs(p: np.ndarray, what: str) -> None:
    if np.any(p < 0):
        raise SpecError(f"{what} has negative entries")
    if abs(float(p.sum()) - 1.0) > _PROB_TOL:
        raise SpecError(f"{what} sums to {float(p.sum())!r}, not 1 within {_PROB_TOL}")


def _reachable(adj: np.ndarray, start: int) -> np.ndarray:
    seen = np.zeros(adj.shape[0], dtype=bool)
    stack = [start]
    seen[start] = True
    while stack:
        i = stack.pop()
        for j in np.nonzero(adj[i])[0]:
            if not seen[j]:
                seen[j] = True
                stack.append(int(j))
    return seen


# ---------------------------------------------------------------------------
# Modulating environment
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ModulatorSpec:
    """Finite-state environment: i.i.d. draws or an irreducible Markov chain.

    States are labelled 0..K-1; ``values[j]`` is the positive multiplier
    attached to state j (for multiplicative runs) or just an opaque index
    (for branching runs, where the offspring law carries the meaning).
    """

    kind: str  # "iid" | "markov"
    values: tuple[float, ...]
    probs: tuple[float, ...] | None = None
    transition: tuple[tuple[float, ...], ...] | None = None
    initial: tuple[float, ...] | None = None

    def __post_init__(self):
        if self.kind not in ("iid", "markov"):
            raise SpecError(f"unknown modulator kind {self.kind!r}")
        vals = np.asarray(self.values, dtype=float)
        if vals.ndim != 1 or vals.size == 0:
            raise SpecError("values must be a non-empty 1-d sequence")
        if np.any(vals <= 0) or not np.all(np.isfinite(vals)):
            raise SpecError("all multiplier values must be strictly positive and finite")
        k = vals.size
        if self.kind == "iid":
            if self.probs is None:
                raise SpecError("iid modulator requires probs")
            p = np.asarray(self.probs, dtype=float)
            if p.shape != (k,):
                raise SpecError("probs length must match values")
            _check_probs(p, "probs")
        else:
            if self.transition is None:
                raise SpecError("markov modulator requires a transition matrix")
            t = np.asarray(self.transition, dtype=float)
            if t.shape != (k, k):
                raise SpecError(f"transition matrix must be {k}x{k}")
            for i in range(k):
                _check_probs(t[i], f"transition row {i}")
            adj = t > 0
            if not (_reachable(adj, 0).all() and _reachable(adj.T, 0).all()):
                raise SpecError("transition matrix is not irreducible")
            if self.initial is not None:
                init = np.asarray(self.initial, dtype=float)
                if init.shape != (k,):
                    raise SpecError("initial distribution length must match values")
                _check_probs(init, "initial distribution")

    @classmethod
    def iid(cls, values, probs) -> "ModulatorSpec":
        return cls(kind="iid", values=tuple(float(v) for v in values),
                   probs=tuple(float(p) for p in probs))

    @classmethod
    def markov(cls, values, transition, initial=None) -> "ModulatorSpec":
        return cls(kind="markov", values=tuple(float(v) for v in values),
                   transition=tuple(tuple(float(x) for x in row) for row in transition),
                   initial=None if initial is None else tuple(float(p) for p in initial))

    @property
    def n_states(self) -> int:
        return len(self.values)

    @cached_property
    def values_array(self) -> np.ndarray:
        return np.asarray(self.values, dtype=float)

    @cached_property
    def log_values(self) -> np.ndarray:
        return np.log(self.values_array)

    @cached_property
    def stationary(self) -> np.ndarray:
        """Stationary state distribution (the probs vector in the iid case)."""
        if self.kind == "iid":
            return np.asarray(self.probs, dtype=float)
        t = np.asarray(self.transition, dtype=float)
        k = t.shape[0]
        # solve pi (P - I) = 0 with the normalization row appended
        a = np.vstack([t.T - np.eye(k), np.ones((1, k))])
        b = np.zeros(k + 1)
        b[-1] = 1.0
        pi, *_ = np.linalg.lstsq(a, b, rcond=None)
        pi = np.clip(pi, 0.0, None)
        return pi / pi.sum()

    @cached_property
    def initial_dist(self) -> np.ndarray:
        """Start distribution for forward runs; defaults to the stationary one."""
        if self.kind == "markov" and self.initial is not None:
            return np.asarray(self.initial, dtype=float)
        return self.stationary

    @cached_property
    def transition_cum(self) -> np.ndarray:
        if self.kind != "markov":
            raise SpecError("transition_cum only defined for markov modulators")
        return np.cumsum(np.asarray(self.transition, dtype=float), axis=1)

    def mean_log_value(self, values: np.ndarray | None = None) -> float:
        """Stationary mean of log(value); the drift of the log-multiplier walk."""
        v = self.log_values if values is None else _safe_log(values)
        return float(np.dot(self.stationary, v))


def _safe_log(values: np.ndarray) -> np.ndarray:
    values = np.asarray(values, dtype=float)
    out = np.full(values.shape, -np.inf)
    pos = values > 0
    out[pos] = np.log(values[pos])
    return out


# ---------------------------------------------------------------------------
# Offspring distributions
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Deterministic:
    """Every individual produces exactly ``count`` offspring."""

    count: int

    def __post_init__(self):
        if int(self.count) != self.count or self.count < 0:
            raise SpecError("deterministic offspring count must be a nonnegative integer")
        object.__setattr__(self, "count", int(self.count))

    @property
    def mean(self) -> float:
        return float(self.count)

    @property
    def variance(self) -> float:
        return 0.0

    @property
    def min_support(self) -> int:
        return self.count


@dataclass(frozen=True)
class Poisson:
    mean_offspring: float

    def __post_init__(self):
        if not (self.mean_offspring > 0 and math.isfinite(self.mean_offspring)):
            raise SpecError("poisson offspring mean must be positive and finite")

    @property
    def mean(self) -> float:
        return float(self.mean_offspring)

    @property
    def variance(self) -> float:
        return float(self.mean_offspring)

    @property
    def min_support(self) -> int:
        return 0


@dataclass(frozen=True)
class TwoPoint:
    """Offspring count ``a`` with probability ``p``, otherwise ``b``."""

    a: int
    b: int
    p: float

    def __post_init__(self):
        for v in (self.a, self.b):
            if int(v) != v or v < 0:
                raise SpecError("two-point support must be nonnegative integers")
        if not 0.0 <= self.p <= 1.0:
            raise SpecError("two-point probability must lie in [0, 1]")
        object.__setattr__(self, "a", int(self.a))
        object.__setattr__(self, "b", int(self.b))

    @property
    def mean(self) -> float:
        return self.p * self.a + (1.0 - self.p) * self.b

    @property
    def variance(self) -> float:
        return self.p * (1 - self.p) * (self.a - self.b) ** 2

    @property
    def min_support(self) -> int:
        candidates = [v for v, q in ((self.a, self.p), (self.b, 1 - self.p)) if q > 0]
        return min(candidates)


@dataclass(frozen=True)
class GeneralDiscrete:
    """Arbitrary finite offspring law on nonnegative integers."""

    support: tuple[int, ...]
    probs: tuple[float, ...]

    def __post_init__(self):
        sup = np.asarray(self.support)
        if sup.size == 0 or np.any(sup < 0) or np.any(sup != sup.astype(np.int64)):
            raise SpecError("support must be nonnegative integers")
        if len(set(self.support)) != len(self.support):
            raise SpecError("support values must be distinct")
        p = np.asarray(self.probs, dtype=float)
        if p.shape != sup.shape:
            raise SpecError("probs length must match support")
        _check_probs(p, "offspring probs")
        object.__setattr__(self, "support", tuple(int(v) for v in self.support))

    @property
    def mean(self) -> float:
        return float(np.dot(self.support, self.probs))

    @property
    def variance(self) -> float:
        m = self.mean
        return float(np.dot(np.square(np.asarray(self.support, dtype=float) - m), self.probs))

    @property
    def min_support(self) -> int:
        return min(v for v, q in zip(self.support, self.probs) if q > 0)


OffspringDist = Union[Deterministic, Poisson, TwoPoint, GeneralDiscrete]


def shifted_poisson(shift: int, mean: float, tail_cut: float = 1e-12) -> OffspringDist:
    """Finite-table approximation of ``shift + Poisson(mean)``.

    Truncates where the remaining Poisson mass drops below ``tail_cut`` and
    renormalizes; with the default cut the mean shifts by less than 1e-10.
    """
    if mean == 0:
        return Deterministic(shift)
    kmax = 1
    while 1.0 - _poisson_cdf(kmax, mean) > tail_cut:
        kmax += 1
    ks = np.arange(kmax + 1)
    probs = np.exp(-mean) * np.power(mean, ks) / np.array([math.factorial(int(k)) for k in ks])
    probs = probs / probs.sum()
    return GeneralDiscrete(tuple(int(k) + shift for k in ks), tuple(float(q) for q in probs))


def _poisson_cdf(k: int, mean: float) -> float:
    term = math.exp(-mean)
    total = term
    for i in range(1, k + 1):
        term *= mean / i
        total += term
    return total


@dataclass(frozen=True)
class OffspringSpec:
    """Per-state offspring laws plus the rule for summing many i.i.d. copies.

    Sums of ``n`` copies use closed-under-convolution shortcuts where they
    exist (Poisson, deterministic, binomial/multinomial counts); above
    ``normal_threshold`` individuals a Normal approximation with matched mean
    and variance is used, with O(1/sqrt(n)) distributional error.  Set the
    threshold to ``inf`` to force exact sampling only.
    """

    per_state: tuple[OffspringDist, ...]
    normal_threshold: float = 1e6

    def __post_init__(self):
        if len(self.per_state) == 0:
            raise SpecError("offspring spec needs at least one state")
        if not self.normal_threshold >= 1:
            raise SpecError("normal_threshold must be >= 1 (or inf)")

    @property
    def n_states(self) -> int:
        return len(self.per_state)

    @cached_property
    def means(self) -> np.ndarray:
        return np.asarray([d.mean for d in self.per_state], dtype=float)

    @cached_property
    def variances(self) -> np.ndarray:
        return np.asarray([d.variance for d in self.per_state], dtype=float)

    @property
    def min_mean(self) -> float:
        return float(self.means.min())

    @property
    def min_support(self) -> int:
        return min(d.min_support for d in self.per_state)

    def mean_log_mean(self, modulator: ModulatorSpec) -> float:
        """Drift E[log mean-offspring] under the modulator's stationary law."""
        return modulator.mean_log_value(self.means)


def check_offspring_states(offspring: OffspringSpec, modulator: ModulatorSpec) -> None:
    if modulator.kind not in ("iid", "markov"):
        raise SpecError("branching runs require a finite-state modulator")
    if offspring.n_states != modulator.n_states:
        raise SpecError(
            f"offspring spec covers {offspring.n_states} states but the modulator "
            f"has {modulator.n_states}")


# ---------------------------------------------------------------------------
# Complementary-CDF descriptors (used by the M/GI/1 stop construction)
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ExponentialTail:
    """Gbar(y) = exp(-rate * y)."""

    rate: float

    def __post_init__(self):
        if not (self.rate > 0 and math.isfinite(self.rate)):
            raise SpecError("tail rate must be positive and finite")

    def __call__(self, y: np.ndarray) -> np.ndarray:
        y = np.asarray(y, dtype=float)
        return np.where(y < 0, 1.0, np.exp(-self.rate * y))

    @property
    def exp_moment_sup(self) -> float:
        return self.rate

    def integral(self) -> float:
        return 1.0 / self.rate

    def exp_moment(self, alpha: float) -> float:
        """integral of exp(alpha*y) * Gbar(y) dy over [0, inf)."""
        if alpha >= self.rate:
            raise DomainError(f"exp moment diverges for alpha >= {self.rate}")
        val, err = integrate.quad(lambda y: math.exp((alpha - self.rate) * y), 0.0, np.inf)
        return float(val)

    def x_exp_moment(self, alpha: float) -> float:
        """integral of y * exp(alpha*y) * Gbar(y) dy over [0, inf)."""
        if alpha >= self.rate:
            raise DomainError(f"tilted first moment diverges for alpha >= {self.rate}")
        val, err = integrate.quad(lambda y: y * math.exp((alpha - self.rate) * y), 0.0, np.inf)
        return float(val)

    def sample_underlying(self, gen: np.random.Generator, size: int) -> np.ndarray:
        return gen.exponential(1.0 / self.rate, size=size)

    def sample_equilibrium(self, gen: np.random.Generator, size: int) -> np.ndarray:
        # the stationary-excess law of an exponential is the same exponential
        return gen.exponential(1.0 / self.rate, size=size)


@dataclass(frozen=True)
class TableTail:
    """Piecewise-constant Gbar: value ``values[i]`` on [breaks[i], breaks[i+1]), 0 beyond.

    Represents a discrete positive random variable with atoms at the break
    points; must start at Gbar(0) = 1 and be nonincreasing.
    """

    breaks: tuple[float, ...]
    values: tuple[float, ...]

    def __post_init__(self):
        b = np.asarray(self.breaks, dtype=float)
        v = np.asarray(self.values, dtype=float)
        if b.ndim != 1 or b.size < 2 or v.size != b.size - 1:
            raise SpecError("need n+1 breaks for n values")
        if b[0] != 0.0 or np.any(np.diff(b) <= 0):
            raise SpecError("breaks must start at 0 and increase strictly")
        if v[0] != 1.0 or np.any(v < 0) or np.any(np.diff(v) > 0):
            raise SpecError("values must start at 1 and be nonincreasing")

    def __call__(self, y: np.ndarray) -> np.ndarray:
        y = np.asarray(y, dtype=float)
        b = np.asarray(self.breaks)
        v = np.append(np.asarray(self.values), 0.0)
        idx = np.searchsorted(b, y, side="right") - 1
        idx = np.clip(idx, 0, v.size - 1)
        out = v[idx]
        return np.where(y < 0, 1.0, np.where(y >= b[-1], 0.0, out))

    @property
    def exp_moment_sup(self) -> float:
        return math.inf  # compact support

    def integral(self) -> float:
        b = np.asarray(self.breaks)
        v = np.asarray(self.values)
        return float(np.dot(v, np.diff(b)))

    def exp_moment(self, alpha: float) -> float:
        if alpha == 0:
            return self.integral()
        b = np.asarray(self.breaks)
        v = np.asarray(self.values)
        pieces = v * (np.exp(alpha * b[1:]) - np.exp(alpha * b[:-1])) / alpha
        return float(pieces.sum())

    def x_exp_moment(self, alpha: float) -> float:
        b = np.asarray(self.breaks)
        v = np.asarray(self.values)
        if alpha == 0:
            pieces = v * (b[1:] ** 2 - b[:-1] ** 2) / 2.0
            return float(pieces.sum())

        def anti(y):  # antiderivative of y * exp(alpha y)
            return np.exp(alpha * y) * (alpha * y - 1.0) / alpha**2

        return float(np.dot(v, anti(b[1:]) - anti(b[:-1])))

    @cached_property
    def _atoms(self) -> tuple[np.ndarray, np.ndarray]:
        v = np.append(np.asarray(self.values), 0.0)
        masses = -np.diff(np.concatenate([[1.0], v[1:]]))  # jumps at breaks[1:]
        pts = np.asarray(self.breaks)[1:]
        keep = masses > 0
        return pts[keep], masses[keep] / masses[keep].sum()

    def sample_underlying(self, gen: np.random.Generator, size: int) -> np.ndarray:
        pts, masses = self._atoms
        idx = np.searchsorted(np.cumsum(masses), gen.random(size), side="right")
        return pts[np.clip(idx, 0, pts.size - 1)]

    def sample_equilibrium(self, gen: np.random.Generator, size: int) -> np.ndarray:
        # density proportional to Gbar -> piecewise-linear inverse CDF
        b = np.asarray(self.breaks)
        v = np.asarray(self.values)
        seg = v * np.diff(b)
        cdf = np.concatenate([[0.0], np.cumsum(seg)]) / seg.sum()
        u = gen.random(size)
        idx = np.clip(np.searchsorted(cdf, u, side="right") - 1, 0, seg.size - 1)
        frac = (u - cdf[idx]) / (cdf[idx + 1] - cdf[idx])
        return b[idx] + frac * (b[idx + 1] - b[idx])


TailFunction = Union[ExponentialTail, TableTail]


# ---------------------------------------------------------------------------
# i.i.d. real-valued log-increment models (multiplicative runs only)
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class NormalIncrement:
    """log J ~ Normal(mean, std^2)."""

    mean: float
    std: float

    def __post_init__(self):
        if not (self.std > 0 and math.isfinite(self.std) and math.isfinite(self.mean)):
            raise SpecError("normal increment needs finite mean and positive std")

    @property
    def mean_log(self) -> float:
        return self.mean

    @property
    def var_log(self) -> float:
        return self.std**2

    @property
    def mgf_domain_sup(self) -> float:
        return math.inf

    def log_mgf(self, alpha: float) -> float:
        return self.mean * alpha + 0.5 * (self.std * alpha) ** 2

    def sample(self, gen: np.random.Generator, size: int) -> np.ndarray:
        return gen.normal(self.mean, self.std, size=size)


@dataclass(frozen=True)
class ExpDifference:
    """log J = A - C with A ~ Exp(plus_rate), C ~ Exp(minus_rate), independent."""

    plus_rate: float
    minus_rate: float

    def __post_init__(self):
        if not (self.plus_rate > 0 and self.minus_rate > 0):
            raise SpecError("both exponential rates must be positive")

    @property
    def mean_log(self) -> float:
        return 1.0 / self.plus_rate - 1.0 / self.minus_rate

    @property
    def var_log(self) -> float:
        return 1.0 / self.plus_rate**2 + 1.0 / self.minus_rate**2

    @property
    def mgf_domain_sup(self) -> float:
        return self.plus_rate

    def log_mgf(self, alpha: float) -> float:
        if alpha >= self.plus_rate:
            raise DomainError(f"E[J^alpha] diverges for alpha >= {self.plus_rate}")
        if alpha <= -self.minus_rate:
            raise DomainError(f"E[J^alpha] diverges for alpha <= {-self.minus_rate}")
        return (math.log(self.plus_rate) - math.log(self.plus_rate - alpha)
                + math.log(self.minus_rate) - math.log(self.minus_rate + alpha))

    def sample(self, gen: np.random.Generator, size: int) -> np.ndarray:
        return gen.exponential(1.0 / self.plus_rate, size=size) \
            - gen.exponential(1.0 / self.minus_rate, size=size)


@dataclass(frozen=True)
class TailEquilibrium:
    """log J >= 0 with density Gbar(y) / integral(Gbar); the stationary-excess law."""

    gbar: TailFunction

    @property
    def mean_log(self) -> float:
        return self.gbar.x_exp_moment(0.0) / self.gbar.integral()

    @property
    def var_log(self) -> float:
        m = self.mean_log
        val, _ = integrate.quad(lambda y: (y - m) ** 2 * float(self.gbar(y)), 0.0,
                                _tail_upper(self.gbar))
        return val / self.gbar.integral()

    @property
    def mgf_domain_sup(self) -> float:
        return self.gbar.exp_moment_sup

    def log_mgf(self, alpha: float) -> float:
        return math.log(self.gbar.exp_moment(alpha) / self.gbar.integral())

    def sample(self, gen: np.random.Generator, size: int) -> np.ndarray:
        return self.gbar.sample_equilibrium(gen, size)


@dataclass(frozen=True)
class MG1Increment:
    """log J = S - T: service P[S >= t] = Gbar(t), interarrival T ~ Exp(rho / E[S])."""

    gbar: TailFunction
    rho: float

    def __post_init__(self):
        if not 0 < self.rho < 1:
            raise SpecError("utilization rho must lie strictly inside (0, 1)")

    @property
    def arrival_rate(self) -> float:
        return self.rho / self.gbar.integral()

    @property
    def mean_log(self) -> float:
        return self.gbar.integral() - 1.0 / self.arrival_rate

    @property
    def var_log(self) -> float:
        es = self.gbar.integral()
        es2 = 2.0 * self.gbar.x_exp_moment(0.0)
        return (es2 - es**2) + 1.0 / self.arrival_rate**2

    @property
    def mgf_domain_sup(self) -> float:
        return self.gbar.exp_moment_sup

    def log_mgf(self, alpha: float) -> float:
        lam = self.arrival_rate
        if alpha <= -lam:
            raise DomainError(f"E[J^alpha] diverges for alpha <= {-lam}")
        # E[e^{aS}] = 1 + a * integral(e^{ay} Gbar(y) dy)
        mgf_s = 1.0 + alpha * self.gbar.exp_moment(alpha) if alpha != 0 else 1.0
        return math.log(mgf_s) + math.log(lam) - math.log(lam + alpha)

    def sample(self, gen: np.random.Generator, size: int) -> np.ndarray:
        return self.gbar.sample_underlying(gen, size) \
            - gen.exponential(1.0 / self.arrival_rate, size=size)


LogIncrementModel = Union[NormalIncrement, ExpDifference, TailEquilibrium, MG1Increment]
IncrementSource = Union[ModulatorSpec, LogIncrementModel]


def _tail_upper(gbar: TailFunction) -> float:
    if isinstance(gbar, TableTail):
        return float(gbar.breaks[-1])
    return np.inf


def drift_of(source: IncrementSource, means: np.ndarray | None = None) -> float:
    """Stationary mean of the log multiplier (log offspring-mean if ``means`` given)."""
    if isinstance(source, ModulatorSpec):
        return source.mean_log_value(means)
    if means is not None:
        raise SpecError("offspring means only combine with a finite-state modulator")
    return source.mean_log


# ---------------------------------------------------------------------------
# Stopping-time specifications
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class GeometricStop:
    """P[N > n] = rho^n on {0, 1, 2, ...}."""

    rho: float

    def __post_init__(self):
        if not 0.0 < self.rho < 1.0:
            raise SpecError("geometric rho must lie strictly inside (0, 1)")

    @property
    def log_tail_rate(self) -> float:
        return -math.log(self.rho)

    def sample(self, gen: np.random.Generator, size: int) -> np.ndarray:
        # numpy's geometric counts trials >= 1 with success prob p
        return gen.geometric(1.0 - self.rho, size=size).astype(np.int64) - 1

    def max_value(self) -> int | None:
        return None


@dataclass(frozen=True)
class TableStop:
    """P[N = i] = probs[i] on a finite range."""

    probs: tuple[float, ...]

    def __post_init__(self):
        p = np.asarray(self.probs, dtype=float)
        if p.size == 0:
            raise SpecError("stop table must be non-empty")
        _check_probs(p, "stop table")

    def sample(self, gen: np.random.Generator, size: int) -> np.ndarray:
        cum = np.cumsum(self.probs)
        idx = np.searchsorted(cum, gen.random(size), side="right")
        return np.clip(idx, 0, len(self.probs) - 1).astype(np.int64)

    def max_value(self) -> int | None:
        return len(self.probs) - 1


StopSpec = Union[GeometricStop, TableStop]

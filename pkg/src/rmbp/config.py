"""Line-based experiment configuration: ``section.key = value``.

Sections are ``process``, ``modulator``, ``offspring``, ``stop``,
``analysis``, and ``output``.  Unknown sections or keys are hard errors, not
silently ignored.  ``process.preset = <name>`` loads a named preset first and
then applies the remaining lines as overrides.
"""

from __future__ import annotations

import hashlib
import math
import re
from dataclasses import dataclass, field, replace

from .engine import PathConfig
from .errors import ConfigError, SpecError
from .specs import (ExponentialTail, Deterministic, GeneralDiscrete, GeometricStop,
                    IncrementSource, MG1Increment, ModulatorSpec, NormalIncrement,
                    ExpDifference, OffspringSpec, Poisson, StopSpec, TableStop,
                    TableTail, TailEquilibrium, TwoPoint, shifted_poisson)

PROCESS_KINDS = ("rmp", "rmbp", "queue", "backward_sup", "cycle_max",
                 "stopped_product", "stopped_branching", "absorbing", "truncated")
CONSTANT_NAMES = ("goldie", "cycle_max", "implicit", "mg1")


@dataclass(frozen=True)
class ExperimentConfig:
    """Fully resolved description of one experiment."""

    kind: str
    modulator: IncrementSource | None = None
    offspring: OffspringSpec | None = None
    barriers: tuple[float, ...] = (1.0,)
    upper_barrier: float | None = None
    horizon: int = 16
    burn_in: int | str = "auto"
    initial: float | None = None
    force: bool = False
    stop: StopSpec | None = None
    arrival_rate: float | None = None
    slots: int | str = "auto"
    z0: int = 1
    harvest_paths: int | None = None
    harvest_thin: int = 100
    n_replications: int = 1
    seed: int = 0
    threads: int = 1
    n_grid: int = 200
    slope_window: tuple[float, float] | None = None
    hill_k: int | None = None
    constants: tuple[str, ...] = ()
    n_cycles: int = 100_000
    out_prefix: str | None = None
    label: str = ""

    def __post_init__(self):
        if self.kind not in PROCESS_KINDS:
            raise ConfigError(f"unknown process kind {self.kind!r}", key="process.kind")
        if self.n_replications < 1:
            raise ConfigError("n_replications must be >= 1",
                              key="analysis.n_replications")
        if not self.barriers:
            raise ConfigError("at least one barrier is required", key="process.barrier")
        for name in self.constants:
            if name not in CONSTANT_NAMES:
                raise ConfigError(f"unknown constant {name!r}", key="analysis.constants")
        self._check_cross_references()

    def _check_cross_references(self):
        branching = self.kind in ("rmbp", "stopped_branching", "absorbing") or (
            self.kind == "truncated" and self.offspring is not None)
        if self.kind != "absorbing" and self.modulator is None:
            raise ConfigError("a modulator is required", key="modulator")
        if branching:
            if self.offspring is None:
                raise ConfigError(f"{self.kind} runs need an offspring section",
                                  key="offspring")
            mod = self.modulator
            if not isinstance(mod, ModulatorSpec):
                raise ConfigError("branching runs need a finite-state modulator",
                                  key="modulator.kind")
            if self.offspring.n_states != mod.n_states:
                raise ConfigError(
                    f"offspring defines states 0..{self.offspring.n_states - 1} but "
                    f"the modulator has states 0..{mod.n_states - 1}",
                    key="offspring")
        if self.kind in ("stopped_product", "stopped_branching") and self.stop is None:
            raise ConfigError(f"{self.kind} runs need a stop section", key="stop")
        if self.kind == "truncated" and self.upper_barrier is None:
            raise ConfigError("truncated runs need process.upper_barrier",
                              key="process.upper_barrier")
        if self.kind == "absorbing" and self.arrival_rate is None:
            raise ConfigError("absorbing runs need process.arrival_rate",
                              key="process.arrival_rate")
        if self.harvest_paths is not None and self.kind != "rmp":
            raise ConfigError("path harvesting only applies to rmp runs",
                              key="process.harvest_paths")

    def path_config(self, barrier: float | None = None) -> PathConfig:
        return PathConfig(barrier=self.barriers[0] if barrier is None else barrier,
                          upper_barrier=self.upper_barrier, horizon=self.horizon,
                          burn_in=self.burn_in, initial_value=self.initial)

    def canonical_text(self) -> str:
        """Stable text rendering used for hashing and CSV headers."""
        pairs = {}
        pairs["process.kind"] = self.kind
        pairs["process.barrier"] = ",".join(repr(b) for b in self.barriers)
        if self.upper_barrier is not None:
            pairs["process.upper_barrier"] = repr(self.upper_barrier)
        pairs["process.horizon"] = str(self.horizon)
        pairs["process.burn_in"] = str(self.burn_in)
        if self.initial is not None:
            pairs["process.initial"] = repr(self.initial)
        if self.force:
            pairs["process.force"] = "true"
        if self.arrival_rate is not None:
            pairs["process.arrival_rate"] = repr(self.arrival_rate)
            pairs["process.slots"] = str(self.slots)
        if self.harvest_paths is not None:
            pairs["process.harvest_paths"] = str(self.harvest_paths)
            pairs["process.harvest_thin"] = str(self.harvest_thin)
        if self.kind == "stopped_branching":
            pairs["process.z0"] = str(self.z0)
        if self.modulator is not None:
            pairs["modulator.spec"] = repr(self.modulator)
        if self.offspring is not None:
            pairs["offspring.spec"] = repr(self.offspring)
        if self.stop is not None:
            pairs["stop.spec"] = repr(self.stop)
        pairs["analysis.n_replications"] = str(self.n_replications)
        pairs["analysis.seed"] = str(self.seed)
        pairs["analysis.n_grid"] = str(self.n_grid)
        if self.slope_window is not None:
            pairs["analysis.slope_window"] = ",".join(repr(v) for v in self.slope_window)
        if self.hill_k is not None:
            pairs["analysis.hill_k"] = str(self.hill_k)
        if self.constants:
            pairs["analysis.constants"] = ",".join(self.constants)
        pairs["analysis.n_cycles"] = str(self.n_cycles)
        return "\n".join(f"{k} = {v}" for k, v in sorted(pairs.items()))

    def config_hash(self) -> str:
        return hashlib.sha256(self.canonical_text().encode()).hexdigest()[:16]


# ---------------------------------------------------------------------------
# parsing
# ---------------------------------------------------------------------------

_LINE = re.compile(r"^(?P<section>[a-z_]+)\.(?P<key>[a-z_0-9]+)\s*=\s*(?P<value>.*)$")
_SECTIONS = ("process", "modulator", "offspring", "stop", "analysis", "output")

_KEYS = {
    "process": {"kind", "preset", "barrier", "upper_barrier", "horizon", "burn_in",
                "initial", "force", "arrival_rate", "slots", "z0", "harvest_paths",
                "harvest_thin"},
    "modulator": {"kind", "values", "probs", "transition", "initial", "log_dist"},
    "offspring": {"normal_threshold"},  # plus state<k> handled dynamically
    "stop": {"kind", "rho", "probs"},
    "analysis": {"n_replications", "seed", "threads", "n_grid", "slope_window",
                 "hill_k", "constants", "n_cycles"},
    "output": {"prefix"},
}


def parse_config(text: str) -> ExperimentConfig:
    """Parse config text; raises ConfigError with a line number on bad input."""
    raw: dict[str, dict[str, tuple[str, int]]] = {s: {} for s in _SECTIONS}
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.split("#", 1)[0].strip()
        if not stripped:
            continue
        m = _LINE.match(stripped)
        if not m:
            raise ConfigError(f"expected 'section.key = value', got {stripped!r}",
                              line=lineno)
        section, key, value = m.group("section"), m.group("key"), m.group("value").strip()
        if section not in _SECTIONS:
            raise ConfigError(f"unknown section {section!r}", line=lineno)
        allowed = _KEYS[section]
        if key not in allowed and not (section == "offspring"
                                       and re.fullmatch(r"state\d+", key)):
            raise ConfigError(f"unknown key {section}.{key}", line=lineno)
        if key in raw[section]:
            raise ConfigError(f"duplicate key {section}.{key}", line=lineno)
        raw[section][key] = (value, lineno)
    return _build(raw)


def _take(raw, section, key, default=None):
    entry = raw[section].pop(key, None)
    return default if entry is None else entry[0]


def _build(raw) -> ExperimentConfig:
    preset_name = _take(raw, "process", "preset")
    base = None
    if preset_name is not None:
        from . import presets  # deferred: presets builds ExperimentConfigs

        base = presets.primary_config(preset_name)

    kw = {}
    kind = _take(raw, "process", "kind")
    if kind is not None:
        kw["kind"] = kind
    elif base is None:
        raise ConfigError("process.kind is required", key="process.kind")

    barrier = _take(raw, "process", "barrier")
    if barrier is not None:
        kw["barriers"] = tuple(_parse_float_list(barrier, "process.barrier"))
    upper = _take(raw, "process", "upper_barrier")
    if upper is not None:
        kw["upper_barrier"] = _parse_float(upper, "process.upper_barrier")
    horizon = _take(raw, "process", "horizon")
    if horizon is not None:
        kw["horizon"] = _parse_int(horizon, "process.horizon")
    burn = _take(raw, "process", "burn_in")
    if burn is not None:
        kw["burn_in"] = "auto" if burn == "auto" else _parse_int(burn, "process.burn_in")
    initial = _take(raw, "process", "initial")
    if initial is not None:
        kw["initial"] = _parse_float(initial, "process.initial")
    force = _take(raw, "process", "force")
    if force is not None:
        kw["force"] = _parse_bool(force, "process.force")
    arrival = _take(raw, "process", "arrival_rate")
    if arrival is not None:
        kw["arrival_rate"] = _parse_float(arrival, "process.arrival_rate")
    slots = _take(raw, "process", "slots")
    if slots is not None:
        kw["slots"] = "auto" if slots == "auto" else _parse_int(slots, "process.slots")
    z0 = _take(raw, "process", "z0")
    if z0 is not None:
        kw["z0"] = _parse_int(z0, "process.z0")
    hp = _take(raw, "process", "harvest_paths")
    if hp is not None:
        kw["harvest_paths"] = _parse_int(hp, "process.harvest_paths")
    ht = _take(raw, "process", "harvest_thin")
    if ht is not None:
        kw["harvest_thin"] = _parse_int(ht, "process.harvest_thin")

    if raw["modulator"]:
        kw["modulator"] = _build_modulator(raw)
    if raw["offspring"]:
        kw["offspring"] = _build_offspring(raw)
    if raw["stop"]:
        kw["stop"] = _build_stop(raw)

    for cfg_key, parser in (("n_replications", _parse_int), ("seed", _parse_int),
                            ("threads", _parse_int), ("n_grid", _parse_int),
                            ("hill_k", _parse_int), ("n_cycles", _parse_int)):
        val = _take(raw, "analysis", cfg_key)
        if val is not None:
            kw[cfg_key] = parser(val, f"analysis.{cfg_key}")
    window = _take(raw, "analysis", "slope_window")
    if window is not None:
        lo, hi = _parse_float_list(window, "analysis.slope_window", expect=2)
        kw["slope_window"] = (lo, hi)
    constants = _take(raw, "analysis", "constants")
    if constants is not None:
        kw["constants"] = tuple(s.strip() for s in constants.split(",") if s.strip())
    prefix = _take(raw, "output", "prefix")
    if prefix is not None:
        kw["out_prefix"] = prefix

    try:
        if base is not None:
            return replace(base, **kw)
        return ExperimentConfig(**kw)
    except (SpecError, TypeError) as exc:
        raise ConfigError(str(exc)) from exc


def _build_modulator(raw) -> IncrementSource:
    kind = _take(raw, "modulator", "kind", "iid")
    if kind == "continuous":
        dist = _take(raw, "modulator", "log_dist")
        if dist is None:
            raise ConfigError("continuous modulator needs modulator.log_dist",
                              key="modulator.log_dist")
        _reject_leftovers(raw, "modulator")
        return _parse_increment_model(dist)
    values = _take(raw, "modulator", "values")
    if values is None:
        raise ConfigError("modulator.values is required", key="modulator.values")
    vals = _parse_float_list(values, "modulator.values")
    try:
        if kind == "iid":
            probs = _take(raw, "modulator", "probs")
            if probs is None:
                raise ConfigError("iid modulator needs modulator.probs",
                                  key="modulator.probs")
            _reject_leftovers(raw, "modulator")
            return ModulatorSpec.iid(vals, _parse_float_list(probs, "modulator.probs"))
        if kind == "markov":
            transition = _take(raw, "modulator", "transition")
            if transition is None:
                raise ConfigError("markov modulator needs modulator.transition",
                                  key="modulator.transition")
            rows = [_parse_float_list(r, "modulator.transition")
                    for r in transition.split(";")]
            initial = _take(raw, "modulator", "initial")
            init = None if initial is None else _parse_float_list(initial,
                                                                  "modulator.initial")
            _reject_leftovers(raw, "modulator")
            return ModulatorSpec.markov(vals, rows, init)
    except SpecError as exc:
        raise ConfigError(str(exc), key="modulator") from exc
    raise ConfigError(f"unknown modulator kind {kind!r}", key="modulator.kind")


def _reject_leftovers(raw, section):
    if raw[section]:
        key, (_, lineno) = next(iter(raw[section].items()))
        raise ConfigError(f"key {section}.{key} does not apply here", line=lineno)


_DIST = re.compile(r"^(?P<name>[a-z_0-9]+)\s*\((?P<args>.*)\)$")


def _parse_increment_model(text: str):
    m = _DIST.match(text.strip())
    if not m:
        raise ConfigError(f"bad distribution literal {text!r}", key="modulator.log_dist")
    name = m.group("name")
    args = [a.strip() for a in m.group("args").split(",") if a.strip()]
    try:
        if name == "normal":
            return NormalIncrement(float(args[0]), float(args[1]))
        if name == "expdiff":
            return ExpDifference(float(args[0]), float(args[1]))
        if name == "equilibrium_exp":
            return TailEquilibrium(ExponentialTail(float(args[0])))
        if name == "mg1_exp":
            return MG1Increment(ExponentialTail(float(args[0])), float(args[1]))
        if name == "equilibrium_table":
            return TailEquilibrium(_parse_table_tail(args))
        if name == "mg1_table":
            return MG1Increment(_parse_table_tail(args[:-1]), float(args[-1]))
    except (SpecError, ValueError, IndexError) as exc:
        raise ConfigError(f"bad arguments in {text!r}: {exc}",
                          key="modulator.log_dist") from exc
    raise ConfigError(f"unknown log-increment model {name!r}", key="modulator.log_dist")


def _parse_table_tail(args: list[str]) -> TableTail:
    # alternating break:value pairs, e.g. "0:1, 1:0.5, 2:0.1, 3"
    breaks, values = [], []
    for item in args[:-1]:
        b, v = item.split(":")
        breaks.append(float(b))
        values.append(float(v))
    breaks.append(float(args[-1]))
    return TableTail(tuple(breaks), tuple(values))


def _build_offspring(raw) -> OffspringSpec:
    threshold = _take(raw, "offspring", "normal_threshold")
    entries = sorted(raw["offspring"].items())
    states = {}
    for key, (value, lineno) in entries:
        idx = int(key.removeprefix("state"))
        states[idx] = (_parse_offspring_dist(value, lineno), lineno)
        del raw["offspring"][key]
    if sorted(states) != list(range(len(states))):
        raise ConfigError(f"offspring states must be contiguous from 0, got "
                          f"{sorted(states)}", key="offspring")
    try:
        return OffspringSpec(
            per_state=tuple(states[i][0] for i in range(len(states))),
            normal_threshold=math.inf if threshold == "inf" else
            float(threshold) if threshold is not None else 1e6)
    except SpecError as exc:
        raise ConfigError(str(exc), key="offspring") from exc


def _parse_offspring_dist(text: str, lineno: int):
    m = _DIST.match(text.strip())
    if not m:
        raise ConfigError(f"bad distribution literal {text!r}", line=lineno)
    name = m.group("name")
    args = [a.strip() for a in m.group("args").split(",") if a.strip()]
    try:
        if name == "deterministic":
            return Deterministic(int(args[0]))
        if name == "poisson":
            return Poisson(float(args[0]))
        if name == "twopoint":
            return TwoPoint(int(args[0]), int(args[1]), float(args[2]))
        if name == "shifted_poisson":
            return shifted_poisson(int(args[0]), float(args[1]))
        if name == "table":
            support, probs = [], []
            for item in args:
                v, p = item.split(":")
                support.append(int(v))
                probs.append(float(p))
            return GeneralDiscrete(tuple(support), tuple(probs))
    except (SpecError, ValueError, IndexError) as exc:
        raise ConfigError(f"bad arguments in {text!r}: {exc}", line=lineno) from exc
    raise ConfigError(f"unknown offspring distribution {name!r}", line=lineno)


def _build_stop(raw) -> StopSpec:
    kind = _take(raw, "stop", "kind", "geometric")
    try:
        if kind == "geometric":
            rho = _take(raw, "stop", "rho")
            if rho is None:
                raise ConfigError("geometric stop needs stop.rho", key="stop.rho")
            _reject_leftovers(raw, "stop")
            return GeometricStop(float(rho))
        if kind == "table":
            probs = _take(raw, "stop", "probs")
            if probs is None:
                raise ConfigError("table stop needs stop.probs", key="stop.probs")
            _reject_leftovers(raw, "stop")
            return TableStop(tuple(_parse_float_list(probs, "stop.probs")))
    except SpecError as exc:
        raise ConfigError(str(exc), key="stop") from exc
    raise ConfigError(f"unknown stop kind {kind!r}", key="stop.kind")


def _parse_float(text: str, key: str) -> float:
    try:
        return float(text)
    except ValueError as exc:
        raise ConfigError(f"expected a number, got {text!r}", key=key) from exc


def _parse_int(text: str, key: str) -> int:
    try:
        return int(float(text)) if "e" in text.lower() else int(text)
    except ValueError as exc:
        raise ConfigError(f"expected an integer, got {text!r}", key=key) from exc


def _parse_bool(text: str, key: str) -> bool:
    if text.lower() in ("true", "yes", "1"):
        return True
    if text.lower() in ("false", "no", "0"):
        return False
    raise ConfigError(f"expected a boolean, got {text!r}", key=key)


def _parse_float_list(text: str, key: str, expect: int | None = None) -> list[float]:
    parts = [p.strip() for p in text.replace(";", ",").split(",") if p.strip()] \
        if "," in text else [p for p in text.split() if p]
    try:
        vals = [float(p) for p in parts]
    except ValueError as exc:
        raise ConfigError(f"expected numbers, got {text!r}", key=key) from exc
    if expect is not None and len(vals) != expect:
        raise ConfigError(f"expected {expect} numbers, got {len(vals)}", key=key)
    return vals

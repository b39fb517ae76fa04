"""Exhaustive search over parameterized cycle families on the volume lattice.

Every candidate is a closed action sequence that starts and ends at the
reset state ``(V_max, T_c)``, the only state a policy rollout can start
from. Candidates are scored by stepping the engine; multi-step branches are
memoized on their exact start state so the search stays fast.
"""

from __future__ import annotations

import enum
import math
from dataclasses import replace
from typing import Iterator, Optional

from .cycles import CycleReport, report_from_actions
from .engine import Action, EngineConfig, apply, reset, EngineState

A = Action


class Family(str, enum.Enum):
    CARNOT = "carnot"
    STIRLING = "stirling"
    OTTO = "otto"
    HYBRID = "hybrid"

    @classmethod
    def parse(cls, text: str) -> "Family":
        key = text.strip().lower()
        aliases = {"carnotlike": "carnot", "stirlingrect": "stirling", "ottorect": "otto",
                   "irreversiblehybrid": "hybrid"}
        try:
            return cls(aliases.get(key, key))
        except ValueError:
            raise ValueError(f"unknown cycle family {text!r}; valid: {', '.join(f.value for f in cls)}") from None


class Infeasible(Exception):
    """The family cannot be built from the configured actions on this grid."""


_REQUIRED = {
    Family.CARNOT: {A.ADIABATIC_COMPRESS, A.ADIABATIC_EXPAND, A.ISOTHERMAL_EXPAND_HOT,
                    A.ISOTHERMAL_COMPRESS_COLD, A.ISOTHERMAL_EXPAND_COLD},
    Family.STIRLING: {A.ISOTHERMAL_EXPAND_HOT, A.ISOTHERMAL_COMPRESS_COLD, A.ISOTHERMAL_EXPAND_COLD},
    Family.OTTO: {A.ADIABATIC_COMPRESS, A.ADIABATIC_EXPAND, A.ISOCHORIC_HEAT, A.ISOCHORIC_COOL},
    Family.HYBRID: {A.IRREV_EXPAND, A.ISOTHERMAL_EXPAND_HOT, A.ISOTHERMAL_COMPRESS_COLD,
                    A.ISOTHERMAL_EXPAND_COLD},
}

# Lattice offsets tried around the ideal adiabat end volume.
ADIABAT_WINDOW = 3
MAX_IRREV_COMPRESS = 3
MAX_IRREV_EXPAND = 6


class _Stepper:
    def __init__(self, config: EngineConfig):
        self.config = config
        self.cache: dict = {}

    def run(self, V: float, T: float, action: Action, n: int) -> tuple[float, float, float, float]:
        """``(V_f, T_f, W, Q_in)`` after ``n`` repeats of ``action``."""
        key = (V, T, action, n)
        hit = self.cache.get(key)
        if hit is not None:
            return hit
        state = EngineState(V, T)
        w = q = 0.0
        for _ in range(n):
            out = apply(self.config, state, action)
            w += out.dW
            q += out.dQ_in
            state = out.next
        res = (state.V, state.T, w, q)
        self.cache[key] = res
        return res

    def score(self, blocks) -> tuple[float, float, float, float]:
        s0 = reset(self.config)
        V, T, w, q = s0.V, s0.T, 0.0, 0.0
        for action, n in blocks:
            if n:
                V, T, dw, dq = self.run(V, T, action, n)
                w += dw
                q += dq
        return V, T, w, q


def _index_of(config: EngineConfig, V: float) -> int:
    return round((config.V_max - V) / config.dV)


def _ideal_index(config: EngineConfig, V: float, ratio: float) -> int:
    """Lattice index nearest to ``V * ratio``."""
    return round((config.V_max - V * ratio) / config.dV)


def _carnot(config: EngineConfig) -> Iterator[list]:
    lat = config.lattice()
    n = len(lat) - 1
    shrink = (config.T_c / config.T_h) ** 1.5
    heat = [False, True] if A.ISOCHORIC_HEAT in config.action_set else [False]
    for i_a in range(n + 1):
        centre = _ideal_index(config, lat[i_a], shrink)
        for i_c in range(max(i_a + 1, centre - ADIABAT_WINDOW), min(n, centre + ADIABAT_WINDOW) + 1):
            for i_d in range(0, i_c):
                centre_e = _ideal_index(config, lat[i_d], 1.0 / shrink)
                for i_e in range(max(0, centre_e - ADIABAT_WINDOW), min(i_d - 1, centre_e + ADIABAT_WINDOW) + 1):
                    for h in heat:
                        yield [
                            (A.ISOTHERMAL_COMPRESS_COLD, i_a),
                            (A.ADIABATIC_COMPRESS, i_c - i_a),
                            (A.ISOCHORIC_HEAT, int(h)),
                            (A.ISOTHERMAL_EXPAND_HOT, i_c - i_d),
                            (A.ADIABATIC_EXPAND, i_d - i_e),
                            _to_cold(config, i_e),
                            (A.ISOTHERMAL_EXPAND_COLD, i_e),
                        ]


def _to_cold(config: EngineConfig, i_e: int) -> tuple[Action, int]:
    # At V_max the cold isotherm cannot be entered by moving, so equilibrate in place.
    if i_e > 0:
        return (A.ISOCHORIC_COOL, 0)
    if A.ISOCHORIC_COOL in config.action_set:
        return (A.ISOCHORIC_COOL, 1)
    return (A.ISOTHERMAL_EXPAND_COLD, 1)


def _stirling(config: EngineConfig) -> Iterator[list]:
    n = len(config.lattice()) - 1
    has_heat = A.ISOCHORIC_HEAT in config.action_set
    for i_a in range(1, n + 1):
        for i_b in range(0, i_a):
            yield [
                (A.ISOTHERMAL_COMPRESS_COLD, i_a),
                (A.ISOCHORIC_HEAT, int(has_heat)),
                (A.ISOTHERMAL_EXPAND_HOT, i_a - i_b),
                _to_cold(config, i_b),
                (A.ISOTHERMAL_EXPAND_COLD, i_b),
            ]


def _otto(config: EngineConfig) -> Iterator[list]:
    n = len(config.lattice()) - 1
    for i_b in range(0, n):
        for i_a in range(i_b + 1, n + 1):
            yield [
                (A.ADIABATIC_COMPRESS, i_b),
                (A.ISOCHORIC_COOL, int(i_b > 0)),
                (A.ADIABATIC_COMPRESS, i_a - i_b),
                (A.ISOCHORIC_HEAT, 1),
                (A.ADIABATIC_EXPAND, i_a - i_b),
                (A.ISOCHORIC_COOL, 1),
                (A.ADIABATIC_EXPAND, i_b),
                (A.ISOCHORIC_COOL, int(i_b > 0)),
            ]


def _hybrid(config: EngineConfig) -> Iterator[list]:
    n = len(config.lattice()) - 1
    has_heat = A.ISOCHORIC_HEAT in config.action_set
    max_c = MAX_IRREV_COMPRESS if A.IRREV_COMPRESS in config.action_set else 0
    for i_a in range(0, n + 1):
        for n1 in range(0, min(max_c, n - i_a) + 1):
            i_h = i_a + n1
            for i_d in range(0, i_h):
                for n2 in range(0, min(MAX_IRREV_EXPAND, i_d) + 1):
                    i_e = i_d - n2
                    yield [
                        (A.ISOTHERMAL_COMPRESS_COLD, i_a),
                        (A.IRREV_COMPRESS, n1),
                        (A.ISOCHORIC_HEAT, int(has_heat)),
                        (A.ISOTHERMAL_EXPAND_HOT, i_h - i_d),
                        (A.IRREV_EXPAND, n2),
                        _to_cold(config, i_e),
                        (A.ISOTHERMAL_EXPAND_COLD, i_e),
                    ]


_GENERATORS = {Family.CARNOT: _carnot, Family.STIRLING: _stirling, Family.OTTO: _otto,
               Family.HYBRID: _hybrid}


def candidates(config: EngineConfig, family: Family) -> Iterator[list]:
    return _GENERATORS[Family(family)](config)


def oracle_best_cycle(config: EngineConfig, family) -> CycleReport:
    """Most efficient closed cycle of ``family`` reachable from the reset state.

    Raises :class:`Infeasible` when the action set lacks a process the
    family needs or no member of the family draws hot-reservoir heat.
    """
    family = Family.parse(family) if isinstance(family, str) else Family(family)
    config = replace(config, budgets_enabled=False)
    missing = _REQUIRED[family] - set(config.action_set)
    if missing:
        raise Infeasible(f"{family.value} needs actions {sorted(a.label for a in missing)}")
    if config.n_lattice is None:
        raise Infeasible("volume range is not an integer multiple of dV")
    stepper = _Stepper(config)
    start = reset(config)
    best = None
    for blocks in candidates(config, family):
        blocks = [(a, k) for a, k in blocks if k]
        if any(a not in config.action_set for a, _ in blocks):
            continue
        V, T, w, q = stepper.score(blocks)
        if q <= 0 or abs(V - start.V) > 1e-9 or abs(T - start.T) > 1e-9:
            continue
        eta = w / q
        if best is None or eta > best[0]:
            best = (eta, blocks)
    if best is None:
        raise Infeasible(f"no {family.value} cycle draws heat from the hot reservoir on this grid")
    actions = [a for a, k in best[1] for _ in range(k)]
    return report_from_actions(config, start, actions, family=family.value)


def stirling_closed_form(config: EngineConfig) -> float:
    """Efficiency of the full-range Stirling cycle without regeneration."""
    r = config.V_max / config.V_min
    dT = config.T_h - config.T_c
    return dT * math.log(r) / (config.T_h * math.log(r) + 1.5 * dT)

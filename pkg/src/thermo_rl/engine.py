"""Quasi-static model heat engine: a monatomic ideal gas between two reservoirs.

The engine is a pure function of ``(config, state, action)``. Every
compression or expansion moves the volume by a fixed increment ``dV`` and is
clamped to ``[V_min, V_max]``. A budgeted variant gates every action on
non-negative work and heat budgets.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field, replace
from typing import Callable, Optional, Sequence, Union

import numpy as np


class ConfigError(ValueError):
    """Raised for an engine or run configuration that violates a bound."""


class UsageError(ValueError):
    """Raised when an operation is called with arguments it cannot accept."""


class Action(enum.IntEnum):
    ADIABATIC_COMPRESS = 0
    ADIABATIC_EXPAND = 1
    ISOTHERMAL_COMPRESS_HOT = 2
    ISOTHERMAL_EXPAND_HOT = 3
    ISOTHERMAL_COMPRESS_COLD = 4
    ISOTHERMAL_EXPAND_COLD = 5
    ISOCHORIC_HEAT = 6
    ISOCHORIC_COOL = 7
    IRREV_COMPRESS = 8
    IRREV_EXPAND = 9

    @property
    def label(self) -> str:
        return "".join(part.capitalize() for part in self.name.split("_"))

    @property
    def family(self) -> str:
        return _FAMILY[self]

    @property
    def opposite(self) -> "Action":
        return _OPPOSITE[self]

    @classmethod
    def parse(cls, text: str) -> "Action":
        key = text.strip()
        for a in cls:
            if key in (a.label, a.name, a.name.lower()):
                return a
        raise ConfigError(f"unknown action {text!r}; valid: {', '.join(a.label for a in cls)}")


_FAMILY = {
    Action.ADIABATIC_COMPRESS: "adiabatic",
    Action.ADIABATIC_EXPAND: "adiabatic",
    Action.ISOTHERMAL_COMPRESS_HOT: "isothermal_hot",
    Action.ISOTHERMAL_EXPAND_HOT: "isothermal_hot",
    Action.ISOTHERMAL_COMPRESS_COLD: "isothermal_cold",
    Action.ISOTHERMAL_EXPAND_COLD: "isothermal_cold",
    Action.ISOCHORIC_HEAT: "isochoric",
    Action.ISOCHORIC_COOL: "isochoric",
    Action.IRREV_COMPRESS: "irreversible",
    Action.IRREV_EXPAND: "irreversible",
}

_OPPOSITE = {
    Action.ADIABATIC_COMPRESS: Action.ADIABATIC_EXPAND,
    Action.ADIABATIC_EXPAND: Action.ADIABATIC_COMPRESS,
    Action.ISOTHERMAL_COMPRESS_HOT: Action.ISOTHERMAL_EXPAND_HOT,
    Action.ISOTHERMAL_EXPAND_HOT: Action.ISOTHERMAL_COMPRESS_HOT,
    Action.ISOTHERMAL_COMPRESS_COLD: Action.ISOTHERMAL_EXPAND_COLD,
    Action.ISOTHERMAL_EXPAND_COLD: Action.ISOTHERMAL_COMPRESS_COLD,
    Action.ISOCHORIC_HEAT: Action.ISOCHORIC_COOL,
    Action.ISOCHORIC_COOL: Action.ISOCHORIC_HEAT,
    Action.IRREV_COMPRESS: Action.IRREV_EXPAND,
    Action.IRREV_EXPAND: Action.IRREV_COMPRESS,
}

CANONICAL_ACTIONS: tuple[Action, ...] = tuple(Action)[:8]
# Table of the irreversible setting: adiabats swapped for the lossy pair.
IRREVERSIBLE_ACTIONS: tuple[Action, ...] = CANONICAL_ACTIONS[2:] + (
    Action.IRREV_COMPRESS,
    Action.IRREV_EXPAND,
)
NO_ADIABATIC_ACTIONS: tuple[Action, ...] = CANONICAL_ACTIONS[2:]
NO_ISOTHERMAL_ACTIONS: tuple[Action, ...] = CANONICAL_ACTIONS[:2] + CANONICAL_ACTIONS[6:]

_COMPRESS = {Action.ADIABATIC_COMPRESS, Action.ISOTHERMAL_COMPRESS_HOT,
             Action.ISOTHERMAL_COMPRESS_COLD, Action.IRREV_COMPRESS}

# Volumes closer than this to a lattice point are snapped onto it.
_LATTICE_TOL = 1e-9


def analytic_carnot(T_h: float, T_c: float, NkB: float, V_min: float, V_max: float) -> tuple[float, float]:
    """Heat drawn and work done by one analytic Carnot cycle spanning the volume range.

    The hot isotherm runs from ``V_min`` to the volume whose adiabat reaches
    ``V_max`` at ``T_c``. Returns ``(Q_in, W)``; both are zero when the range
    is too narrow to fit an adiabat between the reservoir temperatures.
    """
    ratio = V_max / V_min * (T_c / T_h) ** 1.5
    if ratio <= 1.0:
        return 0.0, 0.0
    q = NkB * T_h * math.log(ratio)
    return q, q * (1.0 - T_c / T_h)


@dataclass(frozen=True)
class EngineConfig:
    T_h: float = 500.0
    T_c: float = 300.0
    NkB: float = 1.0
    V_min: float = 1.0
    V_max: float = 4.0
    dV: float = 0.1
    K_max: int = 200
    action_set: tuple[Action, ...] = CANONICAL_ACTIONS
    k_loss: float = 0.4
    budgets_enabled: bool = False
    # None picks the default derived from the analytic Carnot cycle.
    W0_budget: Optional[float] = None
    Q0_budget: Optional[float] = None

    def __post_init__(self):
        object.__setattr__(self, "action_set", tuple(Action(a) for a in self.action_set))
        if not self.T_c > 0:
            raise ConfigError(f"T_c must be > 0, got {self.T_c}")
        if not self.T_h > self.T_c:
            raise ConfigError(f"T_h must exceed T_c, got T_h={self.T_h}, T_c={self.T_c}")
        if not self.NkB > 0:
            raise ConfigError(f"NkB must be > 0, got {self.NkB}")
        if not self.V_min > 0:
            raise ConfigError(f"V_min must be > 0, got {self.V_min}")
        if not self.V_max > self.V_min:
            raise ConfigError(f"V_max must exceed V_min, got V_min={self.V_min}, V_max={self.V_max}")
        if not 0 < self.dV <= self.V_max - self.V_min:
            raise ConfigError(f"dV must lie in (0, V_max - V_min], got {self.dV}")
        if int(self.K_max) != self.K_max or self.K_max < 1:
            raise ConfigError(f"K_max must be an integer >= 1, got {self.K_max}")
        if not 0 <= self.k_loss < 1:
            raise ConfigError(f"k_loss must lie in [0, 1), got {self.k_loss}")
        if len(self.action_set) < 2 or len(set(self.action_set)) != len(self.action_set):
            raise ConfigError("action_set needs at least two distinct actions")
        q_carnot, w_carnot = analytic_carnot(self.T_h, self.T_c, self.NkB, self.V_min, self.V_max)
        if self.W0_budget is None:
            object.__setattr__(self, "W0_budget", 5.0 * w_carnot)
        if self.Q0_budget is None:
            object.__setattr__(self, "Q0_budget", 5.0 * q_carnot)
        if self.budgets_enabled and (self.W0_budget < 0 or self.Q0_budget < 0):
            raise ConfigError("budgets must be >= 0")

    @property
    def n_actions(self) -> int:
        return len(self.action_set)

    @property
    def n_lattice(self) -> Optional[int]:
        """Number of ``dV`` steps spanning the volume range, if that is an integer."""
        n = (self.V_max - self.V_min) / self.dV
        k = round(n)
        return k if abs(n - k) < 1e-9 else None

    def lattice(self) -> list[float]:
        """Lattice volumes ``V_max - n*dV`` in decreasing order (V_min last)."""
        n = self.n_lattice
        if n is None:
            raise ConfigError("volume range is not an integer multiple of dV")
        return [self.lattice_volume(i) for i in range(n + 1)]

    def lattice_volume(self, n: int) -> float:
        if self.n_lattice is not None and n >= self.n_lattice:
            return self.V_min
        return self.V_max - n * self.dV

    def pressure(self, state: "EngineState") -> float:
        return self.NkB * state.T / state.V

    def analytic_carnot(self) -> tuple[float, float]:
        return analytic_carnot(self.T_h, self.T_c, self.NkB, self.V_min, self.V_max)

    def with_actions(self, actions: Sequence[Action]) -> "EngineConfig":
        return replace(self, action_set=tuple(actions))


@dataclass(frozen=True)
class EngineState:
    V: float
    T: float
    t: int = 0
    W_budget: Optional[float] = None
    Q_budget: Optional[float] = None

    @property
    def key(self) -> tuple[float, float]:
        return (self.V, self.T)


@dataclass(frozen=True)
class StepOutcome:
    dW: float
    dQ: float
    dQ_in: float
    next: EngineState
    feasible: bool = True


def reset(config: EngineConfig) -> EngineState:
    if config.budgets_enabled:
        return EngineState(config.V_max, config.T_c, 0, config.W0_budget, config.Q0_budget)
    return EngineState(config.V_max, config.T_c, 0)


def _move_volume(config: EngineConfig, V: float, compress: bool) -> float:
    target = V - config.dV if compress else V + config.dV
    n = round((config.V_max - target) / config.dV)
    snapped = config.V_max - n * config.dV
    if abs(snapped - target) < _LATTICE_TOL:
        target = config.lattice_volume(n) if n >= 0 else snapped
    return min(max(target, config.V_min), config.V_max)


def heat_in(config: EngineConfig, dQ: float, T_f: float) -> float:
    """Heat counted as drawn from the hot reservoir (Heaviside rule)."""
    return dQ if (dQ > 0 and T_f == config.T_h) else 0.0


def transition(config: EngineConfig, V: float, T: float, action: Action) -> tuple[float, float, float, float]:
    """Raw physics of one action: ``(V_f, T_f, dW, dQ)`` with no bookkeeping."""
    c = 1.5 * config.NkB
    if action is Action.ISOCHORIC_HEAT or action is Action.ISOCHORIC_COOL:
        T_r = config.T_h if action is Action.ISOCHORIC_HEAT else config.T_c
        return V, T_r, 0.0, c * (T_r - T)

    V_f = _move_volume(config, V, action in _COMPRESS)
    fam = _FAMILY[action]
    if fam == "adiabatic" or fam == "irreversible":
        ratio = (V / V_f) ** (2.0 / 3.0)
        dW = -c * T * (ratio - 1.0)
        T_adiabatic = T * ratio
        if fam == "adiabatic":
            return V_f, T_adiabatic, dW, 0.0
        T_f = T_adiabatic * (1.0 - config.k_loss) ** (abs(V_f - V) / config.dV)
        # The extra drop in internal energy leaves as heat to the surroundings.
        return V_f, T_f, dW, c * (T_f - T_adiabatic)

    T_r = config.T_h if fam == "isothermal_hot" else config.T_c
    dW = config.NkB * T_r * math.log(V_f / V)
    return V_f, T_r, dW, dW + c * (T_r - T)


def apply(config: EngineConfig, state: EngineState, action: Action) -> StepOutcome:
    """Apply one action; in the budgeted variant an unaffordable action is a no-op with feasible=False."""
    if action not in config.action_set:
        raise UsageError(f"action {Action(action).label} is not in the configured action set")
    action = Action(action)
    V_f, T_f, dW, dQ = transition(config, state.V, state.T, action)
    dQ_in = heat_in(config, dQ, T_f)
    if config.budgets_enabled:
        if state.W_budget < -dW or state.Q_budget < dQ_in:
            return StepOutcome(dW, dQ, dQ_in, state, feasible=False)
        nxt = EngineState(V_f, T_f, state.t + 1, state.W_budget + dW, state.Q_budget - dQ_in)
    else:
        nxt = EngineState(V_f, T_f, state.t + 1)
    return StepOutcome(dW, dQ, dQ_in, nxt)


@dataclass
class Trajectory:
    """Ordered step records of one episode with running sums and efficiencies."""

    start: EngineState
    records: list[tuple[EngineState, Action, StepOutcome]] = field(default_factory=list)
    cumW: list[float] = field(default_factory=list)
    cumQin: list[float] = field(default_factory=list)
    eta_by_step: list[Optional[float]] = field(default_factory=list)
    # Set when the episode ended on an unaffordable action.
    infeasible: Optional[tuple[Action, StepOutcome]] = None

    def append(self, state: EngineState, action: Action, outcome: StepOutcome) -> None:
        w = (self.cumW[-1] if self.cumW else 0.0) + outcome.dW
        q = (self.cumQin[-1] if self.cumQin else 0.0) + outcome.dQ_in
        self.records.append((state, action, outcome))
        self.cumW.append(w)
        self.cumQin.append(q)
        self.eta_by_step.append(w / q if q > 0 else None)

    def __len__(self) -> int:
        return len(self.records)

    @property
    def states(self) -> list[EngineState]:
        return [self.start] + [rec[2].next for rec in self.records]

    @property
    def actions(self) -> list[Action]:
        return [rec[1] for rec in self.records]

    @property
    def final(self) -> EngineState:
        return self.records[-1][2].next if self.records else self.start

    @property
    def eta_best(self) -> Optional[float]:
        defined = [e for e in self.eta_by_step if e is not None]
        return max(defined) if defined else None

    @property
    def total_work(self) -> float:
        return self.cumW[-1] if self.cumW else 0.0


def efficiency(trajectory: Trajectory) -> Optional[float]:
    return trajectory.eta_best


def replay(config: EngineConfig, actions: Sequence[Action], start: Optional[EngineState] = None) -> Trajectory:
    """Apply a fixed action sequence, stopping early only on an infeasible action."""
    state = reset(config) if start is None else start
    traj = Trajectory(start=state)
    for a in actions:
        out = apply(config, state, a)
        if not out.feasible:
            traj.infeasible = (Action(a), out)
            break
        traj.append(state, Action(a), out)
        state = out.next
    return traj


PolicyFn = Callable[[EngineConfig, EngineState], int]


def rollout(
    config: EngineConfig,
    policy,
    selector: str = "argmax",
    rng: Optional[np.random.Generator] = None,
) -> Trajectory:
    """Run one episode of ``K_max`` steps under ``policy``.

    ``policy`` is either a :class:`thermo_rl.policy.PolicyNet` or a callable
    ``(config, state) -> index into config.action_set`` (lookup-table
    policies in tests). ``selector`` is ``"argmax"`` or ``"sample"``; the
    latter draws from the softmax of the logits using ``rng``.
    """
    from .policy import PolicyNet, act_argmax, act_softmax, forward, observe

    if selector not in ("argmax", "sample"):
        raise UsageError(f"selector must be 'argmax' or 'sample', got {selector!r}")
    if selector == "sample" and rng is None:
        raise UsageError("sampling rollouts need an rng")
    if isinstance(policy, PolicyNet):
        expected = 4 if config.budgets_enabled else 2
        if policy.shape.n_in != expected:
            raise UsageError(f"policy takes {policy.shape.n_in} inputs, engine variant provides {expected}")
        m = config.n_actions

        def choose(state):
            logits, _ = forward(policy, observe(config, state))
            logits = logits[:m]
            if selector == "argmax":
                return act_argmax(logits)
            return act_softmax(logits, rng)[0]
    else:
        def choose(state):
            return policy(config, state)

    state = reset(config)
    traj = Trajectory(start=state)
    for _ in range(config.K_max):
        action = config.action_set[choose(state)]
        out = apply(config, state, action)
        if not out.feasible:
            traj.infeasible = (action, out)
            break
        traj.append(state, action, out)
        state = out.next
    return traj

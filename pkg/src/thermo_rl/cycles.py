"""Cycle extraction from trajectories and equation-of-state fits per branch."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .engine import Action, EngineConfig, EngineState, Trajectory, replay

STATE_TOL = 1e-9
# A loop whose hot-reservoir heat is at rounding level has no meaningful
# efficiency; the floor is relative to NkB * T_h.
HEAT_FLOOR = 1e-9


def _cycle_eta(config: EngineConfig, w: float, q: float) -> Optional[float]:
    return w / q if q > HEAT_FLOOR * config.NkB * config.T_h else None


@dataclass
class CycleReport:
    start: EngineState
    actions: list[Action]
    cumW: float
    cumQin: float
    eta: Optional[float]
    branches: list[tuple[str, list[tuple[float, float]]]] = field(default_factory=list)
    family: Optional[str] = None

    @property
    def period(self) -> int:
        return len(self.actions)

    def to_dict(self) -> dict:
        return {
            "family": self.family,
            "period": self.period,
            "start": {"V": self.start.V, "T": self.start.T},
            "actions": [a.label for a in self.actions],
            "eta": self.eta,
            "cumW": self.cumW,
            "cumQin": self.cumQin,
            "branches": [{"family": fam, "points": [[v, p] for v, p in pts]} for fam, pts in self.branches],
        }


@dataclass(frozen=True)
class BranchFit:
    family: str
    exponent: Optional[float]
    prefactor: Optional[float]
    residual: Optional[float]

    @property
    def fittable(self) -> bool:
        return self.exponent is not None


def _branches(config: EngineConfig, states: Sequence[EngineState], actions: Sequence[Action]):
    """Group consecutive same-family steps; each branch carries its (V, P) points.

    A branch's entry point is included only when it already lies on the
    branch's curve: always for adiabats, isochores and the lossy pair, and for
    an isotherm only when the gas is already at the reservoir temperature.
    """
    out: list[tuple[str, list[tuple[float, float]]]] = []
    i = 0
    while i < len(actions):
        fam = actions[i].family
        j = i
        while j < len(actions) and actions[j].family == fam:
            j += 1
        pts = []
        first = states[i]
        on_curve = True
        if fam == "isothermal_hot":
            on_curve = first.T == config.T_h
        elif fam == "isothermal_cold":
            on_curve = first.T == config.T_c
        if on_curve:
            pts.append((first.V, config.pressure(first)))
        for s in states[i + 1:j + 1]:
            pts.append((s.V, config.pressure(s)))
        out.append((fam, pts))
        i = j
    return out


def report_from_actions(config: EngineConfig, start: EngineState, actions: Sequence[Action],
                        family: Optional[str] = None) -> CycleReport:
    traj = replay(config, actions, start=start)
    if traj.infeasible is not None:
        raise ValueError("cycle contains an infeasible step")
    w = math.fsum(rec[2].dW for rec in traj.records)
    q = math.fsum(rec[2].dQ_in for rec in traj.records)
    return CycleReport(
        start=start,
        actions=list(actions),
        cumW=w,
        cumQin=q,
        eta=_cycle_eta(config, w, q),
        branches=_branches(config, traj.states, traj.actions),
        family=family,
    )


def _same(a: EngineState, b: EngineState, tol: float) -> bool:
    return abs(a.V - b.V) <= tol and abs(a.T - b.T) <= tol


class _StateIndex:
    """Buckets states on a ``tol`` grid so revisits are found without a quadratic scan."""

    def __init__(self, tol: float):
        self.tol = tol
        self.buckets: dict[tuple[int, int], list[int]] = {}

    def _key(self, s: EngineState) -> tuple[int, int]:
        return (math.floor(s.V / self.tol), math.floor(s.T / self.tol))

    def lookup(self, states, s: EngineState) -> Optional[int]:
        kv, kt = self._key(s)
        best = None
        for dv in (-1, 0, 1):
            for dt in (-1, 0, 1):
                for idx in self.buckets.get((kv + dv, kt + dt), ()):
                    if _same(states[idx], s, self.tol) and (best is None or idx > best):
                        best = idx
        return best

    def add(self, s: EngineState, idx: int) -> None:
        self.buckets.setdefault(self._key(s), []).append(idx)


def _segment_report(config, traj: Trajectory, i: int, j: int) -> CycleReport:
    recs = traj.records[i:j]
    states = traj.states[i:j + 1]
    actions = [r[1] for r in recs]
    w = math.fsum(r[2].dW for r in recs)
    q = math.fsum(r[2].dQ_in for r in recs)
    start = states[0]
    return CycleReport(
        start=EngineState(start.V, start.T),
        actions=actions,
        cumW=w,
        cumQin=q,
        eta=_cycle_eta(config, w, q),
        branches=_branches(config, states, actions),
    )


def detect_cycle(config: EngineConfig, trajectory: Trajectory, tol: float = STATE_TOL) -> Optional[CycleReport]:
    """The first closed loop: the earliest state that repeats an earlier (V, T)."""
    states = trajectory.states
    index = _StateIndex(tol)
    for j, s in enumerate(states):
        i = index.lookup(states, s)
        if i is not None:
            return _segment_report(config, trajectory, i, j)
        index.add(s, j)
    return None


def find_cycles(config: EngineConfig, trajectory: Trajectory, tol: float = STATE_TOL) -> list[CycleReport]:
    """Every loop between consecutive visits of the same (V, T).

    Stochastic rollouts revisit states through short back-and-forth moves
    long before they close a useful loop, so the first repeat alone is not
    informative for them.
    """
    states = trajectory.states
    index = _StateIndex(tol)
    found = []
    for j, s in enumerate(states):
        i = index.lookup(states, s)
        if i is not None:
            found.append(_segment_report(config, trajectory, i, j))
        index.add(s, j)
    return found


def fit_branches(report: CycleReport) -> list[BranchFit]:
    """Least-squares fit of ``ln P = b ln V + ln a`` on every branch.

    Branches with fewer than three points or fewer than two distinct
    volumes (isochores) come back unfittable.
    """
    fits = []
    for fam, pts in report.branches:
        vols = np.array([p[0] for p in pts])
        if len(pts) < 3 or np.unique(vols).size < 2 or np.ptp(np.log(vols)) < 1e-12:
            fits.append(BranchFit(fam, None, None, None))
            continue
        x = np.log(vols)
        y = np.log(np.array([p[1] for p in pts]))
        A = np.column_stack([x, np.ones_like(x)])
        (b, ln_a), *_ = np.linalg.lstsq(A, y, rcond=None)
        resid = float(np.max(np.abs(A @ np.array([b, ln_a]) - y)))
        fits.append(BranchFit(fam, float(b), float(math.exp(ln_a)), resid))
    return fits

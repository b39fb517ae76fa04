"""Elitist neuroevolution: evaluate, keep the best quarter, refill with mutants."""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .engine import EngineConfig, UsageError, apply, heat_in, reset, rollout, transition
from .policy import NetShape, PolicyNet, _population_logits, init, mutate, observe


class Fitness(str, enum.Enum):
    MAX_ETA = "max_eta"
    TERMINAL_DW = "terminal_dw"


@dataclass(frozen=True)
class EvoConfig:
    pop_size: int = 100
    n_survivors: int = 25
    epsilon: float = 0.05
    n_generations: int = 500
    seed: int = 0
    fitness: Fitness = Fitness.MAX_ETA
    n_hidden: int = 1024

    def __post_init__(self):
        object.__setattr__(self, "fitness", Fitness(self.fitness))
        if not 0 < self.n_survivors < self.pop_size:
            raise UsageError(f"need 0 < n_survivors < pop_size, got {self.n_survivors}/{self.pop_size}")
        if self.epsilon < 0 or self.n_generations < 1:
            raise UsageError("epsilon must be >= 0 and n_generations >= 1")


@dataclass
class GenerationStats:
    index: int
    max: Optional[float]
    mean: Optional[float]
    n_defined: int
    fitnesses: list[Optional[float]] = field(repr=False, default_factory=list)


@dataclass
class Generation:
    index: int
    members: list[tuple[PolicyNet, Optional[float]]]

    @property
    def stats(self) -> GenerationStats:
        fits = [f for _, f in self.members]
        defined = [f for f in fits if f is not None]
        return GenerationStats(
            self.index,
            max(defined) if defined else None,
            math.fsum(defined) / len(defined) if defined else None,
            len(defined),
            fits,
        )


@dataclass
class EvoResult:
    stats: list[GenerationStats]
    best: PolicyNet
    best_fitness: Optional[float]
    final: Generation


def slot_rng(seed: int, generation: int, slot: int) -> np.random.Generator:
    """Independent stream per (generation, population slot)."""
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(generation, slot)))


def _rank_key(f: Optional[float]) -> float:
    return -math.inf if f is None else f


def _extend_periodic(dws, dqs, first: int, K: int):
    """Repeat steps ``first..`` of a closed loop until ``K`` steps exist."""
    p = len(dws) - first
    while len(dws) < K:
        k = first + (len(dws) - first) % p
        dws.append(dws[k])
        dqs.append(dqs[k])


def _score(dws, dqs, mode: Fitness) -> Optional[float]:
    if mode is Fitness.TERMINAL_DW:
        w = 0.0
        for d in dws:
            w += d
        return w
    w = q = 0.0
    best = None
    for dw, dq in zip(dws, dqs):
        w += dw
        q += dq
        if q > 0:
            eta = w / q
            if best is None or eta > best:
                best = eta
    return best


def evaluate_population(config: EngineConfig, nets: Sequence[PolicyNet],
                        mode: Fitness = Fitness.MAX_ETA) -> list[Optional[float]]:
    """Fitness of each network from a ``K_max``-step argmax rollout.

    Without budgets a rollout is a deterministic map on ``(V, T)``, so as soon
    as a state repeats exactly the remaining steps repeat that loop; they are
    filled in from the recorded outcomes rather than re-simulated. Results are
    bit-identical to stepping :func:`thermo_rl.engine.rollout` to the end.
    """
    mode = Fitness(mode)
    if not nets:
        return []
    shape = nets[0].shape
    if shape.n_in != (4 if config.budgets_enabled else 2):
        raise UsageError("network input arity does not match the engine variant")
    m = config.n_actions
    K = config.K_max
    n = len(nets)
    w_ih = np.stack([net.w_ih for net in nets])
    b_h = np.stack([net.b_h for net in nets])
    w_ho = np.stack([net.w_ho[:, :m] for net in nets])
    head = NetShape(shape.n_in, shape.n_hidden, m, False)

    states = [reset(config)] * n
    dws: list[list[float]] = [[] for _ in range(n)]
    dqs: list[list[float]] = [[] for _ in range(n)]
    seen = [{states[i].key: 0} for i in range(n)]
    active = list(range(n))
    budgeted = config.budgets_enabled
    actions = config.action_set
    while active:
        xs = np.stack([observe(config, states[i]) for i in active])
        sub = active if len(active) < n else slice(None)
        logits = _population_logits(head, w_ih[sub], b_h[sub], w_ho[sub], xs)
        choice = np.argmax(logits, axis=1)
        still = []
        for row, i in enumerate(active):
            action = actions[choice[row]]
            s = states[i]
            if budgeted:
                out = apply(config, s, action)
                if not out.feasible:
                    continue
                dws[i].append(out.dW)
                dqs[i].append(out.dQ_in)
                states[i] = out.next
                if len(dws[i]) < K:
                    still.append(i)
                continue
            V_f, T_f, dW, dQ = transition(config, s.V, s.T, action)
            dws[i].append(dW)
            dqs[i].append(heat_in(config, dQ, T_f))
            t = len(dws[i])
            if t >= K:
                continue
            key = (V_f, T_f)
            first = seen[i].get(key)
            if first is not None:
                _extend_periodic(dws[i], dqs[i], first, K)
                continue
            seen[i][key] = t
            states[i] = type(s)(V_f, T_f, t)
            still.append(i)
        active = still
    return [_score(dws[i], dqs[i], mode) for i in range(n)]


def evaluate(config: EngineConfig, policy, mode: Fitness = Fitness.MAX_ETA) -> Optional[float]:
    """Fitness of one network, or of a callable ``(config, state) -> index`` policy."""
    mode = Fitness(mode)
    if isinstance(policy, PolicyNet):
        return evaluate_population(config, [policy], mode)[0]
    traj = rollout(config, policy)
    return traj.eta_best if mode is Fitness.MAX_ETA else traj.total_work


def select(generation: Generation, n_survivors: int) -> list[tuple[PolicyNet, Optional[float]]]:
    """The ``n_survivors`` fittest members; undefined fitness ranks last, ties keep order."""
    if len(generation.members) < n_survivors:
        raise UsageError("fewer members than survivors requested")
    order = sorted(range(len(generation.members)),
                   key=lambda i: _rank_key(generation.members[i][1]), reverse=True)
    return [generation.members[i] for i in order[:n_survivors]]


def refill(survivors: Sequence[PolicyNet], pop_size: int, epsilon: float,
           rngs: Callable[[int], np.random.Generator]) -> tuple[list[PolicyNet], list[int]]:
    """Survivors unchanged followed by mutants of uniformly drawn survivors.

    ``rngs(slot)`` yields the generator for a child slot; each child draws its
    parent index and then its perturbation from that stream. Returns the new
    members and the parent index of every child.
    """
    if not survivors:
        raise UsageError("refill needs at least one survivor")
    members = list(survivors)
    parents = []
    for slot in range(len(survivors), pop_size):
        rng = rngs(slot)
        p = int(rng.integers(len(survivors)))
        parents.append(p)
        members.append(mutate(survivors[p], epsilon, rng))
    return members, parents


def run(evo: EvoConfig, config: EngineConfig,
        on_generation: Optional[Callable[[Generation, PolicyNet, Optional[float]], None]] = None) -> EvoResult:
    """Generation loop; fully determined by ``evo.seed``.

    Survivors keep their cached fitness: the engine is deterministic, so
    re-evaluating them would reproduce it exactly.
    """
    shape = NetShape.for_engine(config, n_hidden=evo.n_hidden)
    nets = [init(shape, slot_rng(evo.seed, 0, i)) for i in range(evo.pop_size)]
    fits = evaluate_population(config, nets, evo.fitness)
    gen = Generation(1, list(zip(nets, fits)))
    history = []
    best = best_fit = None
    for g in range(1, evo.n_generations + 1):
        if g > 1:
            survivors = select(gen, evo.n_survivors)
            children, _ = refill([s[0] for s in survivors], evo.pop_size, evo.epsilon,
                                 lambda slot, g=g: slot_rng(evo.seed, g, slot))
            kids = children[len(survivors):]
            gen = Generation(g, survivors + list(zip(kids, evaluate_population(config, kids, evo.fitness))))
        top = select(gen, 1)[0]
        if best is None or _rank_key(top[1]) > _rank_key(best_fit):
            best, best_fit = top
        history.append(gen.stats)
        if on_generation is not None:
            on_generation(gen, best, best_fit)
    return EvoResult(history, best, best_fit, gen)

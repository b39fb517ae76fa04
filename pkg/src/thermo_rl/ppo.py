"""Proximal policy optimization on the budgeted engine, written against numpy only.

The policy and value estimate share one network: the first ``M`` outputs are
action logits, the last output is the state value.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np

from .cycles import CycleReport, find_cycles
from .engine import EngineConfig, Trajectory, UsageError, apply, reset
from .policy import (NetShape, PolicyNet, act_softmax, backward, forward, init,
                     log_softmax, observe)


@dataclass(frozen=True)
class PpoConfig:
    lr: float = 2.5e-4
    gamma: float = 0.99
    clip_eps: float = 0.2
    c1: float = 0.5
    c2: float = 0.01
    batch_size: int = 128
    total_steps: int = 2_000_000
    gae_lambda: float = 0.95
    epochs_per_batch: int = 4
    seed: int = 0
    n_hidden: int = 1024
    # "terminal" pays W_budget(T) - W0 once per episode; "dense" pays dW every
    # step and is an experimental alternative.
    reward_mode: str = "terminal"
    # Rewards are divided by this energy; None uses the heat of one analytic
    # Carnot cycle over the volume range.
    reward_scale: Optional[float] = None
    # Output-layer weights are drawn standard normal and then multiplied by
    # this factor, so the first policy is close to uniform.
    init_output_scale: float = 0.01

    def __post_init__(self):
        if self.batch_size < 1 or self.total_steps < 1 or self.epochs_per_batch < 1:
            raise UsageError("batch_size, total_steps and epochs_per_batch must be >= 1")
        if self.reward_mode not in ("terminal", "dense"):
            raise UsageError(f"reward_mode must be 'terminal' or 'dense', got {self.reward_mode!r}")


@dataclass
class Transition:
    obs: np.ndarray
    action: int
    log_prob: float
    reward: float
    value: float
    done: bool


@dataclass
class AdvantageBatch:
    advantages: np.ndarray
    value_targets: np.ndarray
    raw_advantages: np.ndarray
    transitions: list[Transition]

    @property
    def obs(self) -> np.ndarray:
        return np.stack([t.obs for t in self.transitions])

    @property
    def actions(self) -> np.ndarray:
        return np.array([t.action for t in self.transitions], dtype=np.int64)

    @property
    def old_log_probs(self) -> np.ndarray:
        return np.array([t.log_prob for t in self.transitions])


@dataclass
class TrainRecord:
    update_index: int
    env_steps: int
    grad_steps: int
    mean_return: Optional[float]
    best_eta: Optional[float]
    best_cycle_eta: Optional[float]
    loss_clip: float
    loss_vf: float
    entropy: float


@dataclass
class TrainResult:
    records: list[TrainRecord]
    best: PolicyNet
    best_eta: Optional[float]
    best_trajectory: Optional[Trajectory]
    best_cycle: Optional[CycleReport]
    final: PolicyNet


def compute_advantages(transitions: Sequence[Transition], gamma: float, gae_lambda: float,
                       last_value: float = 0.0, normalize: bool = True) -> AdvantageBatch:
    """Generalized advantage estimates and value targets.

    ``last_value`` bootstraps a batch whose final transition is not terminal.
    Targets use the raw advantages; only the returned ``advantages`` are
    normalized.
    """
    if not transitions:
        raise UsageError("compute_advantages needs at least one transition")
    n = len(transitions)
    adv = np.zeros(n)
    running = 0.0
    next_value = last_value
    for t in range(n - 1, -1, -1):
        tr = transitions[t]
        live = 0.0 if tr.done else 1.0
        delta = tr.reward + gamma * next_value * live - tr.value
        running = delta + gamma * gae_lambda * live * running
        adv[t] = running
        next_value = tr.value
    values = np.array([t.value for t in transitions])
    targets = adv + values
    norm = adv
    if normalize and n > 1:
        norm = (adv - adv.mean()) / (adv.std() + 1e-8)
    return AdvantageBatch(norm, targets, adv, list(transitions))


def ppo_loss(net: PolicyNet, batch: AdvantageBatch, old_log_probs: np.ndarray,
             config: PpoConfig) -> tuple[float, np.ndarray, dict]:
    """Negated clipped-surrogate objective with value and entropy terms.

    Returns ``(loss, gradient, parts)`` where ``parts`` holds the batch means
    of the surrogate, squared value error, entropy and probability ratio.
    """
    obs = batch.obs
    acts = batch.actions
    adv = batch.advantages
    n = len(acts)
    logits, values = forward(net, obs)
    logp_all = log_softmax(logits)
    probs = np.exp(logp_all)
    rows = np.arange(n)
    logp = logp_all[rows, acts]
    ratio = np.exp(logp - old_log_probs)
    clipped = np.clip(ratio, 1.0 - config.clip_eps, 1.0 + config.clip_eps)
    surr1 = ratio * adv
    surr2 = clipped * adv
    use_raw = surr1 <= surr2
    surrogate = np.where(use_raw, surr1, surr2)
    verr = values - batch.value_targets
    ent = -(probs * logp_all).sum(axis=1)

    loss_clip = surrogate.mean()
    loss_vf = (verr ** 2).mean()
    entropy = ent.mean()
    loss = -(loss_clip - config.c1 * loss_vf + config.c2 * entropy)

    onehot = np.zeros_like(probs)
    onehot[rows, acts] = 1.0
    d_surr = np.where(use_raw, adv * ratio, 0.0)[:, None] * (onehot - probs)
    d_ent = -probs * (logp_all + ent[:, None])
    upstream = np.empty((n, net.shape.n_out))
    upstream[:, :-1] = -(d_surr + config.c2 * d_ent) / n
    upstream[:, -1] = 2.0 * config.c1 * verr / n
    grad = backward(net, obs, upstream)
    parts = {"loss_clip": float(loss_clip), "loss_vf": float(loss_vf),
             "entropy": float(entropy), "ratio": ratio, "surrogate": surrogate}
    return float(loss), grad, parts


class Adam:
    """Adam moments for one flat parameter vector."""

    def __init__(self, size: int, lr: float, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.m = np.zeros(size)
        self.v = np.zeros(size)
        self.t = 0

    def step(self, net: PolicyNet, grad: np.ndarray) -> PolicyNet:
        if grad.shape != net.flat.shape or grad.shape != self.m.shape:
            raise UsageError(f"gradient shape {grad.shape} does not match parameters {net.flat.shape}")
        self.t += 1
        self.m = self.beta1 * self.m + (1 - self.beta1) * grad
        self.v = self.beta2 * self.v + (1 - self.beta2) * grad * grad
        m_hat = self.m / (1 - self.beta1 ** self.t)
        v_hat = self.v / (1 - self.beta2 ** self.t)
        return PolicyNet(net.shape, net.flat - self.lr * m_hat / (np.sqrt(v_hat) + self.eps))


def sgd_step(net: PolicyNet, grad: np.ndarray, lr: float, opt: Optional[Adam] = None) -> tuple[PolicyNet, Adam]:
    """One Adam update; pass the returned optimizer back in to keep its moments."""
    if opt is None:
        opt = Adam(net.shape.size, lr)
    opt.lr = lr
    return opt.step(net, grad), opt


def _reward_scale(ppo: PpoConfig, config: EngineConfig) -> float:
    if ppo.reward_scale is not None:
        return ppo.reward_scale
    q, _ = config.analytic_carnot()
    return q if q > 0 else 1.0


class _Collector:
    """Steps one engine instance across batch boundaries under a sampling policy."""

    def __init__(self, config: EngineConfig, rng: np.random.Generator, scale: float, dense: bool):
        self.config = config
        self.rng = rng
        self.scale = scale
        self.dense = dense
        self._new_episode()

    def _new_episode(self):
        self.state = reset(self.config)
        self.traj = Trajectory(start=self.state)

    def collect(self, net: PolicyNet, n: int):
        """``n`` transitions plus the episodes finished along the way."""
        cfg = self.config
        m = cfg.n_actions
        out_tr: list[Transition] = []
        finished: list[Trajectory] = []
        for _ in range(n):
            obs = observe(cfg, self.state)
            logits, value = forward(net, obs)
            idx, logp, _ = act_softmax(logits[:m], self.rng)
            action = cfg.action_set[idx]
            outcome = apply(cfg, self.state, action)
            if outcome.feasible:
                self.traj.append(self.state, action, outcome)
                self.state = outcome.next
                done = self.state.t >= cfg.K_max
            else:
                self.traj.infeasible = (action, outcome)
                done = True
            if self.dense:
                reward = (outcome.dW if outcome.feasible else 0.0) / self.scale
            else:
                reward = (self.state.W_budget - cfg.W0_budget) / self.scale if done else 0.0
            out_tr.append(Transition(obs, idx, logp, reward, float(value), done))
            if done:
                finished.append(self.traj)
                self._new_episode()
        return out_tr, finished

    def bootstrap(self, net: PolicyNet, last: Transition) -> float:
        if last.done:
            return 0.0
        _, value = forward(net, observe(self.config, self.state))
        return float(value)


def train(ppo: PpoConfig, config: EngineConfig,
          on_update: Optional[Callable[[TrainRecord], None]] = None) -> TrainResult:
    """Alternate ``batch_size``-step collection with ``epochs_per_batch`` full-batch updates."""
    if not config.budgets_enabled:
        raise UsageError("PPO trains on the budgeted engine; set budgets_enabled")
    init_seq, sample_seq = np.random.SeedSequence(ppo.seed).spawn(2)
    shape = NetShape.for_engine(config, n_hidden=ppo.n_hidden, value_head=True)
    net = init(shape, np.random.default_rng(init_seq))
    net.w_ho[...] *= ppo.init_output_scale
    opt = Adam(shape.size, ppo.lr)
    scale = _reward_scale(ppo, config)
    collector = _Collector(config, np.random.default_rng(sample_seq), scale, ppo.reward_mode == "dense")

    records: list[TrainRecord] = []
    best = net
    best_eta = best_cycle_eta = None
    best_traj = best_cycle = None
    env_steps = grad_steps = 0
    n_updates = math.ceil(ppo.total_steps / ppo.batch_size)
    for u in range(n_updates):
        n = min(ppo.batch_size, ppo.total_steps - env_steps)
        transitions, finished = collector.collect(net, n)
        env_steps += n
        for traj in finished:
            eta = traj.eta_best
            if eta is not None and (best_eta is None or eta > best_eta):
                best_eta, best, best_traj = eta, net, traj
            for cyc in find_cycles(config, traj):
                if cyc.eta is not None and (best_cycle_eta is None or cyc.eta > best_cycle_eta):
                    best_cycle_eta, best_cycle = cyc.eta, cyc
        returns = [(traj.final.W_budget - config.W0_budget) / scale for traj in finished]

        batch = compute_advantages(transitions, ppo.gamma, ppo.gae_lambda,
                                   collector.bootstrap(net, transitions[-1]))
        old = batch.old_log_probs
        parts_sum = {"loss_clip": 0.0, "loss_vf": 0.0, "entropy": 0.0}
        for _ in range(ppo.epochs_per_batch):
            _, grad, parts = ppo_loss(net, batch, old, ppo)
            for k in parts_sum:
                parts_sum[k] += parts[k]
            net = opt.step(net, grad)
            grad_steps += 1
        rec = TrainRecord(
            update_index=u,
            env_steps=env_steps,
            grad_steps=grad_steps,
            mean_return=math.fsum(returns) / len(returns) if returns else None,
            best_eta=best_eta,
            best_cycle_eta=best_cycle_eta,
            **{k: v / ppo.epochs_per_batch for k, v in parts_sum.items()},
        )
        records.append(rec)
        if on_update is not None:
            on_update(rec)
    return TrainResult(records, best, best_eta, best_traj, best_cycle, net)

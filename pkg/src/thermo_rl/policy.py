"""Two-layer feed-forward policy network stored as one flat parameter vector.

Layout of the flat vector: ``w_ih`` (n_in x n_hidden, row-major), then
``b_h`` (n_hidden), then ``w_ho`` (n_hidden x n_out, row-major). The hidden
activation is ``0.5 * tanh(x @ w_ih + b_h)`` and the output layer is linear
with no bias.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Union

import numpy as np

from .engine import EngineConfig, EngineState, UsageError

CHECKPOINT_MAGIC = b"THRM"
CHECKPOINT_VERSION = 1
_HEADER = struct.Struct("<4sIIII")


@dataclass(frozen=True)
class NetShape:
    n_in: int
    n_hidden: int = 1024
    n_out: int = 8
    value_head: bool = False

    def __post_init__(self):
        if self.n_in not in (2, 4):
            raise UsageError(f"n_in must be 2 or 4, got {self.n_in}")
        if self.n_hidden < 1:
            raise UsageError(f"n_hidden must be >= 1, got {self.n_hidden}")
        if self.n_actions < 2:
            raise UsageError(f"need at least 2 action logits, got n_out={self.n_out}")

    @property
    def n_actions(self) -> int:
        return self.n_out - 1 if self.value_head else self.n_out

    @property
    def size(self) -> int:
        return self.n_in * self.n_hidden + self.n_hidden + self.n_hidden * self.n_out

    @classmethod
    def for_engine(cls, config: EngineConfig, n_hidden: int = 1024, value_head: bool = False) -> "NetShape":
        n_in = 4 if config.budgets_enabled else 2
        return cls(n_in, n_hidden, config.n_actions + (1 if value_head else 0), value_head)


class PolicyNet:
    """Flat parameters plus architecture; the weight matrices are views into ``flat``."""

    __slots__ = ("shape", "flat", "w_ih", "b_h", "w_ho")

    def __init__(self, shape: NetShape, flat: np.ndarray):
        flat = np.ascontiguousarray(flat, dtype=np.float64)
        if flat.shape != (shape.size,):
            raise UsageError(f"expected {shape.size} parameters for {shape}, got {flat.shape}")
        self.shape = shape
        self.flat = flat
        a = shape.n_in * shape.n_hidden
        b = a + shape.n_hidden
        self.w_ih = flat[:a].reshape(shape.n_in, shape.n_hidden)
        self.b_h = flat[a:b]
        self.w_ho = flat[b:].reshape(shape.n_hidden, shape.n_out)

    def copy(self) -> "PolicyNet":
        return PolicyNet(self.shape, self.flat.copy())

    def __eq__(self, other) -> bool:
        return (isinstance(other, PolicyNet) and self.shape == other.shape
                and np.array_equal(self.flat, other.flat))

    def __repr__(self) -> str:
        return f"PolicyNet({self.shape})"


def init(shape: NetShape, rng: np.random.Generator) -> PolicyNet:
    return PolicyNet(shape, rng.standard_normal(shape.size))


def observe(config: EngineConfig, state: EngineState) -> np.ndarray:
    """Network input: scaled (temperature, volume), plus budget fractions when budgeted.

    Values are not clipped; temperatures past a reservoir map outside [0, 1].
    """
    temp = (state.T - config.T_c) / (config.T_h - config.T_c)
    vol = (state.V - config.V_min) / (config.V_max - config.V_min)
    if not config.budgets_enabled:
        return np.array([temp, vol])
    w = state.W_budget / config.W0_budget if config.W0_budget > 0 else 0.0
    q = state.Q_budget / config.Q0_budget if config.Q0_budget > 0 else 0.0
    return np.array([temp, vol, w, q])


def _hidden(net: PolicyNet, x: np.ndarray) -> np.ndarray:
    # Explicit sum over the few inputs: elementwise, so a row's result never
    # depends on what else is in the batch.
    z = net.b_h + x[..., 0, None] * net.w_ih[0]
    for i in range(1, net.shape.n_in):
        z = z + x[..., i, None] * net.w_ih[i]
    return np.tanh(z)


def _output(s: np.ndarray, w_ho: np.ndarray) -> np.ndarray:
    if s.ndim == 1:
        return (s[None, :] @ w_ho)[0]
    return s @ w_ho


def forward(net: PolicyNet, x: np.ndarray) -> tuple[np.ndarray, Optional[Union[float, np.ndarray]]]:
    """Return ``(logits, value)``; ``value`` is None without a value head.

    ``x`` may be a single input vector or a batch of shape (N, n_in).
    """
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] != net.shape.n_in or x.ndim > 2:
        raise UsageError(f"input must have trailing dimension {net.shape.n_in}, got shape {x.shape}")
    out = _output(0.5 * _hidden(net, x), net.w_ho)
    if net.shape.value_head:
        return out[..., :-1], out[..., -1]
    return out, None


def forward_population(nets: list[PolicyNet], xs: np.ndarray) -> np.ndarray:
    """Logits of many same-shape networks, one input row each; row b equals ``forward(nets[b], xs[b])``."""
    shape = nets[0].shape
    w_ih = np.stack([n.w_ih for n in nets])
    b_h = np.stack([n.b_h for n in nets])
    w_ho = np.stack([n.w_ho for n in nets])
    return _population_logits(shape, w_ih, b_h, w_ho, xs)


def _population_logits(shape: NetShape, w_ih, b_h, w_ho, xs) -> np.ndarray:
    z = b_h + xs[:, 0, None] * w_ih[:, 0]
    for i in range(1, shape.n_in):
        z = z + xs[:, i, None] * w_ih[:, i]
    s = 0.5 * np.tanh(z)
    out = np.matmul(s[:, None, :], w_ho)[:, 0, :]
    return out[:, :-1] if shape.value_head else out


def act_argmax(logits) -> int:
    # np.argmax returns the first maximum, so ties go to the lowest index.
    return int(np.argmax(logits))


def softmax(logits) -> np.ndarray:
    z = np.asarray(logits, dtype=np.float64)
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def log_softmax(logits) -> np.ndarray:
    z = np.asarray(logits, dtype=np.float64)
    z = z - z.max(axis=-1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=-1, keepdims=True))


def act_softmax(logits, rng: np.random.Generator) -> tuple[int, float, np.ndarray]:
    """Sample an action; returns ``(index, log-probability, distribution)``."""
    logp = log_softmax(logits)
    probs = np.exp(logp)
    # Inverse-CDF draw from a single uniform keeps the rng stream one-per-step.
    u = rng.random()
    idx = int(np.searchsorted(np.cumsum(probs), u * probs.sum(), side="right"))
    idx = min(idx, len(probs) - 1)
    return idx, float(logp[idx]), probs


def mutate(net: PolicyNet, epsilon: float, rng: np.random.Generator) -> PolicyNet:
    if epsilon < 0:
        raise UsageError(f"epsilon must be >= 0, got {epsilon}")
    return PolicyNet(net.shape, net.flat + epsilon * rng.standard_normal(net.shape.size))


def backward(net: PolicyNet, x: np.ndarray, upstream: np.ndarray) -> np.ndarray:
    """Gradient of ``sum(outputs * upstream)`` with respect to the flat parameters.

    ``outputs`` is the full output layer (logits followed by the value, if
    any). Batched inputs of shape (N, n_in) with upstream (N, n_out) give the
    gradient summed over the batch.
    """
    x = np.asarray(x, dtype=np.float64)
    g = np.asarray(upstream, dtype=np.float64)
    if x.shape[-1] != net.shape.n_in or g.shape[-1] != net.shape.n_out or x.ndim != g.ndim:
        raise UsageError(f"shape mismatch: input {x.shape}, upstream {g.shape} for {net.shape}")
    if x.ndim == 1:
        x = x[None, :]
        g = g[None, :]
    if x.shape[0] != g.shape[0]:
        raise UsageError(f"batch mismatch: {x.shape[0]} inputs vs {g.shape[0]} upstream rows")
    th = _hidden(net, x)
    s = 0.5 * th
    grad_w_ho = s.T @ g
    # d/dz of 0.5*tanh(z) is 0.5*(1 - tanh(z)^2)
    dz = (g @ net.w_ho.T) * (0.5 * (1.0 - th * th))
    grad_b = dz.sum(axis=0)
    grad_w_ih = x.T @ dz
    return np.concatenate([grad_w_ih.ravel(), grad_b, grad_w_ho.ravel()])


def save_checkpoint(net: PolicyNet, path: Union[str, Path]) -> None:
    """Write the header (magic, version, n_in, n_hidden, n_out) and little-endian float64 parameters."""
    path = Path(path)
    header = _HEADER.pack(CHECKPOINT_MAGIC, CHECKPOINT_VERSION, net.shape.n_in,
                          net.shape.n_hidden, net.shape.n_out)
    try:
        with open(path, "wb") as fh:
            fh.write(header)
            fh.write(net.flat.astype("<f8").tobytes())
    except OSError as exc:
        raise OSError(f"cannot write checkpoint {path}: {exc}") from exc


def load_checkpoint(path: Union[str, Path], value_head: Optional[bool] = None,
                    n_actions: Optional[int] = None) -> PolicyNet:
    """Read a checkpoint. Whether the last output is a value estimate is not stored;
    pass ``value_head`` or ``n_actions`` (then ``n_out == n_actions + 1`` implies one)."""
    data = Path(path).read_bytes()
    if len(data) < _HEADER.size:
        raise UsageError(f"{path}: truncated checkpoint header")
    magic, version, n_in, n_hidden, n_out = _HEADER.unpack_from(data)
    if magic != CHECKPOINT_MAGIC:
        raise UsageError(f"{path}: bad magic {magic!r}")
    if version != CHECKPOINT_VERSION:
        raise UsageError(f"{path}: unsupported checkpoint version {version}")
    if value_head is None:
        value_head = n_actions is not None and n_out == n_actions + 1
    shape = NetShape(n_in, n_hidden, n_out, value_head)
    flat = np.frombuffer(data, dtype="<f8", offset=_HEADER.size)
    if flat.size != shape.size:
        raise UsageError(f"{path}: expected {shape.size} parameters, found {flat.size}")
    return PolicyNet(shape, flat.astype(np.float64))

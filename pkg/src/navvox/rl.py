"""Value-based exploration learning: Q-network, double-Q targets, prioritized
replay, and the training loop.

The Q-approximator is a small fully-connected network evaluated and
differentiated by hand in numpy (float64 throughout). Targets use the
double-Q rule: the online network selects the best next action, the target
network evaluates it. Replay sampling is proportional to stored TD error
raised to alpha, corrected by importance-sampling weights annealed via beta.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .explore import ACTION_NAMES, ExplorationEnv, STATE_DIM, episode_rng

POLICY_FORMAT = "NAVVOX-POLICY v1"
N_ACTIONS = len(ACTION_NAMES)

# dedicated stream ids so behavior, training, and init draws never collide
_INIT_STREAM = 104729
_TRAIN_STREAM = 1299709


@dataclass
class QNetwork:
    """Fully-connected ReLU network mapping a state to one value per action."""

    weights: list[np.ndarray]
    biases: list[np.ndarray]

    @property
    def layer_sizes(self) -> tuple[int, ...]:
        return tuple([self.weights[0].shape[0]] + [w.shape[1] for w in self.weights])

    def copy(self) -> "QNetwork":
        return QNetwork([w.copy() for w in self.weights], [b.copy() for b in self.biases])

    def n_params(self) -> int:
        return sum(w.size for w in self.weights) + sum(b.size for b in self.biases)


def init_qnetwork(layer_sizes: Sequence[int] = (STATE_DIM, 64, 64, N_ACTIONS), seed: int = 0) -> QNetwork:
    """He-initialized network; fully determined by the seed."""
    if layer_sizes[-1] != N_ACTIONS:
        raise ValueError(f"output layer must have {N_ACTIONS} units")
    rng = np.random.default_rng([int(seed), _INIT_STREAM])
    weights, biases = [], []
    for fan_in, fan_out in zip(layer_sizes[:-1], layer_sizes[1:]):
        weights.append(rng.normal(0.0, np.sqrt(2.0 / fan_in), size=(fan_in, fan_out)))
        biases.append(np.zeros(fan_out))
    return QNetwork(weights, biases)


def q_forward_batch(net: QNetwork, states: np.ndarray) -> np.ndarray:
    x = np.asarray(states, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != net.weights[0].shape[0]:
        raise ValueError(f"expected states of dimension {net.weights[0].shape[0]}")
    last = len(net.weights) - 1
    for k, (w, b) in enumerate(zip(net.weights, net.biases)):
        x = x @ w + b
        if k < last:
            x = np.maximum(x, 0.0)
    return x


def q_forward(net: QNetwork, state: np.ndarray) -> np.ndarray:
    """Action values for a single state vector."""
    state = np.asarray(state, dtype=np.float64)
    if state.ndim != 1:
        raise ValueError("q_forward expects a single state vector")
    return q_forward_batch(net, state[None, :])[0]


def _forward_cached(net: QNetwork, states: np.ndarray):
    """Forward pass retaining layer inputs and pre-activations for backprop."""
    x = np.asarray(states, dtype=np.float64)
    inputs, preacts = [], []
    last = len(net.weights) - 1
    for k, (w, b) in enumerate(zip(net.weights, net.biases)):
        inputs.append(x)
        z = x @ w + b
        preacts.append(z)
        x = np.maximum(z, 0.0) if k < last else z
    return x, inputs, preacts


@dataclass(frozen=True)
class Transition:
    s: np.ndarray
    a: int
    r: float
    s_next: np.ndarray
    terminal: bool = False


def double_q_targets(
    net: QNetwork, target: QNetwork, rewards: np.ndarray, s_next: np.ndarray, terminal: np.ndarray, gamma: float
) -> np.ndarray:
    """Double-Q bootstrap: online net picks a*, target net evaluates it."""
    a_star = np.argmax(q_forward_batch(net, s_next), axis=1)
    q_eval = q_forward_batch(target, s_next)[np.arange(len(a_star)), a_star]
    return rewards + gamma * q_eval * (~np.asarray(terminal, dtype=bool))


def td_error(net: QNetwork, target: QNetwork, t: Transition, gamma: float) -> float:
    """Absolute one-step TD residual of a single transition."""
    y = double_q_targets(
        net, target, np.asarray([t.r]), np.asarray(t.s_next)[None, :], np.asarray([t.terminal]), gamma
    )[0]
    return float(abs(y - q_forward(net, np.asarray(t.s))[t.a]))


def td_loss_and_grads(
    net: QNetwork, states: np.ndarray, actions: np.ndarray, targets: np.ndarray, is_weights: np.ndarray
):
    """Weighted squared-TD loss and its analytic parameter gradients.

    Loss = mean_i w_i * (Q(s_i, a_i) - y_i)^2 with y treated as constant.
    Returns (loss, signed residuals, weight grads, bias grads).
    """
    out, inputs, preacts = _forward_cached(net, states)
    n = len(states)
    idx = np.arange(n)
    resid = out[idx, actions] - targets
    loss = float(np.mean(is_weights * resid**2))

    d_out = np.zeros_like(out)
    d_out[idx, actions] = 2.0 * is_weights * resid / n

    grads_w = [np.zeros_like(w) for w in net.weights]
    grads_b = [np.zeros_like(b) for b in net.biases]
    dz = d_out
    for k in range(len(net.weights) - 1, -1, -1):
        grads_w[k] = inputs[k].T @ dz
        grads_b[k] = dz.sum(axis=0)
        if k > 0:
            dz = (dz @ net.weights[k].T) * (preacts[k - 1] > 0)
    return loss, resid, grads_w, grads_b


class ReplayBuffer:
    """FIFO transition store with proportional prioritized sampling.

    Sampling probability follows priority^alpha; importance-sampling weights
    (n * P)^-beta are normalized by their batch maximum. Updated priorities
    get a small positive floor so no transition starves.
    """

    def __init__(self, capacity: int, alpha: float = 0.6, priority_floor: float = 1e-3):
        if capacity < 1:
            raise ValueError("capacity must be positive")
        self.capacity = capacity
        self.alpha = alpha
        self.priority_floor = priority_floor
        self._data: list[Transition] = []
        self._priorities = np.zeros(capacity)
        self._write = 0

    def __len__(self) -> int:
        return len(self._data)

    def add(self, t: Transition) -> None:
        priority = self._priorities[: len(self._data)].max() if self._data else 1.0
        if len(self._data) < self.capacity:
            self._data.append(t)
            self._priorities[len(self._data) - 1] = priority
        else:
            self._data[self._write] = t
            self._priorities[self._write] = priority
        self._write = (self._write + 1) % self.capacity

    def probabilities(self) -> np.ndarray:
        p = self._priorities[: len(self._data)] ** self.alpha
        return p / p.sum()

    def sample(self, n: int, rng: np.random.Generator, beta: float):
        """(indices, batch arrays, IS weights); raises when underfull."""
        size = len(self._data)
        if size < n:
            raise ValueError(f"replay buffer holds {size} transitions; {n} requested")
        probs = self.probabilities()
        idx = rng.choice(size, size=n, replace=True, p=probs)
        weights = (size * probs[idx]) ** (-beta)
        weights = weights / weights.max()
        states = np.stack([self._data[i].s for i in idx])
        actions = np.asarray([self._data[i].a for i in idx])
        rewards = np.asarray([self._data[i].r for i in idx], dtype=np.float64)
        s_next = np.stack([self._data[i].s_next for i in idx])
        terminal = np.asarray([self._data[i].terminal for i in idx], dtype=bool)
        return idx, (states, actions, rewards, s_next, terminal), weights

    def update_priorities(self, idx: np.ndarray, deltas: np.ndarray) -> None:
        self._priorities[idx] = np.abs(deltas) + self.priority_floor


@dataclass
class TrainConfig:
    """Training hyperparameters; the desk-scale defaults finish in minutes.

    alpha = 0 disables prioritization (uniform replay) while keeping the rest
    of the stack identical.
    """

    gamma: float = 0.99
    lr: float = 1e-4
    momentum: float = 0.0
    buffer_capacity: int = 30_000
    episodes: int = 200
    steps_per_episode: int = 500
    batch_size: int = 64
    target_sync_interval: int = 1000
    epsilon_start: float = 1.0
    epsilon_end: float = 0.05
    epsilon_decay_frac: float = 0.6
    alpha: float = 0.6
    beta_start: float = 0.4
    beta_end: float = 1.0
    hidden_sizes: tuple[int, ...] = (64, 64)

    def __post_init__(self):
        if not (0.0 <= self.gamma <= 1.0):
            raise ValueError("gamma must be in [0, 1]")
        if self.lr <= 0:
            raise ValueError("learning rate must be positive")

    def epsilon(self, episode: int) -> float:
        decay = max(1, int(self.episodes * self.epsilon_decay_frac))
        frac = min(episode / decay, 1.0)
        return self.epsilon_start + (self.epsilon_end - self.epsilon_start) * frac


@dataclass
class TrainResult:
    net: QNetwork
    log: list[dict] = field(default_factory=list)


DIVERGENCE_LIMIT = 1e6


def train(env: ExplorationEnv, cfg: TrainConfig, seed: int) -> TrainResult:
    """Run epsilon-greedy episodes and fit the Q-network on replayed batches.

    Deterministic given (env, cfg, seed): behavior noise uses per-episode
    streams, replay sampling its own stream. The target network is hard-synced
    every ``target_sync_interval`` environment steps. Aborts if mean |Q|
    exceeds the divergence limit.
    """
    layers = (STATE_DIM, *cfg.hidden_sizes, N_ACTIONS)
    net = init_qnetwork(layers, seed)
    target = net.copy()
    if cfg.episodes == 0:
        return TrainResult(net, [])

    buffer = ReplayBuffer(cfg.buffer_capacity, alpha=cfg.alpha)
    train_rng = np.random.default_rng([int(seed), _TRAIN_STREAM])
    velocity_w = [np.zeros_like(w) for w in net.weights]
    velocity_b = [np.zeros_like(b) for b in net.biases]
    total_steps = max(1, cfg.episodes * cfg.steps_per_episode)
    log: list[dict] = []
    global_step = 0

    for episode in range(cfg.episodes):
        rng = episode_rng(seed, episode)
        eps = cfg.epsilon(episode)
        st = env.reset()
        total_reward = 0.0
        deltas: list[float] = []
        for _ in range(cfg.steps_per_episode):
            s = env.encode(st)
            if rng.random() < eps:
                action = int(rng.integers(N_ACTIONS))
            else:
                action = int(np.argmax(q_forward(net, s)))
            _, r = env.step_action(st, action)
            s2 = env.encode(st)
            buffer.add(Transition(s, action, r, s2, False))
            total_reward += r

            if len(buffer) >= cfg.batch_size:
                beta = cfg.beta_start + (cfg.beta_end - cfg.beta_start) * min(
                    global_step / total_steps, 1.0
                )
                idx, (bs, ba, br, bs2, bterm), weights = buffer.sample(cfg.batch_size, train_rng, beta)
                with np.errstate(over="ignore", invalid="ignore"):
                    y = double_q_targets(net, target, br, bs2, bterm, cfg.gamma)
                    loss, resid, gw, gb = td_loss_and_grads(net, bs, ba, y, weights)
                if not np.isfinite(loss) or np.abs(y).mean() > DIVERGENCE_LIMIT:
                    raise RuntimeError(f"training diverged at step {global_step} (loss={loss})")
                for k in range(len(net.weights)):
                    velocity_w[k] = cfg.momentum * velocity_w[k] + gw[k]
                    velocity_b[k] = cfg.momentum * velocity_b[k] + gb[k]
                    net.weights[k] -= cfg.lr * velocity_w[k]
                    net.biases[k] -= cfg.lr * velocity_b[k]
                buffer.update_priorities(idx, resid)
                deltas.extend(np.abs(resid).tolist())

            global_step += 1
            if global_step % cfg.target_sync_interval == 0:
                target = net.copy()
        log.append(
            {
                "episode": episode,
                "total_reward": total_reward,
                "coverage": env.coverage_of(st),
                "mean_td_error": float(np.mean(deltas)) if deltas else 0.0,
            }
        )
    return TrainResult(net, log)


def greedy_policy(net: QNetwork):
    """Policy function for the exploration runner: argmax of the action values."""

    def policy(features: np.ndarray) -> int:
        return int(np.argmax(q_forward(net, features)))

    return policy


def save_policy(net: QNetwork, path) -> None:
    """Versioned JSON round-trip; float repr keeps forward passes bit-identical."""
    payload = {
        "format": POLICY_FORMAT,
        "layers": list(net.layer_sizes),
        "activation": "relu",
        "weights": [w.tolist() for w in net.weights],
        "biases": [b.tolist() for b in net.biases],
    }
    Path(path).write_text(json.dumps(payload))


def load_policy(path) -> QNetwork:
    try:
        payload = json.loads(Path(path).read_text())
    except json.JSONDecodeError as e:
        raise ValueError(f"{path}: not a valid policy file: {e}") from None
    if not isinstance(payload, dict) or payload.get("format") != POLICY_FORMAT:
        raise ValueError(f"{path}: expected format {POLICY_FORMAT!r}")
    layers = payload["layers"]
    weights = [np.asarray(w, dtype=np.float64) for w in payload["weights"]]
    biases = [np.asarray(b, dtype=np.float64) for b in payload["biases"]]
    for k, (fan_in, fan_out) in enumerate(zip(layers[:-1], layers[1:])):
        if weights[k].shape != (fan_in, fan_out) or biases[k].shape != (fan_out,):
            raise ValueError(f"{path}: layer {k} shape mismatch against declared architecture")
    return QNetwork(weights, biases)


def save_training_log(log: list[dict], path) -> None:
    lines = ["episode,total_reward,coverage,mean_td_error"]
    for row in log:
        lines.append(
            f"{row['episode']},{row['total_reward']!r},{row['coverage']!r},{row['mean_td_error']!r}"
        )
    Path(path).write_text("\n".join(lines) + "\n")

"""DQN and DDQN dialogue managers.

Epsilon-greedy control with an exploration-excluded action set, a finite FIFO
replay pool with uniform minibatch sampling, a periodically synchronized
target network, and the two bootstrap rules: the standard max-over-target and
the decoupled variant that lets the online network pick the action the target
network evaluates.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import nets
from .environment import Transition
from .nets import AdadeltaState, FeedForwardNet, clone_net, copy_params


class PoolTooSmall(RuntimeError):
    """Sampling was requested before the pool held a full minibatch."""


class ReplayPool:
    """Finite FIFO transition store; inserting past capacity evicts the oldest."""

    def __init__(self, capacity: int = 50000):
        if capacity < 1:
            raise ValueError("capacity must be >= 1")
        self.capacity = capacity
        self._features: np.ndarray | None = None
        self._next_features: np.ndarray | None = None
        self._actions = np.zeros(capacity, dtype=np.int64)
        self._rewards = np.zeros(capacity)
        self._terminal = np.zeros(capacity, dtype=bool)
        self._size = 0
        self._cursor = 0

    def __len__(self) -> int:
        return self._size

    def add(self, t: Transition) -> None:
        if self._features is None:
            dim = len(t.features)
            self._features = np.zeros((self.capacity, dim))
            self._next_features = np.zeros((self.capacity, dim))
        i = self._cursor
        self._features[i] = t.features
        self._next_features[i] = t.next_features
        self._actions[i] = t.action
        self._rewards[i] = t.reward
        self._terminal[i] = t.terminal
        self._cursor = (self._cursor + 1) % self.capacity
        self._size = min(self._size + 1, self.capacity)

    def extend(self, transitions: Sequence[Transition]) -> None:
        for t in transitions:
            self.add(t)

    def sample_indices(self, batch: int, rng: np.random.Generator) -> np.ndarray:
        if self._size < batch:
            raise PoolTooSmall(f"pool holds {self._size} < batch {batch}")
        return rng.choice(self._size, size=batch, replace=False)

    def batch(self, idx: np.ndarray):
        return (self._features[idx], self._actions[idx], self._rewards[idx],
                self._next_features[idx], self._terminal[idx])

    def contents(self) -> list[Transition]:
        return [Transition(self._features[i].copy(), int(self._actions[i]),
                           float(self._rewards[i]),
                           self._next_features[i].copy(),
                           bool(self._terminal[i]), False)
                for i in range(self._size)]

    def save(self, path: str) -> None:
        if self._features is None:
            np.savez(path, empty=np.array([self.capacity]))
            return
        np.savez(path, features=self._features, next_features=self._next_features,
                 actions=self._actions, rewards=self._rewards,
                 terminal=self._terminal,
                 state=np.array([self._size, self._cursor, self.capacity]))

    def load(self, path: str) -> None:
        data = np.load(path)
        if "empty" in data:
            return
        self._features = np.array(data["features"])
        self._next_features = np.array(data["next_features"])
        self._actions = np.array(data["actions"])
        self._rewards = np.array(data["rewards"])
        self._terminal = np.array(data["terminal"])
        size, cursor, _ = (int(x) for x in data["state"])
        self._size, self._cursor = size, cursor


def select_action_egreedy(qnet: FeedForwardNet, features: np.ndarray,
                          epsilon: float, excluded: Sequence[int],
                          rng: np.random.Generator) -> int:
    """Uniform over non-excluded actions with probability epsilon, otherwise
    the argmax over all actions; exclusion applies to exploration only."""
    n = qnet.n_actions
    if rng.random() < epsilon:
        allowed = [a for a in range(n) if a not in set(excluded)]
        return int(allowed[int(rng.integers(len(allowed)))])
    q = qnet.forward(features)
    return int(np.argmax(q))


def dqn_target(rewards: np.ndarray, next_features: np.ndarray,
               terminal: np.ndarray, target_net: FeedForwardNet,
               gamma: float) -> np.ndarray:
    """r + gamma * max_a' Q(b', a'; w-) with no bootstrap past a terminal."""
    q_next = target_net.forward_batch(next_features)
    return rewards + gamma * (~terminal) * q_next.max(axis=1)


def ddqn_target(rewards: np.ndarray, next_features: np.ndarray,
                terminal: np.ndarray, online_net: FeedForwardNet,
                target_net: FeedForwardNet, gamma: float) -> np.ndarray:
    """Decoupled rule: the online network selects, the target evaluates."""
    a_star = online_net.forward_batch(next_features).argmax(axis=1)
    q_next = target_net.forward_batch(next_features)
    picked = q_next[np.arange(len(a_star)), a_star]
    return rewards + gamma * (~terminal) * picked


@dataclass
class QAgentConfig:
    gamma: float = 0.99
    minibatch: int = 32
    target_sync: int = 1000          # train steps between target copies
    pool_capacity: int = 50000
    warmup: int = 1000               # transitions stored before training starts
    double_dqn: bool = False
    excluded_actions: tuple = ()
    hidden: tuple = (130, 50)
    rho: float = 0.95
    eps_num: float = 1e-6

    def __post_init__(self):
        if self.target_sync < 1:
            raise ValueError("target_sync must be >= 1")
        if self.minibatch < 1:
            raise ValueError("minibatch must be >= 1")


class QAgent:
    """Online Q-network plus frozen target copy, replay pool and step counter."""

    def __init__(self, n_features: int, n_actions: int, config: QAgentConfig,
                 rng: np.random.Generator):
        self.config = config
        self.qnet = FeedForwardNet.create(n_features, n_actions,
                                          hidden=config.hidden, head="linear",
                                          rng=rng)
        self.target = clone_net(self.qnet)
        self.opt = AdadeltaState.for_net(self.qnet, rho=config.rho,
                                         eps=config.eps_num)
        self.pool = ReplayPool(config.pool_capacity)
        self.train_steps = 0
        self.last_loss = float("nan")

    def begin_episode(self) -> None:
        pass

    def select_action(self, features: np.ndarray, epsilon: float,
                      rng: np.random.Generator) -> int:
        return select_action_egreedy(self.qnet, features, epsilon,
                                     self.config.excluded_actions, rng)

    def eval_action(self, features: np.ndarray) -> int:
        return int(np.argmax(self.qnet.forward(features)))

    def observe(self, t: Transition, rng: np.random.Generator) -> None:
        self.pool.add(t)
        if len(self.pool) >= max(self.config.warmup, self.config.minibatch):
            self.last_loss = self.train_step(rng)

    def train_step(self, rng: np.random.Generator) -> float:
        """One uniform minibatch regression of the taken action's Q value."""
        cfg = self.config
        idx = self.pool.sample_indices(cfg.minibatch, rng)
        feats, actions, rewards, nxt, term = self.pool.batch(idx)
        if cfg.double_dqn:
            targets = ddqn_target(rewards, nxt, term, self.qnet, self.target,
                                  cfg.gamma)
        else:
            targets = dqn_target(rewards, nxt, term, self.target, cfg.gamma)
        q = self.qnet.forward_batch(feats)
        rows = np.arange(len(idx))
        diff = q[rows, actions] - targets
        loss = float(np.mean(diff ** 2))
        grad_out = np.zeros_like(q)
        grad_out[rows, actions] = 2.0 * diff / len(idx)
        grads = self.qnet.backward_batch(feats, grad_out)
        nets.adadelta_step(self.opt, self.qnet, grads)
        self.train_steps += 1
        if self.train_steps % cfg.target_sync == 0:
            copy_params(self.qnet, self.target)
        return loss

    # -- checkpointing ------------------------------------------------------

    def save(self, path: str) -> None:
        arrays = {}
        for tag, net in (("q", self.qnet), ("t", self.target)):
            for i, (w, b) in enumerate(zip(net.weights, net.biases)):
                arrays[f"{tag}_w{i}"] = w
                arrays[f"{tag}_b{i}"] = b
        for i, (gw, gb) in enumerate(self.opt.acc_grad):
            arrays[f"og_w{i}"], arrays[f"og_b{i}"] = gw, gb
        for i, (uw, ub) in enumerate(self.opt.acc_update):
            arrays[f"ou_w{i}"], arrays[f"ou_b{i}"] = uw, ub
        meta = json.dumps({"format": "dialab-qagent", "version": 1,
                           "layer_sizes": list(self.qnet.layer_sizes),
                           "train_steps": self.train_steps,
                           "double_dqn": self.config.double_dqn})
        np.savez(path, __meta__=np.frombuffer(meta.encode(), dtype=np.uint8),
                 **arrays)

    def load(self, path: str) -> None:
        data = np.load(path)
        meta = json.loads(bytes(data["__meta__"]).decode())
        if meta.get("format") != "dialab-qagent":
            raise ValueError(f"{path}: not a Q-agent checkpoint")
        for tag, net in (("q", self.qnet), ("t", self.target)):
            for i in range(len(net.weights)):
                np.copyto(net.weights[i], data[f"{tag}_w{i}"])
                np.copyto(net.biases[i], data[f"{tag}_b{i}"])
        for i in range(len(self.qnet.weights)):
            np.copyto(self.opt.acc_grad[i][0], data[f"og_w{i}"])
            np.copyto(self.opt.acc_grad[i][1], data[f"og_b{i}"])
            np.copyto(self.opt.acc_update[i][0], data[f"ou_w{i}"])
            np.copyto(self.opt.acc_update[i][1], data[f"ou_b{i}"])
        self.train_steps = int(meta["train_steps"])

"""Advantage actor-critic dialogue managers.

A softmax policy network is trained by ascending the TD-error-weighted
log-likelihood of the taken action, with L2 regularization keeping the
effective step bounded. A scalar value network supplies the TD error and is
itself trained DQN-style with replay and a target copy. The two-stage
variant first clones demonstrated actions by cross-entropy and batch-trains
the value network on logged transitions before any online interaction.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from . import nets
from .environment import Transition
from .nets import (AdadeltaState, FeedForwardNet, clone_net, copy_params,
                   cross_entropy_loss, l2_penalty, log_policy_gradient)
from .value_agents import ReplayPool

log = logging.getLogger(__name__)


class LayoutMismatchError(ValueError):
    """Corpus feature layout disagrees with the agent's expected layout."""


@dataclass
class A2CConfig:
    gamma: float = 0.99
    l2: float = 1e-3
    minibatch: int = 32
    target_sync: int = 1000
    pool_capacity: int = 50000
    warmup: int = 1000
    excluded_actions: tuple = ()
    hidden: tuple = (130, 50)
    rho: float = 0.95
    eps_num: float = 1e-6
    sup_epochs: int = 20
    sup_batch: int = 32
    sup_holdout: float = 0.1
    batch_sweeps: int = 4            # passes over the corpus pool for batch RL

    def __post_init__(self):
        if self.l2 < 0:
            raise ValueError("l2 coefficient must be >= 0")
        if not 0.0 <= self.sup_holdout < 1.0:
            raise ValueError("sup_holdout outside [0,1)")


def select_action_policy(pnet: FeedForwardNet, features: np.ndarray,
                         epsilon: float, excluded, rng: np.random.Generator) -> int:
    """With probability epsilon explore uniformly over non-excluded actions,
    otherwise sample from the policy distribution."""
    n = pnet.n_actions
    if rng.random() < epsilon:
        allowed = [a for a in range(n) if a not in set(excluded)]
        return int(allowed[int(rng.integers(len(allowed)))])
    probs = pnet.forward(features)
    return int(rng.choice(n, p=probs))


def td_advantage(vnet: FeedForwardNet, reward: float, features: np.ndarray,
                 next_features: np.ndarray, terminal: bool,
                 gamma: float) -> float:
    """delta = r + gamma V(b') - V(b); terminal transitions drop the bootstrap."""
    v = vnet.forward(features)
    if terminal:
        return reward - v
    return reward + gamma * vnet.forward(next_features) - v


class ActorCriticAgent:
    """Policy network (actor) plus value network with target copy (critic)."""

    def __init__(self, n_features: int, n_actions: int, config: A2CConfig,
                 rng: np.random.Generator):
        self.config = config
        self.policy = FeedForwardNet.create(n_features, n_actions,
                                            hidden=config.hidden,
                                            head="softmax", rng=rng)
        self.value = FeedForwardNet.create(n_features, 1, hidden=config.hidden,
                                           head="scalar", rng=rng)
        self.value_target = clone_net(self.value)
        self.policy_opt = AdadeltaState.for_net(self.policy, rho=config.rho,
                                                eps=config.eps_num)
        self.value_opt = AdadeltaState.for_net(self.value, rho=config.rho,
                                               eps=config.eps_num)
        self.pool = ReplayPool(config.pool_capacity)
        self.value_steps = 0
        self.last_value_loss = float("nan")

    def begin_episode(self) -> None:
        pass

    def select_action(self, features, epsilon, rng) -> int:
        return select_action_policy(self.policy, features, epsilon,
                                    self.config.excluded_actions, rng)

    def eval_action(self, features) -> int:
        return int(np.argmax(self.policy.forward(features)))

    def observe(self, t: Transition, rng: np.random.Generator) -> None:
        self.pool.add(t)
        if len(self.pool) >= max(self.config.warmup, self.config.minibatch):
            self.last_value_loss = self.value_train_step(rng)
        delta = td_advantage(self.value, t.reward, t.features,
                             t.next_features, t.terminal, self.config.gamma)
        self.policy_gradient_step(t.features, t.action, delta)

    def value_train_step(self, rng: np.random.Generator) -> float:
        """DQN-like regression of V toward r + gamma V_target(b')."""
        cfg = self.config
        idx = self.pool.sample_indices(cfg.minibatch, rng)
        feats, _, rewards, nxt, term = self.pool.batch(idx)
        v_next = self.value_target.forward_batch(nxt)[:, 0]
        targets = rewards + cfg.gamma * (~term) * v_next
        v = self.value.forward_batch(feats)[:, 0]
        diff = v - targets
        loss = float(np.mean(diff ** 2))
        grad_out = (2.0 * diff / len(idx))[:, None]
        grads = self.value.backward_batch(feats, grad_out)
        nets.adadelta_step(self.value_opt, self.value, grads)
        self.value_steps += 1
        if self.value_steps % cfg.target_sync == 0:
            copy_params(self.value, self.value_target)
        return loss

    def policy_gradient_step(self, features, action: int, delta: float) -> None:
        """Ascend delta * grad log pi(action | features) minus the L2 term."""
        if not np.isfinite(delta):
            raise nets.NonFiniteGradientError("non-finite advantage, step rejected")
        probs = self.policy.forward(features)
        grad_logits = -delta * log_policy_gradient(probs, action)
        grads = self.policy.backward(features, grad_logits)
        if self.config.l2 > 0:
            _, l2_grads = l2_penalty(self.policy, self.config.l2)
            grads = nets.add_grads(grads, l2_grads)
        nets.adadelta_step(self.policy_opt, self.policy, grads)

    def supervised_step(self, feats: np.ndarray, actions: np.ndarray) -> float:
        """One cross-entropy (+L2) minibatch on demonstrated actions."""
        probs = self.policy.forward_batch(feats)
        n = len(actions)
        losses = 0.0
        grad_out = probs.copy()
        for i, a in enumerate(actions):
            loss_i, _ = cross_entropy_loss(probs[i], int(a))
            losses += loss_i
            grad_out[i, int(a)] -= 1.0
        grad_out /= n
        grads = self.policy.backward_batch(feats, grad_out)
        if self.config.l2 > 0:
            penalty, l2_grads = l2_penalty(self.policy, self.config.l2)
            losses += n * penalty
            grads = nets.add_grads(grads, l2_grads)
        nets.adadelta_step(self.policy_opt, self.policy, grads)
        return losses / n

    # -- two-stage pretraining ---------------------------------------------

    def pretrain(self, pairs, transitions, expected_layout, corpus_layout,
                 rng: np.random.Generator, supervised: bool = True,
                 batch_rl: bool = True) -> dict:
        """Stage 1: supervised epochs over (features, action) pairs.
        Stage 2: batch value RL over the corpus transitions. No environment
        interaction happens here.
        """
        if list(corpus_layout) != list(expected_layout):
            missing = [n for n in expected_layout if n not in corpus_layout]
            extra = [n for n in corpus_layout if n not in expected_layout]
            raise LayoutMismatchError(
                f"corpus layout mismatch; missing={missing} extra={extra} "
                f"(corpus has {len(corpus_layout)} features, expected "
                f"{len(expected_layout)})")
        stats = {"supervised_examples": 0, "holdout_accuracy": None,
                 "value_sweeps": 0}
        if not pairs and not transitions:
            log.warning("pretrain called with an empty corpus; nothing to do")
            return stats

        if supervised and pairs:
            feats = np.asarray([p[0] for p in pairs], dtype=float)
            acts = np.asarray([p[1] for p in pairs], dtype=np.int64)
            order = rng.permutation(len(acts))
            n_hold = int(len(acts) * self.config.sup_holdout)
            hold, train = order[:n_hold], order[n_hold:]
            stats["supervised_examples"] = len(train)
            for _ in range(self.config.sup_epochs):
                perm = rng.permutation(len(train))
                for start in range(0, len(perm), self.config.sup_batch):
                    sel = train[perm[start:start + self.config.sup_batch]]
                    self.supervised_step(feats[sel], acts[sel])
            if len(hold):
                pred = self.policy.forward_batch(feats[hold]).argmax(axis=1)
                stats["holdout_accuracy"] = float(np.mean(pred == acts[hold]))

        if batch_rl and transitions:
            for t in transitions:
                self.pool.add(t)
            per_sweep = max(1, len(transitions) // self.config.minibatch)
            for _ in range(self.config.batch_sweeps):
                for _ in range(per_sweep):
                    self.last_value_loss = self.value_train_step(rng)
                stats["value_sweeps"] += 1
        return stats

    # -- checkpointing ------------------------------------------------------

    def save(self, path: str) -> None:
        import json
        arrays = {}
        named = (("p", self.policy), ("v", self.value), ("vt", self.value_target))
        for tag, net in named:
            for i, (w, b) in enumerate(zip(net.weights, net.biases)):
                arrays[f"{tag}_w{i}"], arrays[f"{tag}_b{i}"] = w, b
        for tag, opt in (("po", self.policy_opt), ("vo", self.value_opt)):
            for i, (gw, gb) in enumerate(opt.acc_grad):
                arrays[f"{tag}g_w{i}"], arrays[f"{tag}g_b{i}"] = gw, gb
            for i, (uw, ub) in enumerate(opt.acc_update):
                arrays[f"{tag}u_w{i}"], arrays[f"{tag}u_b{i}"] = uw, ub
        meta = json.dumps({"format": "dialab-a2c", "version": 1,
                           "value_steps": self.value_steps})
        np.savez(path, __meta__=np.frombuffer(meta.encode(), dtype=np.uint8),
                 **arrays)

    def load(self, path: str) -> None:
        import json
        data = np.load(path)
        meta = json.loads(bytes(data["__meta__"]).decode())
        if meta.get("format") != "dialab-a2c":
            raise ValueError(f"{path}: not an actor-critic checkpoint")
        named = (("p", self.policy), ("v", self.value), ("vt", self.value_target))
        for tag, net in named:
            for i in range(len(net.weights)):
                np.copyto(net.weights[i], data[f"{tag}_w{i}"])
                np.copyto(net.biases[i], data[f"{tag}_b{i}"])
        for tag, opt in (("po", self.policy_opt), ("vo", self.value_opt)):
            for i in range(len(opt.acc_grad)):
                np.copyto(opt.acc_grad[i][0], data[f"{tag}g_w{i}"])
                np.copyto(opt.acc_grad[i][1], data[f"{tag}g_b{i}"])
                np.copyto(opt.acc_update[i][0], data[f"{tag}u_w{i}"])
                np.copyto(opt.acc_update[i][1], data[f"{tag}u_b{i}"])
        self.value_steps = int(meta["value_steps"])

"""Soft actor-critic acting in action-embedding space.

The actor emits a tanh-squashed continuous proto-action; the environment
executes the discrete action whose embedding is nearest to it. A categorical
SAC variant (no embeddings) backs the plain-SAC and BT baselines.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .embedding import ActionEmbeddingTable, train_embeddings_step
from .envs import Transition
from .nn import AdamState, Mlp, adam_step, clamp_log_sigma
from .state_embedding import StateEmbedder


_LOG_2PI = float(np.log(2.0 * np.pi))
_LOG_2 = float(np.log(2.0))


class ReplayBuffer:
    """Fixed-capacity ring buffer with uniform sampling (with replacement)."""

    def __init__(self, capacity: int, state_dim: int, proto_dim: int):
        if capacity <= 0:
            raise ValueError("capacity must be positive")
        self.capacity = capacity
        self.state = np.zeros((capacity, state_dim))
        self.action_index = np.zeros(capacity, dtype=np.int64)
        self.proto_action = np.zeros((capacity, proto_dim))
        self.reward = np.zeros(capacity)
        self.next_state = np.zeros((capacity, state_dim))
        self.done = np.zeros(capacity)
        self.cursor = 0
        self.size = 0

    def __len__(self) -> int:
        return self.size

    def push(self, t: Transition) -> None:
        i = self.cursor
        self.state[i] = t.state
        self.action_index[i] = t.action_index
        self.proto_action[i] = t.proto_action
        self.reward[i] = t.reward
        self.next_state[i] = t.next_state
        self.done[i] = float(t.done)
        self.cursor = (i + 1) % self.capacity
        self.size = min(self.size + 1, self.capacity)

    def sample(self, batch_size: int, rng: np.random.Generator) -> dict[str, np.ndarray]:
        if self.size == 0:
            raise ValueError("cannot sample from an empty buffer")
        idx = rng.integers(self.size, size=batch_size)
        return {
            "state": self.state[idx],
            "action_index": self.action_index[idx],
            "proto_action": self.proto_action[idx],
            "reward": self.reward[idx],
            "next_state": self.next_state[idx],
            "done": self.done[idx],
        }

    def records(self) -> list[Transition]:
        """Contents, oldest first."""
        start = self.cursor if self.size == self.capacity else 0
        order = [(start + k) % self.capacity for k in range(self.size)]
        return [
            Transition(self.state[i].copy(), int(self.action_index[i]), self.proto_action[i].copy(),
                       float(self.reward[i]), self.next_state[i].copy(), bool(self.done[i]))
            for i in order
        ]


def polyak(target: Mlp, online: Mlp, tau: float) -> None:
    """``target <- tau * target + (1 - tau) * online``."""
    for t, o in zip(target.params, online.params):
        t *= tau
        t += (1.0 - tau) * o


# --------------------------------------------------------- continuous SAC


class SacAgent:
    def __init__(
        self,
        state_dim: int,
        action_dim: int,
        rng: np.random.Generator | None = None,
        hiddens: Sequence[int] = (200, 100),
        actor_lr: float = 1e-5,
        critic_lr: float = 1e-3,
        alpha: float = 0.2,
        gamma: float = 0.99,
        tau: float = 0.999,
        proto_bound: float = 1.0,
    ):
        if not 0.0 <= tau <= 1.0:
            raise ValueError("tau must lie in [0, 1]")
        if proto_bound <= 0:
            raise ValueError("proto_bound must be positive")
        self.state_dim = state_dim
        self.action_dim = action_dim
        self.hiddens = tuple(hiddens)
        self.alpha, self.gamma, self.tau = alpha, gamma, tau
        self.proto_bound = proto_bound
        self.actor = Mlp([state_dim, *hiddens, 2 * action_dim], rng)
        self.critic1 = Mlp([state_dim + action_dim, *hiddens, 1], rng)
        self.critic2 = Mlp([state_dim + action_dim, *hiddens, 1], rng)
        self.target1 = self.critic1.copy()
        self.target2 = self.critic2.copy()
        self.actor_opt = AdamState.for_params(self.actor.params, actor_lr)
        self.critic_opt = AdamState.for_params(self.critic_params, critic_lr)

    @property
    def critic_params(self) -> list[np.ndarray]:
        return self.critic1.params + self.critic2.params

    def reset_optimizers(self) -> None:
        self.actor_opt = AdamState.for_params(self.actor.params, self.actor_opt.lr)
        self.critic_opt = AdamState.for_params(self.critic_params, self.critic_opt.lr)


def _squash(agent: SacAgent, actor_out: np.ndarray, noise: np.ndarray | None):
    d = agent.action_dim
    mu = actor_out[..., :d]
    log_sigma, ls_mask = clamp_log_sigma(actor_out[..., d:])
    sigma = np.exp(log_sigma)
    u = mu if noise is None else mu + sigma * noise
    t = np.tanh(u)
    proto = agent.proto_bound * t
    eps = np.zeros_like(u) if noise is None else noise
    # log(1 - tanh(u)^2) = 2 (log 2 - u - softplus(-2u))
    log_det = np.log(agent.proto_bound) + 2.0 * (_LOG_2 - u - np.logaddexp(0.0, -2.0 * u))
    log_prob = np.sum(-0.5 * eps * eps - log_sigma - 0.5 * _LOG_2PI - log_det, axis=-1)
    return proto, log_prob, (t, sigma, eps, ls_mask)


def _squash_backward(agent: SacAgent, cache, g_proto: np.ndarray, g_logp: np.ndarray) -> np.ndarray:
    t, sigma, eps, ls_mask = cache
    g_logp = np.asarray(g_logp)[..., None]
    g_u = g_proto * agent.proto_bound * (1.0 - t * t) + g_logp * 2.0 * t
    g_ls = (g_u * sigma * eps - g_logp) * ls_mask
    return np.concatenate([g_u, g_ls], axis=-1)


def select_proto_action(agent: SacAgent, state_emb: np.ndarray, stochastic: bool = True,
                        noise: np.ndarray | None = None) -> tuple[np.ndarray, float]:
    """``B * tanh(mu + sigma * noise)`` (or ``B * tanh(mu)``) and its log-prob."""
    out = agent.actor.forward(state_emb)
    if stochastic and noise is None:
        raise ValueError("stochastic selection needs a noise vector")
    proto, log_prob, _ = _squash(agent, out, noise if stochastic else None)
    return proto, float(log_prob) if np.ndim(log_prob) == 0 else log_prob


def nearest_action(table: ActionEmbeddingTable | np.ndarray, proto: np.ndarray) -> int:
    """Index of the embedding row closest to ``proto`` in L2; lowest index on ties."""
    w = table.weights if isinstance(table, ActionEmbeddingTable) else np.asarray(table)
    if w.shape[0] == 0:
        raise ValueError("empty embedding table")
    diff = w - np.asarray(proto, dtype=np.float64)
    return int(np.argmin(np.einsum("ij,ij->i", diff, diff)))


@dataclass
class SacLosses:
    critic_loss: float
    actor_loss: float
    mean_q: float
    targets: np.ndarray
    critic_grads: list[np.ndarray] = field(repr=False)
    actor_grads: list[np.ndarray] = field(repr=False)
    embedder_grads: list[np.ndarray] = field(repr=False)


def sac_targets(agent: SacAgent, embedder: StateEmbedder, batch: dict, noise_next: np.ndarray) -> np.ndarray:
    """Soft Bellman targets from the target critics; treated as constants."""
    e2 = embedder(batch["next_state"])
    proto2, logp2, _ = _squash(agent, agent.actor.forward(e2), noise_next)
    x2 = np.concatenate([e2, proto2], axis=1)
    q_next = np.minimum(agent.target1.forward(x2), agent.target2.forward(x2))[:, 0]
    return batch["reward"] + agent.gamma * (1.0 - batch["done"]) * (q_next - agent.alpha * logp2)


def sac_losses(agent: SacAgent, embedder: StateEmbedder, batch: dict, noise_next: np.ndarray,
               noise: np.ndarray, targets: np.ndarray | None = None) -> SacLosses:
    """Critic and actor losses with analytic gradients at current parameters.

    The state embedder is trained by the critic loss only; the actor loss
    treats the embedding as an input (letting it through stops a learned
    embedder from learning anything useful).
    """
    n = len(batch["reward"])
    if n < 2:
        raise ValueError("SAC update needs a batch of at least 2 transitions")
    m = embedder.output_dim
    if targets is None:
        targets = sac_targets(agent, embedder, batch, noise_next)
    e, ecache = embedder.forward_cache(batch["state"])

    x = np.concatenate([e, batch["proto_action"]], axis=1)
    q1, c1 = agent.critic1.forward_cache(x)
    q2, c2 = agent.critic2.forward_cache(x)
    r1, r2 = q1[:, 0] - targets, q2[:, 0] - targets
    critic_loss = float(np.mean(r1 * r1) + np.mean(r2 * r2))
    g1, gx1 = agent.critic1.backward(c1, (2.0 / n) * r1[:, None])
    g2, gx2 = agent.critic2.backward(c2, (2.0 / n) * r2[:, None])
    g_e = gx1[:, :m] + gx2[:, :m]

    out, acache = agent.actor.forward_cache(e)
    proto, logp, scache = _squash(agent, out, noise)
    xa = np.concatenate([e, proto], axis=1)
    qa1, ca1 = agent.critic1.forward_cache(xa)
    qa2, ca2 = agent.critic2.forward_cache(xa)
    first = qa1[:, 0] <= qa2[:, 0]
    q_min = np.where(first, qa1[:, 0], qa2[:, 0])
    actor_loss = float(np.mean(agent.alpha * logp - q_min))
    g_q = -1.0 / n
    _, gxa1 = agent.critic1.backward(ca1, (g_q * first)[:, None], param_grads=False)
    _, gxa2 = agent.critic2.backward(ca2, (g_q * ~first)[:, None], param_grads=False)
    g_proto = gxa1[:, m:] + gxa2[:, m:]
    g_out = _squash_backward(agent, scache, g_proto, np.full(n, agent.alpha / n))
    actor_grads, _ = agent.actor.backward(acache, g_out)

    return SacLosses(
        critic_loss=critic_loss,
        actor_loss=actor_loss,
        mean_q=float(np.mean(np.minimum(q1, q2))),
        targets=targets,
        critic_grads=g1 + g2,
        actor_grads=actor_grads,
        embedder_grads=embedder.backward(ecache, g_e),
    )


def sac_update(agent: SacAgent, embedder: StateEmbedder, batch: dict, rng: np.random.Generator,
               update_actor: bool = True, update_critic: bool = True) -> SacLosses:
    """One optimisation step on critics, actor and state embedder, then Polyak."""
    n, d = len(batch["reward"]), agent.action_dim
    noise_next = rng.standard_normal((n, d))
    noise = rng.standard_normal((n, d))
    res = sac_losses(agent, embedder, batch, noise_next, noise)
    if update_critic:
        adam_step(agent.critic_params, res.critic_grads, agent.critic_opt)
    if update_actor:
        adam_step(agent.actor.params, res.actor_grads, agent.actor_opt)
    if embedder.params:
        embedder.apply(res.embedder_grads)
    polyak(agent.target1, agent.critic1, agent.tau)
    polyak(agent.target2, agent.critic2, agent.tau)
    return res


# ----------------------------------------------------------- discrete SAC


class DiscreteSacAgent:
    """Categorical actor and per-action twin critics over raw actions."""

    def __init__(
        self,
        state_dim: int,
        action_count: int,
        rng: np.random.Generator | None = None,
        hiddens: Sequence[int] = (200, 100),
        actor_lr: float = 1e-5,
        critic_lr: float = 1e-3,
        alpha: float = 0.2,
        gamma: float = 0.99,
        tau: float = 0.999,
    ):
        if not 0.0 <= tau <= 1.0:
            raise ValueError("tau must lie in [0, 1]")
        self.state_dim = state_dim
        self.action_count = action_count
        self.hiddens = tuple(hiddens)
        self.alpha, self.gamma, self.tau = alpha, gamma, tau
        self.actor = Mlp([state_dim, *hiddens, action_count], rng)
        self.critic1 = Mlp([state_dim, *hiddens, action_count], rng)
        self.critic2 = Mlp([state_dim, *hiddens, action_count], rng)
        self.target1 = self.critic1.copy()
        self.target2 = self.critic2.copy()
        self.actor_opt = AdamState.for_params(self.actor.params, actor_lr)
        self.critic_opt = AdamState.for_params(self.critic_params, critic_lr)

    @property
    def critic_params(self) -> list[np.ndarray]:
        return self.critic1.params + self.critic2.params

    def reset_optimizers(self) -> None:
        self.actor_opt = AdamState.for_params(self.actor.params, self.actor_opt.lr)
        self.critic_opt = AdamState.for_params(self.critic_params, self.critic_opt.lr)


def _log_softmax(z: np.ndarray) -> np.ndarray:
    z = z - z.max(axis=-1, keepdims=True)
    return z - np.log(np.sum(np.exp(z), axis=-1, keepdims=True))


def discrete_policy(agent: DiscreteSacAgent, state_emb: np.ndarray) -> np.ndarray:
    return np.exp(_log_softmax(agent.actor.forward(state_emb)))


def discrete_sac_targets(agent: DiscreteSacAgent, embedder: StateEmbedder, batch: dict) -> np.ndarray:
    e2 = embedder(batch["next_state"])
    logp2 = _log_softmax(agent.actor.forward(e2))
    q_next = np.minimum(agent.target1.forward(e2), agent.target2.forward(e2))
    v = np.sum(np.exp(logp2) * (q_next - agent.alpha * logp2), axis=1)
    return batch["reward"] + agent.gamma * (1.0 - batch["done"]) * v


def discrete_sac_losses(agent: DiscreteSacAgent, embedder: StateEmbedder, batch: dict,
                        targets: np.ndarray | None = None) -> SacLosses:
    n = len(batch["reward"])
    if n < 2:
        raise ValueError("SAC update needs a batch of at least 2 transitions")
    if targets is None:
        targets = discrete_sac_targets(agent, embedder, batch)
    e, ecache = embedder.forward_cache(batch["state"])
    rows = np.arange(n)
    a = batch["action_index"]

    q1, c1 = agent.critic1.forward_cache(e)
    q2, c2 = agent.critic2.forward_cache(e)
    r1, r2 = q1[rows, a] - targets, q2[rows, a] - targets
    critic_loss = float(np.mean(r1 * r1) + np.mean(r2 * r2))
    up1 = np.zeros_like(q1)
    up2 = np.zeros_like(q2)
    up1[rows, a] = 2.0 * r1 / n
    up2[rows, a] = 2.0 * r2 / n

    logits, acache = agent.actor.forward_cache(e)
    logp = _log_softmax(logits)
    p = np.exp(logp)
    first = q1 <= q2
    q_min = np.where(first, q1, q2)
    per_action = agent.alpha * logp - q_min
    actor_loss = float(np.mean(np.sum(p * per_action, axis=1)))
    g_logits = p * (per_action - np.sum(p * per_action, axis=1, keepdims=True)) / n
    actor_grads, _ = agent.actor.backward(acache, g_logits)

    # as in the continuous case, only the critic loss trains the embedder
    g1, gx1 = agent.critic1.backward(c1, up1)
    g2, gx2 = agent.critic2.backward(c2, up2)
    g_e = gx1 + gx2

    return SacLosses(
        critic_loss=critic_loss,
        actor_loss=actor_loss,
        mean_q=float(np.mean(np.minimum(q1, q2)[rows, a])),
        targets=targets,
        critic_grads=g1 + g2,
        actor_grads=actor_grads,
        embedder_grads=embedder.backward(ecache, g_e),
    )


def discrete_sac_update(agent: DiscreteSacAgent, embedder: StateEmbedder, batch: dict) -> SacLosses:
    res = discrete_sac_losses(agent, embedder, batch)
    adam_step(agent.critic_params, res.critic_grads, agent.critic_opt)
    adam_step(agent.actor.params, res.actor_grads, agent.actor_opt)
    if embedder.params:
        embedder.apply(res.embedder_grads)
    polyak(agent.target1, agent.critic1, agent.tau)
    polyak(agent.target2, agent.critic2, agent.tau)
    return res


# ---------------------------------------------------------- training loop


@dataclass
class TrainConfig:
    episodes: int
    batch_size: int = 128
    warmup_steps: int = 1000
    buffer_capacity: int = 100_000


@dataclass
class TrainResult:
    returns: list[float] = field(default_factory=list)
    steps: list[int] = field(default_factory=list)
    total_steps: int = 0


def _episode_seed(rng: np.random.Generator) -> int:
    return int(rng.integers(2**31))


def run_training(env, agent: SacAgent, model, table: ActionEmbeddingTable,
                 embedder: StateEmbedder | None, config: TrainConfig, seed: int,
                 buffer: ReplayBuffer | None = None) -> TrainResult:
    """Embedding-space SAC with interleaved transition-model updates.

    Every environment step performs one embedding update; after warmup it
    also performs one SAC update, on an independently sampled batch. During
    warmup actions are uniform and the stored proto-action is the action's
    current embedding.
    """
    if embedder is None:
        embedder = StateEmbedder(env.spec.state_dim)
    if embedder.output_dim != agent.state_dim or model.state_dim != agent.state_dim:
        raise ValueError("state embedding width disagrees across components")
    if table.dim != agent.action_dim or model.action_dim != table.dim:
        raise ValueError("action embedding width disagrees across components")
    if table.action_count != env.spec.action_count:
        raise ValueError("embedding table rows do not match the environment's action count")
    rng = np.random.default_rng(seed)
    if buffer is None:
        buffer = ReplayBuffer(config.buffer_capacity, env.spec.state_dim, agent.action_dim)
    result = TrainResult()
    n_actions = env.spec.action_count
    env_seed = _episode_seed(rng)
    for episode in range(config.episodes):
        state = env.reset(seed=env_seed) if episode == 0 else env.reset()
        total, steps, done = 0.0, 0, False
        while not done:
            if result.total_steps < config.warmup_steps:
                a = int(rng.integers(n_actions))
                proto = table.weights[a].copy()
            else:
                e = embedder(state)
                proto, _ = select_proto_action(agent, e, True, rng.standard_normal(agent.action_dim))
                a = nearest_action(table, proto)
            next_state, reward, done = env.step(a)
            buffer.push(Transition(state, a, proto, reward, next_state, done))
            total += reward
            steps += 1
            result.total_steps += 1
            if len(buffer) >= 2:
                # embeddings learn from the random warmup data too; the
                # policy waits until warmup ends
                b = buffer.sample(config.batch_size, rng)
                if not (model.frozen and table.frozen):
                    train_embeddings_step(model, table, embedder(b["state"]), b["action_index"],
                                          embedder(b["next_state"]), rng)
                if result.total_steps > config.warmup_steps:
                    sac_update(agent, embedder, buffer.sample(config.batch_size, rng), rng)
            state = next_state
        result.returns.append(total)
        result.steps.append(steps)
    return result


def run_discrete_training(env, agent: DiscreteSacAgent, embedder: StateEmbedder | None,
                          config: TrainConfig, seed: int) -> TrainResult:
    """Categorical SAC over raw actions (baseline)."""
    if embedder is None:
        embedder = StateEmbedder(env.spec.state_dim)
    if embedder.output_dim != agent.state_dim or agent.action_count != env.spec.action_count:
        raise ValueError("agent dimensions do not match the environment")
    rng = np.random.default_rng(seed)
    buffer = ReplayBuffer(config.buffer_capacity, env.spec.state_dim, 1)
    result = TrainResult()
    n_actions = env.spec.action_count
    env_seed = _episode_seed(rng)
    for episode in range(config.episodes):
        state = env.reset(seed=env_seed) if episode == 0 else env.reset()
        total, steps, done = 0.0, 0, False
        while not done:
            if result.total_steps < config.warmup_steps:
                a = int(rng.integers(n_actions))
            else:
                p = discrete_policy(agent, embedder(state))
                a = int(min(np.searchsorted(np.cumsum(p), rng.random()), n_actions - 1))
            next_state, reward, done = env.step(a)
            buffer.push(Transition(state, a, np.zeros(1), reward, next_state, done))
            total += reward
            steps += 1
            result.total_steps += 1
            if result.total_steps > config.warmup_steps and len(buffer) >= 2:
                discrete_sac_update(agent, embedder, buffer.sample(config.batch_size, rng))
            state = next_state
        result.returns.append(total)
        result.steps.append(steps)
    return result

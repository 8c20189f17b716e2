"""Source training and target initialisation for policy transfer.

Covers same-domain transfer (shared state space, frozen transition model),
cross-domain transfer (learned state embedders, finetuned transition model),
the TRACE-P / TRACE-T ablations and the BT baseline.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .agent import (DiscreteSacAgent, SacAgent, TrainConfig, TrainResult, run_discrete_training,
                    run_training)
from .config import Hyperparams, TransferConfig
from .embedding import ActionEmbeddingTable, TransitionModel
from .envs import EnvSpec
from .state_embedding import StateEmbedder

__all__ = [
    "StateEmbedder", "TransferConfig", "TraceArtifacts", "build_trace", "build_discrete",
    "init_same_domain_target", "init_cross_domain_target", "init_bt_target",
    "run_transfer", "train_config", "train_scratch", "train_discrete_scratch", "sub_seed",
]


@dataclass
class TraceArtifacts:
    agent: SacAgent
    model: TransitionModel
    table: ActionEmbeddingTable
    embedder: StateEmbedder


# purpose tags for child seeds
INIT, ROLLOUT, DATA = 0, 1, 2


def sub_seed(seed: int, tag: int) -> int:
    """Independent child seed for one purpose (init, rollout, data)."""
    return int(np.random.SeedSequence([seed, tag]).generate_state(1)[0])


def train_config(hp: Hyperparams, episodes: int) -> TrainConfig:
    return TrainConfig(episodes, hp.batch_size, hp.warmup_steps, hp.buffer_capacity)


def train_scratch(env, hp: Hyperparams, episodes: int, seed: int,
                  learned_state: bool = False) -> tuple[TrainResult, TraceArtifacts]:
    """Source-task (or no-transfer) TRACE run."""
    art = build_trace(env.spec, hp, sub_seed(seed, INIT), learned_state=learned_state)
    result = run_training(env, art.agent, art.model, art.table, art.embedder,
                          train_config(hp, episodes), sub_seed(seed, ROLLOUT))
    return result, art


def train_discrete_scratch(env, hp: Hyperparams, episodes: int, seed: int):
    agent = build_discrete(env.spec, hp, sub_seed(seed, INIT))
    result = run_discrete_training(env, agent, None, train_config(hp, episodes), sub_seed(seed, ROLLOUT))
    return result, agent


def build_trace(spec: EnvSpec, hp: Hyperparams, seed: int, learned_state: bool = False) -> TraceArtifacts:
    """Fresh randomly initialised components; the single construction path.

    Scratch training and every transfer variant start here, so a transfer
    run with no flags set consumes the RNG exactly like a scratch run.
    """
    rng = np.random.default_rng(seed)
    if learned_state:
        if hp.state_embed_dim is None:
            raise ValueError("learned state embedding needs hyperparameters.state_embed_dim")
        embedder = StateEmbedder(spec.state_dim, "learned", hp.state_embed_dim, hp.state_embed_hiddens,
                                 rng, lr=hp.state_embed_lr)
    else:
        embedder = StateEmbedder(spec.state_dim, lr=hp.state_embed_lr)
    m, d = embedder.output_dim, hp.action_embed_dim
    table = ActionEmbeddingTable(spec.action_count, d, rng, init_scale=hp.embed_init_scale, lr=hp.lr)
    model = TransitionModel(m, d, rng, hiddens=hp.hiddens, mode="latent" if hp.latent else "deterministic",
                            z_dim=hp.z_dim, z_hiddens=hp.z_hiddens, beta=hp.beta, lr=hp.lr)
    bound = hp.proto_bound if hp.proto_bound is not None else 1.5 * float(np.abs(table.weights).max())
    agent = SacAgent(m, d, rng, hiddens=hp.ac_hiddens, actor_lr=hp.actor_lr, critic_lr=hp.critic_lr,
                     alpha=hp.alpha, gamma=hp.gamma, tau=hp.tau, proto_bound=bound)
    return TraceArtifacts(agent, model, table, embedder)


def build_discrete(spec: EnvSpec, hp: Hyperparams, seed: int) -> DiscreteSacAgent:
    rng = np.random.default_rng(seed)
    return DiscreteSacAgent(spec.state_dim, spec.action_count, rng, hiddens=hp.ac_hiddens,
                            actor_lr=hp.actor_lr, critic_lr=hp.critic_lr, alpha=hp.alpha,
                            gamma=hp.gamma, tau=hp.tau)


def _copy_policy(dst: SacAgent, src: SacAgent) -> None:
    if dst.actor.layer_sizes != src.actor.layer_sizes:
        raise ValueError("source and target policies have different shapes")
    for a, b in ((dst.actor, src.actor), (dst.critic1, src.critic1), (dst.critic2, src.critic2),
                 (dst.target1, src.target1), (dst.target2, src.target2)):
        a.set_params(b.params)
    dst.proto_bound = src.proto_bound


def _apply_flags(target: TraceArtifacts, source: TraceArtifacts, cfg: TransferConfig,
                 freeze: bool) -> TraceArtifacts:
    if cfg.transfer_policy:
        _copy_policy(target.agent, source.agent)
    if cfg.transfer_transition:
        if target.model.mode != source.model.mode:
            raise ValueError("transition model modes differ between source and target")
        target.model.set_params(source.model.params)
        target.model.frozen = freeze
    return target


def init_same_domain_target(source: TraceArtifacts, target_spec: EnvSpec, cfg: TransferConfig,
                            hp: Hyperparams, seed: int) -> TraceArtifacts:
    """Shared state space: copy policy/critics and (frozen) transition model."""
    if cfg.baseline != "none":
        raise ValueError("use init_bt_target for the bt baseline")
    if source.embedder.mode != "identity" or source.embedder.state_dim != target_spec.state_dim:
        raise ValueError("state spaces differ; use the cross-domain path")
    target = build_trace(target_spec, hp, seed)
    return _apply_flags(target, source, cfg, freeze=cfg.freeze_transition)


def init_cross_domain_target(source: TraceArtifacts, target_spec: EnvSpec, cfg: TransferConfig,
                             hp: Hyperparams, seed: int) -> TraceArtifacts:
    """Different state spaces: fresh state embedder and table, transition model finetuned.

    ``cfg.freeze_transition`` keeps the transferred model frozen instead
    (expected to train unstably).
    """
    if cfg.baseline != "none":
        raise ValueError("use init_bt_target for the bt baseline")
    if source.embedder.mode != "learned":
        raise ValueError("cross-domain transfer needs a learned source state embedder")
    if hp.state_embed_dim != source.embedder.output_dim:
        raise ValueError(
            f"common-space width mismatch: source {source.embedder.output_dim}, target {hp.state_embed_dim}")
    target = build_trace(target_spec, hp, seed, learned_state=True)
    return _apply_flags(target, source, cfg, freeze=cfg.freeze_transition)


def init_bt_target(source: DiscreteSacAgent, target_spec: EnvSpec, hp: Hyperparams, seed: int) -> DiscreteSacAgent:
    """Keep the source's inner hidden layers; new input layer and output head."""
    target = build_discrete(target_spec, hp, seed)
    if target.hiddens != source.hiddens:
        raise ValueError("BT needs identical hidden stacks")
    for dst, src in ((target.actor, source.actor), (target.critic1, source.critic1),
                     (target.critic2, source.critic2), (target.target1, source.target1),
                     (target.target2, source.target2)):
        for i in range(1, len(dst.weights) - 1):
            dst.weights[i][...] = src.weights[i]
            dst.biases[i][...] = src.biases[i]
    return target


def run_transfer(source, target_env, cfg: TransferConfig, hp: Hyperparams, budget: int, seed: int,
                 cross_domain: bool = False):
    """Initialise target components from ``source`` and train for ``budget`` episodes.

    Seeds are derived as in :func:`train_scratch`, so with no transfer flags
    the run is bit-identical to training from scratch. Returns
    ``(TrainResult, artifacts)``; artifacts is a :class:`TraceArtifacts` or,
    for the bt baseline, a :class:`DiscreteSacAgent`.
    """
    spec = target_env.spec
    init_seed, rollout_seed = sub_seed(seed, INIT), sub_seed(seed, ROLLOUT)
    if cfg.baseline == "bt":
        agent = init_bt_target(source, spec, hp, init_seed)
        if budget == 0:
            return TrainResult(), agent
        return run_discrete_training(target_env, agent, None, train_config(hp, budget), rollout_seed), agent
    init = init_cross_domain_target if cross_domain else init_same_domain_target
    art = init(source, spec, cfg, hp, init_seed)
    if budget == 0:
        return TrainResult(), art
    result = run_training(target_env, art.agent, art.model, art.table, art.embedder,
                          train_config(hp, budget), rollout_seed)
    return result, art

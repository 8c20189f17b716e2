"""End-to-end experiment recipes shared by the CLI and the acceptance suite.

Environment configs are plain dicts with a ``family`` key plus that
family's parameters, as in the experiment config's ``env`` section.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .agent import TrainResult
from .config import Hyperparams, TransferConfig
from .embedding import ActionEmbeddingTable, TransitionModel, fit_embeddings_offline
from .envs import GridworldConfig, collect_random_transitions, make_env, net_displacement, transitions_to_arrays
from .transfer import (DATA, INIT, ROLLOUT, TraceArtifacts, run_transfer, sub_seed, train_discrete_scratch,
                       train_scratch)

__all__ = ["EmbedRun", "offline_embeddings", "make_task", "train_trace", "train_discrete", "transfer_trace",
           "displacement_labels", "sub_seed"]


@dataclass
class EmbedRun:
    table: ActionEmbeddingTable
    model: TransitionModel
    history: list[float]
    data: dict


def make_task(env_cfg: dict, seed: int):
    cfg = dict(env_cfg)
    family = cfg.pop("family")
    return make_env(family, sub_seed(seed, ROLLOUT), **cfg)


def offline_embeddings(env_cfg: dict, hp: Hyperparams, seed: int) -> EmbedRun:
    """Random-policy data, then offline fitting of table and transition model."""
    env = make_task(env_cfg, seed)
    data = transitions_to_arrays(collect_random_transitions(env, hp.embed_samples, sub_seed(seed, DATA)))
    rng = np.random.default_rng(sub_seed(seed, INIT))
    table = ActionEmbeddingTable(env.spec.action_count, hp.action_embed_dim, rng,
                                 init_scale=hp.embed_init_scale, lr=hp.lr)
    model = TransitionModel(env.spec.state_dim, hp.action_embed_dim, rng, hiddens=hp.hiddens,
                            mode="latent" if hp.latent else "deterministic", z_dim=hp.z_dim,
                            z_hiddens=hp.z_hiddens, beta=hp.beta, lr=hp.lr)
    history = fit_embeddings_offline(model, table, data, hp.embed_epochs, hp.batch_size, sub_seed(seed, ROLLOUT))
    return EmbedRun(table, model, history, data)


def train_trace(env_cfg: dict, hp: Hyperparams, episodes: int, seed: int,
                learned_state: bool = False) -> tuple[TrainResult, TraceArtifacts]:
    return train_scratch(make_task(env_cfg, seed), hp, episodes, seed, learned_state)


def train_discrete(env_cfg: dict, hp: Hyperparams, episodes: int, seed: int):
    return train_discrete_scratch(make_task(env_cfg, seed), hp, episodes, seed)


def transfer_trace(source, env_cfg: dict, cfg: TransferConfig, hp: Hyperparams, episodes: int, seed: int,
                   cross_domain: bool = False):
    """Target-task run; with no transfer flags it matches :func:`train_trace` bit for bit."""
    return run_transfer(source, make_task(env_cfg, seed), cfg, hp, episodes, seed, cross_domain)


def displacement_labels(n_steps: int) -> list[tuple[int, int]]:
    """Net free-space displacement of every action of the n-step gridworld."""
    cfg = GridworldConfig(n_steps=n_steps)
    return [net_displacement(cfg, i) for i in range(cfg.action_count)]

"""Action embeddings learned through a next-state prediction model.

The table ``W`` holds one row per discrete action. A transition model maps
``(state_embedding, e(a))`` (plus an optional Gaussian latent ``z``) to a
predicted next state embedding; the squared prediction error, with a KL
penalty on ``z`` in latent mode, trains both the model and the table.
"""

from __future__ import annotations

import csv
import warnings
from pathlib import Path
from typing import Sequence

import numpy as np

from .nn import AdamState, Mlp, adam_step, clamp_log_sigma, gaussian_reparameterize


class ActionEmbeddingTable:
    def __init__(self, action_count: int, dim: int, rng: np.random.Generator | None = None,
                 init_scale: float = 0.1, lr: float = 1e-3):
        if action_count < 1 or dim < 1:
            raise ValueError("action_count and dim must be >= 1")
        if rng is None:
            self.weights = np.zeros((action_count, dim))
        else:
            self.weights = rng.uniform(-init_scale, init_scale, size=(action_count, dim))
        self.frozen = False
        self.optimizer = AdamState.for_params([self.weights], lr)

    @property
    def action_count(self) -> int:
        return self.weights.shape[0]

    @property
    def dim(self) -> int:
        return self.weights.shape[1]

    def lookup(self, action_index: int) -> np.ndarray:
        if not 0 <= action_index < self.action_count:
            raise IndexError(f"action index {action_index} outside [0, {self.action_count})")
        return self.weights[action_index].copy()

    def to_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["action_index"] + [f"e_{j}" for j in range(self.dim)])
            for i, row in enumerate(self.weights):
                w.writerow([i] + [repr(float(v)) for v in row])

    @classmethod
    def from_csv(cls, path: str | Path) -> "ActionEmbeddingTable":
        with open(path, newline="") as fh:
            rows = list(csv.reader(fh))
        header, body = rows[0], rows[1:]
        if not header or header[0] != "action_index" or len(header) < 2:
            raise ValueError(f"{path}: not an embedding table CSV")
        body.sort(key=lambda r: int(r[0]))
        if [int(r[0]) for r in body] != list(range(len(body))):
            raise ValueError(f"{path}: action indices must be 0..N-1")
        table = cls(len(body), len(header) - 1)
        table.weights[...] = np.array([[float(v) for v in r[1:]] for r in body])
        return table


class TransitionModel:
    """Next-state predictor; ``latent`` mode adds an encoder for ``z``."""

    def __init__(
        self,
        state_dim: int,
        action_dim: int,
        rng: np.random.Generator | None = None,
        hiddens: Sequence[int] = (64, 32),
        mode: str = "deterministic",
        z_dim: int = 8,
        z_hiddens: Sequence[int] = (32,),
        beta: float = 1e-2,
        lr: float = 1e-3,
    ):
        if mode not in ("deterministic", "latent"):
            raise ValueError(f"unknown transition model mode {mode!r}")
        if beta < 0:
            raise ValueError("beta must be >= 0")
        self.mode = mode
        self.state_dim = state_dim
        self.action_dim = action_dim
        self.z_dim = z_dim if mode == "latent" else 0
        self.beta = beta
        self.frozen = False
        in_dim = state_dim + action_dim
        self.encoder = Mlp([in_dim, *z_hiddens, 2 * z_dim], rng) if mode == "latent" else None
        self.decoder = Mlp([in_dim + self.z_dim, *hiddens, state_dim], rng)
        self.optimizer = AdamState.for_params(self.params, lr)

    @property
    def params(self) -> list[np.ndarray]:
        enc = self.encoder.params if self.encoder is not None else []
        return enc + self.decoder.params

    def set_params(self, values: Sequence[np.ndarray]) -> None:
        values = list(values)
        n_enc = len(self.encoder.params) if self.encoder is not None else 0
        if self.encoder is not None:
            self.encoder.set_params(values[:n_enc])
        self.decoder.set_params(values[n_enc:])

    def _forward(self, state_emb, action_emb, noise, zero_z=False):
        sa = np.concatenate([state_emb, action_emb], axis=-1)
        if self.encoder is None:
            pred, dcache = self.decoder.forward_cache(sa)
            return pred, None, None, None, dcache
        enc_out, ecache = self.encoder.forward_cache(sa)
        mu, raw_ls = enc_out[..., : self.z_dim], enc_out[..., self.z_dim:]
        log_sigma, ls_mask = clamp_log_sigma(raw_ls)
        if zero_z:
            z = np.zeros_like(mu)
        else:
            z, _ = gaussian_reparameterize(mu, log_sigma, noise)
        pred, dcache = self.decoder.forward_cache(np.concatenate([sa, z], axis=-1))
        return pred, mu, log_sigma, (ecache, ls_mask), dcache


def predict_next(model: TransitionModel, state_emb, action_emb, noise=None, zero_z: bool = False):
    """Returns ``(prediction, mu, log_sigma)``; mu/log_sigma are None in deterministic mode."""
    state_emb = np.asarray(state_emb, dtype=np.float64)
    action_emb = np.asarray(action_emb, dtype=np.float64)
    if state_emb.shape[-1] != model.state_dim or action_emb.shape[-1] != model.action_dim:
        raise ValueError("state/action embedding widths do not match the transition model")
    if model.mode == "latent" and noise is None and not zero_z:
        raise ValueError("latent mode needs a noise vector")
    pred, mu, log_sigma, _, _ = model._forward(state_emb, action_emb, noise, zero_z)
    return pred, mu, log_sigma


def gaussian_kl(mu: np.ndarray, log_sigma: np.ndarray) -> np.ndarray:
    """KL(N(mu, sigma) || N(0, I)) per row, diagonal case."""
    return 0.5 * np.sum(mu * mu + np.exp(2.0 * log_sigma) - 1.0 - 2.0 * log_sigma, axis=-1)


def embedding_loss_and_grads(
    model: TransitionModel,
    table: ActionEmbeddingTable,
    state_emb: np.ndarray,
    action_index: np.ndarray,
    next_state_emb: np.ndarray,
    noise: np.ndarray | None = None,
    zero_z: bool = False,
):
    """Batch-mean prediction loss and its gradients.

    Returns ``(loss, model_grads, table_grad)`` where ``table_grad`` is dense
    with the table's shape (rows of unused actions are zero).
    """
    state_emb = np.atleast_2d(np.asarray(state_emb, dtype=np.float64))
    next_state_emb = np.atleast_2d(np.asarray(next_state_emb, dtype=np.float64))
    action_index = np.atleast_1d(np.asarray(action_index, dtype=np.int64))
    n = state_emb.shape[0]
    if n == 0:
        raise ValueError("empty batch")
    if np.any(action_index < 0) or np.any(action_index >= table.action_count):
        raise IndexError("action index out of range")
    action_emb = table.weights[action_index]
    if model.mode == "latent" and noise is None and not zero_z:
        raise ValueError("latent mode needs noise")
    pred, mu, log_sigma, ecache, dcache = model._forward(state_emb, action_emb, noise, zero_z)

    err = pred - next_state_emb
    loss = float(np.sum(err * err)) / n
    g_pred = 2.0 * err / n
    dec_grads, g_in = model.decoder.backward(dcache, g_pred)
    sd, ad = model.state_dim, model.action_dim
    g_action = g_in[:, sd:sd + ad].copy()
    grads = dec_grads
    if model.encoder is not None:
        ecache_inner, ls_mask = ecache
        kl = gaussian_kl(mu, log_sigma)
        loss += model.beta * float(np.sum(kl)) / n
        sigma = np.exp(log_sigma)
        g_mu = model.beta * mu / n
        g_ls = model.beta * (sigma * sigma - 1.0) / n
        if not zero_z:
            g_z = g_in[:, sd + ad:]
            g_mu = g_mu + g_z
            g_ls = g_ls + g_z * sigma * noise
        g_ls = g_ls * ls_mask
        enc_grads, g_enc_in = model.encoder.backward(ecache_inner, np.concatenate([g_mu, g_ls], axis=1))
        g_action += g_enc_in[:, sd:sd + ad]
        grads = enc_grads + dec_grads
    table_grad = np.zeros_like(table.weights)
    np.add.at(table_grad, action_index, g_action)
    return loss, grads, table_grad


def embedding_loss(model, table, state_emb, action_index, next_state_emb, noise=None, zero_z=False) -> float:
    return embedding_loss_and_grads(model, table, state_emb, action_index, next_state_emb, noise, zero_z)[0]


def draw_latent_noise(model: TransitionModel, n: int, rng: np.random.Generator) -> np.ndarray | None:
    if model.mode != "latent":
        return None
    return rng.standard_normal((n, model.z_dim))


def train_embeddings_step(model, table, state_emb, action_index, next_state_emb,
                          rng: np.random.Generator) -> float:
    """One Adam step on the transition model and on the touched table rows.

    Inputs are treated as constants: no gradient leaves this function.
    Returns the loss before the step.
    """
    noise = draw_latent_noise(model, len(action_index), rng)
    loss, grads, table_grad = embedding_loss_and_grads(
        model, table, state_emb, action_index, next_state_emb, noise)
    if model.frozen and table.frozen:
        warnings.warn("transition model and embedding table both frozen; step skipped", stacklevel=2)
        return loss
    if not model.frozen:
        adam_step(model.params, grads, model.optimizer)
    if not table.frozen:
        touched = np.unique(action_index)
        adam_step([table.weights], [table_grad], table.optimizer, rows=[touched])
    return loss


def fit_embeddings_offline(model, table, data: dict, epochs: int, batch_size: int, seed: int,
                           state_embedder=None) -> list[float]:
    """Shuffled minibatch epochs over a transition dataset.

    ``data`` holds arrays ``state``, ``action_index``, ``next_state`` (see
    :func:`trace_rl.envs.transitions_to_arrays`). Returns per-epoch mean loss.
    """
    states, actions, next_states = data["state"], data["action_index"], data["next_state"]
    n = len(actions)
    if n == 0:
        raise ValueError("empty dataset")
    if state_embedder is not None:
        states, next_states = state_embedder(states), state_embedder(next_states)
    rng = np.random.default_rng(seed)
    history = []
    for _ in range(epochs):
        order = rng.permutation(n)
        losses = []
        for start in range(0, n, batch_size):
            idx = order[start:start + batch_size]
            losses.append(train_embeddings_step(model, table, states[idx], actions[idx], next_states[idx], rng))
        history.append(float(np.mean(losses)))
    return history

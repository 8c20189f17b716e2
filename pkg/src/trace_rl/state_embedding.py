"""Map from raw task states into the common feature space."""

from __future__ import annotations

from typing import Sequence

import numpy as np

from .nn import AdamState, Mlp, adam_step


class StateEmbedder:
    """Identity in same-domain mode, a learned MLP in cross-domain mode."""

    def __init__(
        self,
        state_dim: int,
        mode: str = "identity",
        output_dim: int | None = None,
        hiddens: Sequence[int] = (),
        rng: np.random.Generator | None = None,
        lr: float = 1e-3,
    ):
        if mode not in ("identity", "learned"):
            raise ValueError(f"unknown state embedder mode {mode!r}")
        self.mode = mode
        self.state_dim = state_dim
        if mode == "identity":
            if output_dim not in (None, state_dim):
                raise ValueError("identity embedder must keep the state width")
            self.output_dim = state_dim
            self.net = None
        else:
            if output_dim is None:
                raise ValueError("learned embedder needs output_dim")
            self.output_dim = output_dim
            self.net = Mlp([state_dim, *hiddens, output_dim], rng)
        self.optimizer = AdamState.for_params(self.params, lr)

    @property
    def params(self) -> list[np.ndarray]:
        return self.net.params if self.net is not None else []

    def __call__(self, states: np.ndarray) -> np.ndarray:
        states = np.asarray(states, dtype=np.float64)
        if states.shape[-1] != self.state_dim:
            raise ValueError(f"expected state width {self.state_dim}, got {states.shape}")
        return states if self.net is None else self.net.forward(states)

    def forward_cache(self, states: np.ndarray):
        if self.net is None:
            return self(states), None
        return self.net.forward_cache(states)

    def backward(self, cache, upstream: np.ndarray) -> list[np.ndarray]:
        if self.net is None:
            return []
        return self.net.backward(cache, upstream)[0]

    def apply(self, grads: list[np.ndarray]) -> None:
        if self.net is not None:
            adam_step(self.params, grads, self.optimizer)

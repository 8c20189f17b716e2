"""Small numpy MLP toolkit with explicit backprop and Adam.

Every parametric function in the package (actor, critics, transition model,
state embedder) is an :class:`Mlp`. Parameters are kept as a flat list
``[W0, b0, W1, b1, ...]`` of float64 arrays so optimizers, checkpoints and
gradient checks can treat all networks uniformly. Weights are stored
``(out, in)``; inputs may be a single vector or a ``(batch, in)`` matrix.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

LOG_SIGMA_MIN = -10.0
LOG_SIGMA_MAX = 2.0
_LOG_2PI = float(np.log(2.0 * np.pi))

_HIDDEN = ("relu", "tanh")
_OUTPUT = ("linear", "tanh")


class Mlp:
    """Fully connected feed-forward network."""

    def __init__(
        self,
        layer_sizes: Sequence[int],
        rng: np.random.Generator | None = None,
        hidden_activation: str = "relu",
        output_activation: str = "linear",
    ):
        sizes = [int(s) for s in layer_sizes]
        if len(sizes) < 2 or any(s <= 0 for s in sizes):
            raise ValueError(f"layer_sizes must hold >= 2 positive ints, got {layer_sizes}")
        if hidden_activation not in _HIDDEN:
            raise ValueError(f"unknown hidden activation {hidden_activation!r}")
        if output_activation not in _OUTPUT:
            raise ValueError(f"unknown output activation {output_activation!r}")
        self.layer_sizes = sizes
        self.hidden_activation = hidden_activation
        self.output_activation = output_activation
        self.weights: list[np.ndarray] = []
        self.biases: list[np.ndarray] = []
        for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
            if rng is None:
                w = np.zeros((fan_out, fan_in))
            else:
                limit = np.sqrt(6.0 / (fan_in + fan_out))
                w = rng.uniform(-limit, limit, size=(fan_out, fan_in))
            self.weights.append(w)
            self.biases.append(np.zeros(fan_out))

    @property
    def in_dim(self) -> int:
        return self.layer_sizes[0]

    @property
    def out_dim(self) -> int:
        return self.layer_sizes[-1]

    @property
    def params(self) -> list[np.ndarray]:
        """Live references, ordered W0, b0, W1, b1, ..."""
        out = []
        for w, b in zip(self.weights, self.biases):
            out.extend((w, b))
        return out

    def set_params(self, values: Sequence[np.ndarray]) -> None:
        values = list(values)
        if len(values) != 2 * len(self.weights):
            raise ValueError("parameter count mismatch")
        for i, p in enumerate(self.params):
            v = np.asarray(values[i], dtype=np.float64)
            if v.shape != p.shape:
                raise ValueError(f"shape mismatch for parameter {i}: {v.shape} vs {p.shape}")
            p[...] = v

    def copy(self) -> "Mlp":
        twin = Mlp(self.layer_sizes, None, self.hidden_activation, self.output_activation)
        twin.set_params(self.params)
        return twin

    def check_finite(self) -> None:
        for i, p in enumerate(self.params):
            if not np.all(np.isfinite(p)):
                raise FloatingPointError(f"non-finite entries in parameter {i}")

    def _check_input(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        if x.ndim not in (1, 2) or x.shape[-1] != self.in_dim:
            raise ValueError(f"expected input width {self.in_dim}, got shape {x.shape}")
        return x

    def forward(self, x: np.ndarray) -> np.ndarray:
        return self.forward_cache(x)[0]

    __call__ = forward

    def forward_cache(self, x: np.ndarray) -> tuple[np.ndarray, list]:
        """Forward pass that also returns the activations backward needs."""
        x = self._check_input(x)
        squeeze = x.ndim == 1
        h = x[None, :] if squeeze else x
        acts = [h]
        last = len(self.weights) - 1
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            z = h @ w.T + b
            act = self.hidden_activation if i < last else self.output_activation
            if act == "relu":
                h = np.maximum(z, 0.0)
            elif act == "tanh":
                h = np.tanh(z)
            else:
                h = z
            acts.append(h)
        out = h[0] if squeeze else h
        return out, [squeeze, acts]

    def backward(
        self, cache: list, upstream: np.ndarray, param_grads: bool = True
    ) -> tuple[list[np.ndarray], np.ndarray]:
        """Gradients of ``sum(upstream * output)`` w.r.t. parameters and input.

        Batch contributions are summed. With ``param_grads=False`` only the
        input gradient is computed and the parameter list is empty.
        """
        squeeze, acts = cache
        g = np.asarray(upstream, dtype=np.float64)
        if squeeze:
            g = g[None, :]
        if g.shape != acts[-1].shape:
            raise ValueError(f"upstream shape {g.shape} does not match output {acts[-1].shape}")
        grads: list[np.ndarray] = [None] * (2 * len(self.weights))  # type: ignore[list-item]
        last = len(self.weights) - 1
        for i in range(last, -1, -1):
            act = self.hidden_activation if i < last else self.output_activation
            out = acts[i + 1]
            if act == "relu":
                g = g * (out > 0.0)
            elif act == "tanh":
                g = g * (1.0 - out * out)
            if param_grads:
                grads[2 * i] = g.T @ acts[i]
                grads[2 * i + 1] = g.sum(axis=0)
            g = g @ self.weights[i]
        return (grads if param_grads else []), (g[0] if squeeze else g)


def zeros_like_params(params: Sequence[np.ndarray]) -> list[np.ndarray]:
    return [np.zeros_like(p) for p in params]


@dataclass
class AdamState:
    lr: float
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    step_count: int = 0
    first_moment: list[np.ndarray] = field(default_factory=list)
    second_moment: list[np.ndarray] = field(default_factory=list)

    @classmethod
    def for_params(cls, params: Sequence[np.ndarray], lr: float, **kw) -> "AdamState":
        return cls(lr=lr, first_moment=zeros_like_params(params),
                   second_moment=zeros_like_params(params), **kw)


def adam_step(
    params: Sequence[np.ndarray],
    grads: Sequence[np.ndarray],
    state: AdamState,
    rows: Sequence[np.ndarray | None] | None = None,
) -> None:
    """Bias-corrected Adam update, in place.

    ``rows`` optionally restricts the update of each (2-D) parameter to the
    given row indices; moments of other rows are left untouched (lazy Adam).
    """
    if len(params) != len(grads) or len(params) != len(state.first_moment):
        raise ValueError("params, grads and optimizer state disagree in length")
    for i, (p, g) in enumerate(zip(params, grads)):
        if p.shape != g.shape:
            raise ValueError(f"gradient {i} has shape {g.shape}, parameter has {p.shape}")
        if not np.all(np.isfinite(g)):
            raise FloatingPointError(f"non-finite gradient in parameter {i}; update rejected")
    state.step_count += 1
    t = state.step_count
    b1, b2 = state.beta1, state.beta2
    corr1 = 1.0 - b1**t
    corr2 = 1.0 - b2**t
    for i, (p, g) in enumerate(zip(params, grads)):
        m, v = state.first_moment[i], state.second_moment[i]
        idx = None if rows is None else rows[i]
        if idx is None:
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * g * g
            p -= state.lr * (m / corr1) / (np.sqrt(v / corr2) + state.epsilon)
        else:
            gi = g[idx]
            m[idx] = b1 * m[idx] + (1.0 - b1) * gi
            v[idx] = b2 * v[idx] + (1.0 - b2) * gi * gi
            p[idx] -= state.lr * (m[idx] / corr1) / (np.sqrt(v[idx] / corr2) + state.epsilon)


def clamp_log_sigma(raw: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Clamp to [LOG_SIGMA_MIN, LOG_SIGMA_MAX]; also returns the pass-through mask."""
    clipped = np.clip(raw, LOG_SIGMA_MIN, LOG_SIGMA_MAX)
    mask = (raw > LOG_SIGMA_MIN) & (raw < LOG_SIGMA_MAX)
    return clipped, mask


def gaussian_reparameterize(
    mu: np.ndarray, log_sigma: np.ndarray, noise: np.ndarray
) -> tuple[np.ndarray, np.ndarray]:
    """Sample ``mu + sigma * noise`` and its diagonal Gaussian log density.

    The log density is summed over the last axis.
    """
    mu = np.asarray(mu, dtype=np.float64)
    noise = np.asarray(noise, dtype=np.float64)
    if mu.shape != np.shape(log_sigma) or mu.shape != noise.shape:
        raise ValueError("mu, log_sigma and noise must have equal shapes")
    log_sigma, _ = clamp_log_sigma(np.asarray(log_sigma, dtype=np.float64))
    sample = mu + np.exp(log_sigma) * noise
    log_prob = np.sum(-0.5 * noise * noise - log_sigma - 0.5 * _LOG_2PI, axis=-1)
    return sample, log_prob


def gradient_check(
    loss_fn: Callable[[], tuple[float, Sequence[np.ndarray]]],
    params: Sequence[np.ndarray],
    h: float = 1e-5,
    floor: float = 1e-6,
) -> float:
    """Max relative error between analytic and central-difference gradients.

    ``loss_fn()`` reads ``params`` (which are perturbed in place) and returns
    ``(loss, grads)`` with grads aligned to ``params``. Entries where both
    gradients are below ``floor`` are compared on an absolute scale of
    ``floor``, which keeps round-off in near-zero entries from dominating.
    """
    _, analytic = loss_fn()
    analytic = [np.array(g, dtype=np.float64, copy=True) for g in analytic]
    worst = 0.0
    for p, g in zip(params, analytic):
        flat = p.reshape(-1)
        gflat = g.reshape(-1)
        for j in range(flat.size):
            old = flat[j]
            flat[j] = old + h
            up = loss_fn()[0]
            flat[j] = old - h
            down = loss_fn()[0]
            flat[j] = old
            numeric = (up - down) / (2.0 * h)
            denom = max(abs(numeric), abs(gflat[j]), floor)
            worst = max(worst, abs(numeric - gflat[j]) / denom)
    return worst

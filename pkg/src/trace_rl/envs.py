"""Seeded task environments and random-policy data collection."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

UP, DOWN, LEFT, RIGHT = 0, 1, 2, 3
MOVE_NAMES = ("Up", "Down", "Left", "Right")
MOVE_DELTAS = {UP: (0, 1), DOWN: (0, -1), LEFT: (-1, 0), RIGHT: (1, 0)}


class EpisodeDone(RuntimeError):
    """Raised when stepping an environment whose episode has ended."""


@dataclass(frozen=True)
class EnvSpec:
    state_dim: int
    action_count: int
    max_steps: int

    def __post_init__(self):
        if min(self.state_dim, self.action_count, self.max_steps) <= 0:
            raise ValueError(f"EnvSpec fields must be positive: {self}")


@dataclass
class Transition:
    state: np.ndarray
    action_index: int
    proto_action: np.ndarray
    reward: float
    next_state: np.ndarray
    done: bool

    def to_record(self) -> dict:
        return {
            "state": [float(v) for v in self.state],
            "action_index": int(self.action_index),
            "proto_action": [float(v) for v in self.proto_action],
            "reward": float(self.reward),
            "next_state": [float(v) for v in self.next_state],
            "done": bool(self.done),
        }

    @classmethod
    def from_record(cls, rec: dict) -> "Transition":
        return cls(
            state=np.asarray(rec["state"], dtype=np.float64),
            action_index=int(rec["action_index"]),
            proto_action=np.asarray(rec["proto_action"], dtype=np.float64),
            reward=float(rec["reward"]),
            next_state=np.asarray(rec["next_state"], dtype=np.float64),
            done=bool(rec["done"]),
        )


# ---------------------------------------------------------------- gridworld


@dataclass(frozen=True)
class GridworldConfig:
    grid_size: int = 11
    n_steps: int = 1
    encoding: str = "coords"
    step_reward: float = -0.05
    goal_reward: float = 10.0
    max_actions: int = 20

    def __post_init__(self):
        if self.n_steps not in (1, 2, 3):
            raise ValueError(f"n_steps must be 1, 2 or 3, got {self.n_steps}")
        if self.encoding not in ("coords", "onehot"):
            raise ValueError(f"unknown encoding {self.encoding!r}")
        if self.grid_size < 2 or self.max_actions < 1:
            raise ValueError("grid_size must be >= 2 and max_actions >= 1")

    @property
    def action_count(self) -> int:
        return 4**self.n_steps

    @property
    def state_dim(self) -> int:
        return 4 if self.encoding == "coords" else 4 * self.grid_size


def decode_action(config: GridworldConfig, index: int) -> tuple[int, ...]:
    """Atomic moves of a combo action: base-4 digits, most significant first."""
    if not 0 <= index < config.action_count:
        raise IndexError(f"action index {index} outside [0, {config.action_count})")
    digits = []
    for _ in range(config.n_steps):
        index, d = divmod(index, 4)
        digits.append(d)
    return tuple(reversed(digits))


def net_displacement(config: GridworldConfig, index: int) -> tuple[int, int]:
    """Summed free-space displacement of a combo action (no walls)."""
    dx = dy = 0
    for move in decode_action(config, index):
        mx, my = MOVE_DELTAS[move]
        dx += mx
        dy += my
    return dx, dy


def encode_grid_state(config: GridworldConfig, pos: Sequence[int], goal: Sequence[int]) -> np.ndarray:
    coords = np.array([pos[0], pos[1], goal[0], goal[1]], dtype=np.float64)
    if config.encoding == "coords":
        return coords
    out = np.zeros(4 * config.grid_size)
    for k, v in enumerate(coords.astype(int)):
        out[k * config.grid_size + v] = 1.0
    return out


def decode_grid_state(config: GridworldConfig, state: np.ndarray) -> tuple[tuple[int, int], tuple[int, int]]:
    state = np.asarray(state)
    if config.encoding == "coords":
        c = [int(round(v)) for v in state]
    else:
        c = [int(np.argmax(state[k * config.grid_size:(k + 1) * config.grid_size])) for k in range(4)]
    return (c[0], c[1]), (c[2], c[3])


class GridWorld:
    """n-step gridworld: each action is a combo of ``n_steps`` atomic moves."""

    family = "gridworld"

    def __init__(self, config: GridworldConfig | None = None, seed: int | None = None):
        self.config = config or GridworldConfig()
        self.spec = EnvSpec(self.config.state_dim, self.config.action_count, self.config.max_actions)
        self.rng = np.random.default_rng(seed)
        self.pos = (0, 0)
        self.goal = (0, 0)
        self.actions_taken = 0
        self.done = True

    def reset(self, seed: int | None = None) -> np.ndarray:
        if seed is not None:
            self.rng = np.random.default_rng(seed)
        n = self.config.grid_size
        cells = self.rng.choice(n * n, size=2, replace=False)
        self.pos = (int(cells[0] % n), int(cells[0] // n))
        self.goal = (int(cells[1] % n), int(cells[1] // n))
        self.actions_taken = 0
        self.done = False
        return self.observe()

    def set_state(self, pos: Sequence[int], goal: Sequence[int], actions_taken: int = 0) -> np.ndarray:
        n = self.config.grid_size
        for v in (*pos, *goal):
            if not 0 <= v < n:
                raise ValueError(f"coordinate {v} outside grid")
        self.pos = (int(pos[0]), int(pos[1]))
        self.goal = (int(goal[0]), int(goal[1]))
        self.actions_taken = actions_taken
        self.done = self.pos == self.goal
        return self.observe()

    def observe(self) -> np.ndarray:
        return encode_grid_state(self.config, self.pos, self.goal)

    def step(self, action_index: int) -> tuple[np.ndarray, float, bool]:
        if self.done:
            raise EpisodeDone("step() called on a finished episode; call reset()")
        cfg = self.config
        moves = decode_action(cfg, action_index)
        x, y = self.pos
        reward = 0.0
        reached = False
        for move in moves:
            dx, dy = MOVE_DELTAS[move]
            nx, ny = x + dx, y + dy
            if 0 <= nx < cfg.grid_size and 0 <= ny < cfg.grid_size:
                x, y = nx, ny
            reward += cfg.step_reward
            if (x, y) == self.goal:
                reward += cfg.goal_reward
                reached = True
                break
        self.pos = (x, y)
        self.actions_taken += 1
        self.done = reached or self.actions_taken >= cfg.max_actions
        return self.observe(), reward, self.done


# ----------------------------------------------------------------- cartpole


@dataclass(frozen=True)
class CartPoleConfig:
    gravity: float = 9.8
    cart_mass: float = 1.0
    pole_mass: float = 0.1
    half_length: float = 0.5
    dt: float = 0.02
    force_levels: int = 21
    force_range: tuple[float, float] = (-10.0, 10.0)
    angle_limit_deg: float = 12.0
    position_limit: float = 2.4
    max_steps: int = 100

    def __post_init__(self):
        if self.force_levels < 2:
            raise ValueError("force_levels must be >= 2")
        if not self.force_range[0] < self.force_range[1]:
            raise ValueError("force_range must be an increasing interval")

    @property
    def forces(self) -> np.ndarray:
        return np.linspace(self.force_range[0], self.force_range[1], self.force_levels)


def cartpole_derivatives(config: CartPoleConfig, state: np.ndarray, force: float) -> tuple[float, float]:
    """Cart and pole accelerations for state ``(x, x_dot, theta, theta_dot)``."""
    _, _, theta, theta_dot = state
    total = config.cart_mass + config.pole_mass
    pml = config.pole_mass * config.half_length
    cos, sin = math.cos(theta), math.sin(theta)
    temp = (force + pml * theta_dot**2 * sin) / total
    theta_acc = (config.gravity * sin - cos * temp) / (
        config.half_length * (4.0 / 3.0 - config.pole_mass * cos**2 / total)
    )
    x_acc = temp - pml * theta_acc * cos / total
    return x_acc, theta_acc


class CartPole:
    """Cart-pole with a discretized horizontal force, explicit Euler."""

    family = "cartpole"

    def __init__(self, config: CartPoleConfig | None = None, seed: int | None = None):
        self.config = config or CartPoleConfig()
        self.spec = EnvSpec(4, self.config.force_levels, self.config.max_steps)
        self.rng = np.random.default_rng(seed)
        self.state = np.zeros(4)
        self.steps = 0
        self.done = True

    def reset(self, seed: int | None = None) -> np.ndarray:
        if seed is not None:
            self.rng = np.random.default_rng(seed)
        self.state = self.rng.uniform(-0.05, 0.05, size=4)
        self.steps = 0
        self.done = False
        return self.state.copy()

    def set_state(self, state: Sequence[float]) -> np.ndarray:
        self.state = np.asarray(state, dtype=np.float64).copy()
        self.steps = 0
        self.done = self._out_of_bounds()
        return self.state.copy()

    def _out_of_bounds(self) -> bool:
        x, _, theta, _ = self.state
        return abs(theta) > math.radians(self.config.angle_limit_deg) or abs(x) > self.config.position_limit

    def step(self, action_index: int) -> tuple[np.ndarray, float, bool]:
        if self.done:
            raise EpisodeDone("step() called on a finished episode; call reset()")
        if not 0 <= action_index < self.config.force_levels:
            raise IndexError(f"action index {action_index} outside [0, {self.config.force_levels})")
        force = float(self.config.forces[action_index])
        x, x_dot, theta, theta_dot = self.state
        x_acc, theta_acc = cartpole_derivatives(self.config, self.state, force)
        dt = self.config.dt
        self.state = np.array([
            x + dt * x_dot,
            x_dot + dt * x_acc,
            theta + dt * theta_dot,
            theta_dot + dt * theta_acc,
        ])
        self.steps += 1
        self.done = self._out_of_bounds() or self.steps >= self.config.max_steps
        return self.state.copy(), 1.0, self.done


def make_env(family: str, seed: int | None = None, **params):
    if family == "gridworld":
        return GridWorld(GridworldConfig(**params), seed=seed)
    if family == "cartpole":
        if "force_range" in params:
            params["force_range"] = tuple(params["force_range"])
        return CartPole(CartPoleConfig(**params), seed=seed)
    raise ValueError(f"unknown environment family {family!r}")


# ------------------------------------------------------------------- data


def collect_random_transitions(env, count: int, seed: int, table=None) -> list[Transition]:
    """Roll out a uniform-random policy for ``count`` steps.

    ``proto_action`` is the executed action's current embedding when a table
    is given, zeros of width 1 otherwise.
    """
    if count <= 0:
        raise ValueError("count must be positive")
    rng = np.random.default_rng(seed)
    state = env.reset(seed=int(rng.integers(2**31)))
    n_actions = env.spec.action_count
    out: list[Transition] = []
    while len(out) < count:
        a = int(rng.integers(n_actions))
        proto = table.lookup(a) if table is not None else np.zeros(1)
        next_state, reward, done = env.step(a)
        out.append(Transition(state, a, proto, reward, next_state, done))
        state = env.reset() if done else next_state
    return out


def transitions_to_arrays(transitions: Sequence[Transition]) -> dict[str, np.ndarray]:
    return {
        "state": np.stack([t.state for t in transitions]),
        "action_index": np.array([t.action_index for t in transitions], dtype=np.int64),
        "proto_action": np.stack([t.proto_action for t in transitions]),
        "reward": np.array([t.reward for t in transitions]),
        "next_state": np.stack([t.next_state for t in transitions]),
        "done": np.array([t.done for t in transitions], dtype=bool),
    }


def write_jsonl(transitions: Iterable[Transition], path: str | Path) -> None:
    with open(path, "w") as fh:
        for t in transitions:
            fh.write(json.dumps(t.to_record()) + "\n")


def read_jsonl(path: str | Path) -> list[Transition]:
    with open(path) as fh:
        return [Transition.from_record(json.loads(line)) for line in fh if line.strip()]

"""Single-file checkpoints: JSON header line, then raw float64 arrays.

Layout::

    TRACECKP <format_version>\\n
    <header JSON, sorted keys>\\n
    <array 0 bytes><array 1 bytes>...   (little-endian float64, C order)

The header lists every array's name and shape in storage order, so the file
can be read without this package.
"""

from __future__ import annotations

import json
from pathlib import Path
from typing import Any

import numpy as np

from .agent import DiscreteSacAgent, SacAgent
from .embedding import ActionEmbeddingTable, TransitionModel
from .nn import AdamState, Mlp
from .state_embedding import StateEmbedder
from .transfer import TraceArtifacts

FORMAT_VERSION = 1
MAGIC = b"TRACECKP"


class CheckpointError(ValueError):
    pass


def _mlp_meta(net: Mlp) -> dict:
    return {"layer_sizes": net.layer_sizes, "hidden": net.hidden_activation, "output": net.output_activation}


def _mlp_from_meta(meta: dict) -> Mlp:
    return Mlp(meta["layer_sizes"], None, meta["hidden"], meta["output"])


def _opt_meta(opt: AdamState) -> dict:
    return {"lr": opt.lr, "beta1": opt.beta1, "beta2": opt.beta2, "epsilon": opt.epsilon, "step_count": opt.step_count}


class _Writer:
    def __init__(self):
        self.names: list[str] = []
        self.arrays: list[np.ndarray] = []

    def add(self, name: str, arr: np.ndarray) -> None:
        self.names.append(name)
        self.arrays.append(np.ascontiguousarray(arr, dtype="<f8"))

    def add_params(self, prefix: str, params) -> None:
        for i, p in enumerate(params):
            self.add(f"{prefix}.{i}", p)

    def add_opt(self, prefix: str, opt: AdamState) -> None:
        self.add_params(f"{prefix}.m", opt.first_moment)
        self.add_params(f"{prefix}.v", opt.second_moment)


class _Reader:
    def __init__(self, arrays: dict[str, np.ndarray]):
        self.arrays = arrays

    def params(self, prefix: str, count: int) -> list[np.ndarray]:
        try:
            return [self.arrays[f"{prefix}.{i}"] for i in range(count)]
        except KeyError as exc:
            raise CheckpointError(f"checkpoint lacks array {exc.args[0]}") from None

    def opt(self, prefix: str, meta: dict, count: int) -> AdamState:
        return AdamState(lr=meta["lr"], beta1=meta["beta1"], beta2=meta["beta2"], epsilon=meta["epsilon"],
                         step_count=meta["step_count"],
                         first_moment=[a.copy() for a in self.params(f"{prefix}.m", count)],
                         second_moment=[a.copy() for a in self.params(f"{prefix}.v", count)])


def _encode_trace(art: TraceArtifacts, w: _Writer) -> dict:
    a, m, t, e = art.agent, art.model, art.table, art.embedder
    for name in ("actor", "critic1", "critic2", "target1", "target2"):
        w.add_params(f"agent.{name}", getattr(a, name).params)
    w.add_opt("agent.actor_opt", a.actor_opt)
    w.add_opt("agent.critic_opt", a.critic_opt)
    w.add_params("model", m.params)
    w.add_opt("model.opt", m.optimizer)
    w.add("table.weights", t.weights)
    w.add_opt("table.opt", t.optimizer)
    w.add_params("embedder", e.params)
    w.add_opt("embedder.opt", e.optimizer)
    return {
        "kind": "trace",
        "agent": {
            "state_dim": a.state_dim, "action_dim": a.action_dim, "hiddens": list(a.hiddens),
            "alpha": a.alpha, "gamma": a.gamma, "tau": a.tau, "proto_bound": a.proto_bound,
            "actor": _mlp_meta(a.actor), "critic": _mlp_meta(a.critic1),
            "actor_opt": _opt_meta(a.actor_opt), "critic_opt": _opt_meta(a.critic_opt),
        },
        "model": {
            "mode": m.mode, "state_dim": m.state_dim, "action_dim": m.action_dim, "z_dim": m.z_dim,
            "beta": m.beta, "frozen": m.frozen,
            "encoder": _mlp_meta(m.encoder) if m.encoder is not None else None,
            "decoder": _mlp_meta(m.decoder), "opt": _opt_meta(m.optimizer),
        },
        "table": {"shape": list(t.weights.shape), "frozen": t.frozen, "opt": _opt_meta(t.optimizer)},
        "embedder": {
            "mode": e.mode, "state_dim": e.state_dim, "output_dim": e.output_dim,
            "net": _mlp_meta(e.net) if e.net is not None else None, "opt": _opt_meta(e.optimizer),
        },
    }


def _decode_trace(meta: dict, r: _Reader) -> TraceArtifacts:
    am = meta["agent"]
    agent = SacAgent.__new__(SacAgent)
    agent.state_dim, agent.action_dim, agent.hiddens = am["state_dim"], am["action_dim"], tuple(am["hiddens"])
    agent.alpha, agent.gamma, agent.tau, agent.proto_bound = am["alpha"], am["gamma"], am["tau"], am["proto_bound"]
    for name, key in (("actor", "actor"), ("critic1", "critic"), ("critic2", "critic"),
                      ("target1", "critic"), ("target2", "critic")):
        net = _mlp_from_meta(am[key])
        net.set_params(r.params(f"agent.{name}", len(net.params)))
        setattr(agent, name, net)
    agent.actor_opt = r.opt("agent.actor_opt", am["actor_opt"], len(agent.actor.params))
    agent.critic_opt = r.opt("agent.critic_opt", am["critic_opt"], len(agent.critic_params))

    mm = meta["model"]
    model = TransitionModel.__new__(TransitionModel)
    model.mode, model.state_dim, model.action_dim = mm["mode"], mm["state_dim"], mm["action_dim"]
    model.z_dim, model.beta, model.frozen = mm["z_dim"], mm["beta"], mm["frozen"]
    model.encoder = _mlp_from_meta(mm["encoder"]) if mm["encoder"] is not None else None
    model.decoder = _mlp_from_meta(mm["decoder"])
    model.set_params(r.params("model", len(model.params)))
    model.optimizer = r.opt("model.opt", mm["opt"], len(model.params))

    tm = meta["table"]
    table = ActionEmbeddingTable(*tm["shape"])
    table.weights[...] = r.arrays["table.weights"]
    table.frozen = tm["frozen"]
    table.optimizer = r.opt("table.opt", tm["opt"], 1)

    em = meta["embedder"]
    embedder = StateEmbedder.__new__(StateEmbedder)
    embedder.mode, embedder.state_dim, embedder.output_dim = em["mode"], em["state_dim"], em["output_dim"]
    embedder.net = _mlp_from_meta(em["net"]) if em["net"] is not None else None
    if embedder.net is not None:
        embedder.net.set_params(r.params("embedder", len(embedder.net.params)))
    embedder.optimizer = r.opt("embedder.opt", em["opt"], len(embedder.params))
    return TraceArtifacts(agent, model, table, embedder)


def _encode_discrete(agent: DiscreteSacAgent, w: _Writer) -> dict:
    for name in ("actor", "critic1", "critic2", "target1", "target2"):
        w.add_params(f"agent.{name}", getattr(agent, name).params)
    w.add_opt("agent.actor_opt", agent.actor_opt)
    w.add_opt("agent.critic_opt", agent.critic_opt)
    return {
        "kind": "discrete",
        "agent": {
            "state_dim": agent.state_dim, "action_count": agent.action_count, "hiddens": list(agent.hiddens),
            "alpha": agent.alpha, "gamma": agent.gamma, "tau": agent.tau,
            "net": _mlp_meta(agent.actor),
            "actor_opt": _opt_meta(agent.actor_opt), "critic_opt": _opt_meta(agent.critic_opt),
        },
    }


def _decode_discrete(meta: dict, r: _Reader) -> DiscreteSacAgent:
    am = meta["agent"]
    agent = DiscreteSacAgent.__new__(DiscreteSacAgent)
    agent.state_dim, agent.action_count, agent.hiddens = am["state_dim"], am["action_count"], tuple(am["hiddens"])
    agent.alpha, agent.gamma, agent.tau = am["alpha"], am["gamma"], am["tau"]
    for name in ("actor", "critic1", "critic2", "target1", "target2"):
        net = _mlp_from_meta(am["net"])
        net.set_params(r.params(f"agent.{name}", len(net.params)))
        setattr(agent, name, net)
    agent.actor_opt = r.opt("agent.actor_opt", am["actor_opt"], len(agent.actor.params))
    agent.critic_opt = r.opt("agent.critic_opt", am["critic_opt"], len(agent.critic_params))
    return agent


def dumps(artifacts, config: dict | None = None, rng_state: dict | None = None, episode: int = 0,
          extra: dict | None = None) -> bytes:
    w = _Writer()
    if isinstance(artifacts, TraceArtifacts):
        components = _encode_trace(artifacts, w)
    elif isinstance(artifacts, DiscreteSacAgent):
        components = _encode_discrete(artifacts, w)
    else:
        raise TypeError(f"cannot checkpoint {type(artifacts).__name__}")
    header = {
        "format_version": FORMAT_VERSION,
        "config": config,
        "components": components,
        "rng_state": rng_state,
        "episode": episode,
        "extra": extra or {},
        "arrays": [{"name": n, "shape": list(a.shape)} for n, a in zip(w.names, w.arrays)],
    }
    head = json.dumps(header, sort_keys=True, separators=(",", ":")).encode()
    return b"".join([MAGIC, b" ", str(FORMAT_VERSION).encode(), b"\n", head, b"\n"] + [a.tobytes() for a in w.arrays])


def loads(blob: bytes) -> tuple[Any, dict]:
    """Returns ``(artifacts, header)``."""
    first, sep, rest = blob.partition(b"\n")
    if not sep or not first.startswith(MAGIC):
        raise CheckpointError("not a checkpoint file")
    version = int(first[len(MAGIC):].strip() or 0)
    if version != FORMAT_VERSION:
        raise CheckpointError(f"unsupported checkpoint format version {version}")
    head, sep, body = rest.partition(b"\n")
    if not sep:
        raise CheckpointError("truncated checkpoint header")
    try:
        header = json.loads(head)
        entries = header["arrays"]
        comp = header["components"]
    except (ValueError, KeyError, TypeError) as exc:
        raise CheckpointError(f"corrupt checkpoint header: {exc}") from None
    arrays, offset = {}, 0
    for entry in entries:
        count = int(np.prod(entry["shape"], dtype=np.int64))
        nbytes = 8 * count
        if offset + nbytes > len(body):
            raise CheckpointError(f"truncated array {entry['name']}")
        arrays[entry["name"]] = np.frombuffer(body, dtype="<f8", count=count, offset=offset).reshape(entry["shape"]).astype(np.float64)
        offset += nbytes
    if offset != len(body):
        raise CheckpointError("trailing bytes after last array")
    reader = _Reader(arrays)
    art = _decode_trace(comp, reader) if comp["kind"] == "trace" else _decode_discrete(comp, reader)
    return art, header


def save_checkpoint(path: str | Path, artifacts, **kw) -> None:
    Path(path).write_bytes(dumps(artifacts, **kw))


def load_checkpoint(path: str | Path) -> tuple[Any, dict]:
    return loads(Path(path).read_bytes())

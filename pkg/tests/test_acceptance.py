"""Acceptance suite: one test per criterion, each at its stated tolerance.

Every test records a verdict line (printed in the terminal summary) before
asserting, so a failing criterion still reports its measured values.
"""

import json
import time

import numpy as np
import pytest

from conftest import record
from trace_rl.agent import (DiscreteSacAgent, SacAgent, discrete_sac_losses, nearest_action, sac_losses,
                            sac_targets)
from trace_rl.analysis import alignment_check, analogy_check, cluster_quality, episodes_to_threshold, monotonicity_check
from trace_rl.checkpoint import dumps, loads
from trace_rl.cli import main
from trace_rl.config import Hyperparams, TransferConfig
from trace_rl.embedding import ActionEmbeddingTable, TransitionModel, embedding_loss, embedding_loss_and_grads
from trace_rl.envs import DOWN, LEFT, RIGHT, UP
from trace_rl.experiments import displacement_labels, offline_embeddings, train_trace, transfer_trace
from trace_rl.nn import gradient_check
from trace_rl.state_embedding import StateEmbedder

SEEDS = [0, 1, 2, 3, 4]
THRESHOLD = 8.0
WINDOW = 100

# episode budgets (pilot-sized: sources plateau by ~200 episodes)
SOURCE_EPISODES = 500
TARGET_EPISODES = 500
CROSS_SOURCE_EPISODES = 600
CROSS_TARGET_EPISODES = 600
DIM_EPISODES = 600


def _combo(*moves):
    i = 0
    for m in moves:
        i = 4 * i + m
    return i


def _jitter(params, rng):
    # random biases keep ReLU pre-activations off their kinks
    for p in params:
        if p.ndim == 1:
            p[...] = rng.uniform(-0.3, 0.3, p.shape)


def _median_hits(hits):
    return float(np.median([h if h is not None else np.inf for h in hits]))


# ------------------------------------------------------------- criterion 1


def test_criterion_01_gradient_suite():
    start = time.perf_counter()
    errors = {"embed-latent": [], "embed-deterministic": [], "sac-critic": [], "sac-actor": [],
              "sac-state-embedder": [], "discrete-critic": [], "discrete-actor": [], "discrete-state-embedder": []}
    for seed in range(20):
        rng = np.random.default_rng(seed)
        for mode in ("latent", "deterministic"):
            m = TransitionModel(3, 2, rng, hiddens=(6, 5), mode=mode, z_dim=2, z_hiddens=(4,), beta=0.2)
            _jitter(m.params, rng)
            t = ActionEmbeddingTable(5, 2, rng, init_scale=1.0)
            s, a, s2 = rng.standard_normal((6, 3)), rng.integers(5, size=6), rng.standard_normal((6, 3))
            noise = rng.standard_normal((6, 2)) if mode == "latent" else None

            def emb_loss():
                val, g, tg = embedding_loss_and_grads(m, t, s, a, s2, noise)
                return val, list(g) + [tg]

            errors[f"embed-{mode}"].append(gradient_check(emb_loss, m.params + [t.weights]))

        emb = StateEmbedder(3, "learned", 4, (5,), rng)
        agent = SacAgent(4, 2, rng, hiddens=(6, 5), alpha=0.3, proto_bound=1.2)
        _jitter(agent.actor.params + agent.critic_params + emb.params, rng)
        n = 5
        batch = {"state": rng.standard_normal((n, 3)), "action_index": rng.integers(4, size=n),
                 "proto_action": rng.uniform(-1, 1, (n, 2)), "reward": rng.standard_normal(n),
                 "next_state": rng.standard_normal((n, 3)), "done": (rng.random(n) < 0.3).astype(float)}
        nn_, nz = rng.standard_normal((n, 2)), rng.standard_normal((n, 2))
        y = sac_targets(agent, emb, batch, nn_)
        for key, params, pick in (("sac-critic", agent.critic_params, lambda r: (r.critic_loss, r.critic_grads)),
                                  ("sac-actor", agent.actor.params, lambda r: (r.actor_loss, r.actor_grads)),
                                  ("sac-state-embedder", emb.params,
                                   lambda r: (r.critic_loss, r.embedder_grads))):
            errors[key].append(gradient_check(lambda: pick(sac_losses(agent, emb, batch, nn_, nz, targets=y)), params))

        demb = StateEmbedder(3, "learned", 4, (5,), rng)
        dagent = DiscreteSacAgent(4, 4, rng, hiddens=(6, 5), alpha=0.3)
        _jitter(dagent.actor.params + dagent.critic_params + demb.params, rng)
        dy = discrete_sac_losses(dagent, demb, batch).targets
        for key, params, pick in (("discrete-critic", dagent.critic_params, lambda r: (r.critic_loss, r.critic_grads)),
                                  ("discrete-actor", dagent.actor.params, lambda r: (r.actor_loss, r.actor_grads)),
                                  ("discrete-state-embedder", demb.params,
                                   lambda r: (r.critic_loss, r.embedder_grads))):
            errors[key].append(gradient_check(lambda: pick(discrete_sac_losses(dagent, demb, batch, targets=dy)), params))
    elapsed = time.perf_counter() - start
    worst = {k: max(v) for k, v in errors.items()}
    count = min(len(v) for v in errors.values())
    ok = all(w < 1e-4 for w in worst.values()) and count >= 20 and elapsed < 60
    record(1, ok, f"max rel err {max(worst.values()):.2e} over {count} instances/loss, {elapsed:.1f}s")
    assert ok, (worst, elapsed)


# ------------------------------------------------------------- criterion 2


def test_criterion_02_loss_reduction():
    exact = 0
    for seed in range(100):
        rng = np.random.default_rng(seed)
        sd, ad, k = int(rng.integers(2, 10)), int(rng.integers(1, 5)), int(rng.integers(2, 20))
        det = TransitionModel(sd, ad, rng, hiddens=(16, 8))
        lat = TransitionModel(sd, ad, rng, hiddens=(16, 8), mode="latent", z_dim=int(rng.integers(1, 6)), beta=0.0)
        # same decoder on the shared inputs; z columns keep random weights
        lat.decoder.weights[0][:, : sd + ad] = det.decoder.weights[0]
        for dst, src in zip(lat.decoder.params[1:], det.decoder.params[1:]):
            dst[...] = src
        table = ActionEmbeddingTable(k, ad, rng, init_scale=1.0)
        n = int(rng.integers(1, 64))
        s, a, s2 = rng.standard_normal((n, sd)), rng.integers(k, size=n), rng.standard_normal((n, sd))
        exact += embedding_loss(det, table, s, a, s2) == embedding_loss(lat, table, s, a, s2, zero_z=True)
    record(2, exact == 100, f"{exact}/100 batches bit-equal")
    assert exact == 100


# ---------------------------------------------------------- criteria 3 & 4

_EMBED_HP = Hyperparams(action_embed_dim=4, embed_samples=10_000, embed_epochs=50)
_ANALOGY = ([_combo(UP, UP, LEFT), _combo(UP, LEFT, RIGHT)], [_combo(LEFT, RIGHT, LEFT)], (0, 3))


@pytest.fixture(scope="module")
def gridworld3_tables():
    start = time.perf_counter()
    runs = [offline_embeddings({"family": "gridworld", "n_steps": 3}, _EMBED_HP, s) for s in SEEDS]
    return runs, time.perf_counter() - start


def test_criterion_03_embedding_semantics(gridworld3_tables):
    runs, elapsed = gridworld3_tables
    labels = displacement_labels(3)
    groups = len(set(labels))
    ratios = [cluster_quality(r.table.weights, labels)[2] for r in runs]
    passes = sum(r < 0.5 for r in ratios)
    ok = passes >= 4 and groups == 16 and elapsed < 300
    record(3, ok, f"ratios {[round(r, 3) for r in ratios]}, {passes}/5 < 0.5, {groups} groups, {elapsed:.0f}s")
    assert ok


def test_criterion_04_analogy(gridworld3_tables):
    runs, _ = gridworld3_tables
    plus, minus, expected = _ANALOGY
    labels = displacement_labels(3)
    trained = [analogy_check(r.table, plus, minus, expected, labels.__getitem__) for r in runs]
    control = [analogy_check(ActionEmbeddingTable(64, 4, np.random.default_rng(1000 + s)), plus, minus, expected,
                             labels.__getitem__) for s in SEEDS]
    ok = sum(trained) >= 3 and sum(control) <= 1
    record(4, ok, f"trained {sum(trained)}/5, random control {sum(control)}/5")
    assert ok


# ---------------------------------------------------------- criteria 5 & 6

_GRID2 = {"family": "gridworld", "n_steps": 2}
_GRID1 = {"family": "gridworld", "n_steps": 1}


@pytest.fixture(scope="module")
def same_domain_runs():
    hp = Hyperparams()
    start = time.perf_counter()
    out = {"none": [], "pt": [], "p": [], "sources": [], "pt_art": []}
    for seed in SEEDS:
        _, source = train_trace(_GRID2, hp, SOURCE_EPISODES, seed)
        out["sources"].append(source)
        for name in ("none", "pt", "p"):
            res, art = transfer_trace(source, _GRID1, TransferConfig.preset(name), hp, TARGET_EPISODES, seed + 100)
            out[name].append(res.returns)
            if name == "pt":
                out["pt_art"].append(art)
    out["elapsed"] = time.perf_counter() - start
    return out


def test_criterion_05_same_domain_speedup(same_domain_runs):
    r = same_domain_runs
    hits = {k: [episodes_to_threshold(c, THRESHOLD, WINDOW) for c in r[k]] for k in ("none", "pt", "p")}
    med = {k: _median_hits(v) for k, v in hits.items()}
    ok = med["pt"] < med["none"] and med["pt"] <= med["p"] and r["elapsed"] <= 1800
    record(5, ok, f"median episodes-to-{THRESHOLD}: PT {med['pt']}, P {med['p']}, none {med['none']} "
                  f"(per seed {hits}), {r['elapsed']:.0f}s")
    assert ok


def test_criterion_06_alignment(same_domain_runs):
    src_labels, tgt_labels = displacement_labels(2), displacement_labels(1)
    per_seed, midpoint = [], []
    for source, art in zip(same_domain_runs["sources"], same_domain_runs["pt_art"]):
        assert art.model.frozen
        per_seed.append(sum(alignment_check(source.table, src_labels, art.table, tgt_labels)))
        mid = 0.5 * source.table.weights[_combo(UP, UP)] + 0.5 * source.table.weights[_combo(UP, DOWN)]
        midpoint.append(nearest_action(art.table, mid) == UP)
    aligned_seeds = sum(c >= 3 for c in per_seed)
    ok = aligned_seeds >= 3 and sum(midpoint) >= 3
    record(6, ok, f"aligned atomic actions per seed {per_seed} ({aligned_seeds}/5 with >= 3), "
                  f"midpoint relation {sum(midpoint)}/5")
    assert ok


# ------------------------------------------------------------- criterion 7

_COORDS = {"family": "gridworld", "n_steps": 1, "encoding": "coords"}
_ONEHOT = {"family": "gridworld", "n_steps": 1, "encoding": "onehot"}


def test_criterion_07_cross_domain():
    # linear embedders: a one-hot linear map can reproduce any coordinate-additive
    # common space the coords source learns
    hp = Hyperparams(state_embed_dim=5, state_embed_hiddens=[])
    hits, finals = {"pt": [], "none": []}, {"pt": [], "frozen": []}
    for seed in SEEDS:
        _, source = train_trace(_COORDS, hp, CROSS_SOURCE_EPISODES, seed, learned_state=True)
        for name, cfg in (("pt", TransferConfig.preset("pt-finetune")), ("frozen", TransferConfig.preset("pt")),
                          ("none", TransferConfig.preset("none"))):
            res, art = transfer_trace(source, _ONEHOT, cfg, hp, CROSS_TARGET_EPISODES, seed + 100, cross_domain=True)
            assert art.embedder.state_dim == 44 and art.embedder.output_dim == 5
            if name in hits:
                hits[name].append(episodes_to_threshold(res.returns, THRESHOLD, WINDOW))
            if name in finals:
                finals[name].append(float(np.mean(res.returns[-WINDOW:])))
    med_pt, med_none = _median_hits(hits["pt"]), _median_hits(hits["none"])
    fin_pt, fin_frozen = float(np.median(finals["pt"])), float(np.median(finals["frozen"]))
    speed_ok, freeze_ok = med_pt < med_none, fin_frozen < fin_pt
    record(7, speed_ok and freeze_ok,
           f"median episodes-to-{THRESHOLD}: PT {med_pt} vs none {med_none} ({hits}); "
           f"median final return frozen {fin_frozen:.2f} vs finetuned {fin_pt:.2f}")
    assert speed_ok and freeze_ok


# ------------------------------------------------------------- criterion 8


def test_criterion_08_cartpole_linearity():
    hp = Hyperparams(action_embed_dim=3, embed_samples=20_000)
    rhos = [monotonicity_check(offline_embeddings({"family": "cartpole", "force_levels": 21}, hp, s).table)
            for s in SEEDS]
    passes = sum(r > 0.9 for r in rhos)
    record(8, passes >= 4, f"|rho| {[round(r, 3) for r in rhos]}, {passes}/5 > 0.9")
    assert passes >= 4


# ------------------------------------------------------------- criterion 9


def test_criterion_09_dimension_sensitivity():
    finals = {1: [], 2: []}
    for d in (1, 2):
        hp = Hyperparams(action_embed_dim=d)
        for seed in SEEDS[:3]:
            res, _ = train_trace(_GRID2, hp, DIM_EPISODES, seed)
            finals[d].append(float(np.mean(res.returns[-WINDOW:])))
    gap = float(np.median(finals[2]) - np.median(finals[1]))
    record(9, gap > 2.0, f"final 100-episode means d=1 {np.round(finals[1], 2).tolist()}, "
                         f"d=2 {np.round(finals[2], 2).tolist()}, median gap {gap:.2f}")
    assert gap > 2.0


# ------------------------------------------------------------ criterion 10


def test_criterion_10_determinism_and_persistence(tmp_path):
    cfg = {"env": _GRID2, "algorithm": "trace", "seeds": [3, 4], "budget": 30,
           "hyperparameters": {"warmup_steps": 100, "batch_size": 32, "ac_hiddens": [16, 16]},
           "output_dir": str(tmp_path / "a")}
    (tmp_path / "cfg.json").write_text(json.dumps(cfg))
    assert main(["train", "--config", str(tmp_path / "cfg.json"), "--quiet"]) == 0
    assert main(["train", "--config", str(tmp_path / "a" / "manifest.json"), "--out", str(tmp_path / "b"),
                 "--quiet"]) == 0
    tcfg = dict(cfg, env=_GRID1, transfer={"transfer_policy": True, "transfer_transition": True,
                                           "freeze_transition": True}, output_dir=str(tmp_path / "t1"))
    (tmp_path / "tcfg.json").write_text(json.dumps(tcfg))
    src = str(tmp_path / "a" / "seed_3" / "checkpoint.trc")
    assert main(["transfer", "--config", str(tmp_path / "tcfg.json"), "--source-checkpoint", src, "--quiet"]) == 0
    assert main(["transfer", "--config", str(tmp_path / "t1" / "manifest.json"), "--out", str(tmp_path / "t2"),
                 "--quiet"]) == 0
    curves_equal = all(
        (tmp_path / x / f"seed_{s}" / "curve.csv").read_bytes() == (tmp_path / y / f"seed_{s}" / "curve.csv").read_bytes()
        for x, y in (("a", "b"), ("t1", "t2")) for s in (3, 4))
    blobs_equal = []
    for run in ("a", "t1"):
        for s in (3, 4):
            blob = (tmp_path / run / f"seed_{s}" / "checkpoint.trc").read_bytes()
            art, header = loads(blob)
            again = dumps(art, config=header["config"], rng_state=header["rng_state"], episode=header["episode"],
                          extra=header["extra"])
            blobs_equal.append(again == blob)
    ok = curves_equal and all(blobs_equal)
    record(10, ok, f"curve CSVs bit-identical on rerun: {curves_equal}; "
                   f"checkpoint save/load/save identical: {sum(blobs_equal)}/{len(blobs_equal)}")
    assert ok

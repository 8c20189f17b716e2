"""Command-line front end: train, transfer, embed, analyze.

Exit codes: 0 success, 2 configuration error, 3 runtime failure.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import logging
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path
from typing import Any, Callable

import numpy as np

from . import __version__
from .analysis import (CurveEnsemble, bootstrap_band, cluster_quality, episodes_to_threshold,
                       monotonicity_check, pca_project)
from .checkpoint import CheckpointError, load_checkpoint, save_checkpoint
from .config import ConfigError, ExperimentConfig, TransferConfig, load_config
from .embedding import ActionEmbeddingTable
from .experiments import displacement_labels, offline_embeddings, train_discrete, train_trace, transfer_trace
from .transfer import INIT, ROLLOUT, TraceArtifacts, sub_seed

log = logging.getLogger("trace_rl")

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME = 0, 2, 3
MANIFEST_VERSION = 1


class RunError(RuntimeError):
    """Failure while executing an otherwise valid experiment."""


# ------------------------------------------------------------------ output


def write_curve(path: Path, returns, steps) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["episode", "return", "steps"])
        for i, (r, s) in enumerate(zip(returns, steps), start=1):
            w.writerow([i, repr(float(r)), int(s)])


def read_curve(path: str | Path) -> list[float]:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    if not rows or "return" not in rows[0]:
        raise ValueError(f"{path}: not a curve CSV (needs a 'return' column)")
    return [float(r["return"]) for r in rows]


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def _write_json(path: Path, obj: Any) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


# ------------------------------------------------------------- seed workers


def _seed_header(cfg: ExperimentConfig, seed: int, episodes: int) -> dict:
    return {
        "config": cfg.to_dict(),
        "rng_state": {"seed": seed, "init_seed": sub_seed(seed, INIT), "rollout_seed": sub_seed(seed, ROLLOUT)},
        "episode": episodes,
    }


def _train_seed(cfg: ExperimentConfig, seed: int, out: Path) -> dict:
    hp = cfg.hyperparameters
    seed_dir = out / f"seed_{seed}"
    seed_dir.mkdir(parents=True, exist_ok=True)
    if cfg.algorithm == "sac-discrete":
        result, art = train_discrete(cfg.env, hp, cfg.budget, seed)
    else:
        result, art = train_trace(cfg.env, hp, cfg.budget, seed, learned_state=hp.state_embed_dim is not None)
    return _finish_seed(cfg, seed, seed_dir, result, art)


def _transfer_seed(cfg: ExperimentConfig, seed: int, out: Path, source_path: str) -> dict:
    source, _ = load_checkpoint(source_path)
    hp = cfg.hyperparameters
    seed_dir = out / f"seed_{seed}"
    seed_dir.mkdir(parents=True, exist_ok=True)
    tcfg = TransferConfig() if cfg.algorithm == "trace-no-transfer" else cfg.transfer
    cross = isinstance(source, TraceArtifacts) and source.embedder.mode == "learned"
    result, art = transfer_trace(source, cfg.env, tcfg, hp, cfg.budget, seed, cross_domain=cross)
    return _finish_seed(cfg, seed, seed_dir, result, art)


def _finish_seed(cfg, seed, seed_dir: Path, result, art) -> dict:
    files = {"curve": seed_dir / "curve.csv", "checkpoint": seed_dir / "checkpoint.trc"}
    write_curve(files["curve"], result.returns, result.steps)
    save_checkpoint(files["checkpoint"], art, **_seed_header(cfg, seed, len(result.returns)))
    if isinstance(art, TraceArtifacts):
        files["embeddings"] = seed_dir / "embeddings.csv"
        art.table.to_csv(files["embeddings"])
    tail = result.returns[-100:]
    return {
        "seed": seed,
        "episodes": len(result.returns),
        "total_steps": result.total_steps,
        "final_mean_return": float(np.mean(tail)) if tail else None,
        "files": {k: str(v.relative_to(seed_dir.parent)) for k, v in files.items()},
        "sha256": {k: _sha256(v) for k, v in files.items()},
    }


def _embed_seed(cfg: ExperimentConfig, seed: int, out: Path) -> dict:
    seed_dir = out / f"seed_{seed}"
    seed_dir.mkdir(parents=True, exist_ok=True)
    run = offline_embeddings(cfg.env, cfg.hyperparameters, seed)
    files = {"embeddings": seed_dir / "embeddings.csv", "loss_history": seed_dir / "loss_history.csv"}
    run.table.to_csv(files["embeddings"])
    with open(files["loss_history"], "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["epoch", "loss"])
        for i, loss in enumerate(run.history, start=1):
            w.writerow([i, repr(float(loss))])
    return {
        "seed": seed,
        "final_loss": run.history[-1] if run.history else None,
        "initial_loss": run.history[0] if run.history else None,
        "files": {k: str(v.relative_to(out)) for k, v in files.items()},
        "sha256": {k: _sha256(v) for k, v in files.items()},
    }


def _worker_count(n_jobs: int) -> int:
    raw = os.environ.get("TRACE_RL_THREADS", "1")
    try:
        cap = int(raw)
    except ValueError:
        raise ConfigError(f"TRACE_RL_THREADS must be an integer, got {raw!r}") from None
    return max(1, min(cap, n_jobs))


def _run_seeds(fn: Callable, cfg: ExperimentConfig, out: Path, *extra) -> list[dict]:
    workers = _worker_count(len(cfg.seeds))
    if workers == 1:
        runs = []
        for seed in cfg.seeds:
            log.info("seed %d ...", seed)
            runs.append(fn(cfg, seed, out, *extra))
        return runs
    with ProcessPoolExecutor(max_workers=workers) as pool:
        futures = [pool.submit(fn, cfg, seed, out, *extra) for seed in cfg.seeds]
        return [f.result() for f in futures]


# ---------------------------------------------------------------- commands


def _load(args) -> tuple[ExperimentConfig, dict]:
    """Config from ``--config`` (a config file or an earlier run's manifest)."""
    path = Path(args.config)
    if not path.exists():
        raise ConfigError(f"{path}: no such file")
    try:
        raw = json.loads(path.read_text())
    except json.JSONDecodeError:
        raw = None
    manifest = {}
    if isinstance(raw, dict) and "manifest_version" in raw:
        manifest = raw
        try:
            cfg = ExperimentConfig.from_dict(raw["config"])
        except (ConfigError, TypeError) as exc:
            raise ConfigError(f"{path}: {exc}") from None
    else:
        cfg = load_config(path)
    if args.seeds:
        try:
            cfg.seeds = [int(s) for s in args.seeds.split(",") if s.strip()]
        except ValueError:
            raise ConfigError(f"--seeds must be comma-separated integers, got {args.seeds!r}") from None
        if not cfg.seeds:
            raise ConfigError("--seeds is empty")
    if args.out:
        cfg.output_dir = args.out
    return cfg, manifest


def _manifest(command: str, cfg: ExperimentConfig, runs: list[dict], **extra) -> dict:
    return {
        "manifest_version": MANIFEST_VERSION,
        "command": command,
        "package_version": __version__,
        "config": cfg.to_dict(),
        "seeds": list(cfg.seeds),
        "runs": runs,
        **extra,
    }


def cmd_train(args) -> int:
    cfg, _ = _load(args)
    if cfg.algorithm == "bt":
        raise ConfigError("algorithm 'bt' is a transfer baseline; use the transfer command")
    if cfg.hyperparameters.state_embed_dim is not None and cfg.algorithm == "sac-discrete":
        raise ConfigError("sac-discrete does not use a state embedder; unset state_embed_dim")
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    runs = _run_seeds(_train_seed, cfg, out)
    _write_json(out / "manifest.json", _manifest("train", cfg, runs))
    log.info("wrote %d runs to %s", len(runs), out)
    return EXIT_OK


def _check_source(cfg: ExperimentConfig, header: dict, source) -> None:
    src_cfg = header.get("config") or {}
    src_family = (src_cfg.get("env") or {}).get("family")
    if src_family is not None and src_family != cfg.env_family:
        raise ConfigError(f"source checkpoint is for env family {src_family!r}, config declares {cfg.env_family!r}")
    if cfg.algorithm == "bt":
        if isinstance(source, TraceArtifacts):
            raise ConfigError("bt needs a sac-discrete source checkpoint")
        return
    if not isinstance(source, TraceArtifacts):
        raise ConfigError("TRACE transfer needs a TRACE source checkpoint")
    hp = cfg.hyperparameters
    if source.table.dim != hp.action_embed_dim:
        raise ConfigError(f"source action_embed_dim {source.table.dim} != config {hp.action_embed_dim}")
    if list(source.agent.hiddens) != list(hp.ac_hiddens):
        raise ConfigError(f"source ac_hiddens {list(source.agent.hiddens)} != config {hp.ac_hiddens}")
    if source.embedder.mode == "learned" and hp.state_embed_dim != source.embedder.output_dim:
        raise ConfigError(
            f"source common-space width {source.embedder.output_dim} != config state_embed_dim {hp.state_embed_dim}")


def cmd_transfer(args) -> int:
    cfg, manifest = _load(args)
    source_path = args.source_checkpoint or manifest.get("source_checkpoint")
    if not source_path:
        raise ConfigError("transfer needs --source-checkpoint")
    if cfg.algorithm == "sac-discrete":
        raise ConfigError("algorithm 'sac-discrete' has no transfer path; use 'bt'")
    try:
        source, header = load_checkpoint(source_path)
    except (OSError, CheckpointError) as exc:
        raise ConfigError(f"cannot load source checkpoint: {exc}") from None
    _check_source(cfg, header, source)
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    runs = _run_seeds(_transfer_seed, cfg, out, str(source_path))
    extra = {
        "source_checkpoint": str(source_path),
        "source_sha256": _sha256(Path(source_path)),
        "transfer": cfg.to_dict()["transfer"],
        "budget": cfg.budget,
    }
    _write_json(out / "manifest.json", _manifest("transfer", cfg, runs, **extra))
    log.info("wrote %d transfer runs to %s", len(runs), out)
    return EXIT_OK


def cmd_embed(args) -> int:
    cfg, _ = _load(args)
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    runs = _run_seeds(_embed_seed, cfg, out)
    _write_json(out / "manifest.json", _manifest("embed", cfg, runs))
    log.info("wrote %d embedding tables to %s", len(runs), out)
    return EXIT_OK


def _group_fn(spec: str | None, count: int):
    if spec is None:
        return None
    kind, _, arg = spec.partition(":")
    if kind != "gridworld" or not arg.isdigit():
        raise ConfigError(f"--groups must look like gridworld:N, got {spec!r}")
    labels = displacement_labels(int(arg))
    if len(labels) != count:
        raise ConfigError(f"--groups {spec} implies {len(labels)} actions, table has {count}")
    return labels


def cmd_analyze(args) -> int:
    if not args.tables and not args.curves:
        raise ConfigError("analyze needs --tables and/or --curves")
    report: dict[str, Any] = {"package_version": __version__}
    out_dir = Path(args.out) if args.out else None
    if out_dir:
        out_dir.mkdir(parents=True, exist_ok=True)
    tables = []
    for path in args.tables or []:
        try:
            table = ActionEmbeddingTable.from_csv(path)
        except (OSError, ValueError, IndexError) as exc:
            raise RunError(f"cannot read table {path}: {exc}") from None
        entry: dict[str, Any] = {"path": str(path), "actions": table.action_count, "dim": table.dim}
        proj = pca_project(table.weights, min(2, table.dim))
        entry["explained_variance_ratio"] = proj.explained_variance_ratio.tolist()
        entry["monotonicity_abs_spearman"] = monotonicity_check(table)
        labels = _group_fn(args.groups, table.action_count)
        if labels is not None:
            intra, inter, ratio = cluster_quality(table.weights, labels)
            entry["cluster"] = {"intra": intra, "inter": inter, "ratio": ratio, "groups": len(set(labels))}
        if out_dir:
            name = f"projection_{len(tables)}.csv"
            with open(out_dir / name, "w", newline="") as fh:
                w = csv.writer(fh)
                w.writerow(["action_index"] + [f"pc_{j}" for j in range(proj.projected.shape[1])])
                for i, row in enumerate(proj.projected):
                    w.writerow([i] + [repr(float(v)) for v in row])
            entry["projection_csv"] = name
        tables.append(entry)
    if tables:
        report["tables"] = tables
    if args.curves:
        try:
            curves = [read_curve(p) for p in args.curves]
        except (OSError, ValueError, KeyError) as exc:
            raise RunError(str(exc)) from None
        hits = [episodes_to_threshold(c, args.threshold, args.window) for c in curves]
        finite = [h for h in hits if h is not None]
        report["curves"] = {
            "paths": [str(p) for p in args.curves],
            "threshold": args.threshold,
            "window": args.window,
            "episodes_to_threshold": hits,
            "median_episodes_to_threshold": float(np.median(finite)) if len(finite) == len(hits) else None,
        }
        if out_dir:
            mean, low, high = bootstrap_band(CurveEnsemble.from_curves(curves), seed=args.bootstrap_seed)
            with open(out_dir / "band.csv", "w", newline="") as fh:
                w = csv.writer(fh)
                w.writerow(["episode", "mean", "low", "high"])
                for i, row in enumerate(zip(mean, low, high), start=1):
                    w.writerow([i] + [repr(float(v)) for v in row])
            report["curves"]["band_csv"] = "band.csv"
    text = json.dumps(report, indent=2, sort_keys=True)
    if out_dir:
        (out_dir / "report.json").write_text(text + "\n")
    if not args.quiet:
        print(text)
    return EXIT_OK


# -------------------------------------------------------------------- main


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="trace-rl", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, config=True):
        if config:
            p.add_argument("--config", required=True, help="experiment config JSON or a run manifest")
            p.add_argument("--seeds", help="comma-separated seed list overriding the config")
        p.add_argument("--out", help="output directory (overrides output_dir)")
        p.add_argument("--quiet", action="store_true", help="only report errors")

    common(sub.add_parser("train", help="train TRACE or discrete SAC from scratch"))
    p = sub.add_parser("transfer", help="train on a target task starting from a source checkpoint")
    common(p)
    p.add_argument("--source-checkpoint", help="checkpoint written by the train command")
    common(sub.add_parser("embed", help="fit action embeddings offline from random-policy data"))
    p = sub.add_parser("analyze", help="metrics for embedding tables and learning curves")
    common(p, config=False)
    p.add_argument("--tables", nargs="+", help="embedding table CSVs")
    p.add_argument("--groups", help="label actions by net displacement, e.g. gridworld:3")
    p.add_argument("--curves", nargs="+", help="curve CSVs (one per seed)")
    p.add_argument("--threshold", type=float, default=8.0)
    p.add_argument("--window", type=int, default=100)
    p.add_argument("--bootstrap-seed", type=int, default=0)
    return parser


COMMANDS = {"train": cmd_train, "transfer": cmd_transfer, "embed": cmd_embed, "analyze": cmd_analyze}


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING if args.quiet else logging.INFO,
                        format="%(levelname)s %(message)s", stream=sys.stderr)
    try:
        return COMMANDS[args.command](args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (RunError, ValueError, FloatingPointError, OSError, CheckpointError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())

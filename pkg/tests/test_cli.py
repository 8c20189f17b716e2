import json
import subprocess
import sys

from trace_rl.cli import main, read_curve

SMALL_HP = {"warmup_steps": 50, "batch_size": 16, "ac_hiddens": [16, 16], "hiddens": [16, 8]}


def _write(path, obj):
    path.write_text(json.dumps(obj))
    return str(path)


def _cfg(tmp_path, name="cfg.json", **over):
    cfg = {"env": {"family": "gridworld", "n_steps": 2}, "algorithm": "trace", "seeds": [1, 2, 3], "budget": 6,
           "hyperparameters": SMALL_HP, "output_dir": str(tmp_path / "out")}
    cfg.update(over)
    return _write(tmp_path / name, cfg)


def test_train_writes_one_set_per_seed(tmp_path):
    assert main(["train", "--config", _cfg(tmp_path), "--quiet"]) == 0
    out = tmp_path / "out"
    assert sorted(p.parent.name for p in out.glob("seed_*/curve.csv")) == ["seed_1", "seed_2", "seed_3"]
    assert len(list(out.glob("seed_*/checkpoint.trc"))) == 3
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["seeds"] == [1, 2, 3] and manifest["command"] == "train"
    assert len(read_curve(out / "seed_1" / "curve.csv")) == 6
    assert set(manifest["runs"][0]["sha256"]) == {"curve", "checkpoint", "embeddings"}


def test_train_rerun_bit_identical(tmp_path):
    # same config, same output_dir (the checkpoint header records it)
    cfg = _cfg(tmp_path, seeds=[5])
    assert main(["train", "--config", cfg, "--quiet"]) == 0
    (tmp_path / "out").rename(tmp_path / "first")
    assert main(["train", "--config", cfg, "--quiet"]) == 0
    for name in ("seed_5/curve.csv", "seed_5/checkpoint.trc", "seed_5/embeddings.csv", "manifest.json"):
        assert (tmp_path / "first" / name).read_bytes() == (tmp_path / "out" / name).read_bytes()


def test_parallel_workers_match_serial(tmp_path, monkeypatch):
    assert main(["train", "--config", _cfg(tmp_path), "--seeds", "1,2", "--out", str(tmp_path / "s"), "--quiet"]) == 0
    monkeypatch.setenv("TRACE_RL_THREADS", "2")
    assert main(["train", "--config", _cfg(tmp_path), "--seeds", "1,2", "--out", str(tmp_path / "p"), "--quiet"]) == 0
    for s in (1, 2):
        assert (tmp_path / f"s/seed_{s}/curve.csv").read_bytes() == (tmp_path / f"p/seed_{s}/curve.csv").read_bytes()


def test_discrete_train(tmp_path):
    assert main(["train", "--config", _cfg(tmp_path, algorithm="sac-discrete", seeds=[0]), "--quiet"]) == 0
    assert not (tmp_path / "out/seed_0/embeddings.csv").exists()


def test_config_errors_exit_2(tmp_path, capsys):
    bad = _write(tmp_path / "bad.json", {"env": {"family": "gridworld"}, "algorithm": "trace", "seeds": [1]})
    assert main(["train", "--config", bad]) == 2
    assert "budget" in capsys.readouterr().err
    assert main(["train", "--config", str(tmp_path / "missing.json")]) == 2
    assert main(["train", "--config", _cfg(tmp_path), "--seeds", "a,b"]) == 2
    (tmp_path / "broken.json").write_text("{\n\n  oops")
    assert main(["train", "--config", str(tmp_path / "broken.json")]) == 2
    assert "broken.json:3:" in capsys.readouterr().err


def test_transfer_flow_and_errors(tmp_path):
    assert main(["train", "--config", _cfg(tmp_path, seeds=[0]), "--quiet"]) == 0
    src = str(tmp_path / "out/seed_0/checkpoint.trc")
    tcfg = _cfg(tmp_path, "t.json", env={"family": "gridworld", "n_steps": 1}, seeds=[7, 8],
                transfer={"transfer_policy": True, "transfer_transition": True, "freeze_transition": True},
                output_dir=str(tmp_path / "t"))
    assert main(["transfer", "--config", tcfg, "--source-checkpoint", src, "--quiet"]) == 0
    manifest = json.loads((tmp_path / "t/manifest.json").read_text())
    assert manifest["source_checkpoint"] == src and manifest["budget"] == 6
    assert manifest["transfer"]["freeze_transition"] is True
    assert len(list((tmp_path / "t").glob("seed_*/curve.csv"))) == 2
    # no source
    assert main(["transfer", "--config", tcfg, "--quiet"]) == 2
    # embedding width mismatch
    bad = _cfg(tmp_path, "b.json", env={"family": "gridworld", "n_steps": 1},
               hyperparameters=dict(SMALL_HP, action_embed_dim=3))
    assert main(["transfer", "--config", bad, "--source-checkpoint", src, "--quiet"]) == 2
    # wrong env family
    cp = _cfg(tmp_path, "c.json", env={"family": "cartpole"})
    assert main(["transfer", "--config", cp, "--source-checkpoint", src, "--quiet"]) == 2
    # unreadable checkpoint
    (tmp_path / "junk.trc").write_bytes(b"junk")
    assert main(["transfer", "--config", tcfg, "--source-checkpoint", str(tmp_path / "junk.trc"), "--quiet"]) == 2


def test_bt_transfer(tmp_path):
    assert main(["train", "--config", _cfg(tmp_path, algorithm="sac-discrete", seeds=[0]), "--quiet"]) == 0
    src = str(tmp_path / "out/seed_0/checkpoint.trc")
    tcfg = _cfg(tmp_path, "t.json", env={"family": "gridworld", "n_steps": 1}, algorithm="bt", seeds=[1],
                output_dir=str(tmp_path / "t"))
    assert main(["transfer", "--config", tcfg, "--source-checkpoint", src, "--quiet"]) == 0
    trace_cfg = _cfg(tmp_path, "u.json", env={"family": "gridworld", "n_steps": 1}, seeds=[1])
    assert main(["transfer", "--config", trace_cfg, "--source-checkpoint", src, "--quiet"]) == 2


def test_embed_and_analyze(tmp_path, capsys):
    cfg = _cfg(tmp_path, seeds=[0, 1], env={"family": "gridworld", "n_steps": 2},
               hyperparameters={"embed_samples": 400, "embed_epochs": 3, "batch_size": 64})
    assert main(["embed", "--config", cfg, "--quiet"]) == 0
    out = tmp_path / "out"
    history = (out / "seed_0/loss_history.csv").read_text().splitlines()
    assert history[0] == "epoch,loss" and len(history) == 4
    assert main(["embed", "--config", cfg, "--out", str(tmp_path / "again"), "--quiet"]) == 0
    assert (out / "seed_1/embeddings.csv").read_bytes() == (tmp_path / "again/seed_1/embeddings.csv").read_bytes()

    tables = [str(out / f"seed_{s}/embeddings.csv") for s in (0, 1)]
    assert main(["analyze", "--tables", *tables, "--groups", "gridworld:2", "--out", str(tmp_path / "an"),
                 "--quiet"]) == 0
    report = json.loads((tmp_path / "an/report.json").read_text())
    assert report["tables"][0]["cluster"]["groups"] == 9
    assert (tmp_path / "an/projection_1.csv").exists()
    assert main(["analyze", "--tables", tables[0], "--groups", "gridworld:3", "--quiet"]) == 2


def test_analyze_curves(tmp_path, capsys):
    for s, vals in enumerate([[1, 9, 9, 9], [1, 1, 9, 9]]):
        (tmp_path / f"c{s}.csv").write_text("episode,return,steps\n" + "".join(
            f"{i + 1},{v},1\n" for i, v in enumerate(vals)))
    assert main(["analyze", "--curves", str(tmp_path / "c0.csv"), str(tmp_path / "c1.csv"), "--window", "2",
                 "--threshold", "9", "--out", str(tmp_path / "an")]) == 0
    report = json.loads(capsys.readouterr().out)
    assert report["curves"]["episodes_to_threshold"] == [3, 4]
    assert report["curves"]["median_episodes_to_threshold"] == 3.5
    assert (tmp_path / "an/band.csv").read_text().startswith("episode,mean,low,high")


def test_analyze_bad_inputs(tmp_path):
    assert main(["analyze", "--quiet"]) == 2
    (tmp_path / "bad.csv").write_text("x,y\n1,2\n")
    assert main(["analyze", "--curves", str(tmp_path / "bad.csv"), "--quiet"]) == 3
    assert main(["analyze", "--tables", str(tmp_path / "nope.csv"), "--quiet"]) == 3


def test_console_entry_point():
    proc = subprocess.run([sys.executable, "-m", "trace_rl.cli", "--version"], capture_output=True, text=True)
    assert proc.returncode == 0 and "trace-rl" in proc.stdout
    proc = subprocess.run([sys.executable, "-m", "trace_rl.cli", "bogus"], capture_output=True, text=True)
    assert proc.returncode == 2  # argparse usage error

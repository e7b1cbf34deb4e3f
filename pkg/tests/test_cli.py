import json

import pytest

from trackbench.cli import main
from trackbench.dataset import read_episode
from trackbench.harness import read_metrics_csv

MAP48 = "maps/office_48.pgm"
FAST = ["--fov-radius", "2.0", "--rrt-iterations", "300"]


def test_simulate_writes_episode_and_metrics(tmp_path, capsys):
    out = tmp_path / "ep.jsonl"
    rc = main(["simulate", "--map", MAP48, "--expert", "frontier", "--seed", "0",
               "--steps", "20", "--out", str(out), *FAST])
    assert rc == 0
    record = read_episode(out)
    assert len(record.steps) == 20
    series = read_metrics_csv(tmp_path / "ep.metrics.csv")
    assert len(series["t"]) == 20
    assert "rmse=" in capsys.readouterr().out


def test_simulate_byte_identical_across_runs(tmp_path):
    outs = []
    for name in ("a", "b"):
        out = tmp_path / f"{name}.jsonl"
        rc = main(["simulate", "--map", MAP48, "--expert", "time", "--seed", "3",
                   "--steps", "25", "--out", str(out), *FAST])
        assert rc == 0
        outs.append(out)
    assert outs[0].read_bytes() == outs[1].read_bytes()
    assert (tmp_path / "a.metrics.csv").read_bytes() == \
        (tmp_path / "b.metrics.csv").read_bytes()


def test_config_file_supplies_defaults_flags_win(tmp_path):
    config = {"map": MAP48, "steps": 10, "fov_radius": 2.0, "rrt_iterations": 300}
    cfg_path = tmp_path / "cfg.json"
    cfg_path.write_text(json.dumps(config))
    out = tmp_path / "ep.jsonl"
    rc = main(["simulate", "--config", str(cfg_path), "--expert", "frontier",
               "--seed", "1", "--steps", "12", "--out", str(out)])
    assert rc == 0
    record = read_episode(out)
    assert len(record.steps) == 12  # flag wins over the config file's 10


def test_config_file_rejects_unknown_keys(tmp_path):
    cfg_path = tmp_path / "cfg.json"
    cfg_path.write_text(json.dumps({"map": MAP48, "bogus_key": 1}))
    with pytest.raises(SystemExit):
        main(["simulate", "--config", str(cfg_path), "--expert", "frontier",
              "--seed", "0", "--out", str(tmp_path / "x.jsonl")])


def test_gen_dataset_writes_manifest(tmp_path):
    out_dir = tmp_path / "data"
    rc = main(["gen-dataset", "--map", MAP48, "--experts", "frontier,time",
               "--episodes-per-expert", "1", "--seed", "5", "--steps", "15",
               "--out-dir", str(out_dir), *FAST])
    assert rc == 0
    manifest = json.loads((out_dir / "manifest.json").read_text())
    assert manifest["files"] == ["episode_00000.jsonl", "episode_00001.jsonl"]
    assert manifest["episodes"][0]["expert_id"] == "frontier"
    assert manifest["episodes"][1]["expert_id"] == "time"
    assert manifest["config"]["steps"] == 15
    rec = read_episode(out_dir / "episode_00001.jsonl")
    assert rec.header.expert_id == "time"
    assert rec.header.seed == 6  # base seed 5 + global index 1


def test_evaluate_writes_summary(tmp_path, capsys):
    out = tmp_path / "summary.csv"
    rc = main(["evaluate", "--map", MAP48, "--policy", "frontier",
               "--seeds", "0..1", "--steps", "12", "--out", str(out),
               "--record-dir", str(tmp_path / "rec"), *FAST])
    assert rc == 0
    text = out.read_text().splitlines()
    assert text[0] == "method,seed,rmse,entropy,nll"
    assert len(text) == 1 + 2 + 1  # header + 2 episodes + 1 aggregate
    assert (tmp_path / "rec" / "frontier_seed1.jsonl").exists()
    assert "frontier" in capsys.readouterr().out


def test_replay_cli(tmp_path):
    out = tmp_path / "ep.jsonl"
    main(["simulate", "--map", MAP48, "--expert", "frontier", "--seed", "0",
          "--steps", "8", "--out", str(out), *FAST])
    rc = main(["replay", "--episode", str(out), "--out-dir", str(tmp_path / "plots")])
    assert rc == 0
    assert (tmp_path / "plots" / "trajectory.png").exists()
    assert (tmp_path / "plots" / "entropy.png").exists()


def test_missing_map_is_an_error(tmp_path):
    with pytest.raises(SystemExit):
        main(["simulate", "--expert", "frontier", "--seed", "0",
              "--out", str(tmp_path / "x.jsonl")])

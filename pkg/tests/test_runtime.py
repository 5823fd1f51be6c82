import json
from dataclasses import replace

import numpy as np
import pytest

from epinet.analysis import analyze, coverage, coverage_cells, duplication_rate
from epinet.cli import main
from epinet.errors import ConfigError, IntegrityError, NotFoundError
from epinet.landscape import Landscape
from epinet.runtime import (
    ExperimentConfig,
    RunLog,
    load_config,
    replay,
    run_ablation_independent,
    run_experiment,
)


@pytest.fixture(scope="module")
def small_run():
    return run_experiment(ExperimentConfig(n_agents=6, rounds=4, max_steps=12, seed=11))


def test_config_validation():
    ExperimentConfig().validate()
    with pytest.raises(ConfigError):
        ExperimentConfig(n_agents=3, reviewers_per_paper=2).validate()
    with pytest.raises(ConfigError):
        ExperimentConfig(tournament_size=1).validate()
    with pytest.raises(ConfigError):
        ExperimentConfig(mode="solo").validate()
    with pytest.raises(ConfigError):
        ExperimentConfig(backend="external").validate()
    with pytest.raises(ConfigError):
        ExperimentConfig.from_dict({"agents": 3})


def test_load_config_json_and_toml(tmp_path):
    j = tmp_path / "c.json"
    j.write_text(json.dumps({"n_agents": 8, "landscape": {"dim": 3, "n_peaks": 4, "seed": 1}}))
    cfg = load_config(j)
    assert cfg.n_agents == 8 and cfg.landscape.dim == 3
    t = tmp_path / "c.toml"
    t.write_text('rounds = 5\nmode = "independent"\n[perception]\ndecay_alpha = 0.25\n')
    cfg = load_config(t)
    assert cfg.rounds == 5 and cfg.mode == "independent" and cfg.perception.decay_alpha == 0.25
    bad = tmp_path / "bad.json"
    bad.write_text("{")
    with pytest.raises(ConfigError):
        load_config(bad)


def test_small_k1_run_accepts_everything():
    res = run_experiment(ExperimentConfig(n_agents=3, rounds=1, max_steps=5, reviewers_per_paper=1))
    outs = res.log.of("output/v1")
    assert len(outs) == 3 and all(o["accepted"] for o in outs)


def test_counts_and_log_shape(small_run):
    log = small_run.log
    assert len(log.of("output/v1")) == 24
    assert len(log.of("paper/v1")) == 12 == len(small_run.stores.papers)
    assert len(log.of("barrier/v1")) == 5
    assert log.records[-1]["schema"] == "digest/v1"
    for r in log.of("review/v1"):
        assert 1 <= r["overall"] <= 5


def test_same_seed_same_digest(small_run):
    again = run_experiment(ExperimentConfig(n_agents=6, rounds=4, max_steps=12, seed=11))
    assert again.log.digest == small_run.log.digest
    other = run_experiment(ExperimentConfig(n_agents=6, rounds=4, max_steps=12, seed=12))
    assert other.log.digest != small_run.log.digest


def test_workers_do_not_change_digest(small_run):
    conc = run_experiment(ExperimentConfig(n_agents=6, rounds=4, max_steps=12, seed=11, workers=4))
    assert conc.log.digest == small_run.log.digest


def test_replay_every_barrier(small_run):
    for b, d in enumerate(small_run.barrier_digests):
        assert replay(small_run.log, b).digest() == d
    assert len(replay(small_run.log, 0).papers) == 0
    final = replay(small_run.log, 4)
    assert set(final.papers) == set(small_run.stores.papers)
    with pytest.raises(NotFoundError):
        replay(small_run.log, 99)


def test_log_roundtrip_and_tamper(small_run, tmp_path):
    p = tmp_path / "run.jsonl"
    small_run.log.write(p)
    back = RunLog.load(p)
    assert back.digest == small_run.log.digest
    lines = p.read_text().splitlines()
    p.write_text("\n".join(lines[:-40]) + "\n")
    with pytest.raises(IntegrityError):
        RunLog.load(p)
    tampered = [json.loads(l) for l in lines]
    tampered[5]["barrier"] = 3
    with pytest.raises(IntegrityError):
        RunLog(tampered).verify()


def test_independent_ablation_shape():
    res = run_ablation_independent(ExperimentConfig(n_agents=6, rounds=3, max_steps=12, seed=3))
    outs = res.log.of("output/v1")
    assert all(o["citations"] == [] and o["collab_agent_ids"] == [] for o in outs)
    assert len(res.stores.papers) == 9
    # attention only from review assignments: every weight a sum of decayed 0.1 increments
    assert res.log.of("message/v1") == []
    assert max(res.attention.weights.values()) < 0.1 * 3 + 1e-9


def test_duplication_and_coverage_examples():
    assert duplication_rate([[0.3, 0.3]] * 5) == pytest.approx(4 / 5)
    assert duplication_rate([]) == 0.0
    assert duplication_rate([[0.1, 0.1], [0.9, 0.9]]) == 0.0
    assert coverage([[0.5, 0.5]], 2) == 1 / 400 and len(coverage_cells([[0.5, 0.5]])) == 1
    assert coverage([[1.0, 1.0], [0.999, 0.999]], 2) == 1 / 400


def test_analysis_report(small_run):
    rep = analyze(small_run.log)
    land = Landscape.from_json(small_run.log.of("landscape/v1")[0])
    total = sum(land.values(np.array([p["approach"]]))[0] for p in small_run.log.of("paper/v1"))
    assert rep["cumulative_significance"][-1] == pytest.approx(total, abs=1e-12)
    assert rep["n_outputs"] == 24 and rep["n_accepted"] == 12
    assert len(rep["frontier"]) == 24 and len(rep["network"]) == 4
    assert set(rep["trajectories"]) == set(small_run.stores.profiles)
    assert all(sum(rep["tool_usage"][a].values()) >= 1 for a in rep["tool_usage"])


def test_analysis_rejects_truncated_log(small_run):
    cut = RunLog(small_run.log.records[:-300])
    cut.seal()
    with pytest.raises(IntegrityError):
        analyze(cut)


def test_cli_run_analyze_replay(tmp_path, capsys):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"n_agents": 5, "rounds": 2, "max_steps": 8}))
    log = tmp_path / "run.jsonl"
    assert main(["run", "--config", str(cfg), "--seed", "4", "--out", str(log)]) == 0
    out = json.loads(capsys.readouterr().out)
    assert out["digest"] == RunLog.load(log).digest
    rep = tmp_path / "rep.json"
    assert main(["analyze", "--log", str(log), "--out", str(rep)]) == 0
    assert json.loads(rep.read_text())["n_accepted"] == 4
    capsys.readouterr()
    assert main(["replay", "--log", str(log), "--round", "2"]) == 0
    assert len(json.loads(capsys.readouterr().out)["archive"]) == 4


def test_cli_errors_are_machine_readable(tmp_path, capsys):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"n_agents": 2}))
    assert main(["run", "--config", str(cfg), "--out", str(tmp_path / "x")]) != 0
    err = json.loads(capsys.readouterr().err)
    assert err["error"] == "config_error"
    assert main(["replay", "--log", str(tmp_path / "missing.jsonl"), "--round", "0"]) != 0
    assert "error" in json.loads(capsys.readouterr().err)

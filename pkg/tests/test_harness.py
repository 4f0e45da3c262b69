import csv
import hashlib
import json
import time

import numpy as np
import pytest

from totedge.baselines import (
    DDQNAgent,
    GreedyEFT,
    LocalOnly,
    RandomPolicy,
    double_q_target,
    epsilon_at,
    load_policy,
    train_ddqn,
)
from totedge.cli import cli_main
from totedge.dsac import TrainConfig
from totedge.env import EnvConfig, ToTEnv
from totedge.errors import ConfigError
from totedge.harness import (
    RESULT_HEADER,
    SweepSpec,
    evaluate,
    load_config,
    parse_config,
    run_sweep,
    summarize,
    write_results,
)
from totedge.tot import BS

TINY = EnvConfig(num_sps=2, steps=2, thoughts_per_step=2, frozen=True)


# -- heuristics ------------------------------------------------------------------------


def test_greedy_picks_earliest_qualifying_finish():
    env = ToTEnv(EnvConfig(num_sps=4, steps=2, thoughts_per_step=3, seed=1))
    env.reset()
    for _ in range(6):
        preds = [env.predict(m) for m in range(5)]
        want = min(preds, key=lambda p: (p.finish, p.server)).server
        assert GreedyEFT().act(env) == want
        assert want != BS  # every SP beats the base station's 7.6 s generation
        env.step(want)


def test_greedy_without_sps_is_local():
    env = ToTEnv(EnvConfig(num_sps=0, steps=2, thoughts_per_step=2))
    env.reset()
    assert GreedyEFT().act(env) == BS


def test_greedy_falls_back_to_best_score():
    # a per-thought floor above any SP score leaves only the base station
    env = ToTEnv(EnvConfig(num_sps=4, steps=2, thoughts_per_step=2, score_min=4 * 9.9999))
    env.reset()
    done = False
    while not done:
        a = GreedyEFT().act(env)
        assert a == BS
        *_, done, _ = env.step(a)


def test_local_only_matches_lg_for_every_seed():
    rows = evaluate("local_only", EnvConfig(steps=6, thoughts_per_step=6), range(5))
    assert all(r.t_tot_s == pytest.approx(288.8, rel=1e-12) for r in rows)
    assert all(r.constraint_ok for r in rows)


def test_random_violates_high_threshold_more_often():
    cfg = EnvConfig(num_sps=4, steps=3, thoughts_per_step=3, quality_pct=97)
    rnd = summarize(evaluate("random", cfg, range(40)))[("random", "")]["constraint_rate"]
    loc = summarize(evaluate("local_only", cfg, range(40)))[("local_only", "")]["constraint_rate"]
    assert loc == 1.0 and rnd < loc


def test_constraint_flag_recomputed_from_trace():
    cfg = EnvConfig(num_sps=3, steps=2, thoughts_per_step=2, quality_pct=96)
    for row in evaluate("random", cfg, range(10)):
        env = ToTEnv(cos := cfg.__class__(**{**cfg.to_dict(), "seed": row.seed}))
        env.reset(0)
        rng = np.random.default_rng([row.seed, 0x5EED])
        done = False
        while not done:
            *_, done, info = env.step(RandomPolicy().act(env, rng))
        assert row.constraint_ok == (env.schedule.score.sum() >= cos.threshold)
        assert row.t_tot_s == info["t_tot"]


# -- DDQN ------------------------------------------------------------------------------


def test_epsilon_schedule():
    assert epsilon_at(0, 1000, 1.0, 0.05) == 1.0
    assert epsilon_at(500, 1000, 1.0, 0.05) == pytest.approx(0.05)
    assert epsilon_at(999, 1000, 1.0, 0.05) == pytest.approx(0.05)
    assert epsilon_at(250, 1000, 1.0, 0.05) == pytest.approx(0.525)


def test_double_q_target():
    online = np.array([[1.0, 3.0, 2.0], [0.0, 0.0, 5.0]])
    target = np.array([[10.0, 20.0, 30.0], [7.0, 8.0, 9.0]])
    y = double_q_target(np.array([1.0, 2.0]), np.array([0.0, 1.0]), online, target, 0.5)
    np.testing.assert_allclose(y, [1.0 + 0.5 * 20.0, 2.0])


def test_ddqn_train_and_reload(tmp_path):
    cfg = TrainConfig(episodes=4, hidden=16, warmup=4, batch_size=4)
    agent, rows = train_ddqn(TINY, cfg, tmp_path)
    assert len(rows) == 4 and rows[0]["epsilon"] == 1.0
    policy, env_cfg = load_policy(tmp_path / "checkpoint.npz")
    assert policy.name == "ddqn" and env_cfg == TINY
    s = np.random.default_rng(0).normal(size=TINY.state_dim)
    assert policy.agent.act(s, np.random.default_rng(0), greedy=True)[0] == int(np.argmax(agent.q(s)))


def test_ddqn_greedy_ignores_epsilon(rng):
    agent = DDQNAgent.build(5, 3, TrainConfig(hidden=8), rng)
    s = rng.normal(size=5)
    assert {agent.act(s, rng, greedy=True, epsilon=1.0)[0] for _ in range(20)} == {int(np.argmax(agent.q(s)))}


def test_missing_checkpoint_is_io_error(tmp_path):
    with pytest.raises(FileNotFoundError):
        load_policy(tmp_path / "none.npz")


def test_evaluate_leaves_checkpoint_untouched(tmp_path):
    cfg = TrainConfig(episodes=2, hidden=8, warmup=4, batch_size=4)
    cli_main(["train", "--kind", "sac_mlp", "--out-dir", str(tmp_path)] + _cfg_args(tmp_path, TINY, cfg))
    path = tmp_path / "checkpoint.npz"
    before = hashlib.sha256(path.read_bytes()).hexdigest()
    policy, env_cfg = load_policy(path)
    evaluate(policy, env_cfg, [0, 1])
    assert hashlib.sha256(path.read_bytes()).hexdigest() == before


def test_evaluate_rejects_mismatched_state_dim(tmp_path):
    train_ddqn(TINY, TrainConfig(episodes=1, hidden=8, warmup=4, batch_size=4), tmp_path)
    policy, _ = load_policy(tmp_path / "checkpoint.npz")
    with pytest.raises(ConfigError):
        evaluate(policy, EnvConfig(num_sps=3, steps=2, thoughts_per_step=2), [0])


# -- sweeps ----------------------------------------------------------------------------


def test_sweep_spec_validation():
    with pytest.raises(ConfigError, match="sweep.policies"):
        SweepSpec("num_sps", [2], [0], [])
    with pytest.raises(ConfigError, match="sweep.axis"):
        SweepSpec("bandwidth", [2], [0], ["random"])
    with pytest.raises(ConfigError, match="sweep.seeds"):
        SweepSpec("num_sps", [2], [], ["random"])
    with pytest.raises(ConfigError, match="sweep.extra"):
        SweepSpec.from_dict({"axis": "num_sps", "values": [2], "seeds": [0], "policies": ["random"], "extra": 1})


def test_sweep_rows_ordered_and_paired():
    spec = SweepSpec("thoughts_per_step", [2, 3], [0, 1, 2], ["local_only", "greedy_eft"])
    rows = run_sweep(spec, EnvConfig(num_sps=3, steps=2))
    keys = [(r.value, r.policy, r.seed) for r in rows]
    assert keys == [(v, p, s) for v in (2, 3) for p in ("local_only", "greedy_eft") for s in (0, 1, 2)]
    assert all(not r.error and r.ms_per_decision is None for r in rows)


def test_sweep_records_cell_errors():
    # U=4 with an eleven-state token ladder breaks at reset; the other cell still runs
    spec = SweepSpec("quality_threshold_pct", [50, 150], [0], ["local_only"])
    rows = run_sweep(spec, EnvConfig(num_sps=2, steps=1, thoughts_per_step=1))
    assert rows[0].error == "" and "quality_pct" in rows[1].error


def test_trend_more_sps_not_slower():
    spec = SweepSpec("num_sps", [4, 8], list(range(20)), ["greedy_eft"])
    s = summarize(run_sweep(spec, EnvConfig(steps=3, thoughts_per_step=3)))
    assert s[("greedy_eft", 8)]["t_tot_s"] <= s[("greedy_eft", 4)]["t_tot_s"]


def test_results_csv_round_trip(tmp_path):
    rows = evaluate("greedy_eft", TINY, [0, 1], timing=True)
    write_results(tmp_path / "r.csv", rows)
    with (tmp_path / "r.csv").open() as fh:
        got = list(csv.DictReader(fh))
    assert tuple(got[0]) == RESULT_HEADER
    assert float(got[1]["t_tot_s"]) == rows[1].t_tot_s and float(got[0]["ms_per_decision"]) > 0


# -- config files and CLI --------------------------------------------------------------


def _cfg_args(tmp_path, env_cfg, train_cfg, sweep=None):
    data = {"env": env_cfg.to_dict(), "train": train_cfg.to_dict()}
    if sweep:
        data["sweep"] = sweep
    path = tmp_path / "exp.json"
    path.write_text(json.dumps(data))
    return ["--config", str(path)]


def test_config_parse_errors(tmp_path):
    with pytest.raises(ConfigError, match="bogus"):
        parse_config({"bogus": {}})
    with pytest.raises(ConfigError, match="train.lr"):
        parse_config({"train": {"lr": 1}})
    (tmp_path / "bad.json").write_text("{not json")
    with pytest.raises(ConfigError):
        load_config(tmp_path / "bad.json")
    exp = parse_config({"env": {"num_sps": 3}, "sweep": {"axis": "num_sps", "values": [1], "seeds": [0], "policies": ["random"]}})
    assert exp.env.num_sps == 3 and exp.sweep.values == [1]


def test_cli_help_and_usage_errors(capsys):
    assert cli_main(["--help"]) == 0
    assert cli_main(["nosuch"]) == 2
    assert cli_main(["eval", "--policy", "random", "--bogus-flag"]) == 2


def test_cli_invalid_config_exit_1(tmp_path, capsys):
    (tmp_path / "c.json").write_text(json.dumps({"env": {"num_sps": -2}}))
    assert cli_main(["eval", "--policy", "random", "--config", str(tmp_path / "c.json")]) == 1
    assert "num_sps" in capsys.readouterr().err
    (tmp_path / "d.json").write_text(json.dumps({"train": {"warm_up": 3}}))
    assert cli_main(["train", "--config", str(tmp_path / "d.json"), "--out-dir", str(tmp_path)]) == 1
    assert "train.warm_up" in capsys.readouterr().err


def test_cli_fit(capsys):
    assert cli_main(["fit"]) == 0
    out = json.loads(capsys.readouterr().out)
    assert out["sigma"] == pytest.approx(49.13, rel=1e-6) and out["eta"] == pytest.approx(0.025, rel=1e-6)


def test_cli_fit_from_file(tmp_path, capsys):
    path = tmp_path / "d.csv"
    path.write_text("tokens,score\n50,5.0\n100,8.5\n150,9.5\n")
    assert cli_main(["fit", "--data", str(path)]) == 0
    assert "eta" not in json.loads(capsys.readouterr().out)


def test_cli_trace_matches_eval_csv(tmp_path, capsys):
    assert cli_main(["eval", "--policy", "greedy_eft", "--seeds", "3", "--out-dir", str(tmp_path)]) == 0
    capsys.readouterr()
    assert cli_main(["trace", "--policy", "greedy_eft", "--seed", "3"]) == 0
    trace = json.loads(capsys.readouterr().out)
    with (tmp_path / "eval.csv").open() as fh:
        row = next(csv.DictReader(fh))
    assert float(row["t_tot_s"]) == trace["t_tot_s"]


def test_cli_train_then_eval_pipeline(tmp_path, capsys):
    t0 = time.monotonic()
    cfg = TrainConfig(episodes=5, hidden=32, warmup=8, batch_size=8)
    args = _cfg_args(tmp_path, TINY, cfg)
    assert cli_main(["train", "--kind", "dsac", "--out-dir", str(tmp_path / "run")] + args) == 0
    assert cli_main(["eval", "--checkpoint", str(tmp_path / "run" / "checkpoint.npz"), "--seeds", "0", "1",
                     "--out-dir", str(tmp_path / "run")]) == 0
    assert cli_main(["trace", "--checkpoint", str(tmp_path / "run" / "checkpoint.npz")]) == 0
    assert time.monotonic() - t0 < 60
    with (tmp_path / "run" / "eval.csv").open() as fh:
        assert [r["policy"] for r in csv.DictReader(fh)] == ["dsac", "dsac"]


def test_cli_ledger_flags(tmp_path, capsys):
    cfg = TrainConfig(episodes=1, hidden=8, warmup=4, batch_size=4)
    args = _cfg_args(tmp_path, TINY, cfg)
    out = tmp_path / "run"
    assert cli_main(["train", "--kind", "sac_mlp", "--out-dir", str(out), "--distance-unit", "m",
                     "--actor-q", "q1", "--literal-reward"] + args) == 0
    policy, env_cfg = load_policy(out / "checkpoint.npz")
    assert env_cfg.distance_unit == "m" and env_cfg.literal_reward
    assert policy.agent.cfg.actor_q == "q1"


def test_cli_missing_checkpoint_exit_1(tmp_path, capsys):
    assert cli_main(["eval", "--checkpoint", str(tmp_path / "nope.npz")]) == 1


def test_cli_sweep(tmp_path, capsys):
    sweep = {"axis": "num_sps", "values": [1, 2], "seeds": [0, 1], "policies": ["random", "local_only"]}
    args = _cfg_args(tmp_path, EnvConfig(steps=1, thoughts_per_step=2), TrainConfig(), sweep)
    assert cli_main(["sweep", "--out-dir", str(tmp_path)] + args) == 0
    with (tmp_path / "sweep.csv").open() as fh:
        assert len(list(csv.DictReader(fh))) == 8
    assert cli_main(["sweep", "--out-dir", str(tmp_path)]) == 1  # no sweep section

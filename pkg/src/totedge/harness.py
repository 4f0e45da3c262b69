"""Evaluation, parameter sweeps and experiment config files."""

from __future__ import annotations

import csv
import json
import logging
import math
import time
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

import numpy as np

from .baselines import HEURISTICS, AgentPolicy, train_ddqn
from .dsac import TrainConfig, train_sac
from .env import EnvConfig, ToTEnv
from .errors import ConfigError

log = logging.getLogger(__name__)

LEARNED = ("dsac", "sac_mlp", "ddqn")
POLICY_KINDS = (*LEARNED, *HEURISTICS)
# sweep axis -> EnvConfig field
AXES = {
    "num_sps": "num_sps",
    "thoughts_per_step": "thoughts_per_step",
    "tot_steps": "steps",
    "quality_threshold_pct": "quality_pct",
}
RESULT_HEADER = (
    "policy",
    "axis",
    "value",
    "seed",
    "t_tot_s",
    "score_tot",
    "constraint_ok",
    "ms_per_decision",
    "error",
)


@dataclass
class ResultRow:
    policy: str
    axis: str
    value: object
    seed: int
    t_tot_s: float = math.nan
    score_tot: float = math.nan
    constraint_ok: bool = False
    ms_per_decision: float | None = None
    error: str = ""


def make_policy(policy):
    """Resolve a heuristic name to an instance; policy objects pass through."""
    if isinstance(policy, str):
        if policy not in HEURISTICS:
            raise ConfigError(f"unknown or untrained policy {policy!r}", key="policy")
        return HEURISTICS[policy]()
    return policy


def run_episode(env: ToTEnv, policy, rng, episode: int = 0, clock=None):
    """Roll out one episode; returns the final ``info`` and the per-decision act() times in ns."""
    env.reset(episode)
    done = False
    times = []
    while not done:
        if clock is None:
            action = policy.act(env, rng)
        else:
            t0 = clock()
            action = policy.act(env, rng)
            times.append(clock() - t0)
        _, _, done, info = env.step(action)
    return info, times


def evaluate(policy, env_config: EnvConfig, seeds, episodes: int = 1, timing: bool = False,
             axis: str = "", value="") -> list[ResultRow]:
    """Greedy rollouts of ``policy`` over environment seeds; one row per seed.

    Each seed rebuilds the environment, so seeds differ in SP layout and
    profiles as well as in fading, tokens and DAG payloads.
    """
    policy = make_policy(policy)
    if not len(seeds):
        raise ConfigError("need at least one seed", key="seeds")
    if episodes < 1:
        raise ConfigError("must be >= 1", key="eval_episodes")
    rows = []
    for seed in seeds:
        cfg = replace(env_config, seed=int(seed))
        env = ToTEnv(cfg)
        if isinstance(policy, AgentPolicy) and policy.agent_state_dim() not in (None, env.state_dim):
            raise ConfigError(
                f"policy expects state dim {policy.agent_state_dim()}, environment has {env.state_dim}",
                key="env",
            )
        rng = np.random.default_rng([int(seed), 0x5EED])
        t_tot, score, ok, ns = [], [], [], []
        for ep in range(episodes):
            info, times = run_episode(env, policy, rng, ep, time.perf_counter_ns if timing else None)
            t_tot.append(info["t_tot"])
            score.append(info["score_tot"])
            ok.append(info["score_tot"] >= cfg.threshold)
            ns.extend(times)
        rows.append(
            ResultRow(
                policy=getattr(policy, "name", type(policy).__name__),
                axis=axis,
                value=value,
                seed=int(seed),
                t_tot_s=float(np.mean(t_tot)),
                score_tot=float(np.mean(score)),
                constraint_ok=bool(all(ok)),
                ms_per_decision=float(np.mean(ns)) / 1e6 if timing else None,
            )
        )
    return rows


@dataclass
class SweepSpec:
    axis: str
    values: list
    seeds: list
    policies: list
    eval_episodes: int = 1
    timing: bool = False

    def __post_init__(self):
        if self.axis not in AXES:
            raise ConfigError(f"must be one of {sorted(AXES)}", key="sweep.axis")
        for key in ("values", "seeds", "policies"):
            if not getattr(self, key):
                raise ConfigError("must be nonempty", key=f"sweep.{key}")
        for p in self.policies:
            if p not in POLICY_KINDS:
                raise ConfigError(f"unknown policy {p!r}", key="sweep.policies")
        if self.eval_episodes < 1:
            raise ConfigError("must be >= 1", key="sweep.eval_episodes")

    @classmethod
    def from_dict(cls, data: dict) -> SweepSpec:
        known = {f.name for f in fields(cls)}
        for key in data:
            if key not in known:
                raise ConfigError("unknown key", key=f"sweep.{key}")
        for key in ("axis", "values", "seeds", "policies"):
            if key not in data:
                raise ConfigError("missing", key=f"sweep.{key}")
        return cls(**data)


def train_policy(kind: str, env_config: EnvConfig, train_config: TrainConfig, out_dir=None):
    """Train a learned policy and wrap it for greedy evaluation."""
    if kind == "ddqn":
        agent, rows = train_ddqn(env_config, train_config, out_dir)
    elif kind in ("dsac", "sac_mlp"):
        agent, rows = train_sac(env_config, train_config, kind, out_dir)
    else:
        raise ConfigError(f"{kind!r} is not a learned policy", key="policy")
    return AgentPolicy(agent, kind), rows


def run_sweep(spec: SweepSpec, env_config: EnvConfig, train_config: TrainConfig | None = None) -> list[ResultRow]:
    """Evaluate every (axis value, policy, seed) cell in that order.

    Learned policies are trained once per axis value on ``env_config``'s own
    seed, then evaluated on the sweep seeds.  A failing cell yields rows with
    the message in ``error`` instead of aborting the sweep.
    """
    train_config = train_config or TrainConfig()
    rows: list[ResultRow] = []
    for value in spec.values:
        for kind in spec.policies:
            try:
                cfg = replace(env_config, **{AXES[spec.axis]: value})
                policy = train_policy(kind, cfg, train_config)[0] if kind in LEARNED else make_policy(kind)
                rows.extend(evaluate(policy, cfg, spec.seeds, spec.eval_episodes, spec.timing, spec.axis, value))
            except Exception as exc:  # noqa: BLE001 -- recorded per cell
                log.warning("sweep cell %s=%r policy=%s failed: %s", spec.axis, value, kind, exc)
                msg = f"{type(exc).__name__}: {exc}"
                rows.extend(ResultRow(kind, spec.axis, value, int(s), error=msg) for s in spec.seeds)
    return rows


def _fmt(v):
    if v is None:
        return ""
    if isinstance(v, bool):
        return str(int(v))
    if isinstance(v, float):
        return repr(v)
    return v


def write_results(path, rows) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(RESULT_HEADER)
        for row in rows:
            d = asdict(row)
            writer.writerow([_fmt(d[k]) for k in RESULT_HEADER])


def summarize(rows) -> dict:
    """Mean T_tot / Score_tot per (policy, value), skipping failed cells."""
    groups: dict = {}
    for r in rows:
        if not r.error:
            groups.setdefault((r.policy, r.value), []).append(r)
    return {
        key: {
            "t_tot_s": float(np.mean([r.t_tot_s for r in rs])),
            "score_tot": float(np.mean([r.score_tot for r in rs])),
            "constraint_rate": float(np.mean([r.constraint_ok for r in rs])),
        }
        for key, rs in groups.items()
    }


# -- config files ----------------------------------------------------------------------


@dataclass
class ExperimentConfig:
    env: EnvConfig = field(default_factory=EnvConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    sweep: SweepSpec | None = None


def parse_config(data: dict) -> ExperimentConfig:
    if not isinstance(data, dict):
        raise ConfigError("top level must be an object", key="<root>")
    for key in data:
        if key not in ("env", "train", "sweep"):
            raise ConfigError("unknown key", key=key)
    try:
        env = EnvConfig.from_dict(data.get("env", {}))
        train = TrainConfig.from_dict(data.get("train", {}))
        sweep = SweepSpec.from_dict(data["sweep"]) if "sweep" in data else None
    except TypeError as exc:
        raise ConfigError(str(exc), key="<root>") from exc
    return ExperimentConfig(env, train, sweep)


def load_config(path) -> ExperimentConfig:
    """Read a JSON experiment file with optional ``env``, ``train`` and ``sweep`` sections."""
    try:
        data = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"invalid JSON: {exc}", key=str(path)) from exc
    return parse_config(data)

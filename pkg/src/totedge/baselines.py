"""Reference policies: heuristic schedulers and a double deep Q-network learner.

Every policy exposes ``act(env, rng) -> server`` for the pending thought of a
live :class:`~totedge.env.ToTEnv`; learned policies act greedily.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .dsac import ReplayBuffer, TrainConfig, check_reward_accounting, critic_loss_and_grads, write_metrics
from .env import EnvConfig, ToTEnv
from .errors import ConfigError, TrainingError
from .nn import AdamState, DenseNet, adam_step, load_checkpoint, save_checkpoint, soft_update
from .tot import BS

log = logging.getLogger(__name__)

DDQN_METRICS_HEADER = ("episode", "reward_sum", "t_tot_s", "score_tot", "q_loss", "epsilon")


class LocalOnly:
    name = "local_only"

    def act(self, env: ToTEnv, rng=None) -> int:
        return BS


class RandomPolicy:
    name = "random"

    def act(self, env: ToTEnv, rng: np.random.Generator) -> int:
        return int(rng.integers(env.num_actions))


class GreedyEFT:
    """Earliest predicted finish among servers meeting the per-thought score floor.

    Falls back to the highest-scoring server when none qualifies; ties go to
    the lowest server id.
    """

    name = "greedy_eft"

    def act(self, env: ToTEnv, rng=None) -> int:
        floor = env.threshold / env.config.num_internal
        preds = [env.predict(m) for m in range(env.num_actions)]
        ok = [p for p in preds if p.score >= floor]
        if ok:
            return min(ok, key=lambda p: (p.finish, p.server)).server
        return max(preds, key=lambda p: (p.score, -p.server)).server


class AgentPolicy:
    """Greedy wrapper around a trained agent exposing ``act(encoded_state, rng, greedy)``."""

    def __init__(self, agent, name: str):
        self.agent = agent
        self.name = name

    def agent_state_dim(self) -> int | None:
        net = getattr(self.agent, "q", None) or getattr(self.agent, "critics", [None])[0]
        return None if net is None else net.in_dim

    def act(self, env: ToTEnv, rng: np.random.Generator) -> int:
        action, _ = self.agent.act(env.encode(env.observe()), rng, greedy=True)
        return action


HEURISTICS = {"local_only": LocalOnly, "random": RandomPolicy, "greedy_eft": GreedyEFT}


# -- double DQN ------------------------------------------------------------------------


def epsilon_at(episode: int, episodes: int, start: float, end: float) -> float:
    """Linear anneal from ``start`` to ``end`` over the first half of training, then flat."""
    horizon = episodes / 2.0
    frac = 1.0 if horizon <= 0 else min(1.0, episode / horizon)
    return start + (end - start) * frac


def double_q_target(rewards, dones, next_q_online, next_q_target, gamma):
    """Online net picks the next action, target net scores it."""
    pick = np.argmax(next_q_online, axis=-1)
    return rewards + gamma * (1.0 - dones) * next_q_target[np.arange(len(pick)), pick]


@dataclass
class DDQNAgent:
    q: DenseNet
    target: DenseNet
    opt: AdamState | None = None
    tau: float = 0.005
    gamma: float = 0.99

    @classmethod
    def build(cls, state_dim, num_actions, cfg: TrainConfig, rng) -> DDQNAgent:
        q = DenseNet.build([state_dim, cfg.hidden, cfg.hidden, num_actions], rng, cfg.activation)
        return cls(q, q.clone(), AdamState.for_net(q, cfg.q_lr), cfg.tau, cfg.gamma)

    @property
    def num_actions(self) -> int:
        return self.q.out_dim

    def act(self, state, rng, greedy=False, epsilon=0.0) -> tuple[int, float]:
        # draw first so the stream advances identically in both branches
        explore = rng.random() < epsilon
        if explore and not greedy:
            return int(rng.integers(self.num_actions)), math.nan
        return int(np.argmax(self.q(state))), math.nan

    def update(self, batch) -> float:
        states, actions, rewards, next_states, dones = batch
        y = double_q_target(rewards, dones, self.q(next_states), self.target(next_states), self.gamma)
        loss, grads = critic_loss_and_grads(self.q, states, actions, y)
        adam_step(self.q, grads, self.opt)
        soft_update(self.q, self.target, self.tau)
        return loss

    def nets(self) -> dict[str, DenseNet]:
        return {"q": self.q, "q_target": self.target}


def train_ddqn(env_config: EnvConfig, cfg: TrainConfig, out_dir=None):
    """Train the DDQN baseline; returns ``(agent, metrics_rows)``."""
    env = ToTEnv(env_config)
    init_ss, act_ss, buf_ss = np.random.SeedSequence(cfg.seed).spawn(3)
    act_rng = np.random.default_rng(act_ss)
    buf_rng = np.random.default_rng(buf_ss)
    agent = DDQNAgent.build(env.state_dim, env.num_actions, cfg, np.random.default_rng(init_ss))
    buffer = ReplayBuffer(cfg.buffer_capacity, env.state_dim)
    ready_at = max(cfg.warmup, cfg.batch_size)
    rows = []
    for episode in range(cfg.episodes):
        eps = epsilon_at(episode, cfg.episodes, cfg.eps_start, cfg.eps_end)
        enc = env.encode(env.reset())
        done = False
        losses = []
        while not done:
            action, _ = agent.act(enc, act_rng, epsilon=eps)
            state, reward, done, info = env.step(action)
            nxt = env.encode(state)
            buffer.push(enc, action, reward, nxt, done)
            enc = nxt
            if buffer.size >= ready_at:
                loss = agent.update(buffer.sample(buf_rng, cfg.batch_size))
                if not math.isfinite(loss) or not agent.q.all_finite():
                    raise TrainingError(f"non-finite values at episode {episode}, thought {info['thought']}")
                losses.append(loss)
        check_reward_accounting(info, env_config.literal_reward)
        rows.append(
            {
                "episode": episode,
                "reward_sum": info["reward_sum"],
                "t_tot_s": info["t_tot"],
                "score_tot": info["score_tot"],
                "q_loss": float(np.mean(losses)) if losses else math.nan,
                "epsilon": eps,
            }
        )
    if out_dir is not None:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        write_metrics(out_dir / "metrics.csv", rows, DDQN_METRICS_HEADER)
        meta = {"kind": "ddqn", "env": env_config.to_dict(), "train": cfg.to_dict()}
        save_checkpoint(out_dir / "checkpoint.npz", agent.nets(), meta)
    return agent, rows


def load_ddqn(nets, meta) -> DDQNAgent:
    cfg = TrainConfig.from_dict(meta["train"])
    if set(nets) != {"q", "q_target"}:
        raise ConfigError(f"not a DDQN checkpoint: nets {sorted(nets)}")
    return DDQNAgent(nets["q"], nets["q_target"], None, cfg.tau, cfg.gamma)


def load_policy(path):
    """Greedy policy from any learned checkpoint; returns ``(policy, env_config)``."""
    from .dsac import load_agent

    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"checkpoint not found: {path}")
    nets, meta = load_checkpoint(path)
    if meta.get("kind") == "ddqn":
        return AgentPolicy(load_ddqn(nets, meta), "ddqn"), EnvConfig.from_dict(meta["env"])
    agent, kind, env_config = load_agent(path)
    return AgentPolicy(agent, kind), env_config

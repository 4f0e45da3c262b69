"""Discrete soft actor-critic with a pluggable actor.

The diffusion actor gives DSAC; a plain logits MLP gives the SAC baseline.
Critics map an encoded state to one Q-value per server, so expectations over
the categorical policy are computed exactly instead of sampled.
"""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import asdict, dataclass, fields
from pathlib import Path

import numpy as np

from .diffusion import DiffusionActor, beta_schedule, entropy, log_softmax
from .env import EnvConfig, ToTEnv
from .errors import ConfigError, TrainingError
from .nn import AdamState, DenseNet, adam_step, backward, forward, load_checkpoint, save_checkpoint, soft_update

log = logging.getLogger(__name__)

METRICS_HEADER = (
    "episode",
    "reward_sum",
    "t_tot_s",
    "score_tot",
    "critic1_loss",
    "critic2_loss",
    "actor_loss",
    "entropy",
)


@dataclass
class TrainConfig:
    episodes: int = 1000
    gamma: float = 0.99
    tau: float = 0.005
    alpha: float = 0.05
    batch_size: int = 64
    buffer_capacity: int = 100_000
    warmup: int = 500
    actor_lr: float = 3e-4
    # the K-step chain amplifies parameter steps, so the denoiser gets a smaller rate
    diffusion_actor_lr: float = 3e-5
    critic_lr: float = 3e-4
    K: int = 5
    beta_min: float = 0.1
    beta_max: float = 10.0
    x0_clip: float | None = None
    policy_temperature: float | None = None  # None: zero-denoiser spread of x_0
    hidden: int = 400
    activation: str = "mish"
    actor_q: str = "min"
    seed: int = 0
    # DDQN baseline
    q_lr: float = 1e-3
    eps_start: float = 1.0
    eps_end: float = 0.05

    def __post_init__(self):
        if not 0 < self.gamma <= 1:
            raise ConfigError("must lie in (0, 1]", key="gamma")
        if not 0 < self.tau <= 1:
            raise ConfigError("must lie in (0, 1]", key="tau")
        if self.alpha < 0:
            raise ConfigError("must be >= 0", key="alpha")
        if self.actor_q not in ("q1", "min"):
            raise ConfigError("must be 'q1' or 'min'", key="actor_q")
        for key in ("actor_lr", "diffusion_actor_lr", "critic_lr", "q_lr"):
            if not getattr(self, key) > 0:
                raise ConfigError("must be > 0", key=key)
        for key in ("episodes", "batch_size", "buffer_capacity", "hidden"):
            if getattr(self, key) < 1:
                raise ConfigError("must be >= 1", key=key)
        if self.warmup < 0:
            raise ConfigError("must be >= 0", key="warmup")

    @classmethod
    def from_dict(cls, data: dict, prefix="train") -> TrainConfig:
        known = {f.name for f in fields(cls)}
        for key in data:
            if key not in known:
                raise ConfigError("unknown key", key=f"{prefix}.{key}")
        return cls(**data)

    def to_dict(self) -> dict:
        return asdict(self)


class ReplayBuffer:
    """Fixed-capacity FIFO ring of transitions stored as flat arrays."""

    def __init__(self, capacity: int, state_dim: int):
        self.capacity = capacity
        self.states = np.zeros((capacity, state_dim))
        self.actions = np.zeros(capacity, dtype=np.int64)
        self.rewards = np.zeros(capacity)
        self.next_states = np.zeros((capacity, state_dim))
        self.dones = np.zeros(capacity)
        self.size = 0
        self._head = 0

    def push(self, state, action, reward, next_state, done) -> None:
        h = self._head
        self.states[h] = state
        self.actions[h] = action
        self.rewards[h] = reward
        self.next_states[h] = next_state
        self.dones[h] = float(done)
        self._head = (h + 1) % self.capacity
        self.size = min(self.size + 1, self.capacity)

    def ready(self, batch_size: int) -> bool:
        return self.size >= batch_size

    def sample(self, rng: np.random.Generator, batch_size: int):
        """Uniform batch without replacement, or ``None`` while the buffer is too small."""
        if not self.ready(batch_size):
            return None
        idx = rng.choice(self.size, size=batch_size, replace=False)
        return self.states[idx], self.actions[idx], self.rewards[idx], self.next_states[idx], self.dones[idx]

    def contents(self):
        order = [(self._head - self.size + n) % self.capacity for n in range(self.size)]
        return [(self.states[i], int(self.actions[i]), float(self.rewards[i])) for i in order]


class MLPActor:
    """Direct state -> logits network (the non-diffusion SAC baseline)."""

    def __init__(self, net: DenseNet):
        self.net = net

    @classmethod
    def build(cls, action_dim, state_dim, rng, hidden=400, activation="mish"):
        return cls(DenseNet.build([state_dim, hidden, hidden, action_dim], rng, activation))

    def logits(self, states, rng=None, noise=None):
        return forward(self.net, states)

    def backward(self, tape, dlogits):
        return backward(tape, dlogits)[0]


def critic_target(rewards, dones, next_q1, next_q2, next_probs, next_logp, gamma, alpha):
    """Soft Bellman target with the exact expectation over the next-state policy."""
    soft_v = (next_probs * (np.minimum(next_q1, next_q2) - alpha * next_logp)).sum(axis=-1)
    return rewards + gamma * (1.0 - dones) * soft_v


def critic_loss_and_grads(critic: DenseNet, states, actions, y):
    q, tape = forward(critic, states)
    rows = np.arange(len(actions))
    resid = q[rows, actions] - y
    adj = np.zeros_like(q)
    adj[rows, actions] = resid / len(actions)
    grads, _ = backward(tape, adj)
    return 0.5 * float(np.mean(resid**2)), grads


def actor_loss_and_grads(actor, q_values, states, alpha, rng=None, noise=None):
    """``mean_s sum_a pi(a|s) (alpha log pi(a|s) - Q(s, a))`` and its actor gradients."""
    x0, trace = actor.logits(states, rng, noise)
    logp = log_softmax(x0)
    p = np.exp(logp)
    f = alpha * logp - q_values
    per_state = (p * f).sum(axis=-1)
    # d/dlogit_c of sum_a p_a f_a; the alpha*dlogp term integrates to zero
    dx0 = p * (f - per_state[:, None]) / len(states)
    return float(per_state.mean()), actor.backward(trace, dx0), float(entropy(p, logp).mean())


class SoftActorCritic:
    def __init__(self, actor, state_dim: int, num_actions: int, cfg: TrainConfig, rng: np.random.Generator):
        self.actor = actor
        self.cfg = cfg
        self.num_actions = num_actions
        sizes = [state_dim, cfg.hidden, cfg.hidden, num_actions]
        self.critics = [DenseNet.build(sizes, rng, cfg.activation) for _ in range(2)]
        self.targets = [c.clone() for c in self.critics]
        lr = cfg.diffusion_actor_lr if isinstance(actor, DiffusionActor) else cfg.actor_lr
        self.actor_opt = AdamState.for_net(actor.net, lr)
        self.critic_opts = [AdamState.for_net(c, cfg.critic_lr) for c in self.critics]

    def policy(self, state, rng=None, noise=None):
        x0, _ = self.actor.logits(state, rng, noise)
        return x0, np.exp(log_softmax(x0))

    def act(self, state, rng, greedy=False) -> tuple[int, float]:
        """Sampled (or argmax) action and the policy entropy at ``state``."""
        x0, p = self.policy(state, rng)
        ent = float(entropy(p, np.log(np.maximum(p, 1e-300))))
        if greedy:
            return int(np.argmax(x0)), ent
        return int(rng.choice(self.num_actions, p=p)), ent

    def update(self, batch, rng) -> dict:
        states, actions, rewards, next_states, dones = batch
        cfg = self.cfg
        _, next_p = self.policy(next_states, rng)
        next_logp = np.log(np.maximum(next_p, 1e-300))
        y = critic_target(rewards, dones, self.targets[0](next_states), self.targets[1](next_states),
                          next_p, next_logp, cfg.gamma, cfg.alpha)
        losses = {}
        for n, (critic, opt) in enumerate(zip(self.critics, self.critic_opts), start=1):
            loss, grads = critic_loss_and_grads(critic, states, actions, y)
            adam_step(critic, grads, opt)
            losses[f"critic{n}_loss"] = loss
        q1 = self.critics[0](states)
        q = q1 if cfg.actor_q == "q1" else np.minimum(q1, self.critics[1](states))
        loss, grads, ent = actor_loss_and_grads(self.actor, q, states, cfg.alpha, rng)
        adam_step(self.actor.net, grads, self.actor_opt)
        losses["actor_loss"] = loss
        losses["entropy"] = ent
        for critic, target in zip(self.critics, self.targets):
            soft_update(critic, target, cfg.tau)
        return losses

    def nets(self) -> dict[str, DenseNet]:
        return {
            "actor": self.actor.net,
            "critic1": self.critics[0],
            "critic2": self.critics[1],
            "target1": self.targets[0],
            "target2": self.targets[1],
        }

    def all_finite(self) -> bool:
        return all(net.all_finite() for net in self.nets().values())


def make_actor(kind: str, env: ToTEnv, cfg: TrainConfig, rng):
    if kind == "dsac":
        schedule = beta_schedule(cfg.K, cfg.beta_min, cfg.beta_max)
        return DiffusionActor.build(env.num_actions, env.state_dim, rng, schedule, cfg.hidden, cfg.activation,
                                    cfg.x0_clip, cfg.policy_temperature)
    if kind == "sac_mlp":
        return MLPActor.build(env.num_actions, env.state_dim, rng, cfg.hidden, cfg.activation)
    raise ConfigError(f"unknown actor kind {kind!r}")


def check_reward_accounting(info: dict, literal: bool = False) -> None:
    sign = 1.0 if literal else -1.0
    expected = sign * info["t_tot"] - info["penalties"]
    if not math.isclose(info["reward_sum"], expected, rel_tol=1e-9, abs_tol=1e-9):
        raise TrainingError(f"reward sum {info['reward_sum']} != {sign:+.0f}*T_tot - penalties = {expected}")


def _mean(values):
    return float(np.mean(values)) if values else math.nan


def train_sac(env_config: EnvConfig, cfg: TrainConfig, kind: str = "dsac", out_dir=None):
    """Train a soft actor-critic agent; returns ``(agent, metrics_rows)``.

    Each decision samples an action from the current policy, steps the
    environment, stores the transition and, once the buffer holds ``warmup``
    transitions, runs one critic/actor/target update round.
    """
    env = ToTEnv(env_config)
    init_ss, act_ss, buf_ss = np.random.SeedSequence(cfg.seed).spawn(3)
    init_rng = np.random.default_rng(init_ss)
    act_rng = np.random.default_rng(act_ss)
    buf_rng = np.random.default_rng(buf_ss)
    if env_config.literal_reward:
        log.warning("training on the literal (non-negated) delay reward")
    agent = SoftActorCritic(make_actor(kind, env, cfg, init_rng), env.state_dim, env.num_actions, cfg, init_rng)
    buffer = ReplayBuffer(cfg.buffer_capacity, env.state_dim)
    ready_at = max(cfg.warmup, cfg.batch_size)
    rows = []
    for episode in range(cfg.episodes):
        enc = env.encode(env.reset())
        done = False
        stats = {k: [] for k in ("critic1_loss", "critic2_loss", "actor_loss")}
        entropies = []
        while not done:
            action, ent = agent.act(enc, act_rng)
            entropies.append(ent)
            state, reward, done, info = env.step(action)
            nxt = env.encode(state)
            buffer.push(enc, action, reward, nxt, done)
            enc = nxt
            if buffer.size >= ready_at:
                losses = agent.update(buffer.sample(buf_rng, cfg.batch_size), act_rng)
                for key in stats:
                    stats[key].append(losses[key])
                if not agent.all_finite() or not all(math.isfinite(v) for v in losses.values()):
                    raise TrainingError(f"non-finite values at episode {episode}, thought {info['thought']}")
        check_reward_accounting(info, env_config.literal_reward)
        rows.append(
            {
                "episode": episode,
                "reward_sum": info["reward_sum"],
                "t_tot_s": info["t_tot"],
                "score_tot": info["score_tot"],
                **{k: _mean(v) for k, v in stats.items()},
                "entropy": _mean(entropies),
            }
        )
    if out_dir is not None:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        write_metrics(out_dir / "metrics.csv", rows)
        save_agent(out_dir / "checkpoint.npz", agent, kind, env_config, cfg)
    return agent, rows


def write_metrics(path, rows, header=METRICS_HEADER) -> None:
    with Path(path).open("w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=header, lineterminator="\n")
        writer.writeheader()
        for row in rows:
            writer.writerow({k: repr(v) if isinstance(v, float) else v for k, v in row.items()})


def save_agent(path, agent, kind, env_config: EnvConfig, cfg: TrainConfig) -> None:
    meta = {"kind": kind, "env": env_config.to_dict(), "train": cfg.to_dict()}
    save_checkpoint(path, agent.nets(), meta)


def load_agent(path):
    """Rebuild a SAC-family agent from a checkpoint; returns ``(agent, kind, env_config)``."""
    nets, meta = load_checkpoint(path)
    kind = meta["kind"]
    cfg = TrainConfig.from_dict(meta["train"])
    env_config = EnvConfig.from_dict(meta["env"])
    if kind == "dsac":
        actor = DiffusionActor(nets["actor"], beta_schedule(cfg.K, cfg.beta_min, cfg.beta_max), cfg.x0_clip,
                               cfg.policy_temperature)
    elif kind == "sac_mlp":
        actor = MLPActor(nets["actor"])
    else:
        raise ConfigError(f"checkpoint holds a {kind!r} agent, not a SAC-family one")
    agent = SoftActorCritic.__new__(SoftActorCritic)
    agent.actor, agent.cfg, agent.num_actions = actor, cfg, nets["actor"].out_dim
    agent.critics = [nets["critic1"], nets["critic2"]]
    agent.targets = [nets["target1"], nets["target2"]]
    return agent, kind, env_config

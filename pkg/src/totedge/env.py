"""MDP wrapper around the timeline engine.

One decision per internal thought; the input and output thoughts are
committed to the base station automatically.  Fading gains and SP token
budgets are realised per slot from dedicated RNG streams, lazily and in
slot order, so the value seen for a slot never depends on query order.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, fields

import numpy as np

from . import channel
from .channel import LinkParams, NodePosition
from .errors import ActionError, ConfigError, UsageError
from .genai import BS_PROFILE, BS_TOKENS, gen_delay, gen_quality, sample_sp_profile
from .tot import (
    BITS_PER_KB,
    BS,
    ScheduleState,
    best_predecessor,
    build_dag,
    commit_assignment,
    episode_totals,
    predict_finish,
)

TOKEN_VALUES = (125, 100, 75, 50)
TOKEN_MATRIX = np.array(
    [
        [0.4, 0.3, 0.2, 0.1],
        [0.3, 0.4, 0.2, 0.1],
        [0.1, 0.2, 0.4, 0.3],
        [0.1, 0.2, 0.3, 0.4],
    ]
)
GAIN_FLOOR = 1e-6


@dataclass(frozen=True)
class MarkovTokenModel:
    values: tuple = TOKEN_VALUES
    matrix: np.ndarray = TOKEN_MATRIX

    def __post_init__(self):
        p = np.asarray(self.matrix, dtype=np.float64)
        if p.shape != (len(self.values), len(self.values)):
            raise ConfigError("transition matrix must be square and match the token values", key="token_matrix")
        if (p < 0).any() or not np.allclose(p.sum(axis=1), 1.0, rtol=0, atol=1e-12):
            raise ConfigError("transition rows must be probability vectors", key="token_matrix")
        object.__setattr__(self, "matrix", p)
        object.__setattr__(self, "_cdf", np.cumsum(p, axis=1))

    def stationary(self, tol=1e-15, max_iter=100_000) -> np.ndarray:
        """Power iteration from the uniform distribution."""
        pi = np.full(len(self.values), 1.0 / len(self.values))
        for _ in range(max_iter):
            nxt = pi @ self.matrix
            if np.abs(nxt - pi).max() < tol:
                return nxt / nxt.sum()
            pi = nxt
        return pi / pi.sum()

    def sample_initial(self, rng: np.random.Generator, n: int) -> np.ndarray:
        cdf = np.cumsum(self.stationary())
        return np.minimum(np.searchsorted(cdf, rng.random(n), side="right"), len(self.values) - 1)

    def step_states(self, states: np.ndarray, rng: np.random.Generator) -> np.ndarray:
        u = rng.random(len(states))
        nxt = (self._cdf[states] <= u[:, None]).sum(axis=1)
        return np.minimum(nxt, len(self.values) - 1)


def advance_tokens(model: MarkovTokenModel, states, rng: np.random.Generator, slots: int) -> np.ndarray:
    """Evolve every SP's chain state independently over ``slots`` slots."""
    if slots < 0:
        raise ConfigError(f"slots must be >= 0, got {slots}")
    states = np.asarray(states, dtype=np.int64).copy()
    for _ in range(slots):
        states = model.step_states(states, rng)
    return states


@dataclass
class EnvConfig:
    num_sps: int = 6
    steps: int = 6
    thoughts_per_step: int = 6
    score_min: float = 0.0
    quality_pct: float | None = None  # overrides score_min as a percentage of local-generation quality
    bandwidth_hz: float = 2e6
    bs_power_w: float = 1.0
    sp_power_w: float = 0.1
    noise_psd: float = 4e-21
    field_m: float = 100.0
    distance_unit: str = "km"
    min_distance_m: float = 1.0
    slot_s: float = 1.0
    seed: int = 0
    frozen: bool = False
    randomize_layout: bool = False
    literal_reward: bool = False

    def __post_init__(self):
        if self.num_sps < 0:
            raise ConfigError("must be >= 0", key="num_sps")
        for key in ("steps", "thoughts_per_step"):
            if getattr(self, key) < 1:
                raise ConfigError("must be >= 1", key=key)
        for key in ("bandwidth_hz", "bs_power_w", "sp_power_w", "noise_psd", "field_m", "slot_s", "min_distance_m"):
            if not getattr(self, key) > 0:
                raise ConfigError("must be > 0", key=key)
        if self.score_min < 0:
            raise ConfigError("must be >= 0", key="score_min")
        if self.quality_pct is not None and not 0 <= self.quality_pct <= 100:
            raise ConfigError("must lie in [0, 100]", key="quality_pct")
        if self.distance_unit not in channel.DISTANCE_UNITS:
            raise ConfigError(f"must be one of {sorted(channel.DISTANCE_UNITS)}", key="distance_unit")

    @property
    def num_internal(self) -> int:
        return self.steps * self.thoughts_per_step

    @property
    def threshold(self) -> float:
        """Absolute Score_min in score units."""
        if self.quality_pct is not None:
            return self.quality_pct / 100.0 * lg_reference(self)[1]
        return self.score_min

    @property
    def state_dim(self) -> int:
        u = self.num_sps
        return (u + 1) * u + u + self.num_internal + 2 + 1

    @classmethod
    def from_dict(cls, data: dict, prefix="env") -> EnvConfig:
        known = {f.name for f in fields(cls)}
        for key in data:
            if key not in known:
                raise ConfigError("unknown key", key=f"{prefix}.{key}")
        return cls(**data)

    def to_dict(self) -> dict:
        return asdict(self)


def lg_reference(config: EnvConfig) -> tuple[float, float]:
    """Totals when every thought, sentinels included, runs serially at the base station."""
    n = config.num_internal + 2
    return n * gen_delay(BS_PROFILE, BS_TOKENS), n * gen_quality(BS_PROFILE, BS_TOKENS)


@dataclass
class Layout:
    positions: list[NodePosition]
    profiles: list  # index 0 is the base station


def sample_layout(config: EnvConfig, rng: np.random.Generator) -> Layout:
    half = config.field_m / 2.0
    positions = [NodePosition(half, half)]
    profiles = [BS_PROFILE]
    for _ in range(config.num_sps):
        x, y = rng.uniform(0.0, config.field_m, size=2)
        positions.append(NodePosition(float(x), float(y)))
        profiles.append(sample_sp_profile(rng))
    return Layout(positions, profiles)


class Realization:
    """Per-slot fading gains and token budgets for one episode (the engine's world)."""

    def __init__(self, config: EnvConfig, layout: Layout, token_model: MarkovTokenModel,
                 fading_rng, token_rng, initial_tokens, frozen=False):
        self.config = config
        self.slot_s = config.slot_s
        self.profiles = layout.profiles
        self.token_model = token_model
        self.frozen = frozen
        n = config.num_sps + 1
        d = np.zeros((n, n))
        for a in range(n):
            for b in range(n):
                if a != b:
                    d_m = max(layout.positions[a].distance_m(layout.positions[b]), config.min_distance_m)
                    d[a, b] = channel.to_model_distance(d_m, config.distance_unit)
        self.distance = d
        self.links = [LinkParams(config.bandwidth_hz, config.bs_power_w, config.noise_psd)]
        self.links += [LinkParams(config.bandwidth_hz, config.sp_power_w, config.noise_psd)] * config.num_sps
        self._fading_rng = fading_rng
        self._token_rng = token_rng
        self._gains: list[np.ndarray] = []
        self._tokens: list[np.ndarray] = [np.asarray(initial_tokens, dtype=np.int64)]
        self._rates: dict[int, np.ndarray] = {}

    def gains(self, slot: int) -> np.ndarray:
        n = self.config.num_sps + 1
        if self.frozen:
            return np.ones((n, n))
        while len(self._gains) <= slot:
            self._gains.append(channel.sample_fading(self._fading_rng, size=(n, n)))
        return self._gains[slot]

    def token_states(self, slot: int) -> np.ndarray:
        if self.frozen:
            return self._tokens[0]
        while len(self._tokens) <= slot:
            self._tokens.append(self.token_model.step_states(self._tokens[-1], self._token_rng))
        return self._tokens[slot]

    def tokens(self, slot: int) -> np.ndarray:
        return np.asarray(self.token_model.values, dtype=np.float64)[self.token_states(slot)]

    def capacity(self, m: int, slot: int) -> float:
        if m == BS:
            return float(BS_TOKENS)
        return float(self.token_model.values[self.token_states(slot)[m - 1]])

    def rate(self, src: int, dst: int, slot: int) -> float:
        rates = self._rates.get(slot)
        if rates is None:
            g = self.gains(slot)
            n = len(self.links)
            rates = np.zeros((n, n))
            for a in range(n):
                for b in range(n):
                    if a != b:
                        rates[a, b] = channel.link_rate(self.links[a], g[a, b], self.distance[a, b])
            self._rates[slot] = rates
        return float(rates[src, dst])


class ToTEnv:
    """Thought-assignment MDP.

    ``reset`` and ``step`` return raw state vectors; ``encode`` maps them to
    the normalised features the learners consume.
    """

    def __init__(self, config: EnvConfig, token_model: MarkovTokenModel | None = None):
        self.config = config
        self.token_model = token_model or MarkovTokenModel()
        self.num_actions = config.num_sps + 1
        self.state_dim = config.state_dim
        self.threshold = config.threshold
        layout_seq, self._episode_seq = np.random.SeedSequence(config.seed).spawn(2)
        layout_rng = np.random.default_rng(layout_seq)
        self.layout = sample_layout(config, layout_rng)
        self._frozen_dag = None
        self._frozen_tokens = None
        if config.frozen:
            self._frozen_dag = build_dag(config.steps, config.thoughts_per_step, layout_rng)
            self._frozen_tokens = self.token_model.sample_initial(layout_rng, config.num_sps)
        self.episodes_started = 0
        self.schedule: ScheduleState | None = None
        self.world: Realization | None = None
        self.done = True

    # -- lifecycle -----------------------------------------------------------------
    def reset(self, episode: int | None = None) -> np.ndarray:
        """Start an episode; ``episode`` picks the RNG stream (defaults to a running counter)."""
        if episode is None:
            episode = self.episodes_started
        self.episodes_started = episode + 1
        ss = np.random.SeedSequence(self._episode_seq.entropy, spawn_key=(*self._episode_seq.spawn_key, episode))
        layout_ss, dag_ss, fading_ss, token_ss = ss.spawn(4)
        cfg = self.config
        if cfg.randomize_layout and not cfg.frozen:
            self.layout = sample_layout(cfg, np.random.default_rng(layout_ss))
        token_rng = np.random.default_rng(token_ss)
        if cfg.frozen:
            dag, init = self._frozen_dag, self._frozen_tokens
        else:
            dag = build_dag(cfg.steps, cfg.thoughts_per_step, np.random.default_rng(dag_ss))
            init = self.token_model.sample_initial(token_rng, cfg.num_sps)
        for u, state in enumerate(init):
            if self.token_model.values[state] >= BS_TOKENS:
                raise ConfigError(f"SP {u + 1} token budget must stay below the base station's", key="token_values")
        self.world = Realization(cfg, self.layout, self.token_model, np.random.default_rng(fading_ss),
                                 token_rng, init, frozen=cfg.frozen)
        self.schedule = ScheduleState(dag, self.num_actions)
        commit_assignment(self.schedule, 0, BS, self.world)
        self.done = False
        self._penalties = 0.0
        self._reward_sum = 0.0
        return self.observe()

    @property
    def current_thought(self) -> int:
        return self.schedule.next_thought

    def slot_for(self, i: int) -> int:
        return math.floor(self.schedule.step_ready_time(i) / self.config.slot_s)

    def observe(self) -> np.ndarray:
        """Raw state for the pending thought (or the terminal state once done)."""
        sched = self.schedule
        dag = sched.dag
        i = min(sched.next_thought, dag.output)
        slot = self.slot_for(i) if not sched.complete else sched.slot
        u = self.config.num_sps
        g = self.world.gains(slot)
        off_diag = g[~np.eye(u + 1, dtype=bool)]
        payload = 0.0
        if not sched.complete:
            payload = float(dag.payload_bits[best_predecessor(sched, dag.step_of(i)), i])
        return np.concatenate(
            [off_diag, self.world.tokens(slot), sched.assignment.astype(np.float64), [payload]]
        )

    def encode(self, state) -> np.ndarray:
        """Normalise: log10 gains, tokens / C0, servers / U, payload / 10 KB."""
        state = np.asarray(state, dtype=np.float64)
        u = self.config.num_sps
        n_g = (u + 1) * u
        out = state.copy()
        out[:n_g] = np.log10(np.maximum(state[:n_g], GAIN_FLOOR))
        out[n_g : n_g + u] = state[n_g : n_g + u] / BS_TOKENS
        x = state[n_g + u : -1]
        out[n_g + u : -1] = np.where(x < 0, -1.0, x / max(u, 1))
        out[-1] = state[-1] / (10 * BITS_PER_KB)
        return out

    def predict(self, action: int):
        """What committing the pending thought to ``action`` would yield (no mutation)."""
        return predict_finish(self.schedule, self.current_thought, action, self.world)

    def step(self, action: int):
        """Commit the pending thought; returns ``(state, reward, done, info)``."""
        if self.done:
            raise UsageError("episode is done; call reset()")
        action = int(action)
        if not 0 <= action < self.num_actions:
            raise ActionError(f"action {action} outside 0..{self.num_actions - 1}")
        sched = self.schedule
        i = sched.next_thought
        n = sched.dag.num_internal
        prev = 0.0 if i == 1 else float(sched.finish[i - 1])
        pred = commit_assignment(sched, i, action, self.world)
        delta = pred.finish - prev
        penalty = max(0.0, self.threshold / n - pred.score)
        if i == n:
            out = commit_assignment(sched, sched.dag.output, BS, self.world)
            delta += out.finish - pred.finish
            self.done = True
        reward = (delta if self.config.literal_reward else -delta) - penalty
        self._penalties += penalty
        self._reward_sum += reward
        info = {"thought": i, "prediction": pred, "delta_t": delta, "penalty": penalty}
        if self.done:
            info["t_tot"], info["score_tot"] = episode_totals(sched)
            info["penalties"] = self._penalties
            info["reward_sum"] = self._reward_sum
        return self.observe(), reward, self.done, info

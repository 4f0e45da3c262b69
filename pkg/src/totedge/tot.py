"""Tree-of-Thoughts DAG and the timeline engine.

Thoughts are indexed ``0`` (input), ``1..N`` (internal, step-major) and
``N+1`` (output).  Every thought of step ``l`` depends on every thought of
step ``l-1``; only the best-scoring predecessor ships its payload.

The engine talks to a *world* object by duck typing:

* ``world.profiles[m]`` -- :class:`~totedge.genai.ServerProfile` of server ``m``
* ``world.slot_s`` -- slot length in seconds
* ``world.rate(src, dst, slot)`` -- link rate in bit/s
* ``world.capacity(m, slot)`` -- output token budget of server ``m``
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .channel import tx_time
from .errors import ConfigError, SequencingError
from .genai import gen_delay, gen_quality

BS = 0
BITS_PER_KB = 8 * 1000
EDGE_KB = (5.0, 10.0)


@dataclass
class ThoughtDag:
    steps: int
    thoughts_per_step: int
    payload_bits: np.ndarray  # (N+2, N+2), zero where there is no edge

    @property
    def num_internal(self) -> int:
        return self.steps * self.thoughts_per_step

    @property
    def output(self) -> int:
        return self.num_internal + 1

    @property
    def size(self) -> int:
        return self.num_internal + 2

    def step_of(self, i: int) -> int:
        if i == 0:
            return 0
        if i == self.output:
            return self.steps + 1
        return (i - 1) // self.thoughts_per_step + 1

    def thoughts_at(self, step: int) -> range:
        if step == 0:
            return range(0, 1)
        if step == self.steps + 1:
            return range(self.output, self.output + 1)
        first = 1 + (step - 1) * self.thoughts_per_step
        return range(first, first + self.thoughts_per_step)

    def predecessors(self, i: int) -> range:
        return range(0) if i == 0 else self.thoughts_at(self.step_of(i) - 1)

    def edges(self):
        for i in range(1, self.size):
            for j in self.predecessors(i):
                yield j, i, float(self.payload_bits[j, i])


def build_dag(steps: int, thoughts_per_step: int, rng: np.random.Generator) -> ThoughtDag:
    if steps < 1 or thoughts_per_step < 1:
        raise ConfigError(f"need steps >= 1 and thoughts_per_step >= 1, got {steps}x{thoughts_per_step}")
    n = steps * thoughts_per_step + 2
    dag = ThoughtDag(steps, thoughts_per_step, np.zeros((n, n)))
    for i in range(1, n):
        for j in dag.predecessors(i):
            dag.payload_bits[j, i] = rng.uniform(*EDGE_KB) * BITS_PER_KB
    return dag


@dataclass(frozen=True)
class Prediction:
    thought: int
    server: int
    ready: float
    start: float
    finish: float
    score: float
    tokens: float
    best_pred: int
    tx_bits: float
    tx_s: float


class ScheduleState:
    """Running timeline of one episode; thoughts are committed in index order."""

    def __init__(self, dag: ThoughtDag, num_servers: int):
        self.dag = dag
        self.num_servers = num_servers
        n = dag.size
        self.assignment = np.full(n, -1, dtype=np.int64)
        self.available = np.zeros(num_servers)
        self.finish = np.full(n, np.nan)
        self.score = np.full(n, np.nan)
        self.records: list[Prediction | None] = [None] * n
        self.slot = 0

    @property
    def next_thought(self) -> int:
        committed = np.flatnonzero(self.assignment >= 0)
        return int(committed[-1]) + 1 if committed.size else 0

    @property
    def complete(self) -> bool:
        return bool((self.assignment >= 0).all())

    def committed(self, i: int) -> bool:
        return bool(self.assignment[i] >= 0)

    def step_ready_time(self, i: int) -> float:
        """Latest finish over the step feeding thought ``i`` (0 for the input thought)."""
        preds = self.dag.predecessors(i)
        return float(max(self.finish[j] for j in preds)) if len(preds) else 0.0


def best_predecessor(state: ScheduleState, step: int) -> int:
    """Highest realised score over ``step - 1``; ties go to the lowest index."""
    if step <= 0:
        raise SequencingError("the input thought has no predecessor")
    cands = state.dag.thoughts_at(step - 1)
    best, best_score = -1, -math.inf
    for j in cands:
        if not state.committed(j):
            raise SequencingError(f"predecessor {j} of step {step} is not committed")
        if state.score[j] > best_score:
            best, best_score = j, state.score[j]
    return best


def predict_finish(state: ScheduleState, i: int, m: int, world) -> Prediction:
    """Ready/start/finish time and score of thought ``i`` on server ``m``; does not mutate."""
    if not 0 <= m < state.num_servers:
        raise ConfigError(f"server {m} outside 0..{state.num_servers - 1}")
    dag = state.dag
    slot_s = world.slot_s
    if i == 0:
        ready, j_star, bits, tx = 0.0, -1, 0.0, 0.0
    else:
        j_star = best_predecessor(state, dag.step_of(i))
        t_pred = state.step_ready_time(i)
        src = int(state.assignment[j_star])
        bits, tx = 0.0, 0.0
        if src != m:
            bits = float(dag.payload_bits[j_star, i])
            tx = tx_time(bits, world.rate(src, m, math.floor(t_pred / slot_s)))
        ready = t_pred + tx
    start = max(ready, float(state.available[m]))
    tokens = world.capacity(m, math.floor(start / slot_s))
    profile = world.profiles[m]
    finish = start + gen_delay(profile, tokens)
    return Prediction(i, m, ready, start, finish, gen_quality(profile, tokens), tokens, j_star, bits, tx)


def commit_assignment(state: ScheduleState, i: int, m: int, world) -> Prediction:
    if i != state.next_thought:
        raise SequencingError(f"thought {i} committed out of order; next is {state.next_thought}")
    if i in (0, state.dag.output) and m != BS:
        raise SequencingError(f"thought {i} is a sentinel and must run on the base station")
    pred = predict_finish(state, i, m, world)
    state.assignment[i] = m
    state.finish[i] = pred.finish
    state.score[i] = pred.score
    state.available[m] = pred.finish
    state.records[i] = pred
    state.slot = math.floor(pred.finish / world.slot_s)
    return pred


def episode_totals(state: ScheduleState) -> tuple[float, float]:
    """``(T_tot, Score_tot)``: output finish time and summed score of every thought."""
    if not state.complete:
        raise SequencingError("schedule is incomplete")
    return float(state.finish[state.dag.output]), float(state.score.sum())


def run_assignment(dag: ThoughtDag, servers, world, num_servers: int) -> ScheduleState:
    """Commit a full internal assignment (sentinels added) and return the finished state."""
    if len(servers) != dag.num_internal:
        raise ConfigError(f"expected {dag.num_internal} internal servers, got {len(servers)}")
    state = ScheduleState(dag, num_servers)
    for i, m in enumerate([BS, *servers, BS]):
        commit_assignment(state, i, int(m), world)
    return state


def trace(state: ScheduleState) -> dict:
    """JSON-ready timeline (the data behind a Gantt chart)."""
    rows = []
    for rec in state.records:
        if rec is None:
            continue
        rows.append(
            {
                "index": rec.thought,
                "step": state.dag.step_of(rec.thought),
                "server": rec.server,
                "ready_s": rec.ready,
                "start_s": rec.start,
                "finish_s": rec.finish,
                "score": rec.score,
                "tx_bits": rec.tx_bits,
                "tx_s": rec.tx_s,
            }
        )
    out = {"thoughts": rows}
    if state.complete:
        out["t_tot_s"], out["score_tot"] = episode_totals(state)
    return out

import heapq
import itertools
import math

import numpy as np
import pytest

from totedge.env import EnvConfig, ToTEnv

TINY = dict(num_sps=2, steps=2, thoughts_per_step=2, frozen=True)


def tiny_env(seed=0, **kw):
    env = ToTEnv(EnvConfig(**{**TINY, **kw}, seed=seed))
    env.reset()
    return env


def event_list_timeline(payload, steps, tps, assignment, world):
    """Discrete-event recomputation of a schedule, independent of the engine.

    Each server runs its thoughts in index order; a thought becomes ready when
    its whole previous step has finished and the best predecessor's payload
    has arrived.  Returns ``(finish, score)`` arrays.
    """
    n = steps * tps + 2
    out = n - 1

    def step(i):
        return 0 if i == 0 else steps + 1 if i == out else (i - 1) // tps + 1

    layers = [[i for i in range(n) if step(i) == s] for s in range(steps + 2)]
    queues = {m: [i for i in range(n) if assignment[i] == m] for m in set(assignment)}
    finish = np.full(n, np.nan)
    score = np.full(n, np.nan)
    ready = {0: 0.0}
    busy_until = {m: 0.0 for m in queues}
    events = []  # (time, seq, thought) completion events
    seq = itertools.count()

    def try_start(m):
        q = queues[m]
        if q and q[0] in ready and busy_until[m] is not None:
            i = q.pop(0)
            start = max(ready[i], busy_until[m])
            p = world.profiles[m]
            c = world.capacity(m, math.floor(start / world.slot_s))
            busy_until[m] = None
            heapq.heappush(events, (start + (p.eta * c + p.psi), next(seq), i, m, p.score_max - p.sigma * math.exp(-p.rho * c)))

    for m in queues:
        try_start(m)
    while events:
        t, _, i, m, s = heapq.heappop(events)
        finish[i], score[i] = t, s
        busy_until[m] = t
        nxt = step(i) + 1
        if nxt <= steps + 1 and all(not np.isnan(finish[j]) for j in layers[nxt - 1]):
            prev = layers[nxt - 1]
            t_pred = max(finish[j] for j in prev)
            best = max(prev, key=lambda j: (score[j], -j))
            for k in layers[nxt]:
                src, dst = assignment[best], assignment[k]
                tx = 0.0
                if src != dst:
                    tx = payload[best, k] / world.rate(src, dst, math.floor(t_pred / world.slot_s))
                ready[k] = t_pred + tx
        for mm in queues:
            try_start(mm)
    return finish, score


def all_assignments(env):
    return itertools.product(range(env.num_actions), repeat=env.schedule.dag.num_internal)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)

"""Reference computations kept independent of the package internals."""

from dataclasses import dataclass, field

import numpy as np

from patrolmarl.environment import Status, reset
from patrolmarl.grid import CellKind


@dataclass
class Run:
    world: object
    durations: list = field(default_factory=list)
    visits: list = field(default_factory=list)  # per step: cells agents stood on after moving
    log: list = field(default_factory=list)
    idleness: list = field(default_factory=list)  # per step, when kept
    steps: int = 0


def run_random_episode(grid, n_agents, params, seed, steps, check_every_step=False, keep_idleness=False):
    """Uniformly random valid actions and messages; records what the replay oracle needs."""
    world = reset(grid, n_agents, params, seed)
    rng = np.random.default_rng(seed + 10_000)
    run = Run(world)
    for _ in range(steps):
        actions, messages = {}, {}
        for a in world.agents:
            if a.status is not Status.ACTIVE:
                continue
            valid = [i for i, ok in enumerate(world.action_mask(a.id)) if ok]
            actions[a.id] = valid[int(rng.integers(len(valid)))]
            messages[a.id] = int(rng.integers(1, 17))
        out = world.step(actions, messages or None)
        run.durations.append(out.duration_ticks)
        run.visits.append(sorted(out.final_cells.values()))
        run.log.append(world.log_record(out))
        run.steps += 1
        if keep_idleness:
            run.idleness.append(world.idle_ticks.copy())
        if check_every_step:
            cells = [a.location for a in world.agents if a.status is Status.ACTIVE]
            assert len(cells) == len(set(cells))
            for c in cells:
                assert world.idle_ticks[grid.index(c)] == 0
    return run


def replay_idleness_ticks(grid, run, upto=None):
    """idleness(v) = (1 + priority(v)) * (now - last time an agent stood on v), in ticks,
    after step ``upto`` (default: the last step).

    Brute force: for every vertex the visit history is scanned backwards.
    Assumes zero initial idleness.
    """
    upto = run.steps if upto is None else upto
    clock = [0]
    for d in run.durations[:upto]:
        clock.append(clock[-1] + d)
    now = clock[upto]
    out = np.zeros(grid.height * grid.width, dtype=np.int64)
    for v in grid.vertices:
        if grid.cells[v] != CellKind.VERTEX:
            continue
        last = 0
        for t in range(upto - 1, -1, -1):
            if v in run.visits[t]:
                last = clock[t + 1]
                break
        out[v[0] * grid.width + v[1]] = (1 + int(grid.priority[v])) * (now - last)
    return out


def central_differences(loss_fn, params, eps=1e-5):
    """Numerical gradient of ``loss_fn()`` w.r.t. every element of ``params``
    (a list of float64 tensors perturbed in place)."""
    import torch

    grads = []
    with torch.no_grad():
        for p in params:
            g = torch.zeros_like(p)
            flat, gflat = p.view(-1), g.view(-1)
            for i in range(flat.numel()):
                old = float(flat[i])
                flat[i] = old + eps
                up = float(loss_fn())
                flat[i] = old - eps
                down = float(loss_fn())
                flat[i] = old
                gflat[i] = (up - down) / (2 * eps)
            grads.append(g)
    return grads


def max_relative_error(analytic, numeric, floor=1e-6):
    worst = 0.0
    for a, n in zip(analytic, numeric):
        a = np.asarray(a.detach() if hasattr(a, "detach") else a, dtype=np.float64).ravel()
        n = np.asarray(n, dtype=np.float64).ravel()
        denom = np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)
        if a.size:
            worst = max(worst, float(np.max(np.abs(a - n) / denom)))
    return worst


def gae_double_sum(rewards, values, gamma, lam, last_value=0.0):
    """A_t = sum_l (gamma*lam)^l delta_{t+l}, written out as a double sum."""
    T = len(rewards)
    v = list(values) + [last_value]
    delta = [rewards[t] + gamma * v[t + 1] - v[t] for t in range(T)]
    adv = []
    for t in range(T):
        total = 0.0
        for l in range(T - t):
            total += (gamma * lam) ** l * delta[t + l]
        adv.append(total)
    return np.array(adv)


def replay_idleness_trace(grid, run):
    """Per-step replay oracle: the idleness array after every step, from the
    recorded durations and visits alone (same formula as ``replay_idleness_ticks``)."""
    verts = [v for v in grid.vertices if grid.cells[v] == CellKind.VERTEX]
    flat = np.array([v[0] * grid.width + v[1] for v in verts])
    weight = np.array([1 + int(grid.priority[v]) for v in verts], dtype=np.int64)
    pos = {v: i for i, v in enumerate(verts)}
    last = np.zeros(len(verts), dtype=np.int64)
    now = 0
    for d, cells in zip(run.durations, run.visits):
        now += d
        for c in cells:
            if c in pos:
                last[pos[c]] = now
        out = np.zeros(grid.height * grid.width, dtype=np.int64)
        out[flat] = weight * (now - last)
        yield out

"""Episode runner, patrol metrics and multi-episode experiments.

Per step the runner records the mean and the max vertex idleness (minutes).
AVG^h is the mean over steps of the former and MAX-bar^h the mean over steps
of the latter. Aggregates use the population standard deviation.
"""

from __future__ import annotations

import csv
import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import torch

from .baselines import CONTROLLERS
from .config import Config
from .environment import Event, Status, WorldState, reset
from .grid import GridMap
from .mappo import _actor_extras, _fill_messages, load_policy
from .network import PolicyNet, masked_log_softmax
from .observations import encode_actor_view, idleness_channel, structure_channel

STRATEGIES = ("cr", "part", "sebs", "rl")


class InvalidHorizon(ValueError):
    pass


class InsufficientSamples(ValueError):
    pass


class UnknownStrategy(ValueError):
    pass


@dataclass
class EpisodeMetrics:
    avg_idleness: float  # minutes
    max_bar_idleness: float  # minutes
    collisions: int
    battery_failures: int
    recharge_battery_samples: list[float]
    horizon: int
    n_agents_effective: list[int] = field(repr=False)
    strategy: str = ""
    n_agents: int = 0
    seed: int = 0
    swaps: int = 0

    def summary(self) -> dict:
        """JSON-friendly per-episode record (the active-agent trace is summarised)."""
        out = asdict(self)
        trace = out.pop("n_agents_effective")
        out["mean_active_agents"] = float(np.mean(trace)) if trace else 0.0
        out["min_active_agents"] = int(min(trace)) if trace else 0
        return out


def mean_of(values) -> float:
    """Mean used for every per-step metric, so log recomputation is exact."""
    values = list(values)
    return math.fsum(values) / len(values)


class RLController:
    """Samples messages then actions from a trained actor, one GRU state per agent."""

    name = "rl"

    def __init__(self, grid: GridMap, cfg: Config, n_agents: int, seed, actor: PolicyNet):
        if (actor.height, actor.width) != grid.shape:
            raise ValueError(f"policy was built for a {actor.height}x{actor.width} map, got {grid.shape}")
        self.grid = grid
        self.actor = actor
        self.c_norm = cfg.rewards.c_norm
        self.rng = np.random.default_rng(seed)
        self.structure = structure_channel(grid)
        self.states = {i: np.zeros((actor.n_state, actor.hidden)) for i in range(n_agents)}

    @torch.no_grad()
    def act(self, world: WorldState) -> tuple[dict[int, int], dict[int, int] | None]:
        active = world.active_agents()
        if not active:
            return {}, None
        idle = idleness_channel(world, self.c_norm)
        views = [encode_actor_view(self.grid, world, a.id, None, self.c_norm, self.structure, idle) for a in active]
        ch = np.stack([v.channels for v in views])
        ex = torch.from_numpy(np.stack([_actor_extras(v) for v in views]))
        st = torch.from_numpy(np.stack([self.states[a.id] for a in active]))
        msg_logits, h_comm = self.actor.comm(torch.from_numpy(ch), ex, st)
        msg_p = torch.softmax(msg_logits, dim=-1).numpy()
        messages = {a.id: int(self.rng.choice(len(p), p=p / p.sum())) + 1 for a, p in zip(active, msg_p)}
        for j, a in enumerate(active):
            _fill_messages(ch[j], a.id, active, messages)
        raw, h_act = self.actor.act(torch.from_numpy(ch), ex, st)
        mask = torch.from_numpy(np.stack([v.action_mask for v in views]))
        move_p = masked_log_softmax(raw, mask).exp().numpy()
        new_state = self.actor.combine_state(h_act, h_comm).numpy()
        actions = {}
        for j, a in enumerate(active):
            actions[a.id] = int(self.rng.choice(len(move_p[j]), p=move_p[j] / move_p[j].sum()))
            self.states[a.id] = new_state[j]
        return actions, messages

    def observe(self, world, outcome) -> None:
        for aid in outcome.redeployed:
            self.states[aid] = np.zeros_like(self.states[aid])


def make_controller(strategy: str, grid: GridMap, cfg: Config, n_agents: int, seed, actor=None):
    if strategy == "rl":
        if actor is None:
            raise UnknownStrategy("strategy 'rl' needs a checkpoint")
        return RLController(grid, cfg, n_agents, seed, actor)
    if strategy not in CONTROLLERS:
        raise UnknownStrategy(f"unknown strategy {strategy!r}; expected one of {', '.join(STRATEGIES)}")
    return CONTROLLERS[strategy](grid, cfg, n_agents, seed)


def episode_seeds(master_seed: int, count: int) -> list[int]:
    """Independent per-episode seeds derived from one master seed."""
    return [int(s) for s in np.random.SeedSequence(master_seed).generate_state(count, dtype=np.uint64)]


def run_episode(strategy: str, grid: GridMap, cfg: Config, n_agents: int, horizon: int, seed: int,
                *, actor=None, burnin: int = 0, record_events: bool = False,
                world: WorldState | None = None) -> tuple[EpisodeMetrics, list[dict] | None]:
    """Run one lockstep episode and return its metrics plus (optionally) the per-step log.

    Steps before ``burnin`` are simulated but left out of the idleness averages.
    """
    if horizon <= 0 or burnin >= horizon:
        raise InvalidHorizon(f"horizon {horizon} with burn-in {burnin} leaves no measured steps")
    cfg = cfg.resolved()
    env_seed, ctl_seed = np.random.SeedSequence(seed).generate_state(2)
    if world is None:
        world = reset(grid, n_agents, cfg.env, int(env_seed))
    controller = make_controller(strategy, grid, cfg, n_agents, int(ctl_seed), actor)
    means, maxes, trace, samples, log = [], [], [], [], [] if record_events else None
    collisions = failures = swaps = 0
    for t in range(horizon):
        actions, messages = controller.act(world)
        outcome = world.step(actions, messages)
        controller.observe(world, outcome)
        collisions += outcome.collisions
        failures += len(outcome.failed)
        swaps += len(outcome.started_swap)
        samples.extend(outcome.started_swap[k] for k in sorted(outcome.started_swap))
        trace.append(sum(1 for a in world.agents if a.status is Status.ACTIVE))
        if t >= burnin:
            mean, mx = world.idleness_stats()
            means.append(mean)
            maxes.append(mx)
        if log is not None:
            log.append(world.log_record(outcome))
    metrics = EpisodeMetrics(
        avg_idleness=mean_of(means),
        max_bar_idleness=mean_of(maxes),
        collisions=collisions,
        battery_failures=failures,
        recharge_battery_samples=samples,
        horizon=horizon,
        n_agents_effective=trace,
        strategy=strategy,
        n_agents=n_agents,
        seed=int(seed),
        swaps=swaps,
    )
    return metrics, log


def recompute_from_log(log: list[dict], burnin: int = 0) -> tuple[float, float, int, int]:
    """(AVG^h, MAX-bar^h, collisions, battery failures) recomputed from a per-step log."""
    kept = log[burnin:]
    failures = sum(1 for rec in log for ev in rec["events"] if ev["event"] == Event.BATTERY_FAILED.value)
    return (mean_of(r["idleness_mean"] for r in kept), mean_of(r["idleness_max"] for r in kept),
            sum(r["collisions"] for r in log), failures)


AGGREGATED = ("avg_idleness", "max_bar_idleness", "collisions", "battery_failures", "swaps")


def mean_std(values) -> tuple[float, float]:
    """Mean and population standard deviation."""
    values = np.asarray(list(values), dtype=np.float64)
    if values.size < 2:
        raise InsufficientSamples(f"need at least 2 samples, got {values.size}")
    return float(values.mean()), float(values.std())


def aggregate(episodes: list[EpisodeMetrics]) -> dict:
    """Per-metric mean and std plus the battery failure rate per agent-episode."""
    if len(episodes) < 2:
        raise InsufficientSamples(f"need at least 2 episodes, got {len(episodes)}")
    out = {}
    for name in AGGREGATED:
        mu, sigma = mean_std(getattr(e, name) for e in episodes)
        out[name] = {"mean": mu, "std": sigma}
    agent_episodes = sum(e.n_agents for e in episodes)
    failures = sum(e.battery_failures for e in episodes)
    samples = [s for e in episodes for s in e.recharge_battery_samples]
    out["battery_failure_rate"] = failures / agent_episodes if agent_episodes else 0.0
    out["recharge_battery"] = {
        "mean": float(np.mean(samples)) if samples else None,
        "std": float(np.std(samples)) if samples else None,
        "count": len(samples),
    }
    out["episodes"] = len(episodes)
    out["agent_episodes"] = agent_episodes
    return out


# -- experiments -------------------------------------------------------------------

@dataclass
class ExperimentResult:
    aggregate: dict
    episodes: list[EpisodeMetrics]
    logs: list[list[dict]] | None
    attempted: int
    discarded: int


def _episode_job(args):
    strategy, grid, cfg, n_agents, horizon, seed, checkpoint, burnin, record = args
    actor = load_policy(checkpoint)[0] if checkpoint else None
    torch.set_num_threads(1)
    return run_episode(strategy, grid, cfg, n_agents, horizon, seed, actor=actor, burnin=burnin,
                       record_events=record)


def run_experiment(strategy: str, grid: GridMap, cfg: Config, n_agents: int, episodes: int, seed: int,
                   *, horizon: int | None = None, burnin: int | None = None, require_success: bool | None = None,
                   checkpoint=None, record_events: bool = False, workers: int = 1,
                   max_attempts: int | None = None) -> ExperimentResult:
    """Run ``episodes`` seeded episodes (results are independent of ``workers``).

    With ``require_success`` episodes containing a battery failure are
    discarded and replaced by further seeds until ``episodes`` successful ones
    are collected or ``max_attempts`` (default 10x) is reached.
    """
    ev = cfg.eval
    horizon = ev.horizon if horizon is None else horizon
    burnin = ev.burnin if burnin is None else burnin
    require_success = ev.require_success if require_success is None else require_success
    max_attempts = max_attempts or (10 * episodes if require_success else episodes)
    seeds = episode_seeds(seed, max_attempts)
    checkpoint = str(checkpoint) if checkpoint else None
    kept, logs = [], [] if record_events else None
    attempted = discarded = 0
    pool = ProcessPoolExecutor(workers) if workers > 1 else None
    try:
        while len(kept) < episodes and attempted < max_attempts:
            batch = seeds[attempted: attempted + min(max(workers, 1), episodes - len(kept))]
            jobs = [(strategy, grid, cfg, n_agents, horizon, s, checkpoint, burnin, record_events) for s in batch]
            results = list(pool.map(_episode_job, jobs)) if pool else [_episode_job(j) for j in jobs]
            attempted += len(batch)
            for metrics, log in results:
                if require_success and metrics.battery_failures > 0:
                    discarded += 1
                    continue
                kept.append(metrics)
                if logs is not None:
                    logs.append(log)
    finally:
        if pool:
            pool.shutdown()
    agg = aggregate(kept) if len(kept) >= 2 else {"episodes": len(kept)}
    agg.update({"strategy": strategy, "n_agents": n_agents, "attempted": attempted, "discarded": discarded,
                "horizon": horizon, "burnin": burnin, "seed": seed, "map": grid.name})
    return ExperimentResult(agg, kept, logs, attempted, discarded)


def write_results(out_dir, result: ExperimentResult, *, events: bool = False, csv_path=None) -> None:
    """metrics.json, episodes.jsonl and optionally events.jsonl / per-step CSV."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "metrics.json").write_text(json.dumps(result.aggregate, indent=2, sort_keys=True) + "\n",
                                          encoding="utf-8")
    with open(out_dir / "episodes.jsonl", "w", encoding="utf-8") as fh:
        for i, e in enumerate(result.episodes):
            fh.write(json.dumps(dict(e.summary(), episode=i), sort_keys=True) + "\n")
    if events and result.logs is not None:
        with open(out_dir / "events.jsonl", "w", encoding="utf-8") as fh:
            for i, log in enumerate(result.logs):
                for rec in log:
                    fh.write(json.dumps(dict(rec, episode=i), sort_keys=True) + "\n")
    if csv_path is not None and result.logs is not None:
        with open(csv_path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(["episode", "step", "clock", "idleness_mean", "idleness_max"])
            for i, log in enumerate(result.logs):
                for rec in log:
                    writer.writerow([i, rec["step"], repr(rec["clock"]), repr(rec["idleness_mean"]),
                                     repr(rec["idleness_max"])])


def compare_table(rows: list[dict]) -> str:
    """Markdown table with mean/std columns, one row per (strategy, agent count)."""
    head = "| strategy | agents | AVG idleness | MAX-bar idleness | collisions | failure rate |"
    lines = [head, "|---|---|---|---|---|---|"]
    for r in rows:
        def ms(key):
            m = r.get(key)
            return f"μ: {m['mean']:.4f} σ: {m['std']:.4f}" if isinstance(m, dict) else "n/a"
        rate = r.get("battery_failure_rate")
        lines.append(f"| {r['strategy']} | {r['n_agents']} | {ms('avg_idleness')} | {ms('max_bar_idleness')} | "
                     f"{ms('collisions')} | {'n/a' if rate is None else f'{rate:.3e}'} |")
    return "\n".join(lines) + "\n"

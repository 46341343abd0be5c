"""Multi-agent PPO with a learned discrete message channel.

Each iteration runs ``parallel_episodes`` episodes in lockstep with one shared
actor and a centralised critic, then does ``epochs`` passes of ``num_batches``
minibatches over the collected data. The actor's two heads are trained
through the joint probability p(m|s) * p(a|s, m), so the message head gets
gradient only via the advantage of the action that followed.

Agents that are away swapping batteries keep a record per step (reward 0,
no observation). Their critic input is the global state of that step taken
from an online agent; they are excluded from the policy loss.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from .config import Config, TrainConfig, dump_json, to_dict
from .environment import Status, reset
from .grid import GridMap
from .network import (
    DTYPE,
    PolicyNet,
    ValueNet,
    categorical_entropy,
    init_weights,
    load_checkpoint,
    masked_log_softmax,
    save_checkpoint,
)
from .observations import encode_actor_view, encode_critic_view, idleness_channel, structure_channel
from .rewards import step_rewards


class LengthMismatch(ValueError):
    pass


class ZeroProbability(ValueError):
    pass


class NonFiniteLoss(FloatingPointError):
    pass


# -- pure pieces ---------------------------------------------------------------

def compute_gae(rewards, values, gamma: float, lam: float, last_value: float = 0.0):
    """Advantages and returns by the backward GAE recursion.

    ``values[t]`` is V(s_t); ``last_value`` bootstraps past the final step
    (0 when the sequence ends the episode).
    """
    rewards = np.asarray(rewards, dtype=np.float64)
    values = np.asarray(values, dtype=np.float64)
    if rewards.shape != values.shape:
        raise LengthMismatch(f"{rewards.shape} rewards vs {values.shape} values")
    adv = np.zeros_like(rewards)
    running = 0.0
    next_value = last_value
    for t in range(len(rewards) - 1, -1, -1):
        delta = rewards[t] + gamma * next_value - values[t]
        running = delta + gamma * lam * running
        adv[t] = running
        next_value = values[t]
    return adv, adv + values


def normalize_advantages(adv):
    adv = np.asarray(adv, dtype=np.float64)
    if adv.size == 0:
        return adv
    centered = adv - adv.mean()
    std = centered.std()
    return centered / std if std > 1e-8 else centered


def joint_ratio(old, new):
    """(p_m_new * p_a_new) / (p_m_old * p_a_old) computed in log space.

    ``old`` and ``new`` are ``(p_m, p_a)`` pairs of scalars or arrays.
    """
    probs = [np.asarray(p, dtype=np.float64) for p in (*old, *new)]
    if any(np.any(p <= 0) for p in probs):
        raise ZeroProbability("joint ratio needs strictly positive probabilities")
    pm_old, pa_old, pm_new, pa_new = probs
    out = np.exp(np.log(pm_new) + np.log(pa_new) - np.log(pm_old) - np.log(pa_old))
    return float(out) if out.ndim == 0 else out


def clipped_surrogate(ratio, advantage, eps: float, entropy=None, entropy_coef: float = 0.0):
    """Negated clipped objective (to minimise), minus the entropy bonus.

    Works elementwise on floats, numpy arrays or torch tensors.
    """
    if isinstance(ratio, torch.Tensor):
        clipped = torch.clamp(ratio, 1 - eps, 1 + eps)
        out = -torch.minimum(ratio * advantage, clipped * advantage)
    else:
        ratio = np.asarray(ratio, dtype=np.float64)
        out = -np.minimum(ratio * advantage, np.clip(ratio, 1 - eps, 1 + eps) * advantage)
        out = float(out) if out.ndim == 0 else out
    if entropy is not None:
        out = out - entropy_coef * entropy
    return out


class ValueNorm:
    """Running mean/variance of critic targets; the critic predicts in normalised units."""

    def __init__(self, count: float = 0.0, mean: float = 0.0, var: float = 1.0):
        self.count, self.mean, self.var = count, mean, var

    @property
    def std(self) -> float:
        return math.sqrt(max(self.var, 1e-8))

    def update(self, x) -> None:
        x = np.asarray(x, dtype=np.float64)
        if x.size == 0:
            return
        n, m, v = x.size, float(x.mean()), float(x.var())
        total = self.count + n
        delta = m - self.mean
        self.var = (self.count * self.var + n * v + delta * delta * self.count * n / total) / total
        self.mean += delta * n / total
        self.count = total

    def normalize(self, x):
        return (x - self.mean) / self.std

    def denormalize(self, x):
        return x * self.std + self.mean

    def to_dict(self) -> dict:
        return {"count": self.count, "mean": self.mean, "var": self.var}


# -- rollout buffer --------------------------------------------------------------

@dataclass(slots=True)
class Record:
    env: int
    agent: int
    t: int
    online: bool
    deployment: int
    reward: float = 0.0
    value: float | None = None
    critic_idx: int = -1  # row in RolloutBuffer.critic_channels; -1 when unavailable
    masked: bool = False  # step excluded from every loss term
    done: bool = False
    channels: np.ndarray | None = None
    extras: np.ndarray | None = None
    mask: np.ndarray | None = None
    state: np.ndarray | None = None
    msg: int = -1
    act: int = -1
    logp_m: float = 0.0
    logp_a: float = 0.0
    advantage: float = 0.0
    ret: float = 0.0


@dataclass
class RolloutBuffer:
    lanes: dict[tuple[int, int], list[Record]] = field(default_factory=dict)
    critic_channels: list[np.ndarray] = field(default_factory=list)
    critic_extras: list[np.ndarray] = field(default_factory=list)
    episode_stats: list[dict] = field(default_factory=list)

    def records(self):
        for key in sorted(self.lanes):
            yield from self.lanes[key]

    def __len__(self):
        return sum(len(v) for v in self.lanes.values())


def _critic_extras(view, grid_shape) -> np.ndarray:
    h, w = grid_shape
    scale = np.array([max(h - 1, 1), max(w - 1, 1)], dtype=np.float64)
    return np.concatenate([view.battery_vector, (view.location_list / scale).ravel()])


def _sample(rng, logp: np.ndarray) -> int:
    p = np.exp(logp)
    return int(rng.choice(len(p), p=p / p.sum()))


def _actor_extras(view) -> np.ndarray:
    return np.concatenate([[view.battery_scalar], view.action_mask.astype(np.float64)])


def _fill_messages(channels: np.ndarray, me: int, active, messages: dict[int, int]) -> None:
    msg = channels[3]
    msg[:] = 0.0
    for a in active:
        m = float(messages[a.id])
        msg[a.location] = m if a.id == me else -m


@torch.no_grad()
def collect_rollouts(actor: PolicyNet, critic: ValueNet, grid: GridMap, cfg: Config,
                     agent_counts: list[int], env_seeds: list[int], rng: np.random.Generator,
                     horizon: int, value_norm: ValueNorm | None = None) -> RolloutBuffer:
    """Run one lockstep episode per entry of ``agent_counts``.

    Messages are sampled first from the blank-message pass, written into every
    agent's message channel, and then actions are sampled.
    """
    value_norm = value_norm or ValueNorm()
    c_norm = cfg.rewards.c_norm
    max_agents = cfg.train.max_agents or max(agent_counts)
    structure = structure_channel(grid)
    worlds = [reset(grid, n, cfg.env, seed) for n, seed in zip(agent_counts, env_seeds)]
    states = {(e, a.id): np.zeros((actor.n_state, actor.hidden)) for e, w in enumerate(worlds) for a in w.agents}
    buf = RolloutBuffer()
    for key in states:
        buf.lanes[key] = []
    stats = [{"collisions": 0, "failures": 0, "swaps": 0, "reward": {a.id: 0.0 for a in w.agents}}
             for w in worlds]
    live = [True] * len(worlds)

    for t in range(horizon):
        batch = []  # (env, agent, view)
        critic_rows = []
        for e, world in enumerate(worlds):
            if not live[e]:
                continue
            active = world.active_agents()
            if not active:
                continue
            idle = idleness_channel(world, c_norm)
            for a in active:
                batch.append((e, a.id, encode_actor_view(grid, world, a.id, None, c_norm, structure, idle)))
            cview = encode_critic_view(grid, world, max_agents, c_norm, structure, idle)
            critic_rows.append((e, len(buf.critic_channels)))
            buf.critic_channels.append(cview.channels)
            buf.critic_extras.append(_critic_extras(cview, grid.shape))

        env_value = {}
        if critic_rows:
            idx = [i for _, i in critic_rows]
            cch = torch.from_numpy(np.stack([buf.critic_channels[i] for i in idx]))
            cex = torch.from_numpy(np.stack([buf.critic_extras[i] for i in idx]))
            vals = value_norm.denormalize(critic(cch, cex).numpy())
            env_value = {e: (i, float(v)) for (e, i), v in zip(critic_rows, vals)}

        actions: dict[int, dict[int, int]] = {}
        messages: dict[int, dict[int, int]] = {}
        recs = []
        if batch:
            ch = np.stack([v.channels for _, _, v in batch])
            ex = np.stack([_actor_extras(v) for _, _, v in batch])
            mk = np.stack([v.action_mask for _, _, v in batch])
            st = np.stack([states[(e, k)] for e, k, _ in batch])
            ch_t, ex_t, st_t = torch.from_numpy(ch), torch.from_numpy(ex), torch.from_numpy(st)
            msg_logits, h_comm = actor.comm(ch_t, ex_t, st_t)
            msg_logp = torch.log_softmax(msg_logits, dim=-1).numpy()
            for j, (e, k, _) in enumerate(batch):
                messages.setdefault(e, {})[k] = _sample(rng, msg_logp[j])
            for j, (e, k, _) in enumerate(batch):
                _fill_messages(ch[j], k, worlds[e].active_agents(), {i: m + 1 for i, m in messages[e].items()})
            raw, h_act = actor.act(torch.from_numpy(ch), ex_t, st_t)
            move_logp = masked_log_softmax(raw, torch.from_numpy(mk)).numpy()
            new_states = actor.combine_state(h_act, h_comm).numpy()
            for j, (e, k, _) in enumerate(batch):
                act = _sample(rng, move_logp[j])
                actions.setdefault(e, {})[k] = act
                ci, v = env_value[e]
                recs.append(Record(
                    env=e, agent=k, t=t, online=True, deployment=worlds[e].agents[k].deployments,
                    value=v, critic_idx=ci, channels=ch[j], extras=ex[j], mask=mk[j], state=st[j],
                    msg=messages[e][k], act=act, logp_m=float(msg_logp[j, messages[e][k]]),
                    logp_a=float(move_logp[j, act]),
                ))
                states[(e, k)] = new_states[j]
        by_key = {(r.env, r.agent): r for r in recs}

        for e, world in enumerate(worlds):
            if not live[e]:
                continue
            offline = [a for a in world.agents if a.status is Status.SWAPPING]
            acts = actions.get(e, {})
            msgs = {i: m + 1 for i, m in messages.get(e, {}).items()} if acts else None
            outcome = world.step(acts, msgs)
            rewards = step_rewards(world, outcome, cfg.rewards, max_agents)
            s = stats[e]
            s["collisions"] += outcome.collisions
            s["failures"] += len(outcome.failed)
            s["swaps"] += len(outcome.started_swap)
            for k, comps in rewards.items():
                rec = by_key[(e, k)]
                rec.reward = comps["total"]
                rec.done = k in outcome.failed
                s["reward"][k] += comps["total"]
                buf.lanes[(e, k)].append(rec)
            for a in offline:
                buf.lanes[(e, a.id)].append(Record(env=e, agent=a.id, t=t, online=False,
                                                   deployment=a.deployments))
            for k in outcome.redeployed:
                states[(e, k)] = np.zeros((actor.n_state, actor.hidden))
            if all(a.status is Status.FAILED for a in world.agents):
                live[e] = False
    for e, s in enumerate(stats):
        per_agent = list(s["reward"].values())
        buf.episode_stats.append({
            "agents": len(per_agent),
            "collisions": s["collisions"],
            "failures": s["failures"],
            "swaps": s["swaps"],
            "reward": float(np.mean(per_agent)),
        })
    return buf


def reconstruct_offline_segments(buf: RolloutBuffer) -> RolloutBuffer:
    """Give every offline record the critic input and value of its step.

    The global state at (env, t) is read from any online record of that step.
    If nobody was online the record is masked out of every loss and carries
    the lane's last known value so GAE stays continuous.
    """
    step_state = {}
    for rec in buf.records():
        if rec.online:
            step_state.setdefault((rec.env, rec.t), (rec.critic_idx, rec.value))
    for key in sorted(buf.lanes):
        last_value = 0.0
        for rec in buf.lanes[key]:
            if rec.online:
                last_value = rec.value
                continue
            found = step_state.get((rec.env, rec.t))
            if found is None:
                rec.masked = True
                rec.critic_idx = -1
                rec.value = last_value
            else:
                rec.critic_idx, rec.value = found
                last_value = rec.value
    return buf


def finalize_buffer(buf: RolloutBuffer, tc: TrainConfig) -> RolloutBuffer:
    """Reconstruct offline records, then compute per-lane GAE and normalised advantages."""
    reconstruct_offline_segments(buf)
    for key in sorted(buf.lanes):
        lane = buf.lanes[key]
        if not lane:
            continue
        adv, ret = compute_gae([r.reward for r in lane], [r.value for r in lane], tc.gamma, tc.gae_lambda, 0.0)
        for r, a, g in zip(lane, adv, ret):
            r.advantage, r.ret = float(a), float(g)
    online = [r for r in buf.records() if r.online]
    normed = normalize_advantages([r.advantage for r in online])
    for r, a in zip(online, normed):
        r.advantage = float(a)
    return buf


# -- minibatches -----------------------------------------------------------------

@dataclass
class ActorBatch:
    channels: torch.Tensor  # (N, L, C, H, W)
    extras: torch.Tensor  # (N, L, E)
    mask: torch.Tensor  # (N, L, 5) bool
    valid: torch.Tensor  # (N, L) float
    state0: torch.Tensor  # (N, S, hidden)
    msg: torch.Tensor  # (N, L) long
    act: torch.Tensor
    logp_old: torch.Tensor  # (N, L) joint log-probability at rollout time
    advantage: torch.Tensor


@dataclass
class CriticBatch:
    channels: torch.Tensor
    extras: torch.Tensor
    ret: torch.Tensor  # normalised targets
    value_old: torch.Tensor  # normalised rollout values


def make_chunks(buf: RolloutBuffer, length: int) -> list[list[Record]]:
    """Split each lane's online records into runs of at most ``length``
    consecutive steps within one deployment."""
    chunks = []
    for key in sorted(buf.lanes):
        run: list[Record] = []
        for rec in buf.lanes[key]:
            if not rec.online:
                if run:
                    chunks.append(run)
                run = []
                continue
            if run and (rec.deployment != run[-1].deployment or len(run) == length):
                chunks.append(run)
                run = []
            run.append(rec)
        if run:
            chunks.append(run)
    return chunks


def actor_batch(chunks: list[list[Record]], length: int) -> ActorBatch:
    n = len(chunks)
    first = chunks[0][0]
    ch = np.zeros((n, length, *first.channels.shape))
    ex = np.zeros((n, length, first.extras.shape[0]))
    mk = np.ones((n, length, first.mask.shape[0]), dtype=bool)
    valid = np.zeros((n, length))
    msg = np.zeros((n, length), dtype=np.int64)
    act = np.zeros((n, length), dtype=np.int64)
    lp = np.zeros((n, length))
    adv = np.zeros((n, length))
    st = np.stack([c[0].state for c in chunks])
    for i, chunk in enumerate(chunks):
        for j, r in enumerate(chunk):
            ch[i, j], ex[i, j], mk[i, j] = r.channels, r.extras, r.mask
            valid[i, j] = 1.0
            msg[i, j], act[i, j] = r.msg, r.act
            lp[i, j] = r.logp_m + r.logp_a
            adv[i, j] = r.advantage
    t = torch.from_numpy
    return ActorBatch(t(ch), t(ex), t(mk), t(valid), t(st), t(msg), t(act), t(lp), t(adv))


def critic_batch(buf: RolloutBuffer, records: list[Record], value_norm: ValueNorm) -> CriticBatch:
    idx = [r.critic_idx for r in records]
    return CriticBatch(
        channels=torch.from_numpy(np.stack([buf.critic_channels[i] for i in idx])),
        extras=torch.from_numpy(np.stack([buf.critic_extras[i] for i in idx])),
        ret=torch.tensor(value_norm.normalize(np.array([r.ret for r in records])), dtype=DTYPE),
        value_old=torch.tensor(value_norm.normalize(np.array([r.value for r in records])), dtype=DTYPE),
    )


def actor_loss(actor: PolicyNet, batch: ActorBatch, tc: TrainConfig):
    """Clipped joint-ratio surrogate minus entropy bonus, averaged over valid steps.

    Re-unrolls each chunk from its stored initial recurrent state.
    """
    msg_logp, move_logp = actor.unroll(batch.channels, batch.extras, batch.mask, batch.state0)
    new_lp = (msg_logp.gather(2, batch.msg.unsqueeze(2)).squeeze(2)
              + move_logp.gather(2, batch.act.unsqueeze(2)).squeeze(2))
    ent = categorical_entropy(msg_logp) + categorical_entropy(move_logp)
    valid = batch.valid
    n = valid.sum()
    ratio = torch.exp(torch.where(valid > 0, new_lp - batch.logp_old, torch.zeros_like(new_lp)))
    surr = clipped_surrogate(ratio, batch.advantage, tc.clip_eps)
    loss = (surr * valid).sum() / n - tc.entropy_coef * (ent * valid).sum() / n
    with torch.no_grad():
        clipped = ((ratio - 1).abs() > tc.clip_eps).to(DTYPE)
        stats = {
            "entropy": float((ent * valid).sum() / n),
            "mean_ratio": float((ratio * valid).sum() / n),
            "clip_fraction": float((clipped * valid).sum() / n),
        }
    return loss, stats


def critic_loss(critic: ValueNet, batch: CriticBatch, tc: TrainConfig) -> torch.Tensor:
    """Value-clipped squared error (pessimistic max of the clipped and unclipped terms)."""
    v = critic(batch.channels, batch.extras)
    v_clip = batch.value_old + torch.clamp(v - batch.value_old, -tc.clip_eps, tc.clip_eps)
    return torch.maximum((v - batch.ret) ** 2, (v_clip - batch.ret) ** 2).mean()


def surrogate_loss(actor, critic, abatch: ActorBatch, cbatch: CriticBatch, tc: TrainConfig):
    """Total minimised objective: actor surrogate + value_coef * critic loss."""
    a_loss, stats = actor_loss(actor, abatch, tc)
    c_loss = critic_loss(critic, cbatch, tc)
    stats = dict(stats, actor_loss=float(a_loss.detach()), critic_loss=float(c_loss.detach()))
    return a_loss + tc.value_coef * c_loss, stats


def update(actor, critic, opt_actor, opt_critic, buf: RolloutBuffer, tc: TrainConfig,
           rng: np.random.Generator, value_norm: ValueNorm, dump_dir=None) -> dict:
    """``epochs`` passes of ``num_batches`` minibatches; returns averaged statistics."""
    chunks = make_chunks(buf, tc.chunk_length)
    critic_records = [r for r in buf.records() if not r.masked]
    value_norm.update([r.ret for r in critic_records])
    totals: dict[str, float] = {}
    count = 0
    for _ in range(tc.epochs):
        chunk_order = rng.permutation(len(chunks))
        critic_order = rng.permutation(len(critic_records))
        n_batches = max(1, min(tc.num_batches, len(chunks)))
        for a_idx, c_idx in zip(np.array_split(chunk_order, n_batches), np.array_split(critic_order, n_batches)):
            if len(a_idx) == 0 or len(c_idx) == 0:
                continue
            abatch = actor_batch([chunks[i] for i in a_idx], tc.chunk_length)
            cbatch = critic_batch(buf, [critic_records[i] for i in c_idx], value_norm)
            loss, stats = surrogate_loss(actor, critic, abatch, cbatch, tc)
            if not torch.isfinite(loss):
                path = _dump_batch(dump_dir, abatch, cbatch)
                raise NonFiniteLoss(f"non-finite loss; batch written to {path}")
            opt_actor.zero_grad()
            opt_critic.zero_grad()
            loss.backward()
            if tc.max_grad_norm:
                torch.nn.utils.clip_grad_norm_(actor.parameters(), tc.max_grad_norm)
                torch.nn.utils.clip_grad_norm_(critic.parameters(), tc.max_grad_norm)
            opt_actor.step()
            opt_critic.step()
            for k, v in stats.items():
                totals[k] = totals.get(k, 0.0) + v
            count += 1
    return {k: v / max(count, 1) for k, v in totals.items()}


def _dump_batch(dump_dir, abatch: ActorBatch, cbatch: CriticBatch) -> str:
    import tempfile

    directory = Path(dump_dir) if dump_dir is not None else Path(tempfile.mkdtemp(prefix="patrolmarl-"))
    directory.mkdir(parents=True, exist_ok=True)
    path = directory / "nonfinite_batch.pt"
    torch.save({"actor": vars(abatch), "critic": vars(cbatch)}, path)
    return str(path)


# -- trainer -----------------------------------------------------------------------

class Trainer:
    """Owns the networks, optimisers and the iteration loop.

    One training "episode" is one iteration: ``parallel_episodes`` environment
    episodes followed by one update. The curriculum and learning-rate
    schedule are indexed by it.
    """

    def __init__(self, grid: GridMap, cfg: Config, seed: int, run_dir=None):
        self.cfg = cfg.resolved()
        self.grid = grid
        self.seed = int(seed)
        self.run_dir = Path(run_dir) if run_dir is not None else None
        tc = self.cfg.train
        torch.set_num_threads(1)
        init_seeds = np.random.SeedSequence([self.seed, 0]).generate_state(2)
        self.actor = init_weights(PolicyNet(grid.height, grid.width, tc.net), int(init_seeds[0]))
        self.critic = init_weights(ValueNet(grid.height, grid.width, tc.max_agents, tc.net), int(init_seeds[1]))
        self.opt_actor = torch.optim.Adam(self.actor.parameters(), lr=tc.learning_rate(0), foreach=True)
        self.opt_critic = torch.optim.Adam(self.critic.parameters(), lr=tc.learning_rate(0), foreach=True)
        self.value_norm = ValueNorm()
        self.episode = 0
        self.history: list[dict] = []
        if self.run_dir is not None:
            self.run_dir.mkdir(parents=True, exist_ok=True)
            dump_json(dict(to_dict(self.cfg), seed=self.seed, map=grid.name), self.run_dir / "config.json")
            (self.run_dir / "metrics.jsonl").write_text("", encoding="utf-8")

    def iteration(self) -> dict:
        tc = self.cfg.train
        ep = self.episode
        counts = tc.agent_counts(ep)
        seq = np.random.SeedSequence([self.seed, 1, ep])
        env_seeds = [int(s) for s in seq.generate_state(len(counts) + 2)]
        sample_rng = np.random.default_rng(env_seeds[-2])
        shuffle_rng = np.random.default_rng(env_seeds[-1])
        lr = tc.learning_rate(ep)
        for opt in (self.opt_actor, self.opt_critic):
            for group in opt.param_groups:
                group["lr"] = lr
        buf = collect_rollouts(self.actor, self.critic, self.grid, self.cfg, counts, env_seeds[:len(counts)],
                               sample_rng, tc.horizon, self.value_norm)
        finalize_buffer(buf, tc)
        stats = update(self.actor, self.critic, self.opt_actor, self.opt_critic, buf, tc, shuffle_rng,
                       self.value_norm, self.run_dir)
        row = {
            "episode": ep,
            "agents": counts,
            "lr": lr,
            "reward": float(np.mean([s["reward"] for s in buf.episode_stats])),
            "collisions": int(sum(s["collisions"] for s in buf.episode_stats)),
            "failures": int(sum(s["failures"] for s in buf.episode_stats)),
            "swaps": int(sum(s["swaps"] for s in buf.episode_stats)),
            **stats,
        }
        self.history.append(row)
        self.episode += 1
        if self.run_dir is not None:
            with open(self.run_dir / "metrics.jsonl", "a", encoding="utf-8") as fh:
                fh.write(json.dumps(row, sort_keys=True) + "\n")
            if tc.checkpoint_every and self.episode % tc.checkpoint_every == 0:
                self.save(self.run_dir / "checkpoints" / f"ep{self.episode:05d}")
        return row

    def train(self, episodes: int | None = None) -> list[dict]:
        total = self.cfg.train.episodes if episodes is None else episodes
        while self.episode < total:
            self.iteration()
        if self.run_dir is not None:
            self.save(self.run_dir / "checkpoints" / "final")
        return self.history

    def save(self, path) -> None:
        save_checkpoint(path, {"actor": self.actor, "critic": self.critic}, {
            "episode": self.episode,
            "map_shape": list(self.grid.shape),
            "max_agents": self.cfg.train.max_agents,
            "net": to_dict(self.cfg.train.net),
            "value_norm": self.value_norm.to_dict(),
        })


def load_policy(path) -> tuple[PolicyNet, dict]:
    """Actor network from a checkpoint written by :meth:`Trainer.save`."""
    from .config import NetConfig

    meta, states = load_checkpoint(path)
    net_cfg = NetConfig(**{k: tuple(v) if isinstance(v, list) else v for k, v in meta["net"].items()})
    h, w = meta["map_shape"]
    actor = PolicyNet(h, w, net_cfg)
    actor.load_state_dict(states["actor"])
    return actor, meta

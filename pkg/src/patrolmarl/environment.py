"""Lockstep patrolling world.

One call to :meth:`WorldState.step` runs the five phases of a step in order:
dynamics perturbation, conflict resolution, duration sampling, idleness
advance/zeroing and battery/swap bookkeeping.

Time is kept in integer ticks (``TICKS_PER_STEP`` per base step) so idleness
bookkeeping is exact; minutes are ``ticks * minutes_per_tick``.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np

from .config import EnvParams
from .grid import N_ACTIONS, Action, Cell, CellKind, GridMap

TICKS_PER_STEP = 1000
N_MESSAGES = 16


class TooManyAgents(ValueError):
    pass


class UnknownAgent(KeyError):
    pass


class InvalidAction(ValueError):
    pass


class MessageOutOfRange(ValueError):
    pass


class Status(enum.Enum):
    ACTIVE = "active"
    SWAPPING = "swapping"
    FAILED = "failed"


class Event(str, enum.Enum):
    MOVED = "moved"
    STAYED = "stayed"
    BOUNCED = "bounced"
    STARTED_SWAP = "started_swap"
    REDEPLOYED = "redeployed"
    BATTERY_FAILED = "battery_failed"


@dataclass
class AgentState:
    id: int
    location: Cell | None
    battery: float  # step-units in [0, b_max]
    status: Status = Status.ACTIVE
    swap_timer: int = 0
    p_dyn: float = 0.0
    last_message: int | None = None
    intended_action: int | None = None
    deployments: int = 0  # incremented on every redeploy

    @property
    def active(self) -> bool:
        return self.status is Status.ACTIVE


@dataclass
class StepOutcome:
    duration: float  # minutes
    duration_ticks: int
    events: dict[int, list[Event]]
    collisions: int
    involved: set[int]
    perturbed: set[int]
    executed: dict[int, int]
    final_cells: dict[int, Cell]  # cell of every agent that acted, after movement
    pre_visit_ticks: np.ndarray  # flat idleness after the advance, before zeroing
    started_swap: dict[int, float] = field(default_factory=dict)  # id -> battery fraction
    failed: set[int] = field(default_factory=set)
    redeployed: set[int] = field(default_factory=set)


def resolve_conflicts(origins: dict[int, Cell], targets: dict[int, Cell], rng) -> tuple[dict, set, set]:
    """Resolve simultaneous moves.

    Returns ``(final_cells, bounced, involved)``. A contested cell goes to one
    uniformly drawn contender; head-on exchanges bounce both agents; moving
    into a cell whose occupant stays (or was bounced back) bounces the mover.
    Rules are re-applied until nothing changes.
    """
    final = dict(targets)
    origin_of = {cell: i for i, cell in origins.items()}
    moving = {i for i in targets if targets[i] != origins[i]}
    bounced: set[int] = set()
    involved: set[int] = set()
    winners: dict[Cell, int] = {}

    def bounce(i):
        moving.discard(i)
        bounced.add(i)
        involved.add(i)
        final[i] = origins[i]

    changed = True
    while changed:
        changed = False
        for i in sorted(moving):
            if i not in moving:
                continue
            j = origin_of.get(targets[i])
            if j is not None and j in moving and targets[j] == origins[i]:
                bounce(i)
                bounce(j)
                changed = True
        for i in sorted(moving):
            j = origin_of.get(targets[i])
            if j is not None and j not in moving:
                bounce(i)
                involved.add(j)
                changed = True
        claims: dict[Cell, list[int]] = {}
        for i in sorted(moving):
            claims.setdefault(targets[i], []).append(i)
        for cell in sorted(claims):
            ids = claims[cell]
            if len(ids) < 2:
                continue
            winner = winners.get(cell)
            if winner not in ids:
                winner = ids[int(rng.integers(len(ids)))]
                winners[cell] = winner
            involved.update(ids)
            for i in ids:
                if i != winner:
                    bounce(i)
                    changed = True
    return final, bounced, involved


class WorldState:
    """Dynamic state of one episode. Confined to a single worker."""

    def __init__(self, grid: GridMap, params: EnvParams, agents: list[AgentState],
                 idle_ticks: np.ndarray, rng: np.random.Generator):
        self.grid = grid
        self.params = params
        self.agents = agents
        self.idle_ticks = idle_ticks
        self.rng = rng
        self.clock_ticks = 0
        self.step_index = 0
        self.minutes_per_tick = params.dt_minutes / TICKS_PER_STEP
        rates = np.zeros(grid.height * grid.width, dtype=np.int64)
        rates[grid.vertex_index] = 1 + grid.priority.ravel()[grid.vertex_index]
        self.rates = rates
        self._max_ticks = int(round(TICKS_PER_STEP * params.duration_multiplier_max))
        self._transitions = grid.transitions
        self._moves_from = grid.moves_from
        self._stations = grid.stations
        self._station_set = grid.station_set

    # -- views -----------------------------------------------------------
    @property
    def clock(self) -> float:
        return self.clock_ticks * self.minutes_per_tick

    @property
    def idleness(self) -> np.ndarray:
        """Idleness matrix in minutes; obstacles -1, stations 0."""
        out = self.idle_ticks.reshape(self.grid.shape) * self.minutes_per_tick
        out[self.grid.cells == CellKind.OBSTACLE] = -1.0
        return out

    def vertex_idleness(self) -> np.ndarray:
        return self.idle_ticks[self.grid.vertex_index] * self.minutes_per_tick

    def idleness_stats(self) -> tuple[float, float]:
        v = self.idle_ticks[self.grid.vertex_index]
        return float(v.mean()) * self.minutes_per_tick, float(v.max()) * self.minutes_per_tick

    def active_agents(self) -> list[AgentState]:
        return [a for a in self.agents if a.status is Status.ACTIVE]

    def agent(self, agent_id: int) -> AgentState:
        if not (0 <= agent_id < len(self.agents)):
            raise UnknownAgent(agent_id)
        return self.agents[agent_id]

    def occupancy(self) -> dict[Cell, int]:
        return {a.location: a.id for a in self.agents if a.status is Status.ACTIVE}

    def battery_fraction(self, agent_id: int) -> float:
        return min(1.0, self.agents[agent_id].battery / self.params.b_max)

    def action_mask(self, agent_id: int) -> list[bool]:
        a = self.agent(agent_id)
        if a.status is not Status.ACTIVE:
            raise UnknownAgent(f"agent {agent_id} is not active")
        row = self._transitions[self.grid.index(a.location)]
        return [t is not None for t in row]

    # -- dynamics --------------------------------------------------------
    def step(self, joint_actions: dict[int, int], joint_messages: dict[int, int] | None = None) -> StepOutcome:
        grid = self.grid
        rng = self.rng
        active = [a for a in self.agents if a.status is Status.ACTIVE]
        ids = {a.id for a in active}
        if set(joint_actions) != ids:
            raise InvalidAction(f"actions given for {sorted(joint_actions)}, active agents are {sorted(ids)}")
        if joint_messages is not None:
            if set(joint_messages) != ids:
                raise MessageOutOfRange(f"messages given for {sorted(joint_messages)}, active agents are {sorted(ids)}")
            for aid, m in joint_messages.items():
                if not (1 <= int(m) <= N_MESSAGES):
                    raise MessageOutOfRange(f"agent {aid} sent message {m}, expected 1..{N_MESSAGES}")
        rows = {}
        for a in active:
            act = int(joint_actions[a.id])
            row = self._moves_from[a.location]
            if not (0 <= act < N_ACTIONS) or row[act] is None:
                raise InvalidAction(f"agent {a.id} cannot take action {act} at {a.location}")
            rows[a.id] = row
            a.intended_action = act
            if joint_messages is not None:
                a.last_message = int(joint_messages[a.id])

        # (1) dynamics perturbation
        executed = {}
        perturbed = set()
        draws = rng.random(len(active))
        for k, a in enumerate(active):
            act = a.intended_action
            if draws[k] < a.p_dyn:
                perturbed.add(a.id)
                valid = [i for i, t in enumerate(rows[a.id]) if t is not None]
                act = valid[int(rng.integers(len(valid)))]
            executed[a.id] = act

        # (2) conflict resolution
        origins = {a.id: a.location for a in active}
        targets = {a.id: rows[a.id][executed[a.id]] for a in active}
        final, bounced, involved = resolve_conflicts(origins, targets, rng)

        # (3) duration
        if perturbed:
            ticks = int(rng.integers(TICKS_PER_STEP, self._max_ticks, endpoint=True))
        else:
            ticks = TICKS_PER_STEP
        self.clock_ticks += ticks
        self.step_index += 1

        # (4) idleness
        self.idle_ticks += ticks * self.rates
        pre_visit = self.idle_ticks.copy()
        width = grid.width
        for aid, (r, c) in final.items():
            self.idle_ticks[r * width + c] = 0

        events: dict[int, list[Event]] = {}
        for a in active:
            aid = a.id
            if aid in bounced:
                ev = Event.BOUNCED
            elif final[aid] == origins[aid]:
                ev = Event.STAYED
            else:
                ev = Event.MOVED
            events[aid] = [ev]
            a.location = final[aid]

        # (5) battery, failures, swaps
        started_swap = {}
        failed = set()
        redeployed = set()
        waiting = []
        for a in self.agents:
            if a.status is Status.SWAPPING:
                a.swap_timer -= 1
                if a.swap_timer <= 0:
                    waiting.append(a)
        lo, hi = self.params.drain_range
        drains = rng.uniform(lo, hi, len(active))
        b_max = self.params.b_max
        for k, a in enumerate(active):
            a.battery = max(0.0, a.battery - drains[k])
            intentional = (
                a.location in self._station_set
                and origins[a.id] not in self._station_set
                and executed[a.id] == a.intended_action
                and a.id not in bounced
            )
            if intentional:
                started_swap[a.id] = min(1.0, a.battery / b_max)
                s_lo, s_hi = self.params.b_swap_range
                a.swap_timer = int(rng.integers(s_lo, s_hi, endpoint=True))
                a.status = Status.SWAPPING
                a.location = None
                events[a.id].append(Event.STARTED_SWAP)
            elif a.battery < 1.0:
                a.battery = 0.0
                a.status = Status.FAILED
                a.location = None
                failed.add(a.id)
                events[a.id].append(Event.BATTERY_FAILED)
        if waiting:
            occupied = {a.location for a in self.agents if a.status is Status.ACTIVE}
            for a in waiting:
                free = [s for s in self._stations if s not in occupied]
                if not free:
                    continue  # retried next step
                a.location = free[0]
                occupied.add(free[0])
                a.battery = b_max
                a.status = Status.ACTIVE
                a.swap_timer = 0
                a.deployments += 1
                a.last_message = None
                redeployed.add(a.id)
                events.setdefault(a.id, []).append(Event.REDEPLOYED)

        return StepOutcome(
            duration=ticks * self.minutes_per_tick,
            duration_ticks=ticks,
            events=events,
            collisions=len(bounced),
            involved=involved,
            perturbed=perturbed,
            executed=executed,
            final_cells=final,
            pre_visit_ticks=pre_visit,
            started_swap=started_swap,
            failed=failed,
            redeployed=redeployed,
        )

    def log_record(self, outcome: StepOutcome) -> dict:
        """One JSON-lines event-log record for the step just taken."""
        mean, mx = self.idleness_stats()
        events = [
            {"agent": aid, "event": ev.value}
            for aid in sorted(outcome.events)
            for ev in outcome.events[aid]
        ]
        return {
            "step": self.step_index,
            "clock": self.clock,
            "duration_ticks": outcome.duration_ticks,
            "events": events,
            "collisions": outcome.collisions,
            "idleness_mean": mean,
            "idleness_max": mx,
            "positions": {str(a.id): list(a.location) for a in self.agents if a.status is Status.ACTIVE},
        }


def reset(grid: GridMap, n_agents: int, params: EnvParams, seed, *,
          positions: list[Cell] | None = None, batteries: list[float] | None = None,
          p_dyn: list[float] | None = None) -> WorldState:
    """Start an episode. ``positions``/``batteries``/``p_dyn`` override the
    random draws (batteries in step-units), which scripted tests rely on."""
    verts = grid.vertices
    if n_agents > len(verts):
        raise TooManyAgents(f"{n_agents} agents but only {len(verts)} vertices")
    rng = np.random.default_rng(seed)
    picks = rng.choice(len(verts), size=n_agents, replace=False)
    lo, hi = params.b_init_range
    b_draw = rng.uniform(lo, hi, n_agents) * params.b_max
    p_draw = rng.uniform(0.0, params.p_dyn_max, n_agents)
    if positions is not None:
        if len(positions) != n_agents or len(set(positions)) != n_agents:
            raise ValueError("positions must list one distinct cell per agent")
        for cell in positions:
            if grid.kind(cell) is CellKind.OBSTACLE:
                raise ValueError(f"agent placed on obstacle {cell}")
    agents = []
    for i in range(n_agents):
        agents.append(AgentState(
            id=i,
            location=tuple(positions[i]) if positions is not None else verts[int(picks[i])],
            battery=float(batteries[i]) if batteries is not None else float(b_draw[i]),
            p_dyn=float(p_dyn[i]) if p_dyn is not None else float(p_draw[i]),
        ))
    idle = np.zeros(grid.height * grid.width, dtype=np.int64)
    if params.init_idleness == "saturated":
        minutes = params.saturated_idleness if params.saturated_idleness is not None else 2000.0
        idle[grid.vertex_index] = int(round(minutes / params.dt_minutes * TICKS_PER_STEP))
    for a in agents:
        idle[grid.index(a.location)] = 0
    return WorldState(grid, params, agents, idle, rng)


__all__ = [
    "Action", "AgentState", "Event", "InvalidAction", "MessageOutOfRange", "N_MESSAGES",
    "Status", "StepOutcome", "TICKS_PER_STEP", "TooManyAgents", "UnknownAgent",
    "WorldState", "reset", "resolve_conflicts",
]

"""Matrix encodings of the world as seen by an agent's actor and by the critic.

Actor channels, in order: map structure (vertex 0, obstacle -1, station
``STATION_VALUE``), normalised idleness, locations (self 1, others -2) and
messages (own +m, others -m). The critic gets the first three with every
active agent marked 1 in the location channel, plus padded battery and
location lists.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .environment import N_MESSAGES, Status, TooManyAgents, UnknownAgent, WorldState
from .grid import CellKind, GridMap
from .rewards import normalize_idleness

STATION_VALUE = 100.0
SELF_MARK = 1.0
OTHER_MARK = -2.0

assert STATION_VALUE > SELF_MARK + N_MESSAGES


@dataclass
class ObservationView:
    channels: np.ndarray  # (C, H, W) float64
    action_mask: np.ndarray | None = None  # 5 bools, Up/Down/Left/Right/Stay
    battery_scalar: float | None = None  # actor only
    battery_vector: np.ndarray | None = None  # critic only, length max_agents
    location_list: np.ndarray | None = None  # critic only, (max_agents, 2) int


def structure_channel(grid: GridMap) -> np.ndarray:
    out = np.zeros(grid.shape, dtype=np.float64)
    out[grid.cells == CellKind.OBSTACLE] = -1.0
    out[grid.cells == CellKind.STATION] = STATION_VALUE
    return out


def idleness_channel(world: WorldState, c_norm: float) -> np.ndarray:
    out = np.zeros(world.grid.height * world.grid.width, dtype=np.float64)
    vidx = world.grid.vertex_index
    out[vidx] = normalize_idleness(world.idle_ticks[vidx] * world.minutes_per_tick, c_norm)
    return out.reshape(world.grid.shape)


def valid_actions(grid: GridMap, world: WorldState, agent_id: int) -> np.ndarray:
    """Mask over Up/Down/Left/Right/Stay. Cells held by other agents stay valid."""
    agent = world.agent(agent_id)
    if agent.status is not Status.ACTIVE:
        raise UnknownAgent(f"agent {agent_id} is not active")
    row = grid.transitions[grid.index(agent.location)]
    return np.array([t is not None for t in row], dtype=bool)


def encode_actor_view(grid: GridMap, world: WorldState, agent_id: int,
                      messages: dict[int, int] | None, c_norm: float,
                      structure: np.ndarray | None = None,
                      idleness: np.ndarray | None = None) -> ObservationView:
    """``structure``/``idleness`` may be passed in precomputed when encoding
    several agents of the same state."""
    me = world.agent(agent_id)
    if me.status is not Status.ACTIVE:
        raise UnknownAgent(f"agent {agent_id} is not active")
    if structure is None:
        structure = structure_channel(grid)
    if idleness is None:
        idleness = idleness_channel(world, c_norm)
    loc = np.zeros(grid.shape, dtype=np.float64)
    msg = np.zeros(grid.shape, dtype=np.float64)
    for a in world.agents:
        if a.status is not Status.ACTIVE:
            continue
        own = a.id == agent_id
        loc[a.location] = SELF_MARK if own else OTHER_MARK
        if messages is not None:
            m = float(messages[a.id])
            msg[a.location] = m if own else -m
    return ObservationView(
        channels=np.stack([structure, idleness, loc, msg]),
        action_mask=valid_actions(grid, world, agent_id),
        battery_scalar=world.battery_fraction(agent_id),
    )


def encode_critic_view(grid: GridMap, world: WorldState, max_agents: int, c_norm: float,
                       structure: np.ndarray | None = None,
                       idleness: np.ndarray | None = None) -> ObservationView:
    active = [a for a in world.agents if a.status is Status.ACTIVE]
    if len(active) > max_agents:
        raise TooManyAgents(f"{len(active)} active agents exceed max_agents={max_agents}")
    if structure is None:
        structure = structure_channel(grid)
    if idleness is None:
        idleness = idleness_channel(world, c_norm)
    occ = np.zeros(grid.shape, dtype=np.float64)
    batteries = np.ones(max_agents, dtype=np.float64)
    locations = np.tile(np.asarray(grid.stations[0], dtype=np.int64), (max_agents, 1))
    for slot, a in enumerate(active):
        occ[a.location] = SELF_MARK
        batteries[slot] = world.battery_fraction(a.id)
        locations[slot] = a.location
    return ObservationView(
        channels=np.stack([structure, idleness, occ]),
        battery_vector=batteries,
        location_list=locations,
    )

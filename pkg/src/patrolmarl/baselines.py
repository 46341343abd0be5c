"""Classical patrolling strategies used for comparison.

* CR   - conscientious reactive: move to the neighbouring vertex with the
         highest idleness.
* PART - each agent patrols its own connected, balanced partition with the CR
         rule; partitions of recharging agents are lent to a neighbour.
* SEBS - state-exchange Bayesian: score neighbours by a gain posterior and
         discount vertices other agents have declared as their next target.

None of them manage batteries on their own, so every controller layers the
shortest-path charging policy on top.
"""

from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass

import numpy as np

from .config import Config
from .environment import Event, Status, StepOutcome, WorldState
from .grid import ACTION_DELTAS, MOVES, STAY, Cell, CellKind, GridMap, bfs_distances


class PartitionFailure(RuntimeError):
    pass


class NoPathToStation(RuntimeError):
    pass


# -- conscientious reactive ------------------------------------------------

def cr_next_action(world: WorldState, agent_id: int, allowed=None) -> int:
    """Greedy move to the most idle neighbouring vertex.

    ``allowed`` optionally restricts targets to a set of cells. Ties go to the
    first action in Up, Down, Left, Right order; Stay only when no move exists.
    """
    grid = world.grid
    row = grid.moves_from[world.agents[agent_id].location]
    verts = grid.vertex_set
    idle = world.idle_ticks
    width = grid.width
    best, best_idle = STAY, -1
    for act in MOVES:
        target = row[act]
        if target is None or target not in verts:
            continue
        if allowed is not None and target not in allowed:
            continue
        value = idle[target[0] * width + target[1]]
        if value > best_idle:
            best, best_idle = act, value
    return best


# -- partitioning ----------------------------------------------------------

@dataclass
class PartitionAssignment:
    partition_of: dict[Cell, int]
    home_partition: list[frozenset]

    def boundary_lengths(self, grid: GridMap) -> np.ndarray:
        """Number of grid edges shared by each pair of partitions."""
        n = len(self.home_partition)
        out = np.zeros((n, n), dtype=np.int64)
        for cell, k in self.partition_of.items():
            for nb in grid.neighbors(cell):
                j = self.partition_of.get(nb)
                if j is not None and j != k and cell < nb:
                    out[k, j] += 1
                    out[j, k] += 1
        return out


def _vertex_neighbors(grid: GridMap, cell: Cell, pool) -> list[Cell]:
    r, c = cell
    out = []
    for dr, dc in ACTION_DELTAS[:4]:
        nb = (r + dr, c + dc)
        if nb in pool:
            out.append(nb)
    return out


def _connected(grid: GridMap, cells) -> bool:
    cells = set(cells)
    if not cells:
        return True
    start = next(iter(cells))
    seen = {start}
    queue = deque([start])
    while queue:
        cur = queue.popleft()
        for nb in _vertex_neighbors(grid, cur, cells):
            if nb not in seen:
                seen.add(nb)
                queue.append(nb)
    return len(seen) == len(cells)


def _distances_within(grid: GridMap, start: Cell, pool) -> dict[Cell, int]:
    dist = {start: 0}
    queue = deque([start])
    while queue:
        cur = queue.popleft()
        for nb in _vertex_neighbors(grid, cur, pool):
            if nb not in dist:
                dist[nb] = dist[cur] + 1
                queue.append(nb)
    return dist


def _carve(grid: GridMap, start: Cell, size: int, pool: set) -> set | None:
    """Grow a connected region of exactly ``size`` cells from ``start`` such
    that what is left of ``pool`` stays connected. None if the growth stalls."""
    if not _connected(grid, pool - {start}):
        return None
    dist = _distances_within(grid, start, pool)
    region = {start}
    rest = pool - region
    while len(region) < size:
        frontier = {nb for cell in region for nb in _vertex_neighbors(grid, cell, rest)}

        def preference(cell):
            hugging = sum(1 for nb in _vertex_neighbors(grid, cell, pool) if nb in region)
            return (dist[cell], -hugging, cell)

        for cell in sorted(frontier, key=preference):
            if _connected(grid, rest - {cell}):
                region.add(cell)
                rest.discard(cell)
                break
        else:
            return None
    return region


def _tree_cut(grid: GridMap, pool: set, sizes: set, rng) -> set | None:
    """Cut a subtree with one of ``sizes`` cells off a random DFS spanning tree
    of ``pool``. The remainder is what is left of the tree, so it stays
    connected. DFS trees are long and thin, which makes exact sizes common."""
    ordered = sorted(pool)
    root = ordered[int(rng.integers(len(ordered)))]
    parent = {root: None}
    order = []
    stack = [root]
    while stack:
        cur = stack.pop()
        order.append(cur)
        nbs = [nb for nb in _vertex_neighbors(grid, cur, pool) if nb not in parent]
        for i in rng.permutation(len(nbs)):
            parent[nbs[i]] = cur
            stack.append(nbs[i])
    size = {cell: 1 for cell in order}
    for cell in reversed(order):
        if parent[cell] is not None:
            size[parent[cell]] += size[cell]
    hits = [cell for cell in order if parent[cell] is not None and size[cell] in sizes]
    if not hits:
        return None
    top = hits[int(rng.integers(len(hits)))]
    region = {top}
    for cell in order:  # parents precede children in DFS order
        if parent[cell] in region:
            region.add(cell)
    return region


def partition_sizes(n_vertices: int, n_agents: int) -> list[int]:
    q, r = divmod(n_vertices, n_agents)
    return [q + 1] * r + [q] * (n_agents - r)


def partition_map(grid: GridMap, n_agents: int, seed, max_attempts: int = 64,
                  tree_tries: int = 200) -> PartitionAssignment:
    """Balanced connected partition of the vertex cells.

    Regions are carved one at a time from spread-out starting vertices; each
    carve keeps the uncarved remainder connected, so the last region is too.
    When greedy carving stalls, the region is cut off a random spanning tree
    of the remainder instead. Stalled attempts restart from other seeds.
    """
    verts = set(grid.vertices)
    if not (1 <= n_agents <= len(verts)):
        raise PartitionFailure(f"cannot split {len(verts)} vertices among {n_agents} agents")
    sizes = partition_sizes(len(verts), n_agents)
    rng = np.random.default_rng(seed)
    for attempt in range(max_attempts):
        pool = set(verts)
        regions = []
        left = list(sizes)
        for _ in range(n_agents - 1):
            size = left[0]
            ordered = sorted(pool)
            if attempt == 0:
                # double sweep: the farthest cell from the farthest cell is peripheral
                probe = ordered[int(rng.integers(len(ordered)))]
                far = _distances_within(grid, probe, pool)
                probe = max(far, key=lambda c: (far[c], c))
                far = _distances_within(grid, probe, pool)
                start = max(far, key=lambda c: (far[c], c))
            else:
                start = ordered[int(rng.integers(len(ordered)))]
            region = _carve(grid, start, size, pool)
            for _ in range(tree_tries if region is None else 0):
                region = _tree_cut(grid, pool, set(left), rng)
                if region is not None:
                    break
            if region is None:
                break
            left.remove(len(region))
            regions.append(frozenset(region))
            pool -= region
        else:
            regions.append(frozenset(pool))
            assignment = PartitionAssignment(
                partition_of={cell: k for k, region in enumerate(regions) for cell in region},
                home_partition=regions,
            )
            if not partition_violations(grid, assignment, n_agents):
                return assignment
    raise PartitionFailure(f"no balanced connected {n_agents}-way partition after {max_attempts} attempts")


def partition_violations(grid: GridMap, assignment: PartitionAssignment, n_agents: int) -> list[str]:
    """Independent checker for the partition invariants. Empty list means valid."""
    problems = []
    verts = set(grid.vertices)
    parts = assignment.home_partition
    if len(parts) != n_agents:
        problems.append(f"{len(parts)} partitions for {n_agents} agents")
    seen = set()
    for k, part in enumerate(parts):
        if seen & part:
            problems.append(f"partition {k} overlaps another")
        seen |= part
        if not part:
            problems.append(f"partition {k} is empty")
        elif not _connected(grid, part):
            problems.append(f"partition {k} is not connected")
        for cell in part:
            if assignment.partition_of.get(cell) != k:
                problems.append(f"partition_of disagrees at {cell}")
                break
    if seen != verts:
        problems.append("partitions do not cover exactly the vertex cells")
    sizes = [len(p) for p in parts]
    if sizes:
        n = len(verts)
        allowed = -(-n // n_agents) - n // n_agents
        if max(sizes) - min(sizes) > allowed:
            problems.append(f"unbalanced sizes {sizes}")
    return problems


def vertex_distances(grid: GridMap, sources) -> np.ndarray:
    """BFS distance over vertex cells only (stations are not traversed)."""
    dist = np.full(grid.shape, -1, dtype=np.int64)
    queue = deque()
    for s in sources:
        dist[s] = 0
        queue.append(s)
    while queue:
        cur = queue.popleft()
        for nb in grid.neighbors(cur):
            if dist[nb] < 0 and grid.cells[nb] == CellKind.VERTEX:
                dist[nb] = dist[cur] + 1
                queue.append(nb)
    return dist


def part_next_action(world: WorldState, agent_id: int, working_set: frozenset,
                     distance_to_set: np.ndarray | None = None) -> int:
    """CR inside the working set; otherwise the first hop of a shortest path back."""
    grid = world.grid
    here = world.agents[agent_id].location
    if here in working_set:
        return cr_next_action(world, agent_id, allowed=working_set)
    if distance_to_set is None:
        distance_to_set = vertex_distances(grid, working_set)
    row = grid.moves_from[here]
    verts = grid.vertex_set
    best, best_d = STAY, None
    for act in MOVES:
        target = row[act]
        if target is None or target not in verts:
            continue
        d = distance_to_set[target]
        if d >= 0 and (best_d is None or d < best_d):
            best, best_d = act, d
    return best


def merge_targets(assignment: PartitionAssignment, boundary: np.ndarray, statuses: list[Status]) -> dict[int, int]:
    """For every inactive agent, the active agent that covers its partition.

    The receiver is the active agent whose home partition shares the longest
    boundary with the vacated one (lowest id on ties, or when none touches it).
    """
    active = [i for i, s in enumerate(statuses) if s is Status.ACTIVE]
    out = {}
    if not active:
        return out
    for j, s in enumerate(statuses):
        if s is Status.ACTIVE:
            continue
        out[j] = max(active, key=lambda i: (boundary[j, i], -i))
    return out


# -- state-exchange Bayesian -----------------------------------------------

def sebs_scores(world: WorldState, agent_id: int, shared_intentions: dict[int, Cell],
                theta: float, kappa: float, c_norm: float) -> dict[int, float]:
    """Unnormalised posterior for each candidate move (vertex targets only).

    gain g = f(idleness) * (1 + priority); likelihood = 1 - exp(-g / theta);
    uniform move prior; targets declared by other agents are scaled by kappa.
    """
    grid = world.grid
    row = grid.moves_from[world.agents[agent_id].location]
    prio = grid.priority_of
    width = grid.width
    idle_ticks = world.idle_ticks
    mpt = world.minutes_per_tick
    declared = {cell for aid, cell in shared_intentions.items() if aid != agent_id}
    scores = {}
    for act in MOVES:
        target = row[act]
        if target is None or target not in prio:
            continue
        idle = int(idle_ticks[target[0] * width + target[1]]) * mpt
        gain = -math.expm1(-idle / c_norm) * (1 + prio[target])
        post = -math.expm1(-gain / theta)
        if target in declared:
            post *= kappa
        scores[act] = post
    return scores


def sebs_next_action(world: WorldState, agent_id: int, shared_intentions: dict[int, Cell],
                     theta: float = 0.5, kappa: float = 0.2, c_norm: float = 200.0) -> tuple[int, Cell]:
    """Returns ``(action, intention)``; the intention is the target cell to broadcast."""
    grid = world.grid
    here = world.agents[agent_id].location
    scores = sebs_scores(world, agent_id, shared_intentions, theta, kappa, c_norm)
    if not scores:
        return STAY, here
    declared = {cell for aid, cell in shared_intentions.items() if aid != agent_id}
    row = grid.moves_from[here]
    best = max(scores, key=lambda a: (scores[a], row[a] not in declared, -a))
    return best, row[best]


# -- charging ---------------------------------------------------------------

@dataclass
class ChargeState:
    charging: bool = False
    blocked: int = 0


def _hop_towards(grid: GridMap, here: Cell, dist: np.ndarray) -> int | None:
    d_here = dist[here]
    row = grid.moves_from[here]
    for act in MOVES:
        target = row[act]
        if target is not None and dist[target] >= 0 and dist[target] == d_here - 1:
            return act
    return None


def charging_policy(world: WorldState, agent_id: int, state: ChargeState, b_l: float,
                    drain_worst_case: float = 1.1, patience: int = 2) -> int | None:
    """Override action when the agent must head for a station, else None.

    Triggers once battery <= b_l + (steps to station * worst drain) / b_max and
    stays on until the swap. After ``patience`` consecutive blocked steps the
    path is re-planned with other agents' cells treated as obstacles.
    """
    grid = world.grid
    agent = world.agents[agent_id]
    here = agent.location
    dist = grid.station_distance
    d = int(dist[here])
    if d < 0:
        raise NoPathToStation(f"no station reachable from {here}")
    frac = agent.battery / world.params.b_max
    if not state.charging and frac <= b_l + d * drain_worst_case / world.params.b_max:
        state.charging = True
    if not state.charging:
        return None
    if d == 0:
        # sitting on a station without having swapped: step off and come back
        for act in MOVES:
            if grid.action_target(here, act) is not None:
                return act
        return STAY
    if state.blocked >= patience:
        others = {a.location for a in world.agents if a.status is Status.ACTIVE and a.id != agent_id}
        detour = bfs_distances(grid, [s for s in grid.stations if s not in others], blocked=others)
        if detour[here] >= 0:
            hop = _hop_towards(grid, here, detour)
            if hop is not None:
                return hop
    return _hop_towards(grid, here, dist)


def yield_move(world: WorldState, agent_id: int) -> int | None:
    """First move onto a free vertex (never a station), or None if boxed in."""
    grid = world.grid
    here = world.agents[agent_id].location
    others = {a.location for a in world.agents if a.status is Status.ACTIVE and a.id != agent_id}
    for act in MOVES:
        target = grid.action_target(here, act)
        if target is not None and target not in others and grid.cells[target] == CellKind.VERTEX:
            return act
    return None


# -- controllers ------------------------------------------------------------

class BaselineController:
    """Shared plumbing: charging overrides and blocked-step bookkeeping."""

    name = "baseline"

    def __init__(self, grid: GridMap, cfg: Config, n_agents: int, seed=None):
        self.grid = grid
        self.cfg = cfg
        self.charge = [ChargeState() for _ in range(n_agents)]
        self.b_l = cfg.rewards.b_l
        worst = cfg.strategy.drain_worst_case
        self.drain_worst = worst if worst is not None else cfg.env.drain_range[1]
        self.patience = cfg.strategy.deadlock_patience

    def charging_override(self, world: WorldState, agent_id: int) -> int | None:
        override = charging_policy(world, agent_id, self.charge[agent_id], self.b_l,
                                   self.drain_worst, self.patience)
        if override is None and self.charge[agent_id].blocked >= self.patience:
            # a patrolling agent stuck against another one steps aside; this
            # frees a station or corridor a charging agent may be waiting for
            return yield_move(world, agent_id)
        return override

    def act(self, world: WorldState) -> tuple[dict[int, int], None]:
        actions = {}
        for agent in world.agents:
            if agent.status is not Status.ACTIVE:
                continue
            override = self.charging_override(world, agent.id)
            actions[agent.id] = override if override is not None else self.patrol_action(world, agent.id)
        return actions, None

    def patrol_action(self, world: WorldState, agent_id: int) -> int:
        raise NotImplementedError

    def observe(self, world: WorldState, outcome: StepOutcome) -> None:
        for aid, events in outcome.events.items():
            state = self.charge[aid]
            if Event.STARTED_SWAP in events or Event.REDEPLOYED in events or Event.BATTERY_FAILED in events:
                self.charge[aid] = ChargeState()
            else:
                state.blocked = state.blocked + 1 if Event.BOUNCED in events else 0


class CRController(BaselineController):
    name = "cr"

    def patrol_action(self, world, agent_id):
        return cr_next_action(world, agent_id)


class PartController(BaselineController):
    name = "part"

    def __init__(self, grid, cfg, n_agents, seed=None):
        super().__init__(grid, cfg, n_agents, seed)
        self.assignment = partition_map(grid, n_agents, seed)
        self.boundary = self.assignment.boundary_lengths(grid)
        self._distance_cache: dict[frozenset, np.ndarray] = {}
        self._working: dict[int, frozenset] = {}

    def working_sets(self, world: WorldState) -> dict[int, frozenset]:
        sets = {i: set(p) for i, p in enumerate(self.assignment.home_partition)}
        for j, i in merge_targets(self.assignment, self.boundary, [a.status for a in world.agents]).items():
            sets[i] |= self.assignment.home_partition[j]
        return {i: frozenset(s) for i, s in sets.items()}

    def act(self, world):
        self._working = self.working_sets(world)
        return super().act(world)

    def patrol_action(self, world, agent_id):
        ws = self._working[agent_id]
        dist = self._distance_cache.get(ws)
        if dist is None:
            dist = self._distance_cache[ws] = vertex_distances(self.grid, ws)
        return part_next_action(world, agent_id, ws, dist)


class SEBSController(BaselineController):
    name = "sebs"

    def act(self, world):
        intentions: dict[int, Cell] = {}
        actions = {}
        s = self.cfg.strategy
        for agent in world.agents:
            if agent.status is not Status.ACTIVE:
                continue
            override = self.charging_override(world, agent.id)
            if override is not None:
                act = override
                target = self.grid.action_target(agent.location, act)
            else:
                act, target = sebs_next_action(world, agent.id, intentions, s.sebs_theta,
                                               s.sebs_kappa, self.cfg.rewards.c_norm)
            actions[agent.id] = act
            intentions[agent.id] = target
        return actions, None


CONTROLLERS = {"cr": CRController, "part": PartController, "sebs": SEBSController}

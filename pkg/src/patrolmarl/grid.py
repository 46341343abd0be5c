"""Grid maps: parsing, validation, rendering and static graph queries.

Map files are UTF-8 text with one row per line::

    ; comment
    C..#
    .2..

``.`` is a priority-0 vertex, ``1``-``9`` a vertex with that priority, ``#`` an
obstacle and ``C`` a charging station. Coordinates are ``(row, col)`` with the
origin at the top-left cell.
"""

from __future__ import annotations

import enum
from collections import deque
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path

import numpy as np


class CellKind(enum.IntEnum):
    VERTEX = 0
    OBSTACLE = 1
    STATION = 2


class Action(enum.IntEnum):
    UP = 0
    DOWN = 1
    LEFT = 2
    RIGHT = 3
    STAY = 4


ACTION_DELTAS: tuple[tuple[int, int], ...] = ((-1, 0), (1, 0), (0, -1), (0, 1), (0, 0))
MOVES = (0, 1, 2, 3)  # plain ints: these sit in hot loops
STAY = 4
N_ACTIONS = len(ACTION_DELTAS)

Cell = tuple[int, int]


class MapError(ValueError):
    """Base class for map parsing and validation failures."""

    def __init__(self, message: str, row: int | None = None, col: int | None = None):
        where = ""
        if row is not None:
            where = f" (row {row}" + (f", col {col})" if col is not None else ")")
        super().__init__(message + where)
        self.row = row
        self.col = col


class UnknownGlyph(MapError):
    pass


class NonRectangular(MapError):
    pass


class NoStation(MapError):
    pass


class NoVertex(MapError):
    pass


class DisconnectedGraph(MapError):
    pass


@dataclass(frozen=True, eq=False)
class GridMap:
    """Static map structure. Immutable after construction."""

    cells: np.ndarray  # (H, W) int8 of CellKind
    priority: np.ndarray  # (H, W) int64; -1 on obstacles, 0 on stations
    cell_edge_meters: float = 50.0
    name: str = field(default="", compare=False)

    def __post_init__(self):
        self.cells.setflags(write=False)
        self.priority.setflags(write=False)

    def __eq__(self, other):
        if not isinstance(other, GridMap):
            return NotImplemented
        return (
            np.array_equal(self.cells, other.cells)
            and np.array_equal(self.priority, other.priority)
            and self.cell_edge_meters == other.cell_edge_meters
        )

    __hash__ = None  # type: ignore[assignment]

    @property
    def height(self) -> int:
        return self.cells.shape[0]

    @property
    def width(self) -> int:
        return self.cells.shape[1]

    @property
    def shape(self) -> tuple[int, int]:
        return self.cells.shape

    def kind(self, cell: Cell) -> CellKind:
        return CellKind(int(self.cells[cell]))

    def in_bounds(self, cell: Cell) -> bool:
        r, c = cell
        return 0 <= r < self.height and 0 <= c < self.width

    def passable(self, cell: Cell) -> bool:
        return self.in_bounds(cell) and self.cells[cell] != CellKind.OBSTACLE

    def index(self, cell: Cell) -> int:
        return cell[0] * self.cells.shape[1] + cell[1]

    def cell_of(self, index: int) -> Cell:
        return divmod(index, self.width)

    @cached_property
    def vertices(self) -> list[Cell]:
        return [tuple(int(v) for v in rc) for rc in np.argwhere(self.cells == CellKind.VERTEX)]

    @cached_property
    def stations(self) -> list[Cell]:
        return [tuple(int(v) for v in rc) for rc in np.argwhere(self.cells == CellKind.STATION)]

    @cached_property
    def vertex_index(self) -> np.ndarray:
        """Flat indices of vertex cells, row-major."""
        return np.flatnonzero(self.cells.ravel() == CellKind.VERTEX)

    @cached_property
    def station_set(self) -> frozenset[Cell]:
        return frozenset(self.stations)

    @cached_property
    def vertex_set(self) -> frozenset[Cell]:
        return frozenset(self.vertices)

    @cached_property
    def priority_of(self) -> dict[Cell, int]:
        return {cell: int(self.priority[cell]) for cell in self.vertices}

    @cached_property
    def transitions(self) -> tuple[tuple[Cell | None, ...], ...]:
        """Per flat cell index, the target cell of each action or None when invalid."""
        table = []
        for r in range(self.height):
            for c in range(self.width):
                row = []
                for dr, dc in ACTION_DELTAS:
                    target = (r + dr, c + dc)
                    row.append(target if self.passable(target) else None)
                table.append(tuple(row))
        return tuple(table)

    @cached_property
    def moves_from(self) -> dict[Cell, tuple[Cell | None, ...]]:
        """Same table as ``transitions`` keyed by cell."""
        return {self.cell_of(i): row for i, row in enumerate(self.transitions)}

    def action_target(self, cell: Cell, action: int) -> Cell | None:
        return self.transitions[self.index(cell)][action]

    def neighbors(self, cell: Cell) -> list[Cell]:
        """Passable 4-neighbours of ``cell``."""
        return [t for t in self.transitions[self.index(cell)][:4] if t is not None]

    @cached_property
    def station_distance(self) -> np.ndarray:
        """BFS distance (in moves) from every cell to the nearest station; -1 if unreachable."""
        return bfs_distances(self, self.stations)


def bfs_distances(grid: GridMap, sources, blocked=frozenset()) -> np.ndarray:
    """Multi-source BFS over passable cells, skipping cells in ``blocked``."""
    dist = np.full(grid.shape, -1, dtype=np.int64)
    queue = deque()
    for s in sources:
        if dist[s] < 0:
            dist[s] = 0
            queue.append(s)
    while queue:
        cur = queue.popleft()
        for nxt in grid.neighbors(cur):
            if dist[nxt] < 0 and nxt not in blocked:
                dist[nxt] = dist[cur] + 1
                queue.append(nxt)
    return dist


def _components(cells: set[Cell]) -> list[set[Cell]]:
    remaining = set(cells)
    comps = []
    while remaining:
        start = min(remaining)
        comp = {start}
        queue = deque([start])
        remaining.discard(start)
        while queue:
            r, c = queue.popleft()
            for dr, dc in ACTION_DELTAS[:4]:
                nxt = (r + dr, c + dc)
                if nxt in remaining:
                    remaining.discard(nxt)
                    comp.add(nxt)
                    queue.append(nxt)
        comps.append(comp)
    return comps


def validate(cells: np.ndarray) -> None:
    """Check the structural map invariants, raising a ``MapError`` subclass."""
    if not (cells == CellKind.STATION).any():
        raise NoStation("map has no charging station")
    if not (cells == CellKind.VERTEX).any():
        raise NoVertex("map has no patrollable vertex")
    passable = {tuple(int(v) for v in rc) for rc in np.argwhere(cells != CellKind.OBSTACLE)}
    comps = _components(passable)
    if len(comps) > 1:
        r, c = min(comps[1])
        raise DisconnectedGraph("cell unreachable from the rest of the map", r, c)
    # Entering a station starts a battery swap, so vertices must not rely on it as a bridge.
    verts = {tuple(int(v) for v in rc) for rc in np.argwhere(cells == CellKind.VERTEX)}
    comps = _components(verts)
    if len(comps) > 1:
        r, c = min(comps[1])
        raise DisconnectedGraph("vertex only reachable through a charging station", r, c)


def from_arrays(cells, priority=None, cell_edge_meters: float = 50.0, name: str = "") -> GridMap:
    cells = np.asarray(cells, dtype=np.int8).copy()
    if priority is None:
        priority = np.zeros(cells.shape, dtype=np.int64)
    priority = np.asarray(priority, dtype=np.int64).copy()
    priority[cells == CellKind.OBSTACLE] = -1
    priority[cells == CellKind.STATION] = 0
    validate(cells)
    return GridMap(cells=cells, priority=priority, cell_edge_meters=cell_edge_meters, name=name)


def parse_map(text: str, name: str = "") -> GridMap:
    rows = []
    line_numbers = []
    for lineno, line in enumerate(text.splitlines()):
        line = line.rstrip()
        if not line or line.startswith(";"):
            continue
        rows.append(line)
        line_numbers.append(lineno)
    if not rows:
        raise NoVertex("map text is empty")
    width = len(rows[0])
    cells = np.zeros((len(rows), width), dtype=np.int8)
    priority = np.zeros((len(rows), width), dtype=np.int64)
    for r, line in enumerate(rows):
        if len(line) != width:
            raise NonRectangular(f"row has {len(line)} cells, expected {width}", r)
        for c, ch in enumerate(line):
            if ch == ".":
                continue
            if ch == "#":
                cells[r, c] = CellKind.OBSTACLE
                priority[r, c] = -1
            elif ch == "C":
                cells[r, c] = CellKind.STATION
            elif ch in "123456789":
                priority[r, c] = int(ch)
            else:
                raise UnknownGlyph(f"unknown map glyph {ch!r}", r, c)
    validate(cells)
    return GridMap(cells=cells, priority=priority, name=name)


def render_map(grid: GridMap) -> str:
    lines = []
    for r in range(grid.height):
        chars = []
        for c in range(grid.width):
            kind = grid.cells[r, c]
            if kind == CellKind.OBSTACLE:
                chars.append("#")
            elif kind == CellKind.STATION:
                chars.append("C")
            else:
                p = int(grid.priority[r, c])
                if p > 9:
                    raise ValueError(f"priority {p} at {(r, c)} has no map glyph")
                chars.append("." if p == 0 else str(p))
        lines.append("".join(chars))
    return "\n".join(lines) + "\n"


def load_map(path) -> GridMap:
    path = Path(path)
    return parse_map(path.read_text(encoding="utf-8"), name=path.stem)


def generate_map(
    height: int,
    width: int,
    seed: int,
    obstacle_density: float = 0.15,
    n_stations: int = 1,
    priority_density: float = 0.1,
    max_priority: int = 3,
) -> GridMap:
    """Random connected map. Obstacles are added one at a time and kept only if
    the map stays valid, so the result always passes ``validate``."""
    rng = np.random.default_rng(seed)
    cells = np.zeros((height, width), dtype=np.int8)
    order = rng.permutation(height * width)
    for idx in order[:n_stations]:
        cells.flat[idx] = CellKind.STATION
    target = int(round(obstacle_density * height * width))
    placed = 0
    for idx in order[n_stations:]:
        if placed >= target:
            break
        cells.flat[idx] = CellKind.OBSTACLE
        try:
            validate(cells)
        except MapError:
            cells.flat[idx] = CellKind.VERTEX
            continue
        placed += 1
    priority = np.zeros((height, width), dtype=np.int64)
    verts = np.flatnonzero(cells.ravel() == CellKind.VERTEX)
    n_prio = int(round(priority_density * len(verts)))
    if n_prio and max_priority > 0:
        chosen = rng.choice(verts, size=n_prio, replace=False)
        priority.flat[chosen] = rng.integers(1, max_priority, endpoint=True, size=n_prio)
    return from_arrays(cells, priority, name=f"random-{height}x{width}-{seed}")


def sample_map_path(name: str) -> Path:
    """Path to a map shipped with the package (``scene6``, ``corridor``, ``sample10``...)."""
    return Path(__file__).parent / "maps" / f"{name}.txt"


def sample_map(name: str) -> GridMap:
    return load_map(sample_map_path(name))

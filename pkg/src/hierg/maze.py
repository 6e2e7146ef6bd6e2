"""Procedurally generated room-maze navigation environment.

A 17x17 grid partitioned into a 4x4 array of 3x3-interior rooms separated
by one-cell lava walls. Doors are punched into interior walls until the
start and goal are connected by a sufficiently long path. The hierarchical
decomposition uses five subgoals: leave the current room through the north,
south, west or east wall, or walk to the target inside the current room.
"""

from __future__ import annotations

import functools
import heapq
import random
from collections import deque
from dataclasses import dataclass

import numpy as np

GRID = 17
ROOMS = 4          # rooms per side
STRIDE = 4         # wall line every 4th row/col
H_FULL = 100
H_LO_DEFAULT = 8
H_HI_DEFAULT = 20
MIN_DIST_DEFAULT = 40   # appendix constant; main text quotes 45
R_GOAL = 1.0
LAVA_PENALTY = -1.0

# cell kinds
OPEN, LAVA, DOOR, GOAL = 0, 1, 2, 3

# actions, in the fixed tie-break order used everywhere
UP, DOWN, LEFT, RIGHT = 0, 1, 2, 3
ACTIONS = (UP, DOWN, LEFT, RIGHT)
ACTION_NAMES = ("up", "down", "left", "right")
DELTAS = ((-1, 0), (1, 0), (0, -1), (0, 1))

# subgoals
NORTH, SOUTH, WEST, EAST, GO_TO_TARGET = 0, 1, 2, 3, 4
SUBGOALS = (NORTH, SOUTH, WEST, EAST, GO_TO_TARGET)
SUBGOAL_NAMES = ("north", "south", "west", "east", "go_to_target")
DIRECTIONAL_SUBGOALS = (NORTH, SOUTH, WEST, EAST)
# room-grid displacement per directional subgoal
ROOM_DELTAS = {NORTH: (-1, 0), SOUTH: (1, 0), WEST: (0, -1), EAST: (0, 1)}
# primitive action that crosses a wall in the direction of each subgoal
SUBGOAL_ACTION = {NORTH: UP, SOUTH: DOWN, WEST: LEFT, EAST: RIGHT}

TERM_NONE = None
TERM_GOAL = "reached_goal"
TERM_LAVA = "hit_lava"
TERM_HORIZON = "horizon_expired"

UNREACHABLE = np.float32(np.inf)


class GenerationFailed(Exception):
    """No door layout satisfied the distance constraint within the retry cap."""


class InvalidState(Exception):
    """step() was called on a terminal state."""


@dataclass(frozen=True, eq=False)
class MazeSpec:
    """Immutable maze definition: cell grid, start, goal and generation seed."""

    cells: np.ndarray          # (17, 17) uint8 of cell kinds, read-only
    start: tuple[int, int]
    goal: tuple[int, int]
    seed: int

    def __post_init__(self):
        self.cells.flags.writeable = False
        object.__setattr__(self, "_hash", hash(
            (self.seed, self.start, self.goal, self.cells.tobytes())))

    def __eq__(self, other):
        if not isinstance(other, MazeSpec):
            return NotImplemented
        return (self.seed == other.seed and self.start == other.start
                and self.goal == other.goal
                and np.array_equal(self.cells, other.cells))

    def __hash__(self):
        return self._hash


@dataclass(frozen=True)
class MazeState:
    """Value-typed episode state; step() returns a fresh instance."""

    agent: tuple[int, int]
    trail: frozenset = frozenset()
    steps_taken: int = 0
    terminal: str | None = TERM_NONE


def initial_state(spec: MazeSpec) -> MazeState:
    return MazeState(agent=spec.start, trail=frozenset([spec.start]))


# ---------------------------------------------------------------------------
# room geometry


def room_of(cell: tuple[int, int]) -> tuple[int, int] | None:
    """Room containing an interior cell, or None for wall-line cells."""
    r, c = cell
    if r % STRIDE == 0 or c % STRIDE == 0:
        return None
    return (r // STRIDE, c // STRIDE)


def room_interior(room: tuple[int, int]) -> list[tuple[int, int]]:
    ri, cj = room
    base_r, base_c = ri * STRIDE + 1, cj * STRIDE + 1
    return [(base_r + i, base_c + j) for i in range(3) for j in range(3)]


def adjacent_rooms(cell: tuple[int, int]) -> list[tuple[int, int]]:
    """Rooms touching a cell: one for interiors, two for wall-segment cells."""
    r, c = cell
    on_row_wall, on_col_wall = r % STRIDE == 0, c % STRIDE == 0
    if not on_row_wall and not on_col_wall:
        return [(r // STRIDE, c // STRIDE)]
    if on_row_wall and on_col_wall:
        return []
    rooms = []
    if on_col_wall:     # vertical wall between horizontally adjacent rooms
        for cj in ((c // STRIDE) - 1, c // STRIDE):
            rooms.append((r // STRIDE, cj))
    else:               # horizontal wall
        for ri in ((r // STRIDE) - 1, r // STRIDE):
            rooms.append((ri, c // STRIDE))
    return [rm for rm in rooms if 0 <= rm[0] < ROOMS and 0 <= rm[1] < ROOMS]


def neighbor_room(room: tuple[int, int], g: int) -> tuple[int, int] | None:
    dr, dc = ROOM_DELTAS[g]
    ri, cj = room[0] + dr, room[1] + dc
    if 0 <= ri < ROOMS and 0 <= cj < ROOMS:
        return (ri, cj)
    return None


def _wall_segments() -> list[tuple[tuple[int, int], tuple[int, int], tuple[tuple[int, int], ...]]]:
    segs = []
    for ri in range(ROOMS):
        for cj in range(ROOMS - 1):     # vertical wall between (ri,cj) and (ri,cj+1)
            col = (cj + 1) * STRIDE
            cells = tuple((ri * STRIDE + 1 + k, col) for k in range(3))
            segs.append(((ri, cj), (ri, cj + 1), cells))
    for ri in range(ROOMS - 1):
        for cj in range(ROOMS):         # horizontal wall between (ri,cj) and (ri+1,cj)
            row = (ri + 1) * STRIDE
            cells = tuple((row, cj * STRIDE + 1 + k) for k in range(3))
            segs.append(((ri, cj), (ri + 1, cj), cells))
    return segs


WALL_SEGMENTS = _wall_segments()
_WALL_BY_PAIR = {(a, b): cells for a, b, cells in WALL_SEGMENTS}
_WALL_BY_PAIR.update({(b, a): cells for a, b, cells in WALL_SEGMENTS})


def wall_cells(room: tuple[int, int], g: int) -> tuple[tuple[int, int], ...]:
    """Cells of the wall on side g of a room (empty on the outer boundary)."""
    other = neighbor_room(room, g)
    if other is None:
        return ()
    return _WALL_BY_PAIR[(room, other)]


def doors_on_wall(spec: MazeSpec, room: tuple[int, int], g: int) -> list[tuple[int, int]]:
    return [c for c in wall_cells(room, g) if spec.cells[c] == DOOR]


def completion_cells(spec: MazeSpec, room: tuple[int, int], g: int) -> list[tuple[int, int]]:
    """Interior cells just beyond the g-side doors of a room; for go_to_target,
    the goal cell when it lies in the room."""
    if g == GO_TO_TARGET:
        return [spec.goal] if room_of(spec.goal) == room else []
    dr, dc = DELTAS[SUBGOAL_ACTION[g]]
    return [(r + dr, c + dc) for r, c in doors_on_wall(spec, room, g)]


# ---------------------------------------------------------------------------
# graph search


def passable(cells: np.ndarray, cell: tuple[int, int]) -> bool:
    r, c = cell
    return 0 <= r < GRID and 0 <= c < GRID and cells[r, c] != LAVA


def _bfs_flat(flat: list[int], source: int, target: int = -1) -> list[int]:
    """Shortest step counts from source over non-lava cells on a flattened
    grid, -1 if unreachable. Early-exits when target is dequeued. Plain-list
    implementation; this runs in the generation inner loop."""
    dist = [-1] * (GRID * GRID)
    dist[source] = 0
    q = deque([source])
    while q:
        cur = q.popleft()
        if cur == target:
            break
        d = dist[cur] + 1
        r, c = cur // GRID, cur % GRID
        if r > 0 and flat[cur - GRID] != LAVA and dist[cur - GRID] < 0:
            dist[cur - GRID] = d
            q.append(cur - GRID)
        if r < GRID - 1 and flat[cur + GRID] != LAVA and dist[cur + GRID] < 0:
            dist[cur + GRID] = d
            q.append(cur + GRID)
        if c > 0 and flat[cur - 1] != LAVA and dist[cur - 1] < 0:
            dist[cur - 1] = d
            q.append(cur - 1)
        if c < GRID - 1 and flat[cur + 1] != LAVA and dist[cur + 1] < 0:
            dist[cur + 1] = d
            q.append(cur + 1)
    return dist


def bfs_distances(cells: np.ndarray, source: tuple[int, int]) -> np.ndarray:
    """Grid of shortest step counts from source over non-lava cells
    (inf where unreachable)."""
    raw = _bfs_flat(cells.ravel().tolist(), source[0] * GRID + source[1])
    dist = np.array(raw, dtype=np.float32).reshape(GRID, GRID)
    dist[dist < 0] = UNREACHABLE
    return dist


def shortest_path_length(spec: MazeSpec) -> int:
    """BFS length of the start-goal path; raises if unreachable."""
    goal_i = spec.goal[0] * GRID + spec.goal[1]
    d = _bfs_flat(spec.cells.ravel().tolist(),
                  spec.start[0] * GRID + spec.start[1], goal_i)[goal_i]
    if d < 0:
        raise GenerationFailed("goal not reachable")
    return d


# ---------------------------------------------------------------------------
# generation


def _empty_grid() -> np.ndarray:
    cells = np.zeros((GRID, GRID), dtype=np.uint8)
    cells[::STRIDE, :] = LAVA
    cells[:, ::STRIDE] = LAVA
    return cells


INTERIOR_CELLS = [cell for ri in range(ROOMS) for cj in range(ROOMS)
                  for cell in room_interior((ri, cj))]


def _uf_find(parent: list[int], i: int) -> int:
    while parent[i] != i:
        parent[i] = parent[parent[i]]
        i = parent[i]
    return i


def _uf_template() -> list[int]:
    # union-find parents with room interiors pre-merged
    parent = list(range(GRID * GRID))
    for r, c in INTERIOR_CELLS:
        if c % STRIDE != 1:
            parent[_uf_find(parent, r * GRID + c)] = _uf_find(parent, r * GRID + c - 1)
        if r % STRIDE != 1:
            parent[_uf_find(parent, r * GRID + c)] = _uf_find(parent, (r - 1) * GRID + c)
    return parent


_UF_TEMPLATE = _uf_template()
_EMPTY_FLAT = _empty_grid().ravel().tolist()


def generate_maze(seed: int, min_dist: int = MIN_DIST_DEFAULT, *,
                  max_path: int = H_FULL, retry_cap: int = 1000) -> MazeSpec:
    """Generate one maze: sample start/goal, then punch random doors into
    random interior walls until the pair is connected by a path of length
    in [min_dist, max_path]. Deterministic given the seed.
    """
    if min_dist < 1:
        raise ValueError("min_dist must be >= 1")
    rng = random.Random(seed)
    n = len(INTERIOR_CELLS)
    for _ in range(retry_cap):
        goal = INTERIOR_CELLS[rng.randrange(n)]
        start = INTERIOR_CELLS[rng.randrange(n)]
        if start == goal:
            continue
        flat = _EMPTY_FLAT.copy()
        goal_i = goal[0] * GRID + goal[1]
        start_i = start[0] * GRID + start[1]
        flat[goal_i] = GOAL
        parent = _UF_TEMPLATE.copy()
        walls = [list(seg_cells) for _, _, seg_cells in WALL_SEGMENTS]
        accepted = None
        while True:
            open_walls = [w for w in walls if w]
            if not open_walls:
                break
            wall = open_walls[rng.randrange(len(open_walls))]
            r, c = wall.pop(rng.randrange(len(wall)))
            cell_i = r * GRID + c
            flat[cell_i] = DOOR
            for delta in (-GRID, GRID, -1, 1):
                nb = cell_i + delta
                if 0 <= nb < GRID * GRID and flat[nb] != LAVA:
                    parent[_uf_find(parent, cell_i)] = _uf_find(parent, nb)
            if _uf_find(parent, start_i) == _uf_find(parent, goal_i):
                d = _bfs_flat(flat, start_i, goal_i)[goal_i]
                if min_dist <= d <= max_path:
                    accepted = flat
                break   # connected: more doors only shorten the path
        if accepted is not None:
            cells = np.array(accepted, dtype=np.uint8).reshape(GRID, GRID)
            return MazeSpec(cells=cells, start=start, goal=goal, seed=int(seed))
    raise GenerationFailed(
        f"no maze with path in [{min_dist}, {max_path}] after {retry_cap} attempts")


def validate_spec(spec: MazeSpec, min_dist: int = 1) -> None:
    """Raise AssertionError if any MazeSpec invariant is violated."""
    assert spec.cells.shape == (GRID, GRID)
    assert spec.start != spec.goal
    assert spec.cells[spec.goal] == GOAL
    assert spec.cells[spec.start] == OPEN
    wall_cell_set = {c for _, _, cs in WALL_SEGMENTS for c in cs}
    for r in range(GRID):
        for c in range(GRID):
            kind = spec.cells[r, c]
            on_wall = r % STRIDE == 0 or c % STRIDE == 0
            if kind == DOOR:
                assert (r, c) in wall_cell_set, f"door off interior walls at {(r, c)}"
            elif on_wall:
                assert kind == LAVA, f"non-lava wall cell at {(r, c)}"
            else:
                assert kind in (OPEN, GOAL)
    assert shortest_path_length(spec) >= min_dist


# ---------------------------------------------------------------------------
# dynamics


def step(spec: MazeSpec, state: MazeState, action: int) -> tuple[MazeState, float]:
    """Move one cell; lava and goal are absorbing, 100 steps expire the episode."""
    if state.terminal is not TERM_NONE:
        raise InvalidState(f"step() on terminal state {state.terminal}")
    dr, dc = DELTAS[action]
    nxt = (state.agent[0] + dr, state.agent[1] + dc)
    steps = state.steps_taken + 1
    kind = spec.cells[nxt] if (0 <= nxt[0] < GRID and 0 <= nxt[1] < GRID) else LAVA
    if kind == LAVA:
        return MazeState(nxt, state.trail, steps, TERM_LAVA), LAVA_PENALTY
    trail = state.trail | {nxt}
    if kind == GOAL:
        return MazeState(nxt, trail, steps, TERM_GOAL), R_GOAL
    if steps >= H_FULL:
        return MazeState(nxt, trail, steps, TERM_HORIZON), 0.0
    return MazeState(nxt, trail, steps, TERM_NONE), 0.0


def context_room(spec: MazeSpec, state: MazeState) -> tuple[int, int]:
    """Room used as frame of reference for a state: its own room, or the first
    adjoining room when the agent stands on a wall cell."""
    room = room_of(state.agent)
    if room is not None:
        return room
    rooms = adjacent_rooms(state.agent)
    if rooms:
        return rooms[0]
    return (min(max(state.agent[0] - 1, 0) // STRIDE, ROOMS - 1),
            min(max(state.agent[1] - 1, 0) // STRIDE, ROOMS - 1))


def subgoal_completed(spec: MazeSpec, entry_state: MazeState,
                      current_state: MazeState, g: int) -> bool:
    """True when the agent has crossed into the room on side g of the entry
    room (directional subgoals) or stands on the goal (go_to_target)."""
    if g == GO_TO_TARGET:
        return current_state.agent == spec.goal
    cur_room = room_of(current_state.agent)
    if cur_room is None:
        return False
    for entry_room in adjacent_rooms(entry_state.agent):
        if neighbor_room(entry_room, g) == cur_room:
            return True
    return False


def is_admissible(spec: MazeSpec, entry_state: MazeState, g: int) -> bool:
    """A subgoal is admissible when it has at least one completion cell."""
    return bool(completion_cells(spec, context_room(spec, entry_state), g))


def pseudo_reward(spec: MazeSpec, entry_state: MazeState,
                  transition: tuple[MazeState, int, MazeState], g: int) -> float:
    """+1 on the step that completes g, -1 for lava or a door off g's wall."""
    state, _, nxt = transition
    if nxt.terminal == TERM_LAVA:
        return -1.0
    if (subgoal_completed(spec, entry_state, nxt, g)
            and not subgoal_completed(spec, entry_state, state, g)):
        return 1.0
    if spec.cells[nxt.agent] == DOOR:
        entry_room = context_room(spec, entry_state)
        target_wall = () if g == GO_TO_TARGET else wall_cells(entry_room, g)
        if nxt.agent not in target_wall:
            return -1.0
    return 0.0


# ---------------------------------------------------------------------------
# serialization

CHAR_OF = {OPEN: ".", LAVA: "#", DOOR: "D", GOAL: "G"}
KIND_OF = {v: k for k, v in CHAR_OF.items()}


def to_text(spec: MazeSpec) -> str:
    lines = [f"seed={spec.seed}"]
    for r in range(GRID):
        row = []
        for c in range(GRID):
            if (r, c) == spec.start:
                row.append("S")
            else:
                row.append(CHAR_OF[int(spec.cells[r, c])])
        lines.append("".join(row))
    return "\n".join(lines) + "\n"


def from_text(text: str) -> MazeSpec:
    lines = [ln for ln in text.splitlines() if ln.strip()]
    if len(lines) != GRID + 1 or not lines[0].startswith("seed="):
        raise ValueError("malformed maze text")
    seed = int(lines[0][len("seed="):])
    cells = np.zeros((GRID, GRID), dtype=np.uint8)
    start = goal = None
    for r, line in enumerate(lines[1:]):
        if len(line) != GRID:
            raise ValueError(f"row {r} has length {len(line)}")
        for c, ch in enumerate(line):
            if ch == "S":
                start = (r, c)
                cells[r, c] = OPEN
            elif ch not in KIND_OF:
                raise ValueError(f"unknown cell character {ch!r}")
            else:
                cells[r, c] = KIND_OF[ch]
                if ch == "G":
                    goal = (r, c)
    if start is None or goal is None:
        raise ValueError("maze text lacks start or goal")
    return MazeSpec(cells=cells, start=start, goal=goal, seed=seed)


# ---------------------------------------------------------------------------
# observation encodings
#
# Global frame: three 17x17 planes (static layout, agent, trail) plus a small
# block of agent-relative route features that a linear scorer can act on.
# RoomLocal frame: a 7x7 window centered on the context room plus per-action
# distances toward each wall's doors and the in-room goal. RoomLocal features
# depend only on the room's own layout, so congruent room situations encode
# identically across mazes.

GLOBAL_FRAME = "global"
ROOM_LOCAL_FRAME = "room_local"

GLOBAL_DIM = 3 * GRID * GRID + 22
ROOM_LOCAL_DIM = 49 + 49 + 9 + 24 + 10

_LOCAL_CAP = 8.0
_GLOBAL_CAP = float(H_FULL)


@functools.lru_cache(maxsize=4096)
def _layout_plane(spec: MazeSpec) -> np.ndarray:
    plane = spec.cells.astype(np.float32) / 3.0
    plane.flags.writeable = False
    return plane


@functools.lru_cache(maxsize=4096)
def goal_distances(spec: MazeSpec) -> np.ndarray:
    """Shortest step counts from every passable cell to the goal."""
    d = bfs_distances(spec.cells, spec.goal)
    d.flags.writeable = False
    return d


@functools.lru_cache(maxsize=200_000)
def subgoal_cost_map(spec: MazeSpec, room: tuple[int, int], g: int) -> np.ndarray:
    """Length of the shortest continuation from each cell that completes
    subgoal g of `room` and then follows an optimal path to the goal.
    Completion cells are seeded with their global goal distance, so greedy
    descent on this map reproduces the value-iteration expert inside the room.
    All-inf when g is inadmissible from the room."""
    cost = np.full((GRID, GRID), UNREACHABLE, dtype=np.float32)
    goals = completion_cells(spec, room, g)
    if not goals:
        cost.flags.writeable = False
        return cost
    gdist = goal_distances(spec)
    heap = []
    for cell in goals:
        seedval = 0.0 if g == GO_TO_TARGET else float(gdist[cell])
        if np.isfinite(seedval) and seedval < cost[cell]:
            cost[cell] = seedval
            heapq.heappush(heap, (seedval, cell))
    while heap:
        d, cur = heapq.heappop(heap)
        if d > cost[cur]:
            continue
        for dr, dc in DELTAS:
            nxt = (cur[0] + dr, cur[1] + dc)
            if passable(spec.cells, nxt) and d + 1 < cost[nxt]:
                cost[nxt] = d + 1
                heapq.heappush(heap, (d + 1, nxt))
    cost.flags.writeable = False
    return cost


def _bfs_from_seeds(spec: MazeSpec, seeds, domain=None) -> np.ndarray:
    dist = np.full((GRID, GRID), UNREACHABLE, dtype=np.float32)
    q = deque()
    for cell in seeds:
        dist[cell] = 0.0
        q.append(cell)
    while q:
        cur = q.popleft()
        d = dist[cur] + 1.0
        for dr, dc in DELTAS:
            nxt = (cur[0] + dr, cur[1] + dc)
            if (domain is None or nxt in domain) and passable(spec.cells, nxt) \
                    and not np.isfinite(dist[nxt]):
                dist[nxt] = d
                q.append(nxt)
    return dist


@functools.lru_cache(maxsize=200_000)
def local_completion_dist(spec: MazeSpec, room: tuple[int, int], g: int) -> np.ndarray:
    """Unweighted step counts to the nearest completion cell of subgoal g.

    Inside the room (interior plus its own wall doors) the routing is
    restricted to the room, so these values depend only on the room's layout
    and RoomLocal encodings stay congruent across mazes. Cells beyond the
    room fall back to whole-grid distances, which keeps expert corrections on
    drifted segments learnable."""
    goals = completion_cells(spec, room, g)
    if not goals:
        dist = np.full((GRID, GRID), UNREACHABLE, dtype=np.float32)
        dist.flags.writeable = False
        return dist
    domain = set(room_interior(room)) | set(goals)
    for side in DIRECTIONAL_SUBGOALS:
        domain |= set(wall_cells(room, side))
    local = _bfs_from_seeds(spec, goals, domain)
    full = _bfs_from_seeds(spec, goals)
    in_domain = np.zeros((GRID, GRID), dtype=bool)
    for cell in domain:
        in_domain[cell] = True
    dist = np.where(in_domain, local, full).astype(np.float32)
    dist.flags.writeable = False
    return dist


@functools.lru_cache(maxsize=4096)
def _padded_local_layout(spec: MazeSpec) -> np.ndarray:
    """Grid padded by one lava ring, goal masked to open (its position is
    reported separately so layouts stay congruent)."""
    padded = np.full((GRID + 2, GRID + 2), LAVA, dtype=np.float32)
    inner = spec.cells.astype(np.float32)
    inner[spec.goal] = OPEN
    padded[1:-1, 1:-1] = inner
    padded /= 2.0
    padded.flags.writeable = False
    return padded


def encode_room_local(spec: MazeSpec, state: MazeState, room: tuple[int, int]) -> np.ndarray:
    """Room-relative feature vector; identical for congruent room situations."""
    r0, c0 = room[0] * STRIDE - 1, room[1] * STRIDE - 1
    layout = _padded_local_layout(spec)[r0 + 1:r0 + 8, c0 + 1:c0 + 8]
    agent = np.zeros((7, 7), dtype=np.float32)
    ar, ac = state.agent
    if r0 <= ar < r0 + 7 and c0 <= ac < c0 + 7:
        agent[ar - r0, ac - c0] = 1.0
    goal_plane = np.zeros(9, dtype=np.float32)
    goal_in_room = room_of(spec.goal) == room
    if goal_in_room:
        gr, gc = spec.goal
        goal_plane[(gr - (r0 + 2)) * 3 + (gc - (c0 + 2))] = 1.0

    in_grid = 0 <= ar < GRID and 0 <= ac < GRID
    dmaps = {g: local_completion_dist(spec, room, g) for g in SUBGOALS}
    per_action = np.zeros((4, 6), dtype=np.float32)
    flags = np.zeros(10, dtype=np.float32)
    for a in ACTIONS:
        dr, dc = DELTAS[a]
        nxt = (ar + dr, ac + dc)
        blocked = not passable(spec.cells, nxt)
        per_action[a, 0] = 1.0 if blocked else 0.0
        for g in SUBGOALS:
            col = 1 + g
            if blocked:
                per_action[a, col] = 1.0
            else:
                d = dmaps[g][nxt]
                per_action[a, col] = min(float(d), _LOCAL_CAP) / _LOCAL_CAP \
                    if np.isfinite(d) else 1.0
    cur_room = room_of(state.agent) if in_grid else None
    for g in DIRECTIONAL_SUBGOALS:
        d_here = dmaps[g][state.agent] if in_grid else UNREACHABLE
        flags[g] = 1.0 if d_here == 1.0 else 0.0
        flags[5 + g] = 1.0 if (cur_room is not None
                               and cur_room == neighbor_room(room, g)) else 0.0
    flags[4] = 1.0 if (goal_in_room and in_grid
                       and dmaps[GO_TO_TARGET][state.agent] == 1.0) else 0.0
    flags[9] = 1.0 if state.agent == spec.goal else 0.0

    return np.concatenate([layout.ravel(), agent.ravel(), goal_plane,
                           per_action.ravel(), flags])


def encode_global(spec: MazeSpec, state: MazeState) -> np.ndarray:
    """Whole-grid feature vector for meta-level and flat learners."""
    agent = np.zeros((GRID, GRID), dtype=np.float32)
    agent[state.agent] = 1.0
    trail = np.zeros((GRID, GRID), dtype=np.float32)
    for cell in state.trail:
        trail[cell] = 1.0

    room = context_room(spec, state)
    gdist = goal_distances(spec)
    derived = np.zeros(22, dtype=np.float32)
    for g in DIRECTIONAL_SUBGOALS:
        derived[g] = 1.0 if doors_on_wall(spec, room, g) else 0.0
    derived[4] = 1.0 if room_of(spec.goal) == room else 0.0
    for g in SUBGOALS:
        val = subgoal_cost_map(spec, room, g)[state.agent]
        derived[5 + g] = min(float(val), _GLOBAL_CAP) / _GLOBAL_CAP \
            if np.isfinite(val) else 1.0
    ar, ac = state.agent
    nxt_d = []
    for a in ACTIONS:
        dr, dc = DELTAS[a]
        nxt = (ar + dr, ac + dc)
        blocked = not passable(spec.cells, nxt)
        derived[10 + a] = 1.0 if blocked else 0.0
        d = float(gdist[nxt]) if not blocked and np.isfinite(gdist[nxt]) else np.inf
        nxt_d.append(d)
        derived[14 + a] = min(d, _GLOBAL_CAP) / _GLOBAL_CAP if np.isfinite(d) else 1.0
    # medium-scale relative gap to the best of the four moves
    best_d = min(nxt_d)
    for a in ACTIONS:
        gap = nxt_d[a] - best_d if np.isfinite(nxt_d[a]) and np.isfinite(best_d) else 4.0
        derived[18 + a] = min(gap, 4.0) / 4.0

    return np.concatenate([_layout_plane(spec).ravel(), agent.ravel(),
                           trail.ravel(), derived])


def encode_observation(spec: MazeSpec, state: MazeState, frame: str) -> np.ndarray:
    if frame == GLOBAL_FRAME:
        return encode_global(spec, state)
    if frame == ROOM_LOCAL_FRAME:
        return encode_room_local(spec, state, context_room(spec, state))
    raise ValueError(f"unknown frame {frame!r}")

"""Platform-grid analog of Montezuma's Revenge room 1.

A 24x32 grid of platform rows connected by ladders, with skull hazards that
kill on contact (single life per episode). Four landmark boxes must be
entered in a fixed order: bottom of the right stair, the key (external
reward 100), back to the right stair, then the door (external reward 300).
Movement is 8-directional; vertical motion requires a ladder, illegal moves
are no-ops, so the only way to die is touching a hazard.
"""

from __future__ import annotations

import functools
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

# cell kinds
C_OPEN, C_HAZARD, C_LADDER, C_KEY, C_DOOR = 0, 1, 2, 3, 4

CHAIN_ACTIONS = tuple(range(8))
CHAIN_DELTAS = ((-1, 0), (1, 0), (0, -1), (0, 1),
                (-1, 1), (-1, -1), (1, 1), (1, -1))

H_FULL_CHAIN = 2000
EXTERNAL_REWARDS = {2: 100.0, 4: 300.0}
N_LANDMARKS = 4

OCCUPANCY = "occupancy"
PIXEL_CHANGE = "pixel_change"

# rendering codes (cell kinds plus the agent sprite)
_AGENT_CODE = 9


class InvalidState(Exception):
    """chain_step() on a dead or expired state."""


class ChainState(NamedTuple):
    agent: tuple[int, int]
    has_key: bool = False
    subgoals_done: int = 0      # bitmask, bit k-1 set when subgoal k complete
    steps: int = 0
    alive: bool = True


@dataclass(frozen=True, eq=False)
class ChainSpec:
    """Immutable platform-grid definition with ordered landmark boxes."""

    grid: np.ndarray                 # (rows, cols) uint8 of cell kinds
    landmarks: tuple[tuple[int, int, int, int], ...]   # (r0, c0, r1, c1) inclusive
    start: tuple[int, int]

    def __post_init__(self):
        self.grid.flags.writeable = False
        if len(self.landmarks) != N_LANDMARKS:
            raise ValueError("exactly four landmarks required")
        boxes = []
        rows, cols = self.grid.shape
        for (r0, c0, r1, c1) in self.landmarks:
            if not (0 <= r0 <= r1 < rows and 0 <= c0 <= c1 < cols):
                raise ValueError("landmark box outside grid")
            boxes.append(frozenset((r, c) for r in range(r0, r1 + 1)
                                   for c in range(c0, c1 + 1)))
        object.__setattr__(self, "_boxes", tuple(boxes))
        object.__setattr__(self, "_flat", self.grid.ravel().tolist())
        object.__setattr__(self, "_hash", hash(
            (self.grid.tobytes(), self.landmarks, self.start)))

    def __eq__(self, other):
        if not isinstance(other, ChainSpec):
            return NotImplemented
        return (self.start == other.start and self.landmarks == other.landmarks
                and np.array_equal(self.grid, other.grid))

    def __hash__(self):
        return self._hash

    @property
    def shape(self) -> tuple[int, int]:
        return self.grid.shape

    def box_cells(self, k: int) -> frozenset:
        """Cells of landmark box k (1-based)."""
        return self._boxes[k - 1]

    def kind(self, cell: tuple[int, int]) -> int:
        return self._flat[cell[0] * self.grid.shape[1] + cell[1]]


def initial_chain_state(spec: ChainSpec) -> ChainState:
    return ChainState(agent=spec.start)


def chain_done(spec: ChainSpec, state: ChainState) -> bool:
    return (not state.alive or state.steps >= H_FULL_CHAIN
            or state.subgoals_done == (1 << N_LANDMARKS) - 1)


def next_subgoal(state: ChainState) -> int | None:
    """Next landmark in sequence (1-based), or None when all are done."""
    for k in range(1, N_LANDMARKS + 1):
        if not state.subgoals_done & (1 << (k - 1)):
            return k
    return None


def move_legal(spec: ChainSpec, cell: tuple[int, int], action: int) -> tuple[int, int] | None:
    """Target cell of an action, or None when the move is a no-op.

    Vertical and diagonal movement requires a ladder on the current or
    target cell, and from a ladder the surrounding air is unreachable, so
    hazard contact, and with it death, can only happen by walking into a
    hazard along a platform row (the skulls)."""
    rows, cols = spec.grid.shape
    dr, dc = CHAIN_DELTAS[action]
    nr, nc = cell[0] + dr, cell[1] + dc
    if not (0 <= nr < rows and 0 <= nc < cols):
        return None
    here = spec.kind(cell)
    there = spec.kind((nr, nc))
    if here == C_LADDER and there == C_HAZARD:
        return None
    if dr != 0 and here != C_LADDER and there != C_LADDER:
        return None
    return (nr, nc)


def chain_step(spec: ChainSpec, state: ChainState,
               action: int) -> tuple[ChainState, float, float]:
    """Advance one step; returns (state, pseudo_reward, external_reward).

    Pseudo-reward is +1 for completing the next-in-sequence landmark and -1
    for dying; external rewards are paid on landmarks 2 and 4.
    """
    if not state.alive or state.steps >= H_FULL_CHAIN:
        raise InvalidState("chain_step on dead or expired state")
    steps = state.steps + 1
    target = move_legal(spec, state.agent, action)
    if target is None:
        return state._replace(steps=steps), 0.0, 0.0
    if spec.kind(target) == C_HAZARD:
        return ChainState(target, state.has_key, state.subgoals_done,
                          steps, False), -1.0, 0.0
    k = next_subgoal(state)
    pseudo = external = 0.0
    has_key, done_mask = state.has_key, state.subgoals_done
    if k is not None and target in spec.box_cells(k):
        done_mask |= 1 << (k - 1)
        pseudo = 1.0
        external = EXTERNAL_REWARDS.get(k, 0.0)
        if k == 2:
            has_key = True
    return ChainState(target, has_key, done_mask, steps, True), pseudo, external


# ---------------------------------------------------------------------------
# subgoal detectors


@dataclass(frozen=True)
class LandmarkDetector:
    box: tuple[int, int, int, int]        # (r0, c0, r1, c1) inclusive
    threshold: float = 0.30
    mode: str = OCCUPANCY

    def cells(self):
        r0, c0, r1, c1 = self.box
        return [(r, c) for r in range(r0, r1 + 1) for c in range(c0, c1 + 1)]


def render_chain(spec: ChainSpec, state: ChainState) -> np.ndarray:
    """Integer frame of the world: cell kinds, with the key hidden once
    collected, the door open once used, and the agent drawn on top."""
    frame = spec.grid.astype(np.int16).copy()
    if state.has_key:
        frame[frame == C_KEY] = C_OPEN
    if state.subgoals_done & (1 << 3):
        frame[frame == C_DOOR] = C_OPEN
    r, c = state.agent
    if 0 <= r < frame.shape[0] and 0 <= c < frame.shape[1]:
        frame[r, c] = _AGENT_CODE
    return frame


def detect_subgoal(detector: LandmarkDetector, spec: ChainSpec,
                   before: ChainState, after: ChainState) -> bool:
    """Occupancy mode: the agent is inside the box after the step. Pixel
    mode: the fraction of changed frame cells inside the box reaches the
    threshold (any change when the threshold is zero)."""
    cells = detector.cells()
    if detector.mode == OCCUPANCY:
        return after.agent in set(cells)
    if detector.mode == PIXEL_CHANGE:
        fa = render_chain(spec, before)
        fb = render_chain(spec, after)
        changed = sum(1 for cell in cells if fa[cell] != fb[cell])
        fraction = changed / len(cells)
        if detector.threshold <= 0:
            return fraction > 0
        return fraction >= detector.threshold
    raise ValueError(f"unknown detector mode {detector.mode!r}")


def detectors_for(spec: ChainSpec, mode: str = OCCUPANCY,
                  threshold: float = 0.30) -> list[LandmarkDetector]:
    return [LandmarkDetector(box=box, threshold=threshold, mode=mode)
            for box in spec.landmarks]


# ---------------------------------------------------------------------------
# serialization

_CHAR_OF = {C_OPEN: ".", C_HAZARD: "#", C_LADDER: "H", C_KEY: "K", C_DOOR: "D"}
_KIND_OF = {v: k for k, v in _CHAR_OF.items()}


def chain_to_text(spec: ChainSpec) -> str:
    rows, cols = spec.grid.shape
    lines = [f"chain {rows}x{cols}"]
    for r in range(rows):
        row = []
        for c in range(cols):
            if (r, c) == spec.start:
                row.append("S")
            else:
                row.append(_CHAR_OF[int(spec.grid[r, c])])
        lines.append("".join(row))
    for k, (r0, c0, r1, c1) in enumerate(spec.landmarks, start=1):
        lines.append(f"landmark {k}: {r0} {c0} {r1} {c1}")
    for k in sorted(EXTERNAL_REWARDS):
        lines.append(f"reward {k}: {EXTERNAL_REWARDS[k]:g}")
    return "\n".join(lines) + "\n"


def chain_from_text(text: str) -> ChainSpec:
    lines = [ln for ln in text.splitlines() if ln.strip()]
    head = lines[0].split()
    if len(head) != 2 or head[0] != "chain":
        raise ValueError("malformed chain header")
    rows, cols = (int(v) for v in head[1].split("x"))
    grid = np.zeros((rows, cols), dtype=np.uint8)
    start = None
    for r, line in enumerate(lines[1:1 + rows]):
        if len(line) != cols:
            raise ValueError(f"row {r} has length {len(line)}")
        for c, ch in enumerate(line):
            if ch == "S":
                start = (r, c)
                grid[r, c] = C_OPEN
            elif ch not in _KIND_OF:
                raise ValueError(f"unknown cell character {ch!r}")
            else:
                grid[r, c] = _KIND_OF[ch]
    if start is None:
        raise ValueError("chain text lacks a start")
    landmarks: dict[int, tuple[int, int, int, int]] = {}
    for line in lines[1 + rows:]:
        parts = line.replace(":", " ").split()
        if parts[0] == "landmark":
            k = int(parts[1])
            landmarks[k] = tuple(int(v) for v in parts[2:6])
        elif parts[0] == "reward":
            expected = EXTERNAL_REWARDS[int(parts[1])]
            if float(parts[2]) != expected:
                raise ValueError("external rewards are fixed at 100/300")
        else:
            raise ValueError(f"unknown trailer line {line!r}")
    boxes = tuple(landmarks[k] for k in range(1, N_LANDMARKS + 1))
    return ChainSpec(grid=grid, landmarks=boxes, start=start)


@functools.lru_cache(maxsize=1)
def default_chain() -> ChainSpec:
    """The checked-in 24x32 default instance."""
    from importlib import resources
    text = resources.files("hierg").joinpath("data/chain_default.txt").read_text()
    return chain_from_text(text)


# ---------------------------------------------------------------------------
# optimal route (validation and head-start support)


def optimal_route(spec: ChainSpec) -> list[int] | None:
    """Action sequence completing all four landmarks in order with the fewest
    primitive steps, ignoring the step horizon; None if impossible."""
    from collections import deque
    rows, cols = spec.grid.shape
    start = (spec.start, 0)
    parents: dict = {start: None}
    q = deque([start])
    goal = None
    while q:
        node = q.popleft()
        cell, mask = node
        if mask == (1 << N_LANDMARKS) - 1:
            goal = node
            break
        k = next((i for i in range(1, N_LANDMARKS + 1)
                  if not mask & (1 << (i - 1))))
        for a in CHAIN_ACTIONS:
            target = move_legal(spec, cell, a)
            if target is None or spec.kind(target) == C_HAZARD:
                continue
            new_mask = mask | (1 << (k - 1)) if target in spec.box_cells(k) else mask
            nxt = (target, new_mask)
            if nxt not in parents:
                parents[nxt] = (node, a)
                q.append(nxt)
    if goal is None:
        return None
    actions = []
    node = goal
    while parents[node] is not None:
        node, a = parents[node]
        actions.append(a)
    return actions[::-1]

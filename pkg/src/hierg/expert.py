"""Synthetic expert for the maze domain, plus the cost bookkeeping shared by
all experts.

The expert is backed by tabular value iteration. It exposes the feedback
operations used by the interactive learners: full-trajectory inspection,
subgoal labeling of HI-level trajectories, per-segment inspection, and
LO-level action/termination labeling. Every operation charges a CostLedger
according to a configurable CostModel.
"""

from __future__ import annotations

import functools
from collections import defaultdict
from dataclasses import dataclass, field

import numpy as np

from . import maze
from .maze import (ACTIONS, DELTAS, GO_TO_TARGET, GRID, LAVA, SUBGOALS,
                   MazeSpec, MazeState)

PER_STEP = "per_step"

# (op, level) pairs in ledger order
LEDGER_OPS = (("inspect", "full"), ("label", "full"), ("label", "hi"),
              ("inspect", "lo"), ("label", "lo"))

OUTCOME = "outcome"
AGREEMENT = "agreement"


class NoPath(Exception):
    """Value iteration found the goal unreachable from the start (defensive)."""


class InvalidSubgoal(Exception):
    """label_lo was asked about a subgoal that is inadmissible from the
    segment's entry room."""


# ---------------------------------------------------------------------------
# cost accounting


def _validate_cost(value) -> float | str:
    if value == PER_STEP:
        return PER_STEP
    value = float(value)
    if value < 0:
        raise ValueError("costs must be nonnegative")
    return value


@dataclass(frozen=True)
class CostModel:
    """Cost of each expert operation: a constant, or per_step (cost equals
    the length of the inspected/labeled trajectory)."""

    full_inspect: float | str = 1.0
    full_label: float | str = PER_STEP
    hi_label: float | str = PER_STEP
    lo_inspect: float | str = 1.0
    lo_label: float | str = PER_STEP

    def __post_init__(self):
        for name in ("full_inspect", "full_label", "hi_label", "lo_inspect", "lo_label"):
            object.__setattr__(self, name, _validate_cost(getattr(self, name)))

    def cost(self, op: str, level: str, length: int) -> float:
        value = getattr(self, f"{level}_{op}")
        return float(length) if value == PER_STEP else value


class CostLedger:
    """Running totals of expert operations, broken down per episode."""

    def __init__(self, model: CostModel | None = None):
        self.model = model or CostModel()
        self.episode = 0
        self.counts: dict[tuple[str, str], int] = defaultdict(int)
        self.costs: dict[tuple[str, str], float] = defaultdict(float)
        # episode -> (op, level) -> [count, cost]
        self.per_episode: dict[int, dict[tuple[str, str], list]] = defaultdict(
            lambda: defaultdict(lambda: [0, 0.0]))

    def begin_episode(self, episode: int) -> None:
        self.episode = episode

    def charge(self, op: str, level: str, length: int = 1) -> float:
        cost = self.model.cost(op, level, length)
        key = (op, level)
        self.counts[key] += 1
        self.costs[key] += cost
        row = self.per_episode[self.episode][key]
        row[0] += 1
        row[1] += cost
        return cost

    @property
    def total_cost(self) -> float:
        return sum(self.costs.values())

    def total_for(self, op: str, level: str) -> float:
        return self.costs[(op, level)]

    def count_for(self, op: str, level: str) -> int:
        return self.counts[(op, level)]

    def csv_rows(self) -> list[tuple]:
        """Rows (episode, op_kind, level, count, cost, cumulative_cost) in
        episode order; cumulative_cost is the ledger total up to the row."""
        rows = []
        cumulative = 0.0
        for episode in sorted(self.per_episode):
            for key in LEDGER_OPS:
                if key in self.per_episode[episode]:
                    count, cost = self.per_episode[episode][key]
                    cumulative += cost
                    rows.append((episode, key[0], key[1], count, cost, cumulative))
        return rows


# ---------------------------------------------------------------------------
# hierarchical trajectories


@dataclass
class Segment:
    """One subpolicy execution: entry state, declared subgoal, the executed
    (state, action, omega) steps and the state reached after the last step."""

    entry_state: object
    subgoal: int
    steps: list[tuple[object, int, int]] = field(default_factory=list)
    end_state: object = None

    def __len__(self):
        return len(self.steps)


@dataclass
class HierTrajectory:
    """Sequence of segments; concatenating their steps gives the full
    primitive trajectory."""

    segments: list[Segment] = field(default_factory=list)
    final_state: object = None

    @property
    def tau_hi(self) -> list[tuple[object, int]]:
        return [(seg.entry_state, seg.subgoal) for seg in self.segments]

    @property
    def tau_full(self) -> list[tuple[object, int]]:
        return [(s, a) for seg in self.segments for (s, a, _w) in seg.steps]

    @property
    def total_steps(self) -> int:
        return sum(len(seg) for seg in self.segments)


# ---------------------------------------------------------------------------
# value iteration

_SINK = GRID * GRID


@dataclass(frozen=True)
class ValueTable:
    """Converged state values and the greedy policy (ties broken in the fixed
    action order up, down, left, right)."""

    v: np.ndarray           # (17, 17) float64
    policy: np.ndarray      # (17, 17) int8
    gamma: float
    iterations: int

    def greedy_rollout(self, spec: MazeSpec, max_steps: int = maze.H_FULL):
        """Follow the greedy policy from the start; returns (states, actions)."""
        state = maze.initial_state(spec)
        states, actions = [state], []
        while state.terminal is maze.TERM_NONE and len(actions) < max_steps:
            a = int(self.policy[state.agent])
            state, _ = maze.step(spec, state, a)
            states.append(state)
            actions.append(a)
        return states, actions


@functools.lru_cache(maxsize=4096)
def value_iteration(spec: MazeSpec, gamma: float = 0.99,
                    epsilon: float = 1e-9) -> ValueTable:
    """Solve the maze MDP exactly: +1 entering the goal, -1 entering lava,
    both absorbing, zero step reward."""
    if not 0 < gamma <= 1:
        raise ValueError("gamma must be in (0, 1]")
    flat = spec.cells.ravel()
    n = GRID * GRID
    next_idx = np.empty((n, 4), dtype=np.int64)
    reward = np.zeros((n, 4), dtype=np.float64)
    for s in range(n):
        r, c = divmod(s, GRID)
        for a, (dr, dc) in enumerate(DELTAS):
            nr, nc = r + dr, c + dc
            if not (0 <= nr < GRID and 0 <= nc < GRID) or flat[nr * GRID + nc] == LAVA:
                next_idx[s, a] = _SINK
                reward[s, a] = -1.0
            elif flat[nr * GRID + nc] == maze.GOAL:
                next_idx[s, a] = _SINK
                reward[s, a] = 1.0
            else:
                next_idx[s, a] = nr * GRID + nc
    active = (flat != LAVA) & (flat != maze.GOAL)
    v = np.zeros(n + 1, dtype=np.float64)
    iterations = 0
    for iterations in range(1, 100_000):
        q = reward + gamma * v[next_idx]
        new_v = np.where(active, q.max(axis=1), v[:n])
        residual = np.abs(new_v - v[:n]).max()
        v[:n] = new_v
        if residual <= epsilon:
            break
    q = reward + gamma * v[next_idx]
    policy = q.argmax(axis=1).astype(np.int8)
    table = ValueTable(v=v[:n].reshape(GRID, GRID),
                       policy=policy.reshape(GRID, GRID),
                       gamma=gamma, iterations=iterations)
    if table.v[spec.start] <= 0:
        raise NoPath("goal unreachable from start")
    return table


# ---------------------------------------------------------------------------
# the synthetic expert


class MazeExpert:
    """Value-iteration expert exposing HierDemo, Inspect and Label operations.

    Every operation charges `ledger`; the computation itself is backed by the
    cached shortest-path maps, which coincide with the value-iteration greedy
    policy on this reward structure.
    """

    def __init__(self, ledger: CostLedger | None = None, gamma: float = 0.99,
                 epsilon: float = 1e-9):
        self.ledger = ledger or CostLedger()
        self.gamma = gamma
        self.epsilon = epsilon

    # -- uncharged primitives -------------------------------------------------

    def value_table(self, spec: MazeSpec) -> ValueTable:
        return value_iteration(spec, self.gamma, self.epsilon)

    def optimal_action(self, spec: MazeSpec, state: MazeState) -> int:
        return int(self.value_table(spec).policy[state.agent])

    def optimal_subgoal(self, spec: MazeSpec, state: MazeState) -> int:
        """Cheapest-continuation subgoal from this state: the g minimizing the
        constrained route cost (complete g, then follow an optimal path), with
        ties broken in the fixed subgoal order. The minimum always equals the
        plain goal distance, so following these subgoals preserves optimality."""
        if state.agent == spec.goal:
            return GO_TO_TARGET
        room = maze.context_room(spec, state)
        best_g, best_v = None, np.inf
        for g in SUBGOALS:
            val = maze.subgoal_cost_map(spec, room, g)[state.agent]
            if val < best_v:
                best_g, best_v = g, val
        if best_g is None or not np.isfinite(best_v):
            raise NoPath(f"no subgoal route from {state.agent}")
        return best_g

    def subgoal_action(self, spec: MazeSpec, entry_room: tuple[int, int],
                       g: int, state: MazeState) -> tuple[int, int]:
        """Expert (action, omega) for completing g from `state`, where g was
        issued in `entry_room`. omega=1 when the action completes the subgoal."""
        cost = maze.subgoal_cost_map(spec, entry_room, g)
        if not np.isfinite(cost).any():
            raise InvalidSubgoal(
                f"subgoal {maze.SUBGOAL_NAMES[g]} inadmissible from room {entry_room}")
        best_a, best_v = None, np.inf
        ar, ac = state.agent
        for a in ACTIONS:
            dr, dc = DELTAS[a]
            nxt = (ar + dr, ac + dc)
            if not maze.passable(spec.cells, nxt):
                continue
            val = cost[nxt]
            if val < best_v:
                best_a, best_v = a, val
        if best_a is None or not np.isfinite(best_v):
            raise InvalidSubgoal(
                f"no route completing {maze.SUBGOAL_NAMES[g]} from {state.agent}")
        completion = set(maze.completion_cells(spec, entry_room, g))
        dr, dc = DELTAS[best_a]
        omega = 1 if (ar + dr, ac + dc) in completion else 0
        return best_a, omega

    def hier_demo(self, spec: MazeSpec) -> HierTrajectory:
        """Optimal hierarchical demonstration, segmented at room crossings."""
        state = maze.initial_state(spec)
        traj = HierTrajectory()
        while state.terminal is maze.TERM_NONE:
            g = self.optimal_subgoal(spec, state)
            entry_room = maze.context_room(spec, state)
            seg = Segment(entry_state=state, subgoal=g)
            while state.terminal is maze.TERM_NONE:
                a, omega = self.subgoal_action(spec, entry_room, g, state)
                nxt, _r = maze.step(spec, state, a)
                seg.steps.append((state, a, omega))
                state = nxt
                if omega:
                    break
            seg.end_state = state
            traj.segments.append(seg)
        traj.final_state = state
        return traj

    def demo_flat(self, spec: MazeSpec) -> list[tuple[MazeState, int]]:
        """Optimal flat demonstration as (state, action) pairs."""
        states, actions = self.value_table(spec).greedy_rollout(spec)
        return list(zip(states[:-1], actions))

    def reference_check(self, spec: MazeSpec,
                        tau_full: list[tuple[MazeState, int]]) -> bool:
        """True when every primitive action matches the expert's hierarchical
        policy simulated along the trajectory."""
        if not tau_full:
            return False
        ctx_entry = tau_full[0][0]
        ctx_room = maze.context_room(spec, ctx_entry)
        g = self.optimal_subgoal(spec, ctx_entry)
        for (state, action) in tau_full:
            ref_a, _omega = self.subgoal_action(spec, ctx_room, g, state)
            if action != ref_a:
                return False
            nxt, _r = maze.step(spec, state, action)
            if nxt.terminal is not maze.TERM_NONE:
                break
            if maze.subgoal_completed(spec, ctx_entry, nxt, g):
                ctx_entry = nxt
                ctx_room = maze.context_room(spec, nxt)
                g = self.optimal_subgoal(spec, nxt)
        return True

    # -- charged operations ---------------------------------------------------

    def inspect_full(self, spec: MazeSpec, traj: HierTrajectory,
                     mode: str = OUTCOME) -> bool:
        """Pass/Fail verdict on a full episode; charges one full inspection."""
        self.ledger.charge("inspect", "full", traj.total_steps)
        if mode == OUTCOME:
            return getattr(traj.final_state, "terminal", None) == maze.TERM_GOAL
        if mode == AGREEMENT:
            return self.reference_check(spec, traj.tau_full)
        raise ValueError(f"unknown inspection mode {mode!r}")

    def label_hi(self, spec: MazeSpec,
                 tau_hi: list[tuple[MazeState, int]]) -> list[int]:
        """Expert subgoal for every HI-level state; charges one HI label of
        length len(tau_hi)."""
        self.ledger.charge("label", "hi", len(tau_hi))
        return [self.optimal_subgoal(spec, s) for (s, _g) in tau_hi]

    def inspect_lo(self, spec: MazeSpec, segment: Segment,
                   mode: str = OUTCOME) -> bool:
        """Pass/Fail verdict on one subpolicy segment; charges one LO
        inspection."""
        self.ledger.charge("inspect", "lo", len(segment))
        if mode == OUTCOME:
            return maze.subgoal_completed(spec, segment.entry_state,
                                          segment.end_state, segment.subgoal)
        if mode == AGREEMENT:
            entry_room = maze.context_room(spec, segment.entry_state)
            for (state, action, omega) in segment.steps:
                ref = self.subgoal_action(spec, entry_room, segment.subgoal, state)
                if (action, omega) != ref:
                    return False
            return True
        raise ValueError(f"unknown inspection mode {mode!r}")

    def label_lo(self, spec: MazeSpec, segment: Segment) -> list[tuple[int, int]]:
        """Expert (action, omega) labels along a segment; charges one LO label
        of the segment's length. Raises InvalidSubgoal for inadmissible g."""
        entry_room = maze.context_room(spec, segment.entry_state)
        if not maze.completion_cells(spec, entry_room, segment.subgoal):
            raise InvalidSubgoal(
                f"{maze.SUBGOAL_NAMES[segment.subgoal]} inadmissible from {entry_room}")
        self.ledger.charge("label", "lo", len(segment))
        return [self.subgoal_action(spec, entry_room, segment.subgoal, state)
                for (state, _a, _w) in segment.steps]

    def label_full(self, spec: MazeSpec,
                   tau_full: list[tuple[MazeState, int]]) -> list[int]:
        """Expert action for every state of a flat trajectory; charges one
        full label of the trajectory's length."""
        self.ledger.charge("label", "full", len(tau_full))
        table = self.value_table(spec)
        return [int(table.policy[s.agent]) for (s, _a) in tau_full]


class ChainExpert:
    """Expert for the platform-chain domain. HI-level advice is the next
    landmark in the fixed sequence; the hybrid learner never asks for
    LO-level labels here."""

    def __init__(self, ledger: CostLedger | None = None):
        self.ledger = ledger or CostLedger()

    def optimal_subgoal(self, spec, state) -> int:
        from . import chain
        k = chain.next_subgoal(state)
        return (k if k is not None else chain.N_LANDMARKS) - 1

    def inspect_full(self, spec, traj: HierTrajectory, mode: str = OUTCOME) -> bool:
        from . import chain
        self.ledger.charge("inspect", "full", traj.total_steps)
        final = traj.final_state
        return final is not None and final.subgoals_done == (1 << chain.N_LANDMARKS) - 1

    def label_hi(self, spec, tau_hi) -> list[int]:
        self.ledger.charge("label", "hi", len(tau_hi))
        return [self.optimal_subgoal(spec, s) for (s, _g) in tau_hi]

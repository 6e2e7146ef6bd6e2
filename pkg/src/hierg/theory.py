"""Closed-form labeling-cost bounds for hierarchically guided and flat
interactive imitation learning with halving-algorithm learners, plus an
empirical verifier running both learners on small realizable corridor worlds.

The corridor instance is a line of rooms, each a short run of cells. Meta
policies map room indices to subgoals (west / east / go-to-target); low-level
policies map room-relative positions to (move, terminate) pairs. Classes are
explicit enumerations containing the expert, so the halving learner's mistake
count is bounded by the log of the class size, which is what the bounds are
made of.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .expert import CostLedger, CostModel, PER_STEP
from .learners import VersionSpace

# corridor actions and subgoals
A_LEFT, A_RIGHT = 0, 1
SG_WEST, SG_EAST, SG_TARGET = 0, 1, 2
N_SUBGOALS = 3
N_LO_LABELS = 4     # (action, omega) pairs encoded as action*2 + omega


class BoundViolated(AssertionError):
    pass


# ---------------------------------------------------------------------------
# bounds


def _constant_costs(costs: CostModel) -> None:
    for name in ("full_inspect", "full_label", "hi_label", "lo_inspect", "lo_label"):
        if getattr(costs, name) == PER_STEP:
            raise ValueError("bound formulas require constant costs; "
                             f"{name} is per_step")


@dataclass(frozen=True)
class BoundParams:
    episodes: int
    size_m: int
    size_pi_lo: int
    size_g: int
    size_g_star: int
    h_hi: int
    h_lo: int
    h_full: int
    costs: CostModel

    def __post_init__(self):
        if not (1 <= self.size_g_star <= self.size_g):
            raise ValueError("need 1 <= |G*| <= |G|")
        if min(self.size_m, self.size_pi_lo, self.episodes) < 1:
            raise ValueError("sizes and episode count must be >= 1")
        _constant_costs(self.costs)


def bound_hier(p: BoundParams) -> float:
    """Expert-cost bound for hierarchically guided DAgger by round T."""
    c = p.costs
    learning_events = math.log2(p.size_m) + p.size_g_star * math.log2(p.size_pi_lo)
    return (p.episodes * c.full_inspect
            + learning_events * (c.hi_label + p.h_hi * c.lo_inspect)
            + p.size_g_star * math.log2(p.size_pi_lo) * c.lo_label)


def bound_flat(p: BoundParams) -> float:
    """Expert-cost bound for inspection-gated flat DAgger by round T."""
    c = p.costs
    mistakes = math.log2(p.size_m) + p.size_g * math.log2(p.size_pi_lo)
    return p.episodes * c.full_inspect + mistakes * c.full_label


def cost_ratio(p: BoundParams) -> float:
    """Upper bound on (hierarchical learning cost) / (flat learning cost)."""
    c = p.costs
    if c.full_label == 0:
        raise ZeroDivisionError("full-label cost is zero")
    return (c.hi_label + p.h_hi * c.lo_inspect + c.lo_label) / c.full_label


# ---------------------------------------------------------------------------
# corridor worlds


@dataclass(frozen=True)
class SyntheticInstance:
    """Realizable corridor world with enumerated policy classes.

    meta_outputs[p, r] is policy p's subgoal in room r; lo_outputs[q, s] is
    policy q's encoded (action, omega) at room-relative position s. Rows
    expert_meta / expert_lo[g] are the expert's policies; realizability holds
    by construction.
    """

    n_rooms: int
    room_len: int
    start: int
    meta_outputs: np.ndarray
    lo_outputs: np.ndarray
    expert_meta: int
    expert_lo: tuple[int, int, int]
    costs: CostModel
    episodes: int
    seed: int

    @property
    def n_cells(self) -> int:
        return self.n_rooms * self.room_len

    @property
    def goal(self) -> int:
        return self.n_cells - 1

    @property
    def h_lo(self) -> int:
        return self.room_len + 2

    @property
    def h_hi(self) -> int:
        return 2 * self.n_rooms + 4

    @property
    def h_full(self) -> int:
        return self.h_hi * self.h_lo

    @property
    def n_lo_states(self) -> int:
        return self.room_len + 4

    def local_state(self, pos: int, entry_room: int) -> int:
        rel = pos - entry_room * self.room_len
        return min(max(rel, -2), self.room_len + 1) + 2

    def bound_params(self) -> BoundParams:
        g_star = len({int(g) for g in self.meta_outputs[self.expert_meta]})
        return BoundParams(episodes=self.episodes,
                           size_m=len(self.meta_outputs),
                           size_pi_lo=len(self.lo_outputs),
                           size_g=N_SUBGOALS, size_g_star=g_star,
                           h_hi=self.h_hi, h_lo=self.h_lo, h_full=self.h_full,
                           costs=self.costs)


def expert_lo_row(n_lo_states: int, room_len: int, g: int) -> np.ndarray:
    """Expert (action, omega) table for one subgoal on the local-state axis
    (relative position -2 .. room_len+1, shifted by +2)."""
    row = np.zeros(n_lo_states, dtype=np.int64)
    for s in range(n_lo_states):
        rel = s - 2
        if g == SG_WEST:
            action = A_LEFT
            omega = 1 if rel <= 0 else 0
        elif g == SG_EAST:
            action = A_RIGHT
            omega = 1 if rel >= room_len - 1 else 0
        else:   # go-to-target: goal sits on the room's last cell
            action = A_RIGHT
            omega = 1 if rel >= room_len - 2 else 0
        row[s] = action * 2 + omega
    return row


def expert_meta_row(n_rooms: int) -> np.ndarray:
    row = np.full(n_rooms, SG_EAST, dtype=np.int64)
    row[n_rooms - 1] = SG_TARGET
    return row


def random_instance(seed: int, episodes: int | None = None,
                    max_class: int = 256) -> SyntheticInstance:
    """Sample a realizable instance: random geometry, random distractor
    policies around the expert's rows, random constant costs."""
    rng = np.random.default_rng(seed)
    n_rooms = int(rng.integers(2, 6))
    room_len = int(rng.integers(1, 3))
    start = int(rng.integers(0, (n_rooms - 1) * room_len))
    n_lo_states = room_len + 4

    meta_all = N_SUBGOALS ** n_rooms
    expert_meta = expert_meta_row(n_rooms)
    meta_size = int(rng.integers(2, min(meta_all, max_class) + 1))
    meta_rows = {tuple(expert_meta)}
    while len(meta_rows) < meta_size:
        meta_rows.add(tuple(rng.integers(0, N_SUBGOALS, size=n_rooms)))
    meta_outputs = np.array(sorted(meta_rows), dtype=np.int64)
    expert_meta_idx = sorted(meta_rows).index(tuple(expert_meta))

    lo_experts = [expert_lo_row(n_lo_states, room_len, g) for g in range(N_SUBGOALS)]
    lo_size = int(rng.integers(4, max_class + 1))
    lo_rows = {tuple(r) for r in lo_experts}
    while len(lo_rows) < max(lo_size, len(lo_rows)):
        lo_rows.add(tuple(rng.integers(0, N_LO_LABELS, size=n_lo_states)))
    lo_sorted = sorted(lo_rows)
    lo_outputs = np.array(lo_sorted, dtype=np.int64)
    expert_lo = tuple(lo_sorted.index(tuple(r)) for r in lo_experts)

    costs = CostModel(full_inspect=float(rng.integers(1, 4)),
                      full_label=float(rng.integers(5, 40)),
                      hi_label=float(rng.integers(1, 10)),
                      lo_inspect=float(rng.integers(1, 3)),
                      lo_label=float(rng.integers(1, 10)))
    return SyntheticInstance(
        n_rooms=n_rooms, room_len=room_len, start=start,
        meta_outputs=meta_outputs, lo_outputs=lo_outputs,
        expert_meta=expert_meta_idx, expert_lo=expert_lo, costs=costs,
        episodes=episodes if episodes is not None else int(rng.integers(20, 61)),
        seed=seed)


# ---------------------------------------------------------------------------
# episode mechanics


def _decode(label: int) -> tuple[int, int]:
    return label // 2, label % 2


def _rollout(inst: SyntheticInstance, choose_g, act):
    """Run one episode; returns (segments, success). Each segment is
    (entry_room, g, [(local_state, action, omega), ...])."""
    pos = inst.start
    segments = []
    steps = 0
    success = False
    for _h in range(inst.h_hi):
        entry_room = pos // inst.room_len
        g = choose_g(entry_room)
        seg_steps = []
        for _l in range(inst.h_lo):
            local = inst.local_state(pos, entry_room)
            action, omega = act(g, local)
            nxt = min(max(pos + (1 if action == A_RIGHT else -1), 0),
                      inst.n_cells - 1)
            seg_steps.append((local, action, omega))
            pos = nxt
            steps += 1
            if pos == inst.goal or omega == 1 or steps >= inst.h_full:
                break
        segments.append((entry_room, g, seg_steps))
        if pos == inst.goal:
            success = True
            break
        if steps >= inst.h_full:
            break
    return segments, success


def _expert_act(inst: SyntheticInstance, g: int, local: int) -> tuple[int, int]:
    return _decode(int(inst.lo_outputs[inst.expert_lo[g], local]))


def _expert_g(inst: SyntheticInstance, room: int) -> int:
    return int(inst.meta_outputs[inst.expert_meta, room])


def _full_agreement(inst: SyntheticInstance, segments) -> bool:
    """Agreement-mode full inspection: simulate the expert's hierarchical
    policy along the executed trajectory and compare primitive actions."""
    if not segments:
        return False
    pos = inst.start
    ctx_room = pos // inst.room_len
    ctx_g = _expert_g(inst, ctx_room)
    for (_entry, _g, seg_steps) in segments:
        for (_local, action, _omega) in seg_steps:
            ref_local = inst.local_state(pos, ctx_room)
            ref_a, ref_w = _expert_act(inst, ctx_g, ref_local)
            if action != ref_a:
                return False
            pos = min(max(pos + (1 if action == A_RIGHT else -1), 0),
                      inst.n_cells - 1)
            if pos == inst.goal:
                return True
            if ref_w == 1:
                ctx_room = pos // inst.room_len
                ctx_g = _expert_g(inst, ctx_room)
    return True


def _update_wrong_points(space: VersionSpace, points) -> int:
    """Feed only the deployed-wrong points, mirroring the mistake counting in
    the analysis; returns the number of counted mistakes."""
    mistakes = 0
    for (state, deployed, correct) in points:
        if deployed != correct:
            if space.update(state, correct):
                mistakes += 1
    return mistakes


# ---------------------------------------------------------------------------
# halving-learner drivers


@dataclass
class HalvingRunStats:
    ledger: CostLedger
    hi_mistakes: int = 0
    lo_mistakes: dict = field(default_factory=dict)
    successes: int = 0
    labeled_episodes: int = 0

    @property
    def total_cost(self) -> float:
        return self.ledger.total_cost


def run_hier_halving(inst: SyntheticInstance) -> HalvingRunStats:
    """hg-DAgger with version-space learners and agreement-mode inspections."""
    meta_vs = VersionSpace(inst.meta_outputs, N_SUBGOALS)
    lo_vs = [VersionSpace(inst.lo_outputs, N_LO_LABELS) for _ in range(N_SUBGOALS)]
    stats = HalvingRunStats(CostLedger(inst.costs),
                            lo_mistakes={g: 0 for g in range(N_SUBGOALS)})
    for t in range(inst.episodes):
        stats.ledger.begin_episode(t)
        segments, success = _rollout(
            inst, meta_vs.predict, lambda g, s: _decode(lo_vs[g].predict(s)))
        stats.successes += int(success)
        stats.ledger.charge("inspect", "full")
        if _full_agreement(inst, segments):
            continue
        stats.labeled_episodes += 1
        stats.ledger.charge("label", "hi")
        star = [_expert_g(inst, entry) for (entry, _g, _s) in segments]
        stats.hi_mistakes += _update_wrong_points(
            meta_vs, [(entry, g, g_star) for (entry, g, _s), g_star
                      in zip(segments, star)])
        for (entry, g, seg_steps), g_star in zip(segments, star):
            if g != g_star:
                break
            stats.ledger.charge("inspect", "lo")
            expert_pairs = [_expert_act(inst, g, local)
                            for (local, _a, _w) in seg_steps]
            deployed = [(a, w) for (_l, a, w) in seg_steps]
            if deployed == expert_pairs:
                continue
            stats.ledger.charge("label", "lo")
            points = [(local, a * 2 + w, ea * 2 + ew)
                      for (local, a, w), (ea, ew)
                      in zip(seg_steps, expert_pairs)]
            stats.lo_mistakes[g] += _update_wrong_points(lo_vs[g], points)
            break
    return stats


def run_flat_halving(inst: SyntheticInstance) -> HalvingRunStats:
    """Inspection-gated flat DAgger over the product class, with halving
    updates factorized across the meta and per-subgoal components."""
    meta_vs = VersionSpace(inst.meta_outputs, N_SUBGOALS)
    lo_vs = [VersionSpace(inst.lo_outputs, N_LO_LABELS) for _ in range(N_SUBGOALS)]
    stats = HalvingRunStats(CostLedger(inst.costs),
                            lo_mistakes={g: 0 for g in range(N_SUBGOALS)})
    for t in range(inst.episodes):
        stats.ledger.begin_episode(t)
        segments, success = _rollout(
            inst, meta_vs.predict, lambda g, s: _decode(lo_vs[g].predict(s)))
        stats.successes += int(success)
        stats.ledger.charge("inspect", "full")
        if _full_agreement(inst, segments):
            continue
        stats.labeled_episodes += 1
        stats.ledger.charge("label", "full")
        star = [_expert_g(inst, entry) for (entry, _g, _s) in segments]
        hi_points = [(entry, g, g_star) for (entry, g, _s), g_star
                     in zip(segments, star)]
        if any(g != g_star for (_e, g, g_star) in hi_points):
            stats.hi_mistakes += _update_wrong_points(meta_vs, hi_points)
            continue
        for (entry, g, seg_steps) in segments:
            expert_pairs = [_expert_act(inst, g, local)
                            for (local, _a, _w) in seg_steps]
            points = [(local, a * 2 + w, ea * 2 + ew)
                      for (local, a, w), (ea, ew)
                      in zip(seg_steps, expert_pairs)]
            stats.lo_mistakes[g] += _update_wrong_points(lo_vs[g], points)
    return stats


# ---------------------------------------------------------------------------
# verification


@dataclass(frozen=True)
class VerificationReport:
    instance_seed: int
    params: BoundParams
    realized_hier: float
    bound_hier: float
    realized_flat: float
    bound_flat: float
    hi_mistakes_hier: int
    hi_mistakes_flat: int
    lo_mistakes_hier: dict
    lo_mistakes_flat: dict

    @property
    def hier_margin(self) -> float:
        return self.bound_hier - self.realized_hier

    @property
    def flat_margin(self) -> float:
        return self.bound_flat - self.realized_flat

    @property
    def ok(self) -> bool:
        log_m = math.log2(self.params.size_m)
        log_p = math.log2(self.params.size_pi_lo)
        return (self.hier_margin >= 0 and self.flat_margin >= 0
                and self.hi_mistakes_hier <= log_m
                and self.hi_mistakes_flat <= log_m
                and all(v <= log_p for v in self.lo_mistakes_hier.values())
                and all(v <= log_p for v in self.lo_mistakes_flat.values()))

    def summary(self) -> str:
        return (f"instance {self.instance_seed}: "
                f"hier {self.realized_hier:.1f} <= {self.bound_hier:.1f} "
                f"(margin {self.hier_margin:.1f}), "
                f"flat {self.realized_flat:.1f} <= {self.bound_flat:.1f} "
                f"(margin {self.flat_margin:.1f}), "
                f"hi mistakes {self.hi_mistakes_hier}/{self.hi_mistakes_flat}, "
                f"{'OK' if self.ok else 'VIOLATED'}")


def verify_bounds(inst: SyntheticInstance, strict: bool = True) -> VerificationReport:
    """Run both halving learners on the instance and compare realized ledger
    costs against the closed-form bounds."""
    params = inst.bound_params()
    hier = run_hier_halving(inst)
    flat = run_flat_halving(inst)
    report = VerificationReport(
        instance_seed=inst.seed, params=params,
        realized_hier=hier.total_cost, bound_hier=bound_hier(params),
        realized_flat=flat.total_cost, bound_flat=bound_flat(params),
        hi_mistakes_hier=hier.hi_mistakes, hi_mistakes_flat=flat.hi_mistakes,
        lo_mistakes_hier=dict(hier.lo_mistakes),
        lo_mistakes_flat=dict(flat.lo_mistakes))
    if strict and not report.ok:
        raise BoundViolated(report.summary())
    return report


def verification_sweep(n_instances: int = 50, seed0: int = 1000,
                       strict: bool = True) -> list[VerificationReport]:
    return [verify_bounds(random_instance(seed0 + i), strict=strict)
            for i in range(n_instances)]

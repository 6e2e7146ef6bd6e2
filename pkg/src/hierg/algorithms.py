"""Experiment drivers: hierarchical behavioral cloning, hierarchically guided
DAgger, the IL/RL hybrid, and the flat / hierarchical-RL baselines.

Every driver takes a RunConfig, owns its RNG, environments, ledger and
learners, and returns a RunResult with per-episode metrics. Identical config
and seed reproduce identical results byte for byte.
"""

from __future__ import annotations

import functools
from collections import deque
from dataclasses import dataclass, field

import numpy as np

from . import chain as chain_env
from . import maze
from .chain import ChainSpec, ChainState
from .expert import (OUTCOME, ChainExpert, CostLedger, CostModel,
                     HierTrajectory, MazeExpert, Segment, value_iteration)
from .learners import (EpsilonSchedule, LabeledDataset, QTable, ReplayBuffer,
                       SoftmaxClassifier, Transition)

ALGORITHMS = ("hbc", "hg_dagger", "hg_dagger_q", "flat_bc", "flat_dagger",
              "flat_q", "hdqn")
ENVIRONMENTS = ("maze", "chain")

_N_SUBGOALS = 5          # maze subgoal classes
_N_CHAIN_SUBGOALS = 4


@dataclass(frozen=True)
class RunConfig:
    """Everything a driver needs; flat on purpose so it maps 1:1 onto the
    TOML schema and hashes canonically."""

    algorithm: str = "hg_dagger"
    environment: str = "maze"
    episodes: int = 300
    warm_start: int = 50
    seed: int = 0
    # expert cost model
    cost_full_inspect: float | str = 1.0
    cost_full_label: float | str = "per_step"
    cost_hi_label: float | str = "per_step"
    cost_lo_inspect: float | str = 1.0
    cost_lo_label: float | str = "per_step"
    # maze environment pools
    min_dist: int = maze.MIN_DIST_DEFAULT
    train_pool: int = 200
    test_pool: int = 100
    pool_seed: int = 100_000
    h_lo: int = maze.H_LO_DEFAULT
    h_hi: int = maze.H_HI_DEFAULT
    # chain horizons
    h_lo_chain: int = 250
    h_hi_chain: int = 16
    # classifier hyperparameters
    lr: float = 1e-2
    epochs: int = 4
    batch_size: int = 128
    l2: float = 1e-3
    # Q-learning hyperparameters
    q_lr: float = 0.25
    q_gamma: float = 0.99
    q_init: float = 0.0
    buffer_capacity: int = 50_000
    q_batch: int = 32
    update_every: int = 4
    priority_alpha: float = 0.6
    priority_beta0: float = 0.4
    priority_beta_steps: int = 200_000
    target_refresh: int = 2000
    eps_start: float = 1.0
    eps_end: float = 0.05
    eps_decay_steps: int = 20_000
    freeze_threshold: float = 0.90
    # run limits / baseline knobs
    max_lo_steps: int = 0        # stop once this many LO steps executed (0 = off)
    stop_at_external: float = 0.0  # stop once an episode collects this much (0 = off)
    head_start: float = 0.0      # h-DQN: fraction of the optimal prefix replayed

    def cost_model(self) -> CostModel:
        return CostModel(full_inspect=self.cost_full_inspect,
                         full_label=self.cost_full_label,
                         hi_label=self.cost_hi_label,
                         lo_inspect=self.cost_lo_inspect,
                         lo_label=self.cost_lo_label)

    def validate(self) -> None:
        if self.algorithm not in ALGORITHMS:
            raise ValueError(f"unknown algorithm {self.algorithm!r}")
        if self.environment not in ENVIRONMENTS:
            raise ValueError(f"unknown environment {self.environment!r}")
        if self.environment == "chain" and self.algorithm not in (
                "hg_dagger_q", "hdqn", "flat_q"):
            raise ValueError(
                f"{self.algorithm} is not supported on the chain environment")
        if self.algorithm == "hg_dagger" and self.warm_start > self.episodes:
            raise ValueError("warm_start exceeds the episode budget")


@functools.lru_cache(maxsize=64)
def maze_pool(pool_seed: int, count: int, min_dist: int) -> tuple:
    return tuple(maze.generate_maze(pool_seed + i, min_dist) for i in range(count))


# ---------------------------------------------------------------------------
# metrics

METRIC_COLUMNS = (
    "episode", "success", "external_reward", "lo_steps_cum",
    "hi_labels_cum", "lo_labels_cum", "full_labels_cum",
    "inspect_cost_cum", "total_cost_cum",
    "sg_success_0", "sg_success_1", "sg_success_2", "sg_success_3", "sg_success_4",
    "frozen_0", "frozen_1", "frozen_2", "frozen_3", "frozen_4",
)


class MetricsLog:
    """Fixed-schema per-episode rows, written as a stable CSV."""

    def __init__(self):
        self.rows: list[dict] = []

    def add(self, **kwargs) -> None:
        row = {col: kwargs.get(col, 0) for col in METRIC_COLUMNS}
        self.rows.append(row)

    def column(self, name: str) -> np.ndarray:
        return np.array([row[name] for row in self.rows], dtype=np.float64)

    def write_csv(self, path, header_comment: str = "") -> None:
        with open(path, "w") as f:
            if header_comment:
                f.write(f"# {header_comment}\n")
            f.write(",".join(METRIC_COLUMNS) + "\n")
            for row in self.rows:
                f.write(",".join(_fmt(row[c]) for c in METRIC_COLUMNS) + "\n")


def _fmt(v) -> str:
    if isinstance(v, float):
        return repr(v)
    return str(v)


def trailing_success(values, window: int = 100) -> np.ndarray:
    """Element t is the mean of values over episodes max(0, t-window+1)..t."""
    x = np.asarray(values, dtype=np.float64)
    out = np.empty(len(x))
    csum = np.concatenate([[0.0], np.cumsum(x)])
    for t in range(len(x)):
        lo = max(0, t - window + 1)
        out[t] = (csum[t + 1] - csum[lo]) / (t + 1 - lo)
    return out


# ---------------------------------------------------------------------------
# policy containers


class MazeILPolicy:
    """Meta-controller over subgoals plus per-subgoal action and termination
    classifiers, all linear."""

    def __init__(self, cfg: RunConfig):
        mk = lambda dim, classes, tag: SoftmaxClassifier(
            dim, classes, lr=cfg.lr, batch_size=cfg.batch_size,
            epochs=cfg.epochs, l2=cfg.l2, seed=cfg.seed * 1000 + tag)
        self.meta = mk(maze.GLOBAL_DIM, _N_SUBGOALS, 0)
        self.actors = [mk(maze.ROOM_LOCAL_DIM, 4, 10 + g) for g in maze.SUBGOALS]
        self.terms = [mk(maze.ROOM_LOCAL_DIM, 2, 20 + g) for g in maze.SUBGOALS]

    def subgoal(self, x) -> int:
        return int(self.meta.predict(x))

    def act(self, g: int, x) -> tuple[int, int]:
        return int(self.actors[g].predict(x)), int(self.terms[g].predict(x))

    def to_jsonable(self) -> dict:
        return {"kind": "maze_il_policy",
                "meta": self.meta.to_jsonable(),
                "actors": [c.to_jsonable() for c in self.actors],
                "terms": [c.to_jsonable() for c in self.terms]}


class FlatPolicy:
    def __init__(self, cfg: RunConfig):
        self.clf = SoftmaxClassifier(maze.GLOBAL_DIM, 4, lr=cfg.lr,
                                     batch_size=cfg.batch_size,
                                     epochs=cfg.epochs, l2=cfg.l2,
                                     seed=cfg.seed * 1000 + 5)

    def act(self, x) -> int:
        return int(self.clf.predict(x))

    def to_jsonable(self) -> dict:
        return {"kind": "flat_policy", "clf": self.clf.to_jsonable()}


class QSubgoalBank:
    """Per-subgoal tabular double-Q learners with prioritized replay, the
    first-positive arming rule, epsilon schedules and the >90% trailing
    success freeze."""

    def __init__(self, cfg: RunConfig, n_subgoals: int, n_actions: int):
        self.cfg = cfg
        self.n_subgoals = n_subgoals
        self.q = [QTable(n_actions, lr=cfg.q_lr, gamma=cfg.q_gamma,
                         target_refresh=cfg.target_refresh,
                         init_value=cfg.q_init) for _ in range(n_subgoals)]
        self.buffers = [ReplayBuffer(cfg.buffer_capacity, alpha=cfg.priority_alpha,
                                     beta0=cfg.priority_beta0,
                                     beta_steps=cfg.priority_beta_steps)
                        for _ in range(n_subgoals)]
        self.schedule = EpsilonSchedule(cfg.eps_start, cfg.eps_end, cfg.eps_decay_steps)
        # epsilon anneals per state: a state's exploration ends only after it
        # has been visited often, so rarely-seen territory stays exploratory
        self.visit_scale = max(1, cfg.eps_decay_steps // 100)
        self.visits: list[dict] = [{} for _ in range(n_subgoals)]
        self.steps = [0] * n_subgoals
        self.attempts = [deque(maxlen=100) for _ in range(n_subgoals)]
        self.frozen = [False] * n_subgoals
        self._pending_updates = [0.0] * n_subgoals

    def epsilon(self, g: int, key=None) -> float:
        """Exploration stays maximal until the subgoal's buffer is armed;
        afterwards it anneals per state with the visit count."""
        if self.frozen[g]:
            return 0.0
        if not self.buffers[g].armed:
            return self.schedule.start
        visits = self.visits[g].get(key, 0) if key is not None else self.steps[g]
        return self.schedule.value(visits * self.visit_scale)

    def act(self, g: int, key, rng, greedy: bool = False) -> int:
        if greedy or self.frozen[g]:
            return self.q[g].greedy_action(key)
        eps = self.epsilon(g, key)
        if self.buffers[g].armed:
            self.steps[g] += 1
            self.visits[g][key] = self.visits[g].get(key, 0) + 1
        return self.q[g].act_epsilon_greedy(key, eps, rng)

    def record_attempt(self, g: int, success: bool) -> None:
        self.attempts[g].append(1.0 if success else 0.0)

    def feed(self, g: int, transitions) -> None:
        if self.frozen[g]:
            return
        stored = 0
        for tr in transitions:
            if self.buffers[g].offer(tr):
                stored += 1
        self._pending_updates[g] += stored / self.cfg.update_every

    def train_pending(self, rng) -> None:
        for g in range(self.n_subgoals):
            if self.frozen[g]:
                self._pending_updates[g] = 0.0
                continue
            if len(self.buffers[g]) == 0:
                continue
            n = int(self._pending_updates[g])
            self._pending_updates[g] -= n
            for _ in range(n):
                self.q[g].update_from_buffer(self.buffers[g], self.cfg.q_batch, rng)

    def maybe_freeze(self) -> None:
        for g in range(self.n_subgoals):
            window = self.attempts[g]
            if (not self.frozen[g] and len(window) == window.maxlen
                    and sum(window) / len(window) > self.cfg.freeze_threshold):
                self.frozen[g] = True
                self.q[g].frozen = True

    def success_rate(self, g: int) -> float:
        window = self.attempts[g]
        return sum(window) / len(window) if window else 0.0

    def to_jsonable(self) -> dict:
        return {"kind": "q_subgoal_bank", "frozen": list(self.frozen),
                "q": [q.to_jsonable() for q in self.q]}


# ---------------------------------------------------------------------------
# maze episode executors


def _lo_key(x: np.ndarray) -> bytes:
    return x.tobytes()


def run_episode_hier_il(spec, policy: MazeILPolicy, cfg: RunConfig) -> HierTrajectory:
    state = maze.initial_state(spec)
    traj = HierTrajectory()
    for _h in range(cfg.h_hi):
        g = policy.subgoal(maze.encode_global(spec, state))
        entry_room = maze.context_room(spec, state)
        seg = Segment(entry_state=state, subgoal=g)
        for _l in range(cfg.h_lo):
            x = maze.encode_room_local(spec, state, entry_room)
            a, w = policy.act(g, x)
            nxt, _r = maze.step(spec, state, a)
            seg.steps.append((state, a, w))
            state = nxt
            if state.terminal is not maze.TERM_NONE or w == 1:
                break
        seg.end_state = state
        traj.segments.append(seg)
        if state.terminal is not maze.TERM_NONE:
            break
    traj.final_state = state
    return traj


def run_episode_flat(spec, policy: FlatPolicy) -> tuple[list, object]:
    state = maze.initial_state(spec)
    tau = []
    while state.terminal is maze.TERM_NONE:
        a = policy.act(maze.encode_global(spec, state))
        tau.append((state, a))
        state, _r = maze.step(spec, state, a)
    return tau, state


def run_episode_hier_q(spec, choose_subgoal, bank: QSubgoalBank, cfg: RunConfig,
                       rng, greedy: bool = False):
    """Roll the hierarchy with Q subpolicies and detector termination.
    Returns (traj, per-segment transition lists, external reward)."""
    state = maze.initial_state(spec)
    traj = HierTrajectory()
    seg_transitions: list[list[Transition]] = []
    external = 0.0
    for _h in range(cfg.h_hi):
        g = choose_subgoal(state)
        entry_state = state
        entry_room = maze.context_room(spec, state)
        seg = Segment(entry_state=state, subgoal=g)
        transitions: list[Transition] = []
        completed = False
        for _l in range(cfg.h_lo):
            x = maze.encode_room_local(spec, state, entry_room)
            key = _lo_key(x)
            a = bank.act(g, key, rng, greedy=greedy)
            nxt, r = maze.step(spec, state, a)
            external += r
            pseudo = maze.pseudo_reward(spec, entry_state, (state, a, nxt), g)
            completed = maze.subgoal_completed(spec, entry_state, nxt, g)
            done = completed or nxt.terminal is not maze.TERM_NONE
            if not greedy:
                nxt_key = _lo_key(maze.encode_room_local(spec, nxt, entry_room))
                transitions.append(Transition(key, a, pseudo, nxt_key, done))
            seg.steps.append((state, a, 1 if completed else 0))
            state = nxt
            if done:
                break
        seg.end_state = state
        traj.segments.append(seg)
        seg_transitions.append(transitions)
        if not greedy:
            bank.record_attempt(g, completed)
        if state.terminal is not maze.TERM_NONE:
            break
    traj.final_state = state
    return traj, seg_transitions, external


# ---------------------------------------------------------------------------
# chain episode executor


def chain_meta_features(spec: ChainSpec, state: ChainState) -> np.ndarray:
    """HI-level features: progress mask one-hot, key flag, coarse position."""
    rows, cols = spec.shape
    x = np.zeros(16 + 1 + 2, dtype=np.float32)
    x[state.subgoals_done] = 1.0
    x[16] = 1.0 if state.has_key else 0.0
    x[17] = state.agent[0] / rows
    x[18] = state.agent[1] / cols
    return x


def chain_meta_key(spec: ChainSpec, state: ChainState):
    return (state.subgoals_done, state.has_key,
            state.agent[0] // 3, state.agent[1] // 8)


def _chain_lo_key(state: ChainState):
    return (state.agent, state.has_key)


def run_episode_chain_q(spec: ChainSpec, choose_subgoal, bank: QSubgoalBank,
                        cfg: RunConfig, rng, meta_hook=None):
    """Roll the chain hierarchy; subgoal g's detector is occupancy of box g.
    Returns (traj, per-segment transitions, external reward, lo_steps)."""
    state = chain_env.initial_chain_state(spec)
    traj = HierTrajectory()
    seg_transitions: list[list[Transition]] = []
    external = 0.0
    lo_steps = 0
    for _h in range(cfg.h_hi_chain):
        g = choose_subgoal(state)      # 0-based landmark index
        box = spec.box_cells(g + 1)
        entry_state = state
        seg = Segment(entry_state=state, subgoal=g)
        transitions: list[Transition] = []
        completed = False
        seg_external = 0.0
        for _l in range(cfg.h_lo_chain):
            key = _chain_lo_key(state)
            a = bank.act(g, key, rng)
            nxt, _env_pseudo, ext = chain_env.chain_step(spec, state, a)
            lo_steps += 1
            external += ext
            seg_external += ext
            entered = nxt.agent in box and state.agent not in box
            if not nxt.alive:
                pseudo = -1.0
            elif entered:
                pseudo = 1.0
            else:
                pseudo = 0.0
            completed = entered
            done = completed or chain_env.chain_done(spec, nxt)
            transitions.append(Transition(key, a, pseudo, _chain_lo_key(nxt), done))
            seg.steps.append((state, a, 1 if completed else 0))
            state = nxt
            if done:
                break
        seg.end_state = state
        traj.segments.append(seg)
        seg_transitions.append(transitions)
        bank.record_attempt(g, completed)
        if meta_hook is not None:
            meta_hook(entry_state, g, seg_external, state)
        if chain_env.chain_done(spec, state):
            break
    traj.final_state = state
    return traj, seg_transitions, external, lo_steps


# ---------------------------------------------------------------------------
# run result


@dataclass
class RunResult:
    config: RunConfig
    ledger: CostLedger
    metrics: MetricsLog
    policy: object
    dataset_sizes: dict = field(default_factory=dict)
    extras: dict = field(default_factory=dict)

    def checkpoint_jsonable(self) -> dict:
        blob = {"algorithm": self.config.algorithm, "seed": self.config.seed}
        if hasattr(self.policy, "to_jsonable"):
            blob["policy"] = self.policy.to_jsonable()
        return blob


def _ledger_metrics(ledger: CostLedger) -> dict:
    return {
        "hi_labels_cum": ledger.total_for("label", "hi"),
        "lo_labels_cum": ledger.total_for("label", "lo"),
        "full_labels_cum": ledger.total_for("label", "full"),
        "inspect_cost_cum": (ledger.total_for("inspect", "full")
                             + ledger.total_for("inspect", "lo")),
        "total_cost_cum": ledger.total_cost,
    }


# ---------------------------------------------------------------------------
# maze imitation learning drivers


class _MazeRunContext:
    def __init__(self, cfg: RunConfig, expert=None):
        cfg.validate()
        self.cfg = cfg
        self.rng = np.random.default_rng(cfg.seed)
        self.expert = expert or MazeExpert(CostLedger(cfg.cost_model()))
        self.ledger = self.expert.ledger
        self.train_specs = maze_pool(cfg.pool_seed, cfg.train_pool, cfg.min_dist)
        self.test_specs = maze_pool(cfg.pool_seed + 1_000_000, cfg.test_pool,
                                    cfg.min_dist)
        self.metrics = MetricsLog()

    def train_spec(self):
        return self.train_specs[int(self.rng.integers(len(self.train_specs)))]

    def test_spec(self, episode: int):
        return self.test_specs[episode % len(self.test_specs)]


def _hbc_episode(ctx: _MazeRunContext, spec, d_hi, d_act, d_term) -> None:
    """One hierarchical demonstration, aggregated into the level datasets and
    charged as HI + LO labels."""
    demo = ctx.expert.hier_demo(spec)
    ctx.ledger.charge("label", "hi", len(demo.tau_hi))
    for seg in demo.segments:
        ctx.ledger.charge("label", "lo", len(seg))
        entry_room = maze.context_room(spec, seg.entry_state)
        for (s, a, w) in seg.steps:
            x = maze.encode_room_local(spec, s, entry_room)
            d_act[seg.subgoal].append(x, a)
            d_term[seg.subgoal].append(x, w)
        d_hi.append(maze.encode_global(spec, seg.entry_state), seg.subgoal)


def _train_il(policy: MazeILPolicy, d_hi, d_act, d_term) -> None:
    if len(d_hi):
        policy.meta.fit(*d_hi.arrays())
    for g in maze.SUBGOALS:
        if len(d_act[g]):
            policy.actors[g].fit(*d_act[g].arrays())
        if len(d_term[g]):
            policy.terms[g].fit(*d_term[g].arrays())


def _il_metrics_row(ctx: _MazeRunContext, episode: int, traj_success,
                    external: float, attempts) -> None:
    row = dict(episode=episode, success=int(traj_success),
               external_reward=external, **_ledger_metrics(ctx.ledger))
    for g in maze.SUBGOALS:
        window = attempts[g]
        row[f"sg_success_{g}"] = sum(window) / len(window) if window else 0.0
    ctx.metrics.add(**row)


def _test_episode_il(ctx: _MazeRunContext, episode: int,
                     policy: MazeILPolicy) -> bool:
    spec = ctx.test_spec(episode)
    traj = run_episode_hier_il(spec, policy, ctx.cfg)
    return traj.final_state.terminal == maze.TERM_GOAL


def run_hbc(config: RunConfig, expert=None) -> RunResult:
    """Hierarchical behavioral cloning: aggregate expert demonstrations on
    both levels, train, and track test success."""
    ctx = _MazeRunContext(config, expert)
    policy = MazeILPolicy(config)
    d_hi = LabeledDataset(maze.GLOBAL_DIM, "hi")
    d_act = [LabeledDataset(maze.ROOM_LOCAL_DIM, f"act_{g}") for g in maze.SUBGOALS]
    d_term = [LabeledDataset(maze.ROOM_LOCAL_DIM, f"term_{g}") for g in maze.SUBGOALS]
    attempts = [deque(maxlen=100) for _ in maze.SUBGOALS]
    for t in range(config.episodes):
        ctx.ledger.begin_episode(t)
        _hbc_episode(ctx, ctx.train_spec(), d_hi, d_act, d_term)
        _train_il(policy, d_hi, d_act, d_term)
        success = _test_episode_il(ctx, t, policy)
        _il_metrics_row(ctx, t, success, 0.0, attempts)
    sizes = _il_sizes(d_hi, d_act, d_term)
    return RunResult(config, ctx.ledger, ctx.metrics, policy, sizes,
                     extras={"d_hi": d_hi, "d_act": d_act, "d_term": d_term})


def _il_sizes(d_hi, d_act, d_term) -> dict:
    sizes = {"d_hi": len(d_hi)}
    for g in maze.SUBGOALS:
        sizes[f"d_act_{g}"] = len(d_act[g])
        sizes[f"d_term_{g}"] = len(d_term[g])
    return sizes


def run_hg_dagger(config: RunConfig, expert=None,
                  inspect_mode: str = OUTCOME, on_episode=None) -> RunResult:
    """Hierarchically guided DAgger: warm-start by cloning, then label only
    failing episodes, scanning segments while the subgoal choice agrees with
    the expert and stopping at the first failing segment."""
    ctx = _MazeRunContext(config, expert)
    policy = MazeILPolicy(config)
    d_hi = LabeledDataset(maze.GLOBAL_DIM, "hi")
    d_act = [LabeledDataset(maze.ROOM_LOCAL_DIM, f"act_{g}") for g in maze.SUBGOALS]
    d_term = [LabeledDataset(maze.ROOM_LOCAL_DIM, f"term_{g}") for g in maze.SUBGOALS]
    attempts = [deque(maxlen=100) for _ in maze.SUBGOALS]
    for t in range(config.episodes):
        ctx.ledger.begin_episode(t)
        spec = ctx.train_spec()
        if t < config.warm_start:
            _hbc_episode(ctx, spec, d_hi, d_act, d_term)
        else:
            traj = run_episode_hier_il(spec, policy, config)
            for seg in traj.segments:
                attempts[seg.subgoal].append(
                    1.0 if maze.subgoal_completed(spec, seg.entry_state,
                                                  seg.end_state, seg.subgoal) else 0.0)
            if not ctx.expert.inspect_full(spec, traj, mode=inspect_mode):
                star = ctx.expert.label_hi(spec, traj.tau_hi)
                for seg, g_star in zip(traj.segments, star):
                    if seg.subgoal != g_star:
                        break
                    if not ctx.expert.inspect_lo(spec, seg, mode=inspect_mode):
                        labels = ctx.expert.label_lo(spec, seg)
                        entry_room = maze.context_room(spec, seg.entry_state)
                        for (s, _a, _w), (a_star, w_star) in zip(seg.steps, labels):
                            x = maze.encode_room_local(spec, s, entry_room)
                            d_act[seg.subgoal].append(x, a_star)
                            d_term[seg.subgoal].append(x, w_star)
                        break
                for (s_h, _g), g_star in zip(traj.tau_hi, star):
                    d_hi.append(maze.encode_global(spec, s_h), g_star)
        _train_il(policy, d_hi, d_act, d_term)
        success = _test_episode_il(ctx, t, policy)
        _il_metrics_row(ctx, t, success, 0.0, attempts)
        if on_episode is not None:
            on_episode(t, success)
    sizes = _il_sizes(d_hi, d_act, d_term)
    return RunResult(config, ctx.ledger, ctx.metrics, policy, sizes,
                     extras={"d_hi": d_hi, "d_act": d_act, "d_term": d_term})


def run_flat_bc(config: RunConfig, expert=None) -> RunResult:
    """Flat behavioral cloning from full-trajectory demonstrations."""
    ctx = _MazeRunContext(config, expert)
    policy = FlatPolicy(config)
    data = LabeledDataset(maze.GLOBAL_DIM, "flat")
    for t in range(config.episodes):
        ctx.ledger.begin_episode(t)
        spec = ctx.train_spec()
        demo = ctx.expert.demo_flat(spec)
        ctx.ledger.charge("label", "full", len(demo))
        for (s, a) in demo:
            data.append(maze.encode_global(spec, s), a)
        policy.clf.fit(*data.arrays())
        tau, final = run_episode_flat(ctx.test_spec(t), policy)
        ctx.metrics.add(episode=t, success=int(final.terminal == maze.TERM_GOAL),
                        **_ledger_metrics(ctx.ledger))
    return RunResult(config, ctx.ledger, ctx.metrics, policy,
                     {"d_full": len(data)})


def run_flat_dagger(config: RunConfig, expert=None,
                    inspect_mode: str = OUTCOME) -> RunResult:
    """Flat DAgger with an inspection gate: the whole trajectory is labeled
    only when the full inspection fails."""
    ctx = _MazeRunContext(config, expert)
    policy = FlatPolicy(config)
    data = LabeledDataset(maze.GLOBAL_DIM, "flat")
    for t in range(config.episodes):
        ctx.ledger.begin_episode(t)
        spec = ctx.train_spec()
        tau, final = run_episode_flat(spec, policy)
        traj = HierTrajectory(
            segments=[Segment(entry_state=tau[0][0] if tau else None, subgoal=0,
                              steps=[(s, a, 0) for (s, a) in tau],
                              end_state=final)],
            final_state=final)
        if not ctx.expert.inspect_full(spec, traj, mode=inspect_mode):
            labels = ctx.expert.label_full(spec, tau)
            for (s, _a), a_star in zip(tau, labels):
                data.append(maze.encode_global(spec, s), a_star)
        if len(data):
            policy.clf.fit(*data.arrays())
        test_tau, test_final = run_episode_flat(ctx.test_spec(t), policy)
        ctx.metrics.add(episode=t,
                        success=int(test_final.terminal == maze.TERM_GOAL),
                        **_ledger_metrics(ctx.ledger))
    return RunResult(config, ctx.ledger, ctx.metrics, policy,
                     {"d_full": len(data)})


# ---------------------------------------------------------------------------
# hybrid IL/RL and RL baselines


def run_hg_dagger_q(config: RunConfig, expert=None) -> RunResult:
    """IL at the HI level, Q-learning with pseudo-rewards at the LO level.
    LO transitions enter a subgoal's replay buffer only when the episode
    failed the full inspection and the chosen subgoal agrees with the expert
    HI label for its entry state; no LO labels are ever requested."""
    if config.environment == "chain":
        return _run_chain_hybrid(config, expert)
    ctx = _MazeRunContext(config, expert)
    policy = MazeHybridPolicy(config)
    lo_steps = 0
    for t in range(config.episodes):
        ctx.ledger.begin_episode(t)
        spec = ctx.train_spec()
        choose = lambda state: policy.meta_subgoal(spec, state)
        traj, seg_transitions, external = run_episode_hier_q(
            spec, choose, policy.bank, config, ctx.rng)
        lo_steps += traj.total_steps
        if not ctx.expert.inspect_full(spec, traj):
            star = ctx.expert.label_hi(spec, traj.tau_hi)
            for (s_h, _g), g_star in zip(traj.tau_hi, star):
                policy.d_hi.append(maze.encode_global(spec, s_h), g_star)
            policy.meta.fit(*policy.d_hi.arrays())
            for seg, transitions, g_star in zip(traj.segments, seg_transitions, star):
                if seg.subgoal == g_star:
                    policy.bank.feed(seg.subgoal, transitions)
        policy.bank.train_pending(ctx.rng)
        policy.bank.maybe_freeze()
        test_spec = ctx.test_spec(t)
        test_traj, _tr, _ext = run_episode_hier_q(
            test_spec, lambda s: policy.meta_subgoal(test_spec, s),
            policy.bank, config, ctx.rng, greedy=True)
        success = test_traj.final_state.terminal == maze.TERM_GOAL
        row = dict(episode=t, success=int(success), external_reward=external,
                   lo_steps_cum=lo_steps, **_ledger_metrics(ctx.ledger))
        for g in maze.SUBGOALS:
            row[f"sg_success_{g}"] = policy.bank.success_rate(g)
            row[f"frozen_{g}"] = int(policy.bank.frozen[g])
        ctx.metrics.add(**row)
        if config.max_lo_steps and lo_steps >= config.max_lo_steps:
            break
    return RunResult(config, ctx.ledger, ctx.metrics, policy,
                     {"d_hi": len(policy.d_hi)})


class MazeHybridPolicy:
    """Classifier meta-controller over IL labels + Q subpolicy bank."""

    def __init__(self, cfg: RunConfig):
        self.meta = SoftmaxClassifier(maze.GLOBAL_DIM, _N_SUBGOALS, lr=cfg.lr,
                                      batch_size=cfg.batch_size, epochs=cfg.epochs,
                                      l2=cfg.l2, seed=cfg.seed * 1000 + 7)
        self.d_hi = LabeledDataset(maze.GLOBAL_DIM, "hi")
        self.bank = QSubgoalBank(cfg, _N_SUBGOALS, 4)

    def meta_subgoal(self, spec, state) -> int:
        return int(self.meta.predict(maze.encode_global(spec, state)))

    def to_jsonable(self) -> dict:
        return {"kind": "maze_hybrid_policy", "meta": self.meta.to_jsonable(),
                "bank": self.bank.to_jsonable()}


class ChainHybridPolicy:
    def __init__(self, cfg: RunConfig):
        self.meta = SoftmaxClassifier(19, _N_CHAIN_SUBGOALS, lr=1e-2,
                                      batch_size=cfg.batch_size, epochs=cfg.epochs,
                                      l2=cfg.l2, seed=cfg.seed * 1000 + 7)
        self.d_hi = LabeledDataset(19, "hi")
        self.bank = QSubgoalBank(cfg, _N_CHAIN_SUBGOALS, 8)

    def meta_subgoal(self, spec, state) -> int:
        return int(self.meta.predict(chain_meta_features(spec, state)))

    def to_jsonable(self) -> dict:
        return {"kind": "chain_hybrid_policy", "meta": self.meta.to_jsonable(),
                "bank": self.bank.to_jsonable()}


def _chain_metrics_row(metrics, ledger, t, success, external, lo_steps, bank,
                       n_subgoals) -> None:
    row = dict(episode=t, success=int(success), external_reward=external,
               lo_steps_cum=lo_steps, **_ledger_metrics(ledger))
    for g in range(n_subgoals):
        row[f"sg_success_{g}"] = bank.success_rate(g)
        row[f"frozen_{g}"] = int(bank.frozen[g])
    metrics.add(**row)


def _run_chain_hybrid(config: RunConfig, expert=None) -> RunResult:
    spec = chain_env.default_chain()
    rng = np.random.default_rng(config.seed)
    ledger = CostLedger(config.cost_model())
    oracle = expert or ChainExpert(ledger)
    ledger = oracle.ledger
    policy = ChainHybridPolicy(config)
    metrics = MetricsLog()
    lo_steps = 0
    best_external = 0.0
    for t in range(config.episodes):
        ledger.begin_episode(t)
        traj, seg_transitions, external, steps = run_episode_chain_q(
            spec, lambda s: policy.meta_subgoal(spec, s), policy.bank, config, rng)
        lo_steps += steps
        best_external = max(best_external, external)
        success = traj.final_state.subgoals_done == (1 << chain_env.N_LANDMARKS) - 1
        if not oracle.inspect_full(spec, traj):
            star = oracle.label_hi(spec, traj.tau_hi)
            for (s_h, _g), g_star in zip(traj.tau_hi, star):
                policy.d_hi.append(chain_meta_features(spec, s_h), g_star)
            policy.meta.fit(*policy.d_hi.arrays())
            for seg, transitions, g_star in zip(traj.segments, seg_transitions, star):
                if seg.subgoal == g_star:
                    policy.bank.feed(seg.subgoal, transitions)
        policy.bank.train_pending(rng)
        policy.bank.maybe_freeze()
        _chain_metrics_row(metrics, ledger, t, success, external, lo_steps,
                           policy.bank, _N_CHAIN_SUBGOALS)
        if config.max_lo_steps and lo_steps >= config.max_lo_steps:
            break
        if config.stop_at_external and best_external >= config.stop_at_external:
            break
    return RunResult(config, ledger, metrics, policy,
                     {"d_hi": len(policy.d_hi)},
                     extras={"best_external": best_external, "lo_steps": lo_steps})


def run_hdqn(config: RunConfig, expert=None) -> RunResult:
    """Hierarchical RL baseline: Q-learning at both levels, detector
    pseudo-rewards, no expert labels. head_start replays the expert's optimal
    prefix before handing control to the learner (maze only)."""
    if config.environment == "chain":
        return _run_chain_hdqn(config)
    return _run_maze_hdqn(config)


class HdqnPolicy:
    def __init__(self, cfg: RunConfig, n_subgoals: int, n_actions: int):
        self.meta_q = QTable(n_subgoals, lr=cfg.q_lr, gamma=cfg.q_gamma,
                             target_refresh=cfg.target_refresh)
        self.meta_buffer = ReplayBuffer(cfg.buffer_capacity, alpha=cfg.priority_alpha,
                                        beta0=cfg.priority_beta0,
                                        beta_steps=cfg.priority_beta_steps)
        self.meta_schedule = EpsilonSchedule(cfg.eps_start, cfg.eps_end,
                                             cfg.eps_decay_steps)
        self.meta_choices = 0
        self.meta_pending = 0.0
        self.bank = QSubgoalBank(cfg, n_subgoals, n_actions)
        self.cfg = cfg

    def choose(self, key, rng) -> int:
        self.meta_choices += 1
        eps = self.meta_schedule.value(self.meta_choices)
        return self.meta_q.act_epsilon_greedy(key, eps, rng)

    def meta_feed(self, key, g, reward, next_key, done) -> None:
        self.meta_buffer.offer(Transition(key, g, reward, next_key, done))
        self.meta_pending += 1.0 / self.cfg.update_every

    def meta_train(self, rng) -> None:
        if len(self.meta_buffer) == 0:
            return
        n = int(self.meta_pending)
        self.meta_pending -= n
        for _ in range(n):
            self.meta_q.update_from_buffer(self.meta_buffer, self.cfg.q_batch, rng)

    def to_jsonable(self) -> dict:
        return {"kind": "hdqn_policy", "meta_q": self.meta_q.to_jsonable(),
                "bank": self.bank.to_jsonable()}


def _run_maze_hdqn(config: RunConfig) -> RunResult:
    ctx = _MazeRunContext(config)
    policy = HdqnPolicy(config, _N_SUBGOALS, 4)
    lo_steps = 0
    table_cache = {}
    for t in range(config.episodes):
        ctx.ledger.begin_episode(t)
        spec = ctx.train_spec()
        state = maze.initial_state(spec)
        external = 0.0
        # optimal head start: replay a prefix of the expert's trajectory
        if config.head_start > 0:
            if spec not in table_cache:
                table_cache[spec] = value_iteration(spec)
            _states, actions = table_cache[spec].greedy_rollout(spec)
            prefix = int(config.head_start * len(actions))
            for a in actions[:prefix]:
                if state.terminal is not maze.TERM_NONE:
                    break
                state, r = maze.step(spec, state, a)
                external += r
        traj = HierTrajectory()
        while state.terminal is maze.TERM_NONE and len(traj.segments) < config.h_hi:
            meta_key = (maze.context_room(spec, state), maze.room_of(spec.goal))
            g = policy.choose(meta_key, ctx.rng)
            entry_state = state
            entry_room = maze.context_room(spec, state)
            seg = Segment(entry_state=state, subgoal=g)
            transitions = []
            completed = False
            seg_external = 0.0
            for _l in range(config.h_lo):
                x = maze.encode_room_local(spec, state, entry_room)
                key = _lo_key(x)
                a = policy.bank.act(g, key, ctx.rng)
                nxt, r = maze.step(spec, state, a)
                external += r
                seg_external += r
                lo_steps += 1
                pseudo = maze.pseudo_reward(spec, entry_state, (state, a, nxt), g)
                completed = maze.subgoal_completed(spec, entry_state, nxt, g)
                done = completed or nxt.terminal is not maze.TERM_NONE
                transitions.append(Transition(
                    key, a, pseudo,
                    _lo_key(maze.encode_room_local(spec, nxt, entry_room)), done))
                seg.steps.append((state, a, 1 if completed else 0))
                state = nxt
                if done:
                    break
            seg.end_state = state
            traj.segments.append(seg)
            policy.bank.record_attempt(g, completed)
            policy.bank.feed(g, transitions)
            next_meta_key = (maze.context_room(spec, state), maze.room_of(spec.goal))
            policy.meta_feed(meta_key, g, seg_external, next_meta_key,
                             state.terminal is not maze.TERM_NONE)
        traj.final_state = state
        policy.bank.train_pending(ctx.rng)
        policy.meta_train(ctx.rng)
        policy.bank.maybe_freeze()
        success = state.terminal == maze.TERM_GOAL
        row = dict(episode=t, success=int(success), external_reward=external,
                   lo_steps_cum=lo_steps, **_ledger_metrics(ctx.ledger))
        for g in maze.SUBGOALS:
            row[f"sg_success_{g}"] = policy.bank.success_rate(g)
            row[f"frozen_{g}"] = int(policy.bank.frozen[g])
        ctx.metrics.add(**row)
        if config.max_lo_steps and lo_steps >= config.max_lo_steps:
            break
    return RunResult(config, ctx.ledger, ctx.metrics, policy, {})


def _run_chain_hdqn(config: RunConfig) -> RunResult:
    spec = chain_env.default_chain()
    rng = np.random.default_rng(config.seed)
    ledger = CostLedger(config.cost_model())
    policy = HdqnPolicy(config, _N_CHAIN_SUBGOALS, 8)
    metrics = MetricsLog()
    lo_steps = 0
    best_external = 0.0
    for t in range(config.episodes):
        ledger.begin_episode(t)

        def meta_hook(entry_state, g, seg_external, end_state,
                      _spec=spec, _policy=policy):
            done = chain_env.chain_done(_spec, end_state)
            _policy.meta_feed(chain_meta_key(_spec, entry_state), g, seg_external,
                              chain_meta_key(_spec, end_state), done)

        traj, seg_transitions, external, steps = run_episode_chain_q(
            spec, lambda s: policy.choose(chain_meta_key(spec, s), rng),
            policy.bank, config, rng, meta_hook=meta_hook)
        lo_steps += steps
        best_external = max(best_external, external)
        for seg, transitions in zip(traj.segments, seg_transitions):
            policy.bank.feed(seg.subgoal, transitions)
        policy.bank.train_pending(rng)
        policy.meta_train(rng)
        policy.bank.maybe_freeze()
        success = traj.final_state.subgoals_done == (1 << chain_env.N_LANDMARKS) - 1
        _chain_metrics_row(metrics, ledger, t, success, external, lo_steps,
                           policy.bank, _N_CHAIN_SUBGOALS)
        if config.max_lo_steps and lo_steps >= config.max_lo_steps:
            break
        if config.stop_at_external and best_external >= config.stop_at_external:
            break
    return RunResult(config, ledger, metrics, policy, {},
                     extras={"best_external": best_external, "lo_steps": lo_steps})


def run_flat_q(config: RunConfig) -> RunResult:
    """Flat Q-learning on external reward only (no hierarchy, no expert)."""
    rng = np.random.default_rng(config.seed)
    ledger = CostLedger(config.cost_model())
    metrics = MetricsLog()
    q = QTable(8 if config.environment == "chain" else 4, lr=config.q_lr,
               gamma=config.q_gamma, target_refresh=config.target_refresh)
    buffer = ReplayBuffer(config.buffer_capacity, alpha=config.priority_alpha,
                          beta0=config.priority_beta0,
                          beta_steps=config.priority_beta_steps)
    schedule = EpsilonSchedule(config.eps_start, config.eps_end,
                               config.eps_decay_steps)
    lo_steps = 0
    pending = 0.0
    best_external = 0.0
    maze_ctx = _MazeRunContext(config) if config.environment == "maze" else None
    chain_spec = chain_env.default_chain() if config.environment == "chain" else None
    for t in range(config.episodes):
        ledger.begin_episode(t)
        external = 0.0
        if config.environment == "chain":
            state = chain_env.initial_chain_state(chain_spec)
            while not chain_env.chain_done(chain_spec, state):
                key = (state.agent, state.has_key, state.subgoals_done)
                a = q.act_epsilon_greedy(key, schedule.value(lo_steps), rng)
                nxt, _p, ext = chain_env.chain_step(chain_spec, state, a)
                external += ext
                lo_steps += 1
                done = chain_env.chain_done(chain_spec, nxt)
                if buffer.offer(Transition(key, a, ext,
                                           (nxt.agent, nxt.has_key, nxt.subgoals_done),
                                           done)):
                    pending += 1.0 / config.update_every
                state = nxt
            success = state.subgoals_done == (1 << chain_env.N_LANDMARKS) - 1
        else:
            spec = maze_ctx.train_spec()
            state = maze.initial_state(spec)
            while state.terminal is maze.TERM_NONE:
                key = (spec.seed, state.agent)
                a = q.act_epsilon_greedy(key, schedule.value(lo_steps), rng)
                nxt, r = maze.step(spec, state, a)
                external += r
                lo_steps += 1
                done = nxt.terminal is not maze.TERM_NONE
                if buffer.offer(Transition(key, a, r, (spec.seed, nxt.agent), done)):
                    pending += 1.0 / config.update_every
                state = nxt
            success = state.terminal == maze.TERM_GOAL
        if len(buffer):
            for _ in range(int(pending)):
                q.update_from_buffer(buffer, config.q_batch, rng)
            pending -= int(pending)
        best_external = max(best_external, external)
        metrics.add(episode=t, success=int(success), external_reward=external,
                    lo_steps_cum=lo_steps, **_ledger_metrics(ledger))
        if config.max_lo_steps and lo_steps >= config.max_lo_steps:
            break
        if config.stop_at_external and best_external >= config.stop_at_external:
            break
    return RunResult(config, ledger, metrics, q, {},
                     extras={"best_external": best_external, "lo_steps": lo_steps})


DRIVERS = {
    "hbc": run_hbc,
    "hg_dagger": run_hg_dagger,
    "hg_dagger_q": run_hg_dagger_q,
    "flat_bc": run_flat_bc,
    "flat_dagger": run_flat_dagger,
    "flat_q": lambda cfg, expert=None: run_flat_q(cfg),
    "hdqn": lambda cfg, expert=None: run_hdqn(cfg),
}


def run_algorithm(config: RunConfig, expert=None) -> RunResult:
    config.validate()
    return DRIVERS[config.algorithm](config, expert=expert)

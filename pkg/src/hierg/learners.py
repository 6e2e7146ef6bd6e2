"""Learner substrates: aggregating datasets, a multinomial linear classifier,
the halving version-space learner, and tabular double Q-learning with
optional prioritized replay.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


class EmptyDataset(Exception):
    pass


class EmptyVersionSpace(Exception):
    pass


class RealizabilityViolated(Exception):
    """An update would empty the version space: the label stream contradicts
    every policy in the class."""


class BufferEmpty(Exception):
    pass


# ---------------------------------------------------------------------------
# datasets


class LabeledDataset:
    """Append-only set of (feature vector, integer label) pairs."""

    def __init__(self, n_features: int, level: str = ""):
        self.n_features = n_features
        self.level = level
        self._rows: list[np.ndarray] = []
        self._labels: list[int] = []
        self._cache: tuple[np.ndarray, np.ndarray] | None = None

    def append(self, x: np.ndarray, y: int) -> None:
        self._rows.append(np.asarray(x, dtype=np.float32))
        self._labels.append(int(y))
        self._cache = None

    def extend(self, pairs) -> None:
        for x, y in pairs:
            self.append(x, y)

    def __len__(self) -> int:
        return len(self._rows)

    def arrays(self) -> tuple[np.ndarray, np.ndarray]:
        if not self._rows:
            raise EmptyDataset(f"dataset {self.level!r} is empty")
        if self._cache is None:
            self._cache = (np.vstack(self._rows),
                           np.asarray(self._labels, dtype=np.int64))
        return self._cache


# ---------------------------------------------------------------------------
# linear multinomial classifier


class SoftmaxClassifier:
    """Linear scorer per class trained by minibatch Adam on cross-entropy.

    predict() is the argmax of the class scores with ties broken toward the
    lowest class index, so behaviour is deterministic given the weights.
    """

    def __init__(self, n_features: int, n_classes: int, lr: float = 5e-4,
                 batch_size: int = 32, epochs: int = 5, l2: float = 0.0,
                 seed: int = 0):
        self.n_features = n_features
        self.n_classes = n_classes
        self.lr = lr
        self.batch_size = batch_size
        self.epochs = epochs
        self.l2 = l2
        self.seed = seed
        self.rng = np.random.default_rng(seed)
        self.w = np.zeros((n_classes, n_features), dtype=np.float64)
        self.b = np.zeros(n_classes, dtype=np.float64)
        self._adam = [np.zeros_like(self.w), np.zeros_like(self.w),
                      np.zeros_like(self.b), np.zeros_like(self.b)]
        self._t = 0
        self.last_epoch_losses: list[float] = []

    def scores(self, x: np.ndarray) -> np.ndarray:
        return x @ self.w.T + self.b

    def predict(self, x: np.ndarray) -> np.ndarray | int:
        s = self.scores(np.asarray(x, dtype=np.float64))
        if s.ndim == 1:
            return int(np.argmax(s))
        return np.argmax(s, axis=1)

    def loss(self, x: np.ndarray, y: np.ndarray) -> float:
        s = self.scores(x)
        s = s - s.max(axis=1, keepdims=True)
        logp = s - np.log(np.exp(s).sum(axis=1, keepdims=True))
        nll = -logp[np.arange(len(y)), y].mean()
        if self.l2:
            nll += 0.5 * self.l2 * float((self.w ** 2).sum())
        return float(nll)

    def _adam_step(self, gw: np.ndarray, gb: np.ndarray, lr: float) -> None:
        b1, b2, eps = 0.9, 0.999, 1e-8
        mw, vw, mb, vb = self._adam
        self._t += 1
        mw *= b1; mw += (1 - b1) * gw
        vw *= b2; vw += (1 - b2) * gw * gw
        mb *= b1; mb += (1 - b1) * gb
        vb *= b2; vb += (1 - b2) * gb * gb
        c1, c2 = 1 - b1 ** self._t, 1 - b2 ** self._t
        self.w -= lr * (mw / c1) / (np.sqrt(vw / c2) + eps)
        self.b -= lr * (mb / c1) / (np.sqrt(vb / c2) + eps)

    def _run_epoch(self, x: np.ndarray, y: np.ndarray, order: np.ndarray,
                   lr: float) -> None:
        for lo in range(0, len(order), self.batch_size):
            idx = order[lo:lo + self.batch_size]
            xb, yb = x[idx], y[idx]
            s = self.scores(xb)
            s = s - s.max(axis=1, keepdims=True)
            p = np.exp(s)
            p /= p.sum(axis=1, keepdims=True)
            p[np.arange(len(yb)), yb] -= 1.0
            gw = p.T @ xb / len(yb) + self.l2 * self.w
            gb = p.mean(axis=0)
            self._adam_step(gw, gb, lr)

    def fit(self, x: np.ndarray, y: np.ndarray, epochs: int | None = None) -> "SoftmaxClassifier":
        """Warm-start training: continues from the current weights. Tracks the
        best weights seen after any epoch and restores them at the end, so the
        recorded per-epoch loss (best so far) is nonincreasing and the
        returned classifier attains the final recorded loss."""
        x = np.asarray(x, dtype=np.float64)
        y = np.asarray(y, dtype=np.int64)
        if len(x) == 0:
            raise EmptyDataset("fit() on empty data")
        epochs = self.epochs if epochs is None else epochs
        best = self.loss(x, y)
        best_w, best_b = self.w.copy(), self.b.copy()
        self.last_epoch_losses = [best]
        for _ in range(epochs):
            order = self.rng.permutation(len(x))
            self._run_epoch(x, y, order, self.lr)
            cur = self.loss(x, y)
            if cur < best - 1e-15:
                best = cur
                best_w, best_b = self.w.copy(), self.b.copy()
            self.last_epoch_losses.append(best)
        if self.loss(x, y) > best:
            self.w, self.b = best_w, best_b
        return self

    def to_jsonable(self) -> dict:
        return {"kind": "softmax_classifier", "n_features": self.n_features,
                "n_classes": self.n_classes, "lr": self.lr,
                "batch_size": self.batch_size, "epochs": self.epochs,
                "l2": self.l2, "seed": self.seed,
                "w": self.w.tolist(), "b": self.b.tolist()}

    @classmethod
    def from_jsonable(cls, blob: dict) -> "SoftmaxClassifier":
        clf = cls(blob["n_features"], blob["n_classes"], lr=blob["lr"],
                  batch_size=blob["batch_size"], epochs=blob["epochs"],
                  l2=blob["l2"], seed=blob["seed"])
        clf.w = np.array(blob["w"], dtype=np.float64)
        clf.b = np.array(blob["b"], dtype=np.float64)
        return clf


def train(classifier: SoftmaxClassifier, data: LabeledDataset,
          epochs: int | None = None) -> SoftmaxClassifier:
    """Update a classifier on the aggregated dataset (DAgger's Train step)."""
    x, y = data.arrays()
    return classifier.fit(x, y, epochs=epochs)


# ---------------------------------------------------------------------------
# halving version-space learner


class VersionSpace:
    """Explicitly enumerated finite policy class with majority-vote prediction.

    `outputs[p, s]` is policy p's label on input s. update() removes every
    alive policy disagreeing with the correct label; a mistake (majority vote
    was wrong) is counted and provably at least halves the alive set.
    """

    def __init__(self, outputs: np.ndarray, n_labels: int):
        self.outputs = np.asarray(outputs, dtype=np.int64)
        self.n_labels = int(n_labels)
        self.alive = np.ones(len(self.outputs), dtype=bool)
        self.mistake_count = 0

    @property
    def alive_count(self) -> int:
        return int(self.alive.sum())

    def predict(self, s: int) -> int:
        if not self.alive.any():
            raise EmptyVersionSpace("no alive policies")
        votes = np.bincount(self.outputs[self.alive, s], minlength=self.n_labels)
        return int(np.argmax(votes))   # ties -> lowest label index

    def update(self, s: int, correct_label: int) -> bool:
        """Prune policies disagreeing at s; returns True when the majority
        prediction was a mistake."""
        mistake = self.predict(s) != correct_label
        keep = self.alive & (self.outputs[:, s] == correct_label)
        if not keep.any():
            raise RealizabilityViolated(
                f"no policy predicts label {correct_label} on input {s}")
        before = self.alive_count
        self.alive = keep
        if mistake:
            assert self.alive_count * 2 <= before
            self.mistake_count += 1
        return mistake


def halving_predict(vs: VersionSpace, s: int) -> int:
    return vs.predict(s)


def halving_update(vs: VersionSpace, s: int, correct_label: int) -> bool:
    return vs.update(s, correct_label)


# ---------------------------------------------------------------------------
# replay buffer with proportional prioritization


class SumTree:
    """Binary indexed tree over leaf priorities supporting proportional draws."""

    def __init__(self, capacity: int):
        self.capacity = capacity
        self.tree = np.zeros(2 * capacity - 1, dtype=np.float64)

    def total(self) -> float:
        return float(self.tree[0])

    def set(self, leaf: int, value: float) -> None:
        idx = leaf + self.capacity - 1
        change = value - self.tree[idx]
        self.tree[idx] = value
        while idx:
            idx = (idx - 1) // 2
            self.tree[idx] += change

    def get(self, leaf: int) -> float:
        return float(self.tree[leaf + self.capacity - 1])

    def find(self, value: float) -> int:
        idx = 0
        while 2 * idx + 1 < len(self.tree):
            left = 2 * idx + 1
            if value <= self.tree[left] or self.tree[left + 1] == 0.0:
                idx = left
            else:
                value -= self.tree[left]
                idx = left + 1
        return idx - (self.capacity - 1)


@dataclass
class Transition:
    state: object
    action: int
    pseudo_reward: float
    next_state: object
    done: bool


class ReplayBuffer:
    """Ring buffer that stays empty until the first positive pseudo-reward is
    offered, then samples proportionally to priority^alpha with importance
    weights annealed from beta0 toward 1."""

    def __init__(self, capacity: int = 50_000, alpha: float = 0.6,
                 beta0: float = 0.4, beta_steps: int = 200_000,
                 eps_priority: float = 1e-6, prioritized: bool = True):
        self.capacity = capacity
        self.alpha = alpha
        self.beta0 = beta0
        self.beta_steps = beta_steps
        self.eps_priority = eps_priority
        self.prioritized = prioritized
        self.armed = False
        self.data: list[Transition | None] = [None] * capacity
        self.pos = 0
        self.size = 0
        self.tree = SumTree(capacity)
        self.max_priority = 1.0
        self.sample_calls = 0

    def __len__(self) -> int:
        return self.size

    def offer(self, transition: Transition) -> bool:
        """Store only once armed; the first positive pseudo-reward arms the
        buffer and is itself stored. Returns True when stored."""
        if not self.armed:
            if transition.pseudo_reward > 0:
                self.armed = True
            else:
                return False
        self.add(transition)
        return True

    def add(self, transition: Transition) -> None:
        self.data[self.pos] = transition
        self.tree.set(self.pos, self.max_priority ** self.alpha
                      if self.prioritized else 1.0)
        self.pos = (self.pos + 1) % self.capacity
        self.size = min(self.size + 1, self.capacity)

    def beta(self) -> float:
        frac = min(1.0, self.sample_calls / max(1, self.beta_steps))
        return self.beta0 + (1.0 - self.beta0) * frac

    def sample(self, batch_size: int, rng: np.random.Generator):
        """Returns (indices, transitions, importance_weights)."""
        if self.size == 0:
            raise BufferEmpty("sample() on empty or unarmed buffer")
        total = self.tree.total()
        idxs = np.empty(batch_size, dtype=np.int64)
        for i, u in enumerate(rng.random(batch_size)):
            idxs[i] = self.tree.find(u * total)
        beta = self.beta()
        self.sample_calls += 1
        probs = np.array([self.tree.get(int(i)) for i in idxs]) / total
        weights = (self.size * probs) ** (-beta)
        weights /= weights.max()
        return idxs, [self.data[int(i)] for i in idxs], weights

    def update_priorities(self, idxs, td_errors) -> None:
        for i, td in zip(idxs, td_errors):
            p = abs(float(td)) + self.eps_priority
            self.max_priority = max(self.max_priority, p)
            self.tree.set(int(i), p ** self.alpha if self.prioritized else 1.0)


def arm_on_first_positive(buffer: ReplayBuffer, transition: Transition) -> ReplayBuffer:
    """Offer a transition under the first-positive arming rule."""
    buffer.offer(transition)
    return buffer


# ---------------------------------------------------------------------------
# tabular double Q-learning


class QTable:
    """Two tabular action-value estimators with alternating update roles.

    The update selects the greedy action with the online table being updated
    and evaluates it with a periodic snapshot of the other table (the
    target-network analog, refreshed every `target_refresh` updates).
    """

    def __init__(self, n_actions: int, lr: float = 0.25, gamma: float = 0.99,
                 target_refresh: int = 2000, init_value: float = 0.0):
        self.n_actions = n_actions
        self.lr = lr
        self.gamma = gamma
        self.target_refresh = target_refresh
        self.init_value = init_value
        self.q_a: dict = {}
        self.q_b: dict = {}
        self.t_a: dict = {}
        self.t_b: dict = {}
        self.update_count = 0
        self.frozen = False

    def _row(self, table: dict, key) -> np.ndarray:
        row = table.get(key)
        if row is None:
            row = np.full(self.n_actions, self.init_value, dtype=np.float64)
            table[key] = row
        return row

    def value_row(self, key) -> np.ndarray:
        a = self.q_a.get(key)
        b = self.q_b.get(key)
        if a is None and b is None:
            return np.full(self.n_actions, self.init_value, dtype=np.float64)
        if a is None:
            a = self.init_value
        if b is None:
            b = self.init_value
        return (a + b) / 2.0

    def greedy_action(self, key) -> int:
        """Evaluation-time greedy action, ties broken toward the lowest index."""
        return int(np.argmax(self.value_row(key)))

    def act_epsilon_greedy(self, key, eps: float, rng: np.random.Generator) -> int:
        """Behavior policy: explore with probability eps, otherwise exploit
        with ties broken uniformly at random so uninformed rows do not
        collapse onto a constant action."""
        if rng.random() < eps:
            return int(rng.integers(self.n_actions))
        row = self.value_row(key)
        best = np.flatnonzero(row == row.max())
        if len(best) == 1:
            return int(best[0])
        return int(best[rng.integers(len(best))])

    def _refresh_targets(self) -> None:
        self.t_a = {k: v.copy() for k, v in self.q_a.items()}
        self.t_b = {k: v.copy() for k, v in self.q_b.items()}

    def update_from_buffer(self, buffer: ReplayBuffer, batch_size: int,
                           rng: np.random.Generator) -> None:
        """One prioritized double-Q minibatch update (the q_update operation)."""
        if self.frozen:
            return
        if len(buffer) == 0:
            raise BufferEmpty("q_update with empty buffer")
        idxs, transitions, weights = buffer.sample(batch_size, rng)
        tds = []
        for tr, w in zip(transitions, weights):
            if self.update_count % self.target_refresh == 0:
                self._refresh_targets()
            update_a = self.update_count % 2 == 0
            online = self.q_a if update_a else self.q_b
            target_other = self.t_b if update_a else self.t_a
            row = self._row(online, tr.state)
            if tr.done:
                target = tr.pseudo_reward
            else:
                sel = int(np.argmax(self._row(online, tr.next_state)))
                other_row = target_other.get(tr.next_state)
                other_val = self.init_value if other_row is None else float(other_row[sel])
                target = tr.pseudo_reward + self.gamma * other_val
            td = target - row[tr.action]
            row[tr.action] += self.lr * float(w) * td
            tds.append(td)
            self.update_count += 1
        buffer.update_priorities(idxs, tds)

    def state_hash(self) -> int:
        items = sorted((repr(k), v.tobytes()) for k, v in self.q_a.items())
        items += sorted((repr(k), v.tobytes()) for k, v in self.q_b.items())
        return hash(tuple(items))

    def to_jsonable(self) -> dict:
        def enc(table):
            return [[repr(k), v.tolist()] for k, v in sorted(table.items(), key=lambda kv: repr(kv[0]))]
        return {"kind": "qtable", "n_actions": self.n_actions, "lr": self.lr,
                "gamma": self.gamma, "target_refresh": self.target_refresh,
                "init_value": self.init_value, "frozen": self.frozen,
                "q_a": enc(self.q_a), "q_b": enc(self.q_b)}

    @classmethod
    def from_jsonable(cls, blob: dict) -> "QTable":
        import ast
        q = cls(blob["n_actions"], lr=blob["lr"], gamma=blob["gamma"],
                target_refresh=blob["target_refresh"], init_value=blob["init_value"])
        q.frozen = blob["frozen"]
        for name in ("q_a", "q_b"):
            table = getattr(q, name)
            for key_repr, row in blob[name]:
                table[ast.literal_eval(key_repr)] = np.array(row, dtype=np.float64)
        return q


def q_update(q: QTable, buffer: ReplayBuffer, batch_size: int,
             rng: np.random.Generator) -> QTable:
    q.update_from_buffer(buffer, batch_size, rng)
    return q


@dataclass(frozen=True)
class EpsilonSchedule:
    """Linear epsilon decay over a step budget."""

    start: float = 1.0
    end: float = 0.05
    decay_steps: int = 20_000

    def value(self, step: int) -> float:
        if step >= self.decay_steps:
            return self.end
        frac = step / max(1, self.decay_steps)
        return self.start + (self.end - self.start) * frac

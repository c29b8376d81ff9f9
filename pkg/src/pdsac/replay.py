"""Experience replay: a ring buffer over struct-of-arrays storage with an
optional proportional-prioritization sum tree.

Priorities live in the tree already exponentiated: update_priorities stores
(|td| + eps)^alpha and fresh pushes inherit the running max leaf value, so
sampling is a plain prefix descent over leaf masses.
"""

import threading
from dataclasses import dataclass

import numpy as np

from . import nets

DEFAULT_ALPHA = 0.6
DEFAULT_EPS = 1e-6


@dataclass
class Transition:
    obs: np.ndarray
    action: np.ndarray
    reward: float
    next_obs: np.ndarray
    done: bool


@dataclass
class Batch:
    obs: np.ndarray
    actions: np.ndarray
    rewards: np.ndarray
    next_obs: np.ndarray
    dones: np.ndarray
    indices: np.ndarray
    is_weights: np.ndarray

    def __len__(self):
        return self.obs.shape[0]


class SumTree:
    """Fixed-capacity binary sum tree over leaf priorities.

    capacity must be a power of two so every leaf sits at the same depth;
    nodes[0] is the root, children of i are 2i+1 and 2i+2, leaves start at
    capacity-1. Parents are recomputed from their children on every update,
    so the parent/child sum invariant holds exactly, not just to drift.
    """

    def __init__(self, capacity):
        if capacity < 1 or capacity & (capacity - 1) != 0:
            raise ValueError("sum tree capacity must be a power of two")
        self.capacity = capacity
        self.nodes = np.zeros(2 * capacity - 1, dtype=np.float64)
        self._levels = capacity.bit_length() - 1

    def total(self):
        return float(self.nodes[0])

    def get(self, leaf):
        return float(self.nodes[self.capacity - 1 + leaf])

    def set(self, leaf, value):
        if value < 0.0 or not np.isfinite(value):
            raise ValueError(f"bad priority {value!r}")
        i = self.capacity - 1 + int(leaf)
        self.nodes[i] = value
        while i > 0:
            i = (i - 1) // 2
            self.nodes[i] = self.nodes[2 * i + 1] + self.nodes[2 * i + 2]

    def find(self, prefix):
        """Leaf index whose cumulative-sum interval contains prefix
        (first leaf with cumulative sum strictly greater)."""
        idx = 0
        v = float(prefix)
        while idx < self.capacity - 1:
            left = 2 * idx + 1
            ls = self.nodes[left]
            if v < ls:
                idx = left
            else:
                v -= ls
                idx = left + 1
        return idx - (self.capacity - 1)

    def find_batch(self, prefixes):
        """Vectorized find over an array of prefix values."""
        idx = np.zeros(len(prefixes), dtype=np.int64)
        v = np.asarray(prefixes, dtype=np.float64).copy()
        for _ in range(self._levels):
            left = 2 * idx + 1
            ls = self.nodes[left]
            right = v >= ls
            idx = left + right
            v = np.where(right, v - ls, v)
        return idx - (self.capacity - 1)


class ReplayBuffer:
    """Ring buffer with uniform and prioritized sampling.

    Observations are stored as float32 to halve the footprint at the default
    2^20 capacity; batches come back as float64 for the learner. A single
    lock serializes the one-writer/one-reader access pattern.
    """

    def __init__(self, capacity, obs_dim, act_dim,
                 alpha=DEFAULT_ALPHA, eps=DEFAULT_EPS):
        self.capacity = int(capacity)
        self.alpha = float(alpha)
        self.eps = float(eps)
        self.obs = np.zeros((capacity, obs_dim), dtype=np.float32)
        self.actions = np.zeros((capacity, act_dim), dtype=np.float32)
        self.rewards = np.zeros(capacity, dtype=np.float32)
        self.next_obs = np.zeros((capacity, obs_dim), dtype=np.float32)
        self.dones = np.zeros(capacity, dtype=np.float32)
        self.tree = SumTree(self.capacity)
        self.size = 0
        self.inserted = 0
        self._cursor = 0
        self._max_leaf = 1.0
        self._lock = threading.Lock()

    def push(self, t):
        with self._lock:
            i = self._cursor
            self.obs[i] = t.obs
            self.actions[i] = t.action
            self.rewards[i] = t.reward
            self.next_obs[i] = t.next_obs
            self.dones[i] = 1.0 if t.done else 0.0
            self.tree.set(i, self._max_leaf)
            self._cursor = (i + 1) % self.capacity
            self.size = min(self.size + 1, self.capacity)
            self.inserted += 1

    def update_priorities(self, indices, td_errors):
        leaves = (np.abs(np.asarray(td_errors, dtype=np.float64)) + self.eps) ** self.alpha
        with self._lock:
            for i, p in zip(np.asarray(indices, dtype=np.int64), leaves):
                self.tree.set(int(i), float(p))
            self._max_leaf = max(self._max_leaf, float(leaves.max()))

    def _gather(self, indices, weights):
        return Batch(
            obs=self.obs[indices].astype(np.float64),
            actions=self.actions[indices].astype(np.float64),
            rewards=self.rewards[indices].astype(np.float64),
            next_obs=self.next_obs[indices].astype(np.float64),
            dones=self.dones[indices].astype(np.float64),
            indices=indices,
            is_weights=weights,
        )

    def sample_uniform(self, batch_size, rng):
        with self._lock:
            if self.size < batch_size:
                raise ValueError(f"buffer holds {self.size} < {batch_size}")
            idx = rng.integers(0, self.size, size=batch_size)
            return self._gather(idx, np.ones(batch_size, dtype=np.float64))

    def sample_prioritized(self, batch_size, beta, rng):
        """Stratified proportional sampling with importance weights
        (N * P(i))^-beta, normalized by the batch maximum."""
        with self._lock:
            if self.size < batch_size:
                raise ValueError(f"buffer holds {self.size} < {batch_size}")
            total = self.tree.total()
            seg = total / batch_size
            v = (np.arange(batch_size) + rng.random(batch_size)) * seg
            idx = self.tree.find_batch(v)
            leaf = self.tree.nodes[self.tree.capacity - 1 + idx]
            probs = leaf / total
            w = (self.size * probs) ** (-beta)
            w = w / w.max()
            return self._gather(idx, w)

    # ---- snapshot ----

    def save(self, path):
        scalars = nets.ParamSet(
            [
                ("capacity", np.float64(self.capacity)),
                ("obs_dim", np.float64(self.obs.shape[1])),
                ("act_dim", np.float64(self.actions.shape[1])),
                ("alpha", np.float64(self.alpha)),
                ("eps", np.float64(self.eps)),
                ("size", np.float64(self.size)),
                ("inserted", np.float64(self.inserted)),
                ("cursor", np.float64(self._cursor)),
                ("max_leaf", np.float64(self._max_leaf)),
            ]
        )
        arrays = nets.ParamSet(
            [
                ("obs", self.obs),
                ("actions", self.actions),
                ("rewards", self.rewards),
                ("next_obs", self.next_obs),
                ("dones", self.dones),
                ("tree_nodes", self.tree.nodes),
            ]
        )
        nets.save_checkpoint(path, {"meta_scalars": scalars, "arrays": arrays},
                             {"kind": "replay-buffer"})

    @classmethod
    def load(cls, path):
        sets, meta = nets.load_checkpoint(path)
        s = sets["meta_scalars"]
        a = sets["arrays"]

        def scalar(name):
            return float(s.get(name).reshape(-1)[0])

        buf = cls(
            int(scalar("capacity")),
            obs_dim=int(scalar("obs_dim")),
            act_dim=int(scalar("act_dim")),
            alpha=scalar("alpha"),
            eps=scalar("eps"),
        )
        buf.obs[...] = a.get("obs").astype(np.float32)
        buf.actions[...] = a.get("actions").astype(np.float32)
        buf.rewards[...] = a.get("rewards").astype(np.float32)
        buf.next_obs[...] = a.get("next_obs").astype(np.float32)
        buf.dones[...] = a.get("dones").astype(np.float32)
        buf.tree.nodes[...] = a.get("tree_nodes")
        buf.size = int(scalar("size"))
        buf.inserted = int(scalar("inserted"))
        buf._cursor = int(scalar("cursor"))
        buf._max_leaf = scalar("max_leaf")
        return buf

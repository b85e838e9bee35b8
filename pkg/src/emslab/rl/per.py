"""Proportional prioritized replay backed by an array sum-tree."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import UsageError


@dataclass(frozen=True)
class Transition:
    state: np.ndarray
    action: float
    reward: float
    next_state: np.ndarray
    done: bool


class SumTree:
    """Complete binary tree over ``capacity`` leaves (a power of two).

    Node ``i`` has children ``2i`` and ``2i+1``; leaves live at
    ``capacity .. 2*capacity-1`` and node 1 is the root.
    """

    def __init__(self, capacity: int):
        if capacity < 1 or capacity & (capacity - 1):
            raise ValueError("sum-tree capacity must be a power of two")
        self.capacity = capacity
        self.nodes = np.zeros(2 * capacity)

    @property
    def total(self) -> float:
        return float(self.nodes[1])

    def leaves(self) -> np.ndarray:
        return self.nodes[self.capacity:]

    def set(self, idx, values) -> None:
        pos = np.atleast_1d(np.asarray(idx, dtype=np.int64)) + self.capacity
        self.nodes[pos] = values
        while pos[0] > 1:
            pos = np.unique(pos // 2)
            self.nodes[pos] = self.nodes[2 * pos] + self.nodes[2 * pos + 1]

    def find(self, mass: np.ndarray) -> np.ndarray:
        """Leaf index for each prefix-sum value in ``mass`` (vectorised descent)."""
        pos = np.ones(len(mass), dtype=np.int64)
        mass = np.array(mass, dtype=float)
        while pos[0] < self.capacity:
            left = 2 * pos
            go_right = mass >= self.nodes[left]
            mass = np.where(go_right, mass - self.nodes[left], mass)
            pos = np.where(go_right, left + 1, left)
        return pos - self.capacity


class PerBuffer:
    def __init__(self, capacity: int = 2 ** 17, alpha: float = 0.6, beta: float = 0.4, epsilon: float = 1e-3):
        self.tree = SumTree(capacity)
        self.capacity = capacity
        self.alpha = alpha
        self.beta = beta
        self.epsilon = epsilon
        self.max_priority = 1.0
        self.data: list[Transition | None] = [None] * capacity
        self.size = 0
        self.cursor = 0

    def __len__(self):
        return self.size

    def insert(self, t: Transition) -> None:
        self.data[self.cursor] = t
        self.tree.set(self.cursor, self.max_priority ** self.alpha)
        self.cursor = (self.cursor + 1) % self.capacity
        self.size = min(self.size + 1, self.capacity)

    def probabilities(self) -> np.ndarray:
        leaves = self.tree.leaves()[: self.size]
        return leaves / self.tree.total

    def sample(self, k: int, rng: np.random.Generator):
        if self.size == 0:
            raise UsageError("cannot sample from an empty replay buffer")
        if k > self.size:
            raise UsageError(f"asked for {k} samples but buffer holds {self.size}")
        total = self.tree.total
        mass = rng.random(k) * total
        idx = self.tree.find(mass)
        # guard against landing on an empty leaf through rounding at the right edge
        idx = np.minimum(idx, self.size - 1)
        probs = self.tree.leaves()[idx] / total
        weights = (self.size * probs) ** (-self.beta)
        weights = weights / weights.max()
        return idx, [self.data[i] for i in idx], weights

    def update(self, indices, td_errors) -> None:
        td = np.abs(np.asarray(td_errors, dtype=float))
        if not np.all(np.isfinite(td)):
            raise ValueError("td_errors must be finite")
        pri = td + self.epsilon
        self.max_priority = max(self.max_priority, float(pri.max()))
        indices = np.asarray(indices, dtype=np.int64)
        # duplicates in one batch: last write wins, as with sequential updates
        uniq, last = np.unique(indices[::-1], return_index=True)
        self.tree.set(uniq, pri[::-1][last] ** self.alpha)


def per_insert(buf: PerBuffer, t: Transition) -> None:
    buf.insert(t)


def per_sample(buf: PerBuffer, k: int, rng: np.random.Generator):
    return buf.sample(k, rng)


def per_update(buf: PerBuffer, indices, td_errors) -> None:
    buf.update(indices, td_errors)

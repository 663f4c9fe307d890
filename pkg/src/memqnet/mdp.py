"""Finite-MDP primitives: transition tensors, Q-tables, tabular updates, exact solver.

Everything here is cost-minimizing: policies take argmin over actions and the
Bellman backup bootstraps with a min (a max variant exists for callers that
need it).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

ROW_SUM_TOL = 1e-9

Q_ROLES = ("individual", "ensemble", "joint")


class NoValidActionError(RuntimeError):
    """A state offers no valid action (e.g. a TX outside every BS coverage area)."""


def validate_stochastic(probs: np.ndarray, tol: float = ROW_SUM_TOL) -> None:
    """Raise ValueError unless every (action, source) row is a distribution."""
    if np.any(probs < -1e-12) or np.any(probs > 1.0 + tol):
        raise ValueError("transition probabilities must lie in [0, 1]")
    row_sums = probs.sum(axis=-1)
    if np.any(np.abs(row_sums - 1.0) > tol):
        worst = float(np.max(np.abs(row_sums - 1.0)))
        raise ValueError(f"transition rows must sum to 1 (worst deviation {worst:.3e})")


@dataclass
class TransitionTensor:
    """Per-action row-stochastic transition matrices, shape (n_actions, n_states, n_states)."""

    probs: np.ndarray

    def __post_init__(self):
        self.probs = np.asarray(self.probs, dtype=float)
        if self.probs.ndim != 3 or self.probs.shape[1] != self.probs.shape[2]:
            raise ValueError("transition tensor must have shape (n_actions, n_states, n_states)")
        validate_stochastic(self.probs)

    @property
    def n_actions(self) -> int:
        return self.probs.shape[0]

    @property
    def n_states(self) -> int:
        return self.probs.shape[1]


@dataclass
class QTable:
    """Dense action-value table, shape (n_states, n_actions), all entries finite."""

    values: np.ndarray
    role: str = "individual"

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.ndim != 2:
            raise ValueError("Q-table must be 2-D (n_states, n_actions)")
        if self.role not in Q_ROLES:
            raise ValueError(f"role must be one of {Q_ROLES}")
        if not np.all(np.isfinite(self.values)):
            raise ValueError("Q-table entries must be finite")

    @classmethod
    def zeros(cls, n_states: int, n_actions: int, role: str = "individual") -> "QTable":
        return cls(np.zeros((n_states, n_actions)), role)

    @property
    def n_states(self) -> int:
        return self.values.shape[0]

    @property
    def n_actions(self) -> int:
        return self.values.shape[1]

    def copy(self) -> "QTable":
        return QTable(self.values.copy(), self.role)


@dataclass
class Policy:
    """Total map state index -> action index."""

    actions: np.ndarray

    def __post_init__(self):
        self.actions = np.asarray(self.actions, dtype=np.int64)
        if self.actions.ndim != 1:
            raise ValueError("policy must be a 1-D action array")
        if self.actions.size and self.actions.min() < 0:
            raise ValueError("policy actions must be nonnegative")

    def __len__(self) -> int:
        return self.actions.size

    def __getitem__(self, s: int) -> int:
        return int(self.actions[s])


@dataclass(frozen=True)
class LearningSchedule:
    """Learning-rate / exploration / ensemble-mixing schedules plus the discount.

    Defaults follow alpha(t) = 1/(1 + t/1000), epsilon decaying by 0.99 per
    step from 0.99 with floor 0.01, and u(t) = 1 - exp(-t/1000).
    """

    gamma: float = 0.95
    alpha_tau: float = 1000.0
    eps_decay: float = 0.99
    eps_floor: float = 0.01
    u_tau: float = 1000.0

    def __post_init__(self):
        if not 0.0 < self.gamma < 1.0:
            raise ValueError("gamma must lie in (0, 1)")
        if self.alpha_tau <= 0 or self.u_tau <= 0:
            raise ValueError("schedule time constants must be positive")
        if not 0.0 < self.eps_decay <= 1.0 or not 0.0 < self.eps_floor <= 1.0:
            raise ValueError("epsilon parameters must lie in (0, 1]")

    def alpha(self, t: int) -> float:
        return 1.0 / (1.0 + t / self.alpha_tau)

    def epsilon(self, t: int) -> float:
        # first step explores at eps_decay; a bare 0.99**t would start at 1.0
        return max(self.eps_decay ** (t + 1), self.eps_floor)

    def u(self, t: int) -> float:
        return 1.0 - math.exp(-t / self.u_tau)


def bootstrap_value(row: np.ndarray, valid_mask=None, use_max: bool = False) -> float:
    """Extremal next-state value over (optionally masked) actions."""
    if valid_mask is not None:
        row = row[np.asarray(valid_mask, dtype=bool)]
        if row.size == 0:
            raise NoValidActionError("no valid action available for bootstrap")
    return float(row.max() if use_max else row.min())


def q_update(q: QTable, s: int, a: int, cost: float, s_next: int,
             alpha: float, gamma: float, next_mask=None, use_max: bool = False) -> float:
    """One tabular Bellman update on Q(s, a); returns the new entry.

    Q(s,a) <- (1-alpha) Q(s,a) + alpha (cost + gamma * min_a' Q(s_next, a')).
    """
    values = q.values
    n_states, n_actions = values.shape
    if not (0 <= s < n_states and 0 <= s_next < n_states and 0 <= a < n_actions):
        raise IndexError(f"q_update indices out of range: s={s}, a={a}, s_next={s_next}")
    if not math.isfinite(cost):
        raise ValueError("q_update requires a finite cost")
    if not 0.0 < alpha <= 1.0:
        raise ValueError("alpha must lie in (0, 1]")
    target = cost + gamma * bootstrap_value(values[s_next], next_mask, use_max)
    values[s, a] = (1.0 - alpha) * values[s, a] + alpha * target
    return float(values[s, a])


def epsilon_greedy(q: QTable, s: int, epsilon: float, rng: np.random.Generator,
                   valid_mask=None) -> int:
    """Pick a uniform valid action w.p. epsilon, else the masked argmin (lowest index on ties)."""
    if not 0.0 <= epsilon <= 1.0:
        raise ValueError("epsilon must lie in [0, 1]")
    row = q.values[s]
    if valid_mask is None:
        candidates = np.arange(row.size)
    else:
        candidates = np.flatnonzero(np.asarray(valid_mask, dtype=bool))
        if candidates.size == 0:
            raise NoValidActionError(f"state {s} has no reachable base station")
    if epsilon > 0.0 and rng.random() < epsilon:
        return int(candidates[rng.integers(candidates.size)])
    return int(candidates[int(np.argmin(row[candidates]))])


def greedy_policy(q: QTable, valid_mask=None) -> Policy:
    """Per-state masked argmin over actions, lowest index on ties."""
    values = q.values
    if not np.all(np.isfinite(values)):
        raise ValueError("greedy_policy requires finite Q values")
    if valid_mask is None:
        return Policy(np.argmin(values, axis=1))
    mask = np.asarray(valid_mask, dtype=bool)
    if mask.shape != values.shape:
        raise ValueError("valid_mask shape must match the Q-table")
    if np.any(~mask.any(axis=1)):
        bad = int(np.flatnonzero(~mask.any(axis=1))[0])
        raise NoValidActionError(f"state {bad} has an empty valid-action set")
    blocked = np.where(mask, values, np.inf)
    return Policy(np.argmin(blocked, axis=1))


def _apply_bellman(probs: np.ndarray, cost: np.ndarray, gamma: float,
                   v: np.ndarray) -> np.ndarray:
    # probs (A,S,S), cost (S,A) -> Q (S,A)
    return cost + gamma * np.tensordot(probs, v, axes=([2], [0])).T


def value_iteration(p: TransitionTensor | np.ndarray, cost: np.ndarray, gamma: float,
                    tol: float = 1e-10, valid_mask=None,
                    max_iter: int = 1_000_000):
    """Exact synchronous value iteration; returns (v_star, QTable, Policy).

    The returned Q satisfies max|Q - T Q| <= tol. Invalid (state, action)
    entries (where valid_mask is False) still receive finite backed-up values
    but never enter the min or the policy.
    """
    probs = p.probs if isinstance(p, TransitionTensor) else np.asarray(p, dtype=float)
    validate_stochastic(probs)
    cost = np.asarray(cost, dtype=float)
    n_actions, n_states = probs.shape[0], probs.shape[1]
    if cost.shape != (n_states, n_actions):
        raise ValueError("cost must have shape (n_states, n_actions)")
    if tol <= 0:
        raise ValueError("tol must be positive")
    if not 0.0 < gamma < 1.0:
        raise ValueError("gamma must lie in (0, 1)")
    mask = None
    if valid_mask is not None:
        mask = np.asarray(valid_mask, dtype=bool)
        if np.any(~mask.any(axis=1)):
            raise NoValidActionError("some state has an empty valid-action set")

    def masked_min(q):
        if mask is None:
            return q.min(axis=1)
        return np.where(mask, q, np.inf).min(axis=1)

    q = np.zeros((n_states, n_actions))
    v = masked_min(q)
    # stop when the contraction guarantees Bellman residual <= tol
    stop = tol * (1.0 - gamma) / gamma if gamma > 0 else tol
    for _ in range(max_iter):
        q_new = _apply_bellman(probs, cost, gamma, v)
        delta = float(np.max(np.abs(q_new - q)))
        q = q_new
        v = masked_min(q)
        if delta <= stop:
            break
    else:
        raise RuntimeError("value iteration failed to converge within max_iter")
    table = QTable(q)
    return v, table, greedy_policy(table, valid_mask=mask)


def value_iteration_shared_kernel(kernel, cost: np.ndarray, gamma: float,
                                  tol: float = 1e-10, valid_mask=None,
                                  max_iter: int = 1_000_000):
    """Value iteration when the kernel is action-independent (one (S,S) operator).

    ``kernel`` may be dense or scipy-sparse; only kernel @ v is required.
    Returns (v_star, QTable, Policy).
    """
    cost = np.asarray(cost, dtype=float)
    n_states, n_actions = cost.shape
    if tol <= 0:
        raise ValueError("tol must be positive")
    if not 0.0 < gamma < 1.0:
        raise ValueError("gamma must lie in (0, 1)")
    mask = None
    if valid_mask is not None:
        mask = np.asarray(valid_mask, dtype=bool)
        if np.any(~mask.any(axis=1)):
            raise NoValidActionError("some state has an empty valid-action set")
    m = cost.min(axis=1) if mask is None else np.where(mask, cost, np.inf).min(axis=1)
    v = np.zeros(n_states)
    stop = tol * (1.0 - gamma) / gamma
    for _ in range(max_iter):
        v_new = m + gamma * np.asarray(kernel @ v).ravel()
        delta = float(np.max(np.abs(v_new - v)))
        v = v_new
        if delta <= stop:
            break
    else:
        raise RuntimeError("value iteration failed to converge within max_iter")
    q = cost + gamma * np.asarray(kernel @ v).ravel()[:, None]
    table = QTable(q, role="joint")
    v_star = q.min(axis=1) if mask is None else np.where(mask, q, np.inf).min(axis=1)
    return v_star, table, greedy_policy(table, valid_mask=mask)

"""Digital-cousin machinery: PTT estimation, matrix-power cousins, ensemble fusion.

An agent runs one Q-learner against the real environment and one per synthetic
environment whose transition tensor is a matrix power of the estimated real
tensor. The per-environment tables are fused into an ensemble table with
weights shrinking in the distance to the real-environment table.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .mdp import QTable, TransitionTensor, epsilon_greedy, q_update, validate_stochastic

WEIGHT_SUM_TOL = 1e-9
WEIGHT_FLOOR_MIN = 1e-6


@dataclass
class TransitionCounts:
    """Integer transition counts, shape (n_actions, n_states, n_states)."""

    counts: np.ndarray
    totals: np.ndarray = field(default=None)

    def __post_init__(self):
        self.counts = np.asarray(self.counts, dtype=np.int64)
        if self.counts.ndim != 3 or self.counts.shape[1] != self.counts.shape[2]:
            raise ValueError("counts must have shape (n_actions, n_states, n_states)")
        if np.any(self.counts < 0):
            raise ValueError("counts must be nonnegative")
        if self.totals is None:
            self.totals = self.counts.sum(axis=2)
        else:
            self.totals = np.asarray(self.totals, dtype=np.int64)

    @classmethod
    def zeros(cls, n_states: int, n_actions: int) -> "TransitionCounts":
        return cls(np.zeros((n_actions, n_states, n_states), dtype=np.int64))

    @property
    def n_states(self) -> int:
        return self.counts.shape[1]

    @property
    def n_actions(self) -> int:
        return self.counts.shape[0]


def record_transition(counts: TransitionCounts, s: int, a: int, s_next: int) -> None:
    """Count one observed (s, a) -> s_next transition."""
    n_states, n_actions = counts.n_states, counts.n_actions
    if not (0 <= s < n_states and 0 <= s_next < n_states and 0 <= a < n_actions):
        raise IndexError(f"transition indices out of range: s={s}, a={a}, s_next={s_next}")
    counts.counts[a, s, s_next] += 1
    counts.totals[a, s] += 1


def estimate_ptt(counts: TransitionCounts, smoothing: float = 0.0) -> TransitionTensor:
    """Additively smoothed frequency estimate; unvisited rows fall back to uniform."""
    if smoothing < 0:
        raise ValueError("smoothing must be nonnegative")
    n = counts.n_states
    num = counts.counts.astype(float) + smoothing
    denom = counts.totals.astype(float) + smoothing * n
    probs = np.empty_like(num)
    visited = denom > 0
    probs[visited] = num[visited] / denom[visited, None]
    probs[~visited] = 1.0 / n
    return TransitionTensor(probs)


def cousin_ptt(p: TransitionTensor, n: int) -> TransitionTensor:
    """Order-n cousin tensor: each action's matrix raised to the n-th power."""
    if n < 1:
        raise ValueError("cousin order must be >= 1")
    if n == 1:
        return TransitionTensor(p.probs.copy())
    powered = np.stack([np.linalg.matrix_power(p.probs[a], n)
                        for a in range(p.n_actions)])
    return TransitionTensor(powered)


@dataclass
class EnsembleWeights:
    """Normalized per-order fusion weights."""

    orders: tuple
    w: np.ndarray

    def __post_init__(self):
        self.orders = tuple(self.orders)
        self.w = np.asarray(self.w, dtype=float)
        if self.w.shape != (len(self.orders),):
            raise ValueError("one weight per order required")
        if np.any(self.w < 0):
            raise ValueError("weights must be nonnegative")
        if abs(float(self.w.sum()) - 1.0) > WEIGHT_SUM_TOL:
            raise ValueError("weights must sum to 1")

    def as_dict(self) -> dict:
        return dict(zip(self.orders, self.w))


def table_distance(q_a: QTable, q_b: QTable) -> float:
    if q_a.values.shape != q_b.values.shape:
        raise ValueError("Q-tables must share a shape")
    return float(np.linalg.norm(q_a.values - q_b.values))


def default_weight_floor(distances) -> float:
    """0.1 x median nonzero synthetic distance, floored at 1e-6.

    A tiny absolute floor would hand all weight to the real environment;
    a relative one keeps cousins influential as the tables separate.
    """
    nonzero = [d for d in distances if d > 0]
    if not nonzero:
        return WEIGHT_FLOOR_MIN
    return max(0.1 * float(np.median(nonzero)), WEIGHT_FLOOR_MIN)


def ensemble_weights(q_set: dict, eps_w: float) -> EnsembleWeights:
    """Weights inversely proportional to each table's distance from the order-1 table."""
    if eps_w <= 0:
        raise ValueError("eps_w must be positive")
    if 1 not in q_set:
        raise ValueError("order 1 (real environment) must be present")
    orders = tuple(sorted(q_set))
    raw = np.array([1.0 / (table_distance(q_set[n], q_set[1]) + eps_w) for n in orders])
    return EnsembleWeights(orders, raw / raw.sum())


@dataclass
class CousinSet:
    """Per-order transition tensors and Q-tables for one agent."""

    orders: tuple
    tensors: dict
    q: dict

    def __post_init__(self):
        self.orders = tuple(self.orders)
        if len(set(self.orders)) != len(self.orders):
            raise ValueError("orders must be distinct")
        if 1 not in self.orders:
            raise ValueError("order 1 (real environment) must be present")
        for n, tensor in self.tensors.items():
            validate_stochastic(tensor.probs)

    @property
    def synthetic_orders(self) -> tuple:
        return tuple(n for n in self.orders if n != 1)


def blend_ensemble(cousins: CousinSet, ensemble: QTable, u: float,
                   eps_w: float | None = None) -> EnsembleWeights:
    """ensemble <- u * ensemble + (1-u) * sum_n w_n Q^(n), elementwise."""
    distances = [table_distance(cousins.q[n], cousins.q[1])
                 for n in cousins.synthetic_orders]
    floor = eps_w if eps_w is not None else default_weight_floor(distances)
    weights = ensemble_weights(cousins.q, floor)
    blend = np.zeros_like(ensemble.values)
    for n, w in weights.as_dict().items():
        blend += w * cousins.q[n].values
    ensemble.values *= u
    ensemble.values += (1.0 - u) * blend
    return weights


def memq_step(cousins: CousinSet, ensemble: QTable, sample, alpha: float, gamma: float,
              u: float, rng: np.random.Generator, cost_fn, eps_w: float | None = None,
              samplers: dict | None = None, use_max: bool = False,
              next_masks=None) -> EnsembleWeights:
    """One mixed-Q step from a real sample (s, a, s_next, cost).

    Updates the order-1 table with the real sample, every synthetic table with
    a next state drawn from its own tensor at (s, a) and the model cost, then
    blends: ensemble <- u * ensemble + (1-u) * sum_n w_n Q^(n).
    """
    s, a, s_next, cost = sample
    mask_of = (lambda sn: None) if next_masks is None else (lambda sn: next_masks[sn])
    q_update(cousins.q[1], s, a, cost, s_next, alpha, gamma,
             next_mask=mask_of(s_next), use_max=use_max)
    for n in sorted(cousins.synthetic_orders):
        if n not in cousins.tensors:
            raise ValueError(f"missing synthetic tensor for order {n}")
        if samplers is not None and n in samplers:
            s_syn = samplers[n].draw(a, s, rng)
        else:
            row = cousins.tensors[n].probs[a, s]
            s_syn = int(np.searchsorted(np.cumsum(row), rng.random(), side="right"))
            s_syn = min(s_syn, row.size - 1)
        c_syn = float(cost_fn(s, a))
        q_update(cousins.q[n], s, a, c_syn, s_syn, alpha, gamma,
                 next_mask=mask_of(s_syn), use_max=use_max)
    return blend_ensemble(cousins, ensemble, u, eps_w)


class RowSampler:
    """Cached-cumsum categorical sampler over a (n_actions, n_states, n_states) tensor."""

    def __init__(self, tensor: TransitionTensor):
        self._cum = np.cumsum(tensor.probs, axis=2)
        self._n = tensor.n_states

    def draw(self, a: int, s: int, rng: np.random.Generator) -> int:
        idx = int(np.searchsorted(self._cum[a, s], rng.random(), side="right"))
        return min(idx, self._n - 1)


class CousinLearner:
    """One agent's complete MEMQ state: counts, cousin tensors, tables, ensemble.

    The estimated real tensor and its powers are refreshed every
    ``refresh_every`` observations; in between, synthetic draws use the last
    snapshot.
    """

    def __init__(self, n_states: int, n_actions: int, orders, cost_fn,
                 smoothing: float = 0.0, refresh_every: int = 50,
                 eps_w: float | None = None, use_max: bool = False):
        orders = tuple(sorted(set([1, *orders])))
        self.n_states = n_states
        self.n_actions = n_actions
        self.cost_fn = cost_fn
        self.smoothing = smoothing
        self.refresh_every = max(1, int(refresh_every))
        self.eps_w = eps_w
        self.use_max = use_max
        self.counts = TransitionCounts.zeros(n_states, n_actions)
        self.cousins = CousinSet(
            orders,
            {n: cousin_ptt(estimate_ptt(self.counts, smoothing), n) for n in orders},
            {n: QTable.zeros(n_states, n_actions) for n in orders},
        )
        self.ensemble = QTable.zeros(n_states, n_actions, role="ensemble")
        self._samplers = {n: RowSampler(self.cousins.tensors[n])
                          for n in self.cousins.synthetic_orders}
        self._since_refresh = 0
        self.last_weights = None

    def observe_transition(self, s: int, a: int, s_next: int) -> None:
        """Feed one (possibly replayed) sample into the PTT estimate."""
        record_transition(self.counts, s, a, s_next)
        self._since_refresh += 1
        if self._since_refresh >= self.refresh_every:
            self.refresh()

    def refresh(self) -> None:
        base = estimate_ptt(self.counts, self.smoothing)
        for n in self.cousins.orders:
            self.cousins.tensors[n] = base if n == 1 else cousin_ptt(base, n)
        self._samplers = {n: RowSampler(self.cousins.tensors[n])
                          for n in self.cousins.synthetic_orders}
        self._since_refresh = 0

    def step(self, s: int, a: int, cost: float, s_next: int, alpha: float,
             gamma: float, u: float, rng: np.random.Generator, next_masks=None) -> None:
        self.last_weights = memq_step(
            self.cousins, self.ensemble, (s, a, s_next, cost), alpha, gamma, u, rng,
            self.cost_fn, eps_w=self.eps_w, samplers=self._samplers,
            use_max=self.use_max, next_masks=next_masks)

    def blend(self, u: float) -> None:
        """Re-fuse the ensemble without touching the individual tables."""
        self.last_weights = blend_ensemble(self.cousins, self.ensemble, u, self.eps_w)

    def q_real(self) -> QTable:
        return self.cousins.q[1]


def run_single_agent_memq(env_tensor: TransitionTensor, cost: np.ndarray, orders,
                          schedule, n_steps: int, rng: np.random.Generator,
                          smoothing: float = 0.0, refresh_every: int = 50,
                          s0: int | None = None) -> CousinLearner:
    """Drive one MEMQ learner against a known finite MDP for ``n_steps`` samples."""
    n_states, n_actions = cost.shape
    cost_fn = lambda s, a: cost[s, a]
    learner = CousinLearner(n_states, n_actions, orders, cost_fn,
                            smoothing=smoothing, refresh_every=refresh_every)
    env_sampler = RowSampler(env_tensor)
    s = int(rng.integers(n_states)) if s0 is None else s0
    for t in range(n_steps):
        a = epsilon_greedy(learner.ensemble, s, schedule.epsilon(t), rng)
        s_next = env_sampler.draw(a, s, rng)
        learner.observe_transition(s, a, s_next)
        learner.step(s, a, cost_fn(s, a), s_next,
                     schedule.alpha(t), schedule.gamma, schedule.u(t), rng)
        s = s_next
    return learner

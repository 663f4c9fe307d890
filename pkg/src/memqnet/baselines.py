"""Comparison baselines sharing the environment and trace schema.

    iq     independent per-agent Q-learning
    hq     hysteretic per-agent Q-learning (damped cost-increasing updates)
    psaq   independent Q-learning with budgeted action advising
    scq    individual tables in uncoordinated states, one shared joint table
           updated with the coordinated-to-coordinated rule otherwise
    cmemq  centralized mixed Q-learning treating all TXs as one big agent on
           the joint space (true joint states, joint digital cousin)

These are comparison stand-ins with documented rules, not line-by-line
reproductions of the original algorithms.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass

import numpy as np

from ._rng import substream
from .config import ExperimentConfig
from .cousins import default_weight_floor
from .mdp import NoValidActionError, QTable, epsilon_greedy, greedy_policy
from .protocol import (
    MessageLedger,
    RunResult,
    SharedBuffer,
    StepRecord,
    joint_index,
    split_index,
)
from .wireless import GridNetwork, TxState, cost as wireless_cost

BASELINE_KINDS = ("iq", "hq", "psaq", "scq", "cmemq")


@dataclass(frozen=True)
class BaselineSpec:
    """Kind plus the kind-specific knobs actually used by the runners."""

    kind: str
    hq_beta_ratio: float = 0.1       # beta = ratio * alpha
    ask_budget: int = 0
    give_budget: int = 0
    cmemq_order: int = 2

    def __post_init__(self):
        if self.kind not in BASELINE_KINDS:
            raise ValueError(f"kind must be one of {BASELINE_KINDS}")
        if not 0.0 < self.hq_beta_ratio <= 1.0:
            raise ValueError("hq_beta_ratio must lie in (0, 1]")
        if self.ask_budget < 0 or self.give_budget < 0:
            raise ValueError("advising budgets must be nonnegative")
        if self.cmemq_order < 2:
            raise ValueError("cmemq_order must be >= 2")

    @classmethod
    def from_config(cls, cfg: ExperimentConfig, kind: str | None = None) -> "BaselineSpec":
        budget = int(cfg.psaq_budget_frac * cfg.n_steps)
        return cls(kind or cfg.algo, hq_beta_ratio=cfg.hq_beta_ratio,
                   ask_budget=budget, give_budget=budget,
                   cmemq_order=cfg.cmemq_order)


def _model_cost_matrix(net: GridNetwork) -> np.ndarray:
    cfg = net.cfg
    c = np.empty((cfg.n_states, cfg.n_bs))
    for s in range(cfg.n_states):
        ix, iy, b = cfg.decode_state(s)
        tx = TxState(ix * cfg.cell_size, iy * cfg.cell_size, b)
        for a in range(cfg.n_bs):
            c[s, a] = wireless_cost(tx, a, net.topology, cfg, noise_draw=0.0)
    return c


class _BaselineRun:
    """Shared scaffolding: env/RNG layout identical to the protocol runner,
    so same-seed runs of different algorithms see the same trajectories."""

    def __init__(self, config: ExperimentConfig, seed: int, oracle=None):
        self.cfg = config
        self.spec = BaselineSpec.from_config(config)
        self.oracle = oracle
        self.rng_env = substream(seed, 0)
        self.rng_agents = [substream(seed, 1 + i) for i in range(config.network.n_tx)]
        self.net = GridNetwork(config.network, self.rng_env)
        self.n = config.network.n_tx
        self.n_states = config.network.n_states
        self.n_actions = config.network.n_bs
        self.valid_masks = self.net.state_valid_masks()
        self.ledger = MessageLedger()
        self.records: list = []
        self.coordinated_steps = 0
        self.uu_steps = 0
        self.class_counts = {"UU": 0, "UC": 0, "CU": 0, "CC": 0}

    def _record(self, t: int, coordinated: bool, cls: str, costs, dense_fn) -> None:
        ape_v = aqd_v = None
        if self.oracle is not None:
            from .metrics import ape, aqd
            dense = dense_fn()
            pi_hat = greedy_policy(QTable(dense, role="joint"),
                                   valid_mask=self.oracle.valid_mask)
            ape_v = ape(pi_hat, self.oracle.policy, state_mask=self.oracle.reachable)
            aqd_v = aqd(dense, self.oracle.q_star.values, mask=self.oracle.metric_mask)
        self.records.append(StepRecord(t, coordinated, cls, self.ledger.total,
                                       None, tuple(costs), ape_v, aqd_v))

    def _classify(self, before: bool, after: bool) -> str:
        cls = ("C" if before else "U") + ("C" if after else "U")
        self.class_counts[cls] += 1
        if before:
            self.coordinated_steps += 1
        else:
            self.uu_steps += 1
        return cls

    def _result(self, ensembles, real_tables, joint_entries, dense_override=None):
        return RunResult(
            config=self.cfg, records=self.records, ledger=self.ledger,
            ensembles=ensembles, real_tables=real_tables,
            joint_entries=joint_entries, leader=0, topology=self.net.topology,
            coordinated_steps=self.coordinated_steps, uu_steps=self.uu_steps,
            class_counts=self.class_counts, saw_uu=self.uu_steps > 0,
            n_states=self.n_states, n_actions=self.n_actions, n_agents=self.n,
            dense_override=dense_override)


class IndependentQRun(_BaselineRun):
    """Plain per-agent tabular Q-learning; optional hysteresis and advising."""

    def __init__(self, config: ExperimentConfig, seed: int, oracle=None,
                 hysteretic: bool = False, advising: bool = False):
        super().__init__(config, seed, oracle)
        self.hysteretic = hysteretic
        self.advising = advising
        self.tables = [QTable.zeros(self.n_states, self.n_actions)
                       for _ in range(self.n)]
        self.visits = np.zeros((self.n, self.n_states), dtype=np.int64)
        self.ask_left = [self.spec.ask_budget] * self.n
        self.give_left = [self.spec.give_budget] * self.n

    def _choose(self, i: int, s: int, eps: float) -> int:
        if self.advising and self.ask_left[i] > 0:
            candidates = [j for j in range(self.n)
                          if j != i and self.give_left[j] > 0
                          and self.visits[j, s] > self.visits[i, s]]
            if candidates:
                adviser = max(candidates, key=lambda j: (self.visits[j, s], -j))
                self.ask_left[i] -= 1
                self.give_left[adviser] -= 1
                self.ledger.estimate_share += 1     # the ask
                self.ledger.action_broadcast += 1   # the advice
                row = self.tables[adviser].values[s]
                mask = self.valid_masks[s]
                valid = np.flatnonzero(mask)
                return int(valid[int(np.argmin(row[valid]))])
        return epsilon_greedy(self.tables[i], s, eps, self.rng_agents[i],
                              valid_mask=self.valid_masks[s])

    def _update(self, i: int, s: int, a: int, c: float, s_next: int,
                alpha: float, gamma: float) -> None:
        row = self.tables[i].values[s_next]
        valid = self.valid_masks[s_next]
        target = c + gamma * float(row[valid].min())
        old = self.tables[i].values[s, a]
        rate = alpha
        if self.hysteretic and target > old:
            rate = alpha * self.spec.hq_beta_ratio
        # same float expression as the core update so exact reductions hold
        self.tables[i].values[s, a] = (1.0 - rate) * old + rate * target

    def run(self) -> RunResult:
        sched = self.cfg.schedule
        stride = self.cfg.effective_stride
        T = self.cfg.n_steps
        for t in range(T):
            alpha, eps = sched.alpha(t), sched.epsilon(t)
            states = [self.net.state_index(i) for i in range(self.n)]
            coord_before = self.net.coordinated()
            actions = [self._choose(i, states[i], eps) for i in range(self.n)]
            for i in range(self.n):
                self.visits[i, states[i]] += 1
            noise = self.net.draw_noise(self.rng_env)
            costs = [self.net.step_cost(i, actions[i], float(noise[i]))
                     for i in range(self.n)]
            self.net.advance(self.rng_env)
            next_states = [self.net.state_index(i) for i in range(self.n)]
            cls = self._classify(coord_before, self.net.coordinated())
            for i in range(self.n):
                self._update(i, states[i], actions[i], costs[i], next_states[i],
                             alpha, sched.gamma)
            if t % stride == 0 or t == T - 1:
                tables = [q.values for q in self.tables]
                self._record(t, coord_before, cls, costs, lambda: _dense_sum(
                    tables, {}, self.n_actions))
        tables = [q.values for q in self.tables]
        return self._result(tables, tables, {})


def _dense_sum(tables, joint_entries, n_actions):
    from .protocol import finalize_joint_from_individuals
    return finalize_joint_from_individuals(tables, joint_entries, n_actions)


class SparseCooperativeRun(_BaselineRun):
    """Individual learning in uncoordinated states; a directly-indexed shared
    joint table (true states exchanged, no estimator) in coordinated ones."""

    def __init__(self, config: ExperimentConfig, seed: int, oracle=None):
        super().__init__(config, seed, oracle)
        self.tables = [QTable.zeros(self.n_states, self.n_actions)
                       for _ in range(self.n)]
        self.joint_q: dict = {}
        self._joint_actions = list(itertools.product(range(self.n_actions),
                                                     repeat=self.n))

    def _joint_value(self, comps, a_idx: int, tup) -> float:
        # untouched entries read as the sum of the individual tables, the same
        # fallback the finalized table uses
        found = self.joint_q.get((joint_index(comps, self.n_states), a_idx))
        if found is not None:
            return found
        return float(sum(self.tables[i].values[c, a]
                         for i, (c, a) in enumerate(zip(comps, tup))))

    def _joint_argmin_and_boot(self, comps) -> tuple:
        best = None
        best_v = math.inf
        for a_idx, tup in enumerate(self._joint_actions):
            if all(self.valid_masks[c, a] for c, a in zip(comps, tup)):
                v = self._joint_value(comps, a_idx, tup)
                if v < best_v:
                    best_v, best = v, (tup, a_idx)
        if best is None:
            raise NoValidActionError("joint state admits no valid joint action")
        return best[0], best[1], best_v

    def run(self) -> RunResult:
        sched = self.cfg.schedule
        stride = self.cfg.effective_stride
        T = self.cfg.n_steps
        for t in range(T):
            alpha, eps = sched.alpha(t), sched.epsilon(t)
            states = [self.net.state_index(i) for i in range(self.n)]
            coord_before = self.net.coordinated() and self.n > 1
            if coord_before:
                self.ledger.estimate_share += self.n - 1   # true states to leader
                action_tuple, a_idx, _ = self._joint_argmin_and_boot(states)
                self.ledger.action_broadcast += self.n - 1
                actions = list(action_tuple)
            else:
                actions = [epsilon_greedy(self.tables[i], states[i], eps,
                                          self.rng_agents[i],
                                          valid_mask=self.valid_masks[states[i]])
                           for i in range(self.n)]
            noise = self.net.draw_noise(self.rng_env)
            costs = [self.net.step_cost(i, actions[i], float(noise[i]))
                     for i in range(self.n)]
            self.net.advance(self.rng_env)
            next_states = [self.net.state_index(i) for i in range(self.n)]
            cls = self._classify(coord_before, self.net.coordinated() and self.n > 1)
            if coord_before:
                _, _, boot = self._joint_argmin_and_boot(next_states)
                s_bar = joint_index(states, self.n_states)
                target = sum(costs) + sched.gamma * boot
                key = (s_bar, a_idx)
                if key in self.joint_q:
                    self.joint_q[key] = (1 - alpha) * self.joint_q[key] + alpha * target
                else:
                    self.joint_q[key] = target   # first write: fill is a placeholder
                self.ledger.report_share += self.n - 1
            else:
                for i in range(self.n):
                    row = self.tables[i].values[next_states[i]]
                    valid = self.valid_masks[next_states[i]]
                    target = costs[i] + sched.gamma * float(row[valid].min())
                    old = self.tables[i].values[states[i], actions[i]]
                    self.tables[i].values[states[i], actions[i]] = (
                        (1 - alpha) * old + alpha * target)
            if t % stride == 0 or t == T - 1:
                tables = [q.values for q in self.tables]
                joint = dict(self.joint_q)
                self._record(t, coord_before, cls, costs, lambda: _dense_sum(
                    tables, joint, self.n_actions))
        tables = [q.values for q in self.tables]
        return self._result(tables, tables, dict(self.joint_q))


class CentralizedMemqRun(_BaselineRun):
    """One big agent on the joint space with a joint-space digital cousin.

    The cousin's transition estimate is kept sparse; order-n synthetic
    successors are drawn by chaining n single-hop draws under the same joint
    action (distribution identical to sampling the n-th matrix power), with
    unvisited rows falling back to uniform.
    """

    def __init__(self, config: ExperimentConfig, seed: int, oracle=None):
        super().__init__(config, seed, oracle)
        self.n_joint_states = self.n_states ** self.n
        self.n_joint_actions = self.n_actions ** self.n
        shape = (self.n_joint_states, self.n_joint_actions)
        self.q_real = np.zeros(shape)
        self.q_cousin = np.zeros(shape)
        self.q_ens = np.zeros(shape)
        self.agent_cost = _model_cost_matrix(self.net)
        self._joint_actions = list(itertools.product(range(self.n_actions),
                                                     repeat=self.n))
        self._succ: dict = {}     # (a_bar, s_bar) -> {s_next: count}
        self.rng = self.rng_agents[0]

    def _joint_state(self) -> tuple:
        comps = [self.net.state_index(i) for i in range(self.n)]
        return comps, joint_index(comps, self.n_states)

    def _valid_action_indices(self, comps) -> list:
        out = []
        for a_idx, tup in enumerate(self._joint_actions):
            if all(self.valid_masks[c, a] for c, a in zip(comps, tup)):
                out.append(a_idx)
        if not out:
            raise NoValidActionError("joint state admits no valid joint action")
        return out

    def _eps_greedy_joint(self, comps, s_bar: int, eps: float) -> int:
        valid = self._valid_action_indices(comps)
        if eps > 0.0 and self.rng.random() < eps:
            return int(valid[self.rng.integers(len(valid))])
        row = self.q_ens[s_bar]
        best = valid[0]
        best_v = row[best]
        for a in valid[1:]:
            if row[a] < best_v:
                best, best_v = a, row[a]
        return int(best)

    def _model_cost(self, s_bar: int, a_idx: int) -> float:
        comps = split_index(s_bar, self.n_states, self.n)
        tup = self._joint_actions[a_idx]
        return float(sum(self.agent_cost[c, a] for c, a in zip(comps, tup)))

    def _hop(self, s_bar: int, a_idx: int) -> int:
        row = self._succ.get((a_idx, s_bar))
        if not row:
            return int(self.rng.integers(self.n_joint_states))
        keys = list(row.keys())
        weights = np.fromiter(row.values(), dtype=float)
        pick = self.rng.random() * weights.sum()
        acc = 0.0
        for k, w in zip(keys, weights):
            acc += w
            if pick < acc:
                return k
        return keys[-1]

    def _bellman_min(self, table: np.ndarray, s_bar: int) -> float:
        comps = split_index(s_bar, self.n_states, self.n)
        valid = self._valid_action_indices(comps)
        return float(min(table[s_bar, a] for a in valid))

    def run(self) -> RunResult:
        sched = self.cfg.schedule
        stride = self.cfg.effective_stride
        T = self.cfg.n_steps
        order = self.spec.cmemq_order
        eps_w = self.cfg.eps_w
        for t in range(T):
            alpha, eps, u = sched.alpha(t), sched.epsilon(t), sched.u(t)
            comps, s_bar = self._joint_state()
            coord_before = self.net.coordinated() and self.n > 1
            a_idx = self._eps_greedy_joint(comps, s_bar, eps)
            tup = self._joint_actions[a_idx]
            noise = self.net.draw_noise(self.rng_env)
            costs = [self.net.step_cost(i, tup[i], float(noise[i]))
                     for i in range(self.n)]
            self.net.advance(self.rng_env)
            next_comps, s_next = self._joint_state()
            cls = self._classify(coord_before, self.net.coordinated() and self.n > 1)

            row = self._succ.setdefault((a_idx, s_bar), {})
            row[s_next] = row.get(s_next, 0) + 1

            target = sum(costs) + sched.gamma * self._bellman_min(self.q_real, s_next)
            self.q_real[s_bar, a_idx] += alpha * (target - self.q_real[s_bar, a_idx])

            s_syn = s_bar
            for _ in range(order):
                s_syn = self._hop(s_syn, a_idx)
            syn_target = (self._model_cost(s_bar, a_idx)
                          + sched.gamma * self._bellman_min(self.q_cousin, s_syn))
            self.q_cousin[s_bar, a_idx] += alpha * (syn_target
                                                    - self.q_cousin[s_bar, a_idx])

            d = float(np.linalg.norm(self.q_cousin - self.q_real))
            floor = eps_w if eps_w is not None else default_weight_floor([d])
            raw = np.array([1.0 / floor, 1.0 / (d + floor)])
            w = raw / raw.sum()
            np.multiply(self.q_ens, u, out=self.q_ens)
            self.q_ens += (1.0 - u) * (w[0] * self.q_real + w[1] * self.q_cousin)

            if t % stride == 0 or t == T - 1:
                self._record(t, coord_before, cls, costs, lambda: self.q_ens)
        return self._result([], [], {}, dense_override=self.q_ens)


def run_baseline(config: ExperimentConfig, seed: int, oracle=None,
                 kind: str | None = None) -> RunResult:
    """Dispatch a baseline run; kind defaults to config.algo."""
    kind = kind or config.algo
    if kind == "iq":
        return IndependentQRun(config, seed, oracle).run()
    if kind == "hq":
        return IndependentQRun(config, seed, oracle, hysteretic=True).run()
    if kind == "psaq":
        return IndependentQRun(config, seed, oracle, advising=True).run()
    if kind == "scq":
        return SparseCooperativeRun(config, seed, oracle).run()
    if kind == "cmemq":
        return CentralizedMemqRun(config, seed, oracle).run()
    raise ValueError(f"unknown baseline kind {kind!r}")

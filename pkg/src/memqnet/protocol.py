"""Partially decentralized multi-agent MEMQ over the grid network.

Per iteration every TX runs its own mixed Q-learning on local state; when some
TX's sensed interference crosses the threshold the step is coordinated: agents
send their joint-state estimates to the leader, the leader picks the
highest-mass estimate, broadcasts a joint action from the joint Q-table it
alone stores, and applies one of four update rules keyed by the
(un)coordinated flags of the step's endpoints:

    U->U  local tables via the mixed-Q step, no messages
    U->C  local tables pulled toward the joint bootstrap (gamma / n_tx)
    C->U  joint entry pulled toward summed costs + local ensemble bootstraps
    C->C  joint entry pulled toward summed costs + joint bootstrap

The joint table is a sparse dict; entries never written by a coordination
update are defined lazily as the sum of the agents' ensemble tables.
"""

from __future__ import annotations

import itertools
import math
from collections import deque
from dataclasses import dataclass, field

import numpy as np

from ._rng import hash64, substream
from .belief import JointStateEstimator
from .config import ExperimentConfig
from .cousins import CousinLearner
from .mdp import NoValidActionError, Policy, QTable, epsilon_greedy, greedy_policy
from .wireless import GridNetwork, Topology, cost as wireless_cost, TxState, dequantize_bin

UU, UC, CU, CC = "UU", "UC", "CU", "CC"


def classify_transition(coord_before: bool, coord_after: bool) -> str:
    """Table row selector from the step's endpoint coordination flags."""
    return ("C" if coord_before else "U") + ("C" if coord_after else "U")


def elect_leader(topology: Topology) -> int:
    """TX with the largest coverage radius; lowest index on ties."""
    return int(np.argmax(topology.tx_radius))


@dataclass
class MessageLedger:
    """Counters of protocol traffic, in scalar payload units."""

    estimate_share: int = 0
    action_broadcast: int = 0
    report_share: int = 0
    q_share: int = 0

    @property
    def total(self) -> int:
        return self.estimate_share + self.action_broadcast + self.report_share + self.q_share

    def as_dict(self) -> dict:
        return {"estimate_share": self.estimate_share,
                "action_broadcast": self.action_broadcast,
                "report_share": self.report_share,
                "q_share": self.q_share,
                "total": self.total}


class SharedBuffer:
    """FIFO ring of (agent, s, a, s_next, cost) samples; uniform draws with replacement."""

    def __init__(self, capacity: int = 100_000):
        if capacity < 1:
            raise ValueError("capacity must be >= 1")
        self._ring = deque(maxlen=capacity)

    def append(self, item) -> None:
        self._ring.append(item)

    def sample(self, rng: np.random.Generator):
        if not self._ring:
            raise IndexError("cannot sample from an empty buffer")
        return self._ring[int(rng.integers(len(self._ring)))]

    def __len__(self) -> int:
        return len(self._ring)


def joint_index(components, radix: int) -> int:
    """Mixed-radix composition, agent 0 most significant."""
    idx = 0
    for c in components:
        idx = idx * radix + int(c)
    return idx


def split_index(idx: int, radix: int, n: int) -> tuple:
    out = []
    for _ in range(n):
        idx, r = divmod(idx, radix)
        out.append(r)
    return tuple(reversed(out))


def uc_update(q_value: float, alpha: float, cost_i: float, gamma: float,
              n_agents: int, joint_bootstrap: float) -> float:
    """U->C rule for one local entry: bootstrap from the joint table, split gamma."""
    return (1.0 - alpha) * q_value + alpha * (cost_i + (gamma / n_agents) * joint_bootstrap)


def cu_target(costs, gamma: float, ensemble_bootstraps) -> float:
    """C->U target: sum over agents of cost + gamma * own ensemble bootstrap."""
    return float(sum(c + gamma * b for c, b in zip(costs, ensemble_bootstraps)))


def cc_target(costs, gamma: float, joint_bootstrap: float) -> float:
    """C->C target: summed costs + gamma * joint bootstrap."""
    return float(sum(costs) + gamma * joint_bootstrap)


def finalize_joint_from_individuals(ensembles, joint_entries: dict,
                                    n_actions: int, max_entries: int = 50_000_000) -> np.ndarray:
    """Dense joint table: sum of per-agent ensembles, coordination entries preserved.

    ensembles: per-agent (n_states, n_actions) arrays. The result has shape
    (n_states^N, n_actions^N) with axes composed agent-0-most-significant.
    """
    n = len(ensembles)
    n_states = ensembles[0].shape[0]
    total = (n_states ** n) * (n_actions ** n)
    if total > max_entries:
        raise MemoryError(f"joint table of {total} entries exceeds the dense cap")
    acc = np.zeros((n_states,) * n + (n_actions,) * n)
    for i, q in enumerate(ensembles):
        shape = [1] * (2 * n)
        shape[i] = n_states
        shape[n + i] = n_actions
        acc = acc + q.reshape(shape)
    dense = acc.reshape(n_states ** n, n_actions ** n)
    for (s_bar, a_bar), value in joint_entries.items():
        dense[s_bar, a_bar] = value
    return dense


@dataclass
class StepRecord:
    """One decimated trace row."""

    t: int
    coordinated: bool
    transition: str
    msgs_total: int
    est_err_m: float | None
    costs: tuple
    ape: float | None = None
    aqd: float | None = None


@dataclass
class RunResult:
    """Everything a run produces besides files."""

    config: ExperimentConfig
    records: list
    ledger: MessageLedger
    ensembles: list                  # per-agent ensemble value arrays
    real_tables: list                # per-agent order-1 value arrays
    joint_entries: dict              # coordination-written (s_bar, a_bar) -> value
    leader: int
    topology: Topology
    coordinated_steps: int
    uu_steps: int
    class_counts: dict
    saw_uu: bool
    n_states: int
    n_actions: int
    n_agents: int
    dense_override: np.ndarray | None = None   # centralized runners learn jointly

    def finalized_dense(self) -> np.ndarray:
        if self.dense_override is not None:
            return self.dense_override
        return finalize_joint_from_individuals(self.ensembles, self.joint_entries,
                                               self.n_actions)

    def joint_policy(self, valid_mask=None) -> Policy:
        return greedy_policy(QTable(self.finalized_dense(), role="joint"),
                             valid_mask=valid_mask)


class MultiAgentMemqRunner:
    """Drives one seeded run of the coordination protocol (or its isolated twin).

    ``isolated=True`` strips every coordination structure (beliefs, leader,
    joint table, ledger) and leaves N independent mixed-Q learners over the
    same environment and RNG streams; with an infinite coordination threshold
    the full protocol must reproduce it bit for bit.
    """

    def __init__(self, config: ExperimentConfig, seed: int, isolated: bool = False,
                 oracle=None):
        self.cfg = config
        self.net_cfg = config.network
        self.seed = seed
        self.isolated = isolated
        self.oracle = oracle
        self.rng_env = substream(seed, 0)
        self.rng_agents = [substream(seed, 1 + i) for i in range(self.net_cfg.n_tx)]
        self.net = GridNetwork(self.net_cfg, self.rng_env)
        self.n = self.net_cfg.n_tx
        self.n_states = self.net_cfg.n_states
        self.n_actions = self.net_cfg.n_bs
        self.leader = elect_leader(self.net.topology)
        self.cost_matrix = self._model_cost_matrix()
        self.valid_masks = self.net.state_valid_masks()
        self.learners = [
            CousinLearner(self.n_states, self.n_actions,
                          (config.order_for_agent(i),),
                          cost_fn=lambda s, a: self.cost_matrix[s, a],
                          smoothing=config.ptt_smoothing,
                          refresh_every=config.ptt_refresh,
                          eps_w=config.eps_w,
                          use_max=config.use_max_bootstrap)
            for i in range(self.n)]
        self.buffer = SharedBuffer(config.buffer_capacity)
        self.ledger = MessageLedger()
        self.joint_q: dict = {}
        self.estimators = []
        self._confirmed: list = [dict() for _ in range(self.n)]
        if not isolated and self.n > 1:
            for i in range(self.n):
                hidden = tuple(j for j in range(self.n) if j != i)
                self.estimators.append(JointStateEstimator(
                    self.net_cfg, i, hidden, sigma_db=config.sigma_db,
                    adaptive_sigma=config.adaptive_sigma,
                    diffusion=config.belief_diffusion))
        self._joint_actions = list(itertools.product(range(self.n_actions),
                                                     repeat=self.n))
        self.records: list = []
        self.coordinated_steps = 0
        self.uu_steps = 0
        self.class_counts = {UU: 0, UC: 0, CU: 0, CC: 0}
        self.saw_uu = False
        self._track_dense = (self.oracle is not None)
        if self._track_dense:
            shape = (self.n_states ** self.n, self.n_actions ** self.n)
            self._joint_dense = np.zeros(shape)
            self._joint_touched = np.zeros(shape, dtype=bool)

    # -- setup helpers -------------------------------------------------------

    def _model_cost_matrix(self) -> np.ndarray:
        """Deterministic (noise-free) cost for every (state, action); sentinel when invalid."""
        cfg = self.net_cfg
        c = np.empty((self.n_states, self.n_actions))
        for s in range(self.n_states):
            ix, iy, b = cfg.decode_state(s)
            tx = TxState(ix * cfg.cell_size, iy * cfg.cell_size, b)
            for a in range(self.n_actions):
                c[s, a] = wireless_cost(tx, a, self.net.topology, cfg, noise_draw=0.0)
        return c

    def _initial_anchors(self, i: int) -> tuple:
        return tuple(tuple(self.net.topology.tx_xy[j])
                     for j in range(self.n) if j != i)

    # -- joint table access --------------------------------------------------
    #
    # Entries never written by a coordination update are defined as the sum of
    # the agents' ensemble entries (the same rule that finalizes the table);
    # the per-step report/broadcast legs carry the few entries the leader
    # needs, so reads are well-defined mid-run without extra messages.

    def _joint_value(self, components, a_idx: int, action_tuple) -> float:
        key = (joint_index(components, self.n_states), a_idx)
        found = self.joint_q.get(key)
        if found is not None:
            return found
        return float(sum(self.learners[i].ensemble.values[components[i], action_tuple[i]]
                         for i in range(self.n)))

    def _jq_set(self, s_bar: int, a_bar: int, value: float) -> None:
        self.joint_q[(s_bar, a_bar)] = value
        if self._track_dense:
            self._joint_dense[s_bar, a_bar] = value
            self._joint_touched[s_bar, a_bar] = True

    def _joint_valid(self, components, action_tuple) -> bool:
        for comp, a in zip(components, action_tuple):
            if not self.valid_masks[comp, a]:
                return False
        return True

    def _joint_argmin(self, components) -> tuple:
        """(joint action tuple, index) minimizing the leader's table at the estimate."""
        best = None
        best_v = math.inf
        for a_idx, tup in enumerate(self._joint_actions):
            if not self._joint_valid(components, tup):
                continue
            v = self._joint_value(components, a_idx, tup)
            if v < best_v:
                best_v = v
                best = (tup, a_idx)
        if best is None:
            raise NoValidActionError("estimated joint state admits no valid joint action")
        return best

    def _joint_bootstrap(self, components) -> float:
        """Extremal joint value over valid joint actions at an estimated state."""
        values = [self._joint_value(components, a_idx, tup)
                  for a_idx, tup in enumerate(self._joint_actions)
                  if self._joint_valid(components, tup)]
        if not values:
            raise NoValidActionError("estimated joint state admits no valid joint action")
        return max(values) if self.cfg.use_max_bootstrap else min(values)

    # -- estimation ----------------------------------------------------------

    def _estimates(self) -> list:
        """Per-agent (joint components, mass) MAP estimates (or ground truth in debug)."""
        if self.cfg.use_true_joint_states:
            truth = [self.net.state_index(j) for j in range(self.n)]
            return [(list(truth), 1.0) for _ in range(self.n)]
        out = []
        for i in range(self.n):
            est = self.estimators[i]
            own_xy = tuple(self.net.topology.tx_xy[i])
            components, mass = est.map_joint_states(own_xy, int(self.net.bins[i]))
            out.append((components, mass))
        return out

    def _select_estimate(self, estimates) -> tuple:
        """Leader keeps the highest-mass estimate; its own wins ties."""
        order = [self.leader] + [i for i in range(self.n) if i != self.leader]
        best_i = order[0]
        best_mass = estimates[best_i][1]
        for i in order[1:]:
            if estimates[i][1] > best_mass:
                best_i, best_mass = i, estimates[i][1]
        return estimates[best_i][0], best_mass

    def _confirm_anchors(self, components) -> None:
        """Every agent re-anchors its hidden windows at the broadcast estimate."""
        positions = []
        for comp in components:
            ix, iy, _ = self.net_cfg.decode_state(comp)
            positions.append((ix * self.net_cfg.cell_size, iy * self.net_cfg.cell_size))
        for i in range(self.n):
            for j in range(self.n):
                if j != i:
                    self._confirmed[i][j] = positions[j]

    def _reset_beliefs(self, t: int) -> None:
        for i in range(self.n):
            est = self.estimators[i]
            if t == 0 or est.belief is None:
                anchors = self._initial_anchors(i)
            else:
                by_agent = {}
                hidden = est.hidden
                positions, _ = est.map_positions()
                for j, agent in enumerate(hidden):
                    by_agent[agent] = self._confirmed[i].get(agent, positions[j])
                anchors = tuple(by_agent[agent] for agent in hidden)
            own_xy = tuple(self.net.topology.tx_xy[i])
            est.reset(anchors, own_xy, float(self.net.arss_dbm[i]))
            self._confirmed[i] = {}

    # -- main loop -----------------------------------------------------------

    def run(self) -> RunResult:
        sched = self.cfg.schedule
        stride = self.cfg.effective_stride
        T = self.cfg.n_steps
        use_beliefs = bool(self.estimators)
        for t in range(T):
            alpha, eps, u = sched.alpha(t), sched.epsilon(t), sched.u(t)
            if use_beliefs and t % self.net_cfg.reset_period == 0:
                self._reset_beliefs(t)
            states = [self.net.state_index(i) for i in range(self.n)]
            can_coordinate = (not self.isolated) and self.n > 1
            coord_before = can_coordinate and self.net.coordinated()

            sel_components = None
            sel_action_idx = None
            if coord_before and self.n > 1:
                estimates = self._estimates()
                self.ledger.estimate_share += self.n - 1
                sel_components, _ = self._select_estimate(estimates)
                action_tuple, sel_action_idx = self._joint_argmin(sel_components)
                self.ledger.action_broadcast += self.n - 1
                self._confirm_anchors(sel_components)
                actions = list(action_tuple)
            else:
                actions = [
                    epsilon_greedy(self.learners[i].ensemble, states[i], eps,
                                   self.rng_agents[i],
                                   valid_mask=self.valid_masks[states[i]])
                    for i in range(self.n)]

            noise = self.net.draw_noise(self.rng_env)
            costs = [self.net.step_cost(i, actions[i], float(noise[i]))
                     for i in range(self.n)]
            self.net.advance(self.rng_env)
            next_states = [self.net.state_index(i) for i in range(self.n)]
            coord_after = can_coordinate and self.net.coordinated()

            if use_beliefs:
                for i in range(self.n):
                    self.estimators[i].step(t, tuple(self.net.topology.tx_xy[i]),
                                            float(self.net.arss_dbm[i]))

            # shared buffer and PTT estimation run every step (lines 5-6)
            for i in range(self.n):
                self.buffer.append((i, states[i], actions[i], next_states[i], costs[i]))
            for i in range(self.n):
                _, bs, ba, bn, _ = self.buffer.sample(self.rng_agents[i])
                self.learners[i].observe_transition(bs, ba, bn)

            cls = classify_transition(coord_before, coord_after)
            self.class_counts[cls] += 1
            if coord_before:
                self.coordinated_steps += 1
            if cls == UU:
                self.saw_uu = True
                self.uu_steps += 1
                for i in range(self.n):
                    self.learners[i].step(states[i], actions[i], costs[i],
                                          next_states[i], alpha, sched.gamma, u,
                                          self.rng_agents[i],
                                          next_masks=self.valid_masks)
            elif cls == UC:
                self._apply_uc(states, actions, costs, alpha, sched.gamma, u)
            elif cls == CU:
                self._apply_cu(sel_components, sel_action_idx, next_states, costs,
                               alpha, sched.gamma)
            else:
                self._apply_cc(sel_components, sel_action_idx, costs, alpha,
                               sched.gamma)

            if t % stride == 0 or t == T - 1:
                self._record(t, coord_before, cls, costs)
        if self.saw_uu and not self.isolated and self.n > 1:
            # one-time end-of-run Q-share from every non-leader agent
            self.ledger.q_share += (self.n - 1) * self.n_states * self.n_actions
        return self._result()

    # -- update rules ----------------------------------------------------------

    def _post_move_selected_estimate(self):
        estimates = self._estimates()
        return self._select_estimate(estimates)

    def _apply_uc(self, states, actions, costs, alpha, gamma, u) -> None:
        # agents share next-state estimates, leader replies with the joint bootstrap
        self.ledger.estimate_share += self.n - 1
        if self.cfg.use_true_joint_states or self.n == 1:
            next_components = [self.net.state_index(j) for j in range(self.n)]
        else:
            next_components, _ = self._post_move_selected_estimate()
        boot = self._joint_bootstrap(next_components)
        self.ledger.action_broadcast += self.n - 1
        for i in range(self.n):
            learner = self.learners[i]
            for order in learner.cousins.orders:
                table = learner.cousins.q[order]
                table.values[states[i], actions[i]] = uc_update(
                    table.values[states[i], actions[i]], alpha, costs[i], gamma,
                    self.n, boot)
            learner.blend(u)
        self.ledger.report_share += self.n - 1

    def _write_joint(self, sel_components, sel_action_idx, target, alpha) -> None:
        # a first write stores the target outright: the definitional fill that
        # backs untouched reads is systematically biased at coordinated states
        # (local tables never learn there), so blending it in would just slow
        # the wash-out
        s_bar = joint_index(sel_components, self.n_states)
        key = (s_bar, sel_action_idx)
        if key in self.joint_q:
            value = (1.0 - alpha) * self.joint_q[key] + alpha * target
        else:
            value = target
        self._jq_set(s_bar, sel_action_idx, value)

    def _apply_cu(self, sel_components, sel_action_idx, next_states, costs,
                  alpha, gamma) -> None:
        boots = []
        for i in range(self.n):
            row = self.learners[i].ensemble.values[next_states[i]]
            mask = self.valid_masks[next_states[i]]
            vals = row[mask]
            boots.append(float(vals.max() if self.cfg.use_max_bootstrap else vals.min()))
        target = cu_target(costs, gamma, boots)
        self._write_joint(sel_components, sel_action_idx, target, alpha)
        self.ledger.report_share += self.n - 1

    def _apply_cc(self, sel_components, sel_action_idx, costs, alpha, gamma) -> None:
        if self.cfg.use_true_joint_states or self.n == 1:
            next_components = [self.net.state_index(j) for j in range(self.n)]
        else:
            next_components, _ = self._post_move_selected_estimate()
        boot = self._joint_bootstrap(next_components)
        target = cc_target(costs, gamma, boot)
        self._write_joint(sel_components, sel_action_idx, target, alpha)
        self.ledger.report_share += self.n - 1

    # -- metrics ---------------------------------------------------------------

    def _current_dense(self) -> np.ndarray:
        fill = finalize_joint_from_individuals(
            [lr.ensemble.values for lr in self.learners], {}, self.n_actions)
        return np.where(self._joint_touched, self._joint_dense, fill)

    def _record(self, t, coordinated, cls, costs) -> None:
        est_err = None
        if self.estimators and not self.cfg.use_true_joint_states:
            true_xy = {j: tuple(self.net.topology.tx_xy[j]) for j in range(self.n)}
            est_err = self.estimators[self.leader].position_error(true_xy)
        ape_v = aqd_v = None
        if self.oracle is not None:
            from .metrics import ape, aqd
            dense = self._current_dense()
            pi_hat = greedy_policy(QTable(dense, role="joint"),
                                   valid_mask=self.oracle.valid_mask)
            ape_v = ape(pi_hat, self.oracle.policy, state_mask=self.oracle.reachable)
            aqd_v = aqd(dense, self.oracle.q_star.values,
                        mask=self.oracle.metric_mask)
        self.records.append(StepRecord(t, bool(coordinated), cls,
                                       self.ledger.total, est_err, tuple(costs),
                                       ape_v, aqd_v))

    def _result(self) -> RunResult:
        return RunResult(
            config=self.cfg,
            records=self.records,
            ledger=self.ledger,
            ensembles=[lr.ensemble.values for lr in self.learners],
            real_tables=[lr.q_real().values for lr in self.learners],
            joint_entries=dict(self.joint_q),
            leader=self.leader,
            topology=self.net.topology,
            coordinated_steps=self.coordinated_steps,
            uu_steps=self.uu_steps,
            class_counts=dict(self.class_counts),
            saw_uu=self.saw_uu,
            n_states=self.n_states,
            n_actions=self.n_actions,
            n_agents=self.n,
        )


def run_protocol(config: ExperimentConfig, seed: int, isolated: bool = False,
                 oracle=None) -> RunResult:
    """Convenience wrapper: construct the runner and execute one seeded run."""
    return MultiAgentMemqRunner(config, seed, isolated=isolated, oracle=oracle).run()

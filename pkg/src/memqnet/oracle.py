"""Exact joint-MDP oracle: kernel construction + value iteration on the product space.

The walk is action-independent, so the joint kernel is one sparse (S_bar,
S_bar) operator whose rows depend only on the position components; bins are
deterministic functions of the next geometry. Costs decompose over agents via
the shared per-agent model-cost matrix, which makes the product-space oracle
exactly the fixed point the simulator's dynamics and costs define.
"""

from __future__ import annotations

import itertools

import numpy as np
from scipy import sparse

from .mdp import Policy, QTable, value_iteration_shared_kernel
from .protocol import joint_index
from .wireless import (
    GridNetwork,
    NetworkConfig,
    Topology,
    arss_all_mw,
    mw_to_dbm,
    quantize_arss_many,
    resolve_joint_move,
    N_MOVES,
)


class OracleBundle:
    """Solved joint MDP: optimal table/policy plus the pieces runs compare against.

    ``reachable`` marks the closed communicating slice of the product space
    (collision-free off-BS positions with geometry-consistent bins); policy
    and Q-difference metrics are evaluated there, since no learner can visit
    the remaining product-construction artifacts.
    """

    def __init__(self, q_star: QTable, v_star: np.ndarray, policy: Policy,
                 valid_mask: np.ndarray, kernel, agent_cost: np.ndarray,
                 reachable: np.ndarray):
        self.q_star = q_star
        self.v_star = v_star
        self.policy = policy
        self.valid_mask = valid_mask
        self.kernel = kernel
        self.agent_cost = agent_cost
        self.reachable = reachable
        self.metric_mask = reachable[:, None] & valid_mask


def agent_cost_matrix(net: GridNetwork) -> np.ndarray:
    """Noise-free per-agent cost over (state, action); sentinel where invalid."""
    from .wireless import TxState, cost as wireless_cost
    cfg = net.cfg
    c = np.empty((cfg.n_states, cfg.n_bs))
    for s in range(cfg.n_states):
        ix, iy, b = cfg.decode_state(s)
        tx = TxState(ix * cfg.cell_size, iy * cfg.cell_size, b)
        for a in range(cfg.n_bs):
            c[s, a] = wireless_cost(tx, a, net.topology, cfg, noise_draw=0.0)
    return c


def _bins_for_positions(cells, cfg: NetworkConfig) -> tuple:
    xy = np.asarray(cells, dtype=float) * cfg.cell_size
    mw = arss_all_mw(xy, cfg)
    dbm = np.array([mw_to_dbm(m) for m in mw])
    return tuple(int(b) for b in quantize_arss_many(dbm, cfg))


def build_joint_kernel(net: GridNetwork) -> sparse.csr_matrix:
    """Sparse product-space kernel implied by the clamped simultaneous walk."""
    cfg = net.cfg
    n = cfg.n_tx
    n_points = cfg.n_points
    n_cells = cfg.n_cells
    n_bins = cfg.n_bins
    n_states = cfg.n_states
    bs_cells = [tuple(c) for c in net.bs_cells]
    all_cells = [(i // n_points, i % n_points) for i in range(n_cells)]
    prob = (1.0 / N_MOVES) ** n

    combo_rows = {}
    for combo in itertools.product(range(n_cells), repeat=n):
        cells = [all_cells[c] for c in combo]
        succ = {}
        for proposals in itertools.product(range(N_MOVES), repeat=n):
            new_cells = resolve_joint_move(cells, proposals, bs_cells, n_points)
            bins = _bins_for_positions(new_cells, cfg)
            comps = [cfg.encode_state(c[0], c[1], b) for c, b in zip(new_cells, bins)]
            s_next = joint_index(comps, n_states)
            succ[s_next] = succ.get(s_next, 0.0) + prob
        combo_rows[combo] = sorted(succ.items())

    n_joint = n_states ** n
    rows, cols, data = [], [], []
    for comps in itertools.product(range(n_states), repeat=n):
        combo = tuple(c // n_bins for c in comps)
        s_bar = joint_index(comps, n_states)
        for s_next, p in combo_rows[combo]:
            rows.append(s_bar)
            cols.append(s_next)
            data.append(p)
    kernel = sparse.csr_matrix((data, (rows, cols)), shape=(n_joint, n_joint))
    return kernel


def joint_cost_and_mask(net: GridNetwork, agent_cost: np.ndarray) -> tuple:
    """Joint cost (sum over agents) and joint validity (all components valid)."""
    cfg = net.cfg
    n = cfg.n_tx
    n_states, n_actions = agent_cost.shape
    valid = net.state_valid_masks()
    cost_acc = np.zeros((n_states,) * n + (n_actions,) * n)
    valid_acc = np.ones((n_states,) * n + (n_actions,) * n, dtype=bool)
    for i in range(n):
        shape = [1] * (2 * n)
        shape[i] = n_states
        shape[n + i] = n_actions
        cost_acc = cost_acc + agent_cost.reshape(shape)
        valid_acc &= valid.reshape(shape)
    flat = (n_states ** n, n_actions ** n)
    return cost_acc.reshape(flat), valid_acc.reshape(flat)


def reachable_joint_states(net: GridNetwork) -> np.ndarray:
    """Boolean (n_states^N,) mask of joint states the walk can actually occupy."""
    cfg = net.cfg
    n = cfg.n_tx
    bs_cells = {tuple(c) for c in net.bs_cells}
    free = [c for i in range(cfg.n_cells)
            if (c := (i // cfg.n_points, i % cfg.n_points)) not in bs_cells]
    mask = np.zeros(cfg.n_states ** n, dtype=bool)
    for combo in itertools.permutations(free, n):
        bins = _bins_for_positions(list(combo), cfg)
        comps = [cfg.encode_state(c[0], c[1], b) for c, b in zip(combo, bins)]
        mask[joint_index(comps, cfg.n_states)] = True
    return mask


def solve_joint_oracle(net: GridNetwork, gamma: float, tol: float = 1e-10) -> OracleBundle:
    """Exact Q*/pi* for the joint MDP the simulator realizes on this topology."""
    agent_cost = agent_cost_matrix(net)
    kernel = build_joint_kernel(net)
    joint_cost, valid = joint_cost_and_mask(net, agent_cost)
    v_star, q_star, policy = value_iteration_shared_kernel(
        kernel, joint_cost, gamma, tol=tol, valid_mask=valid)
    return OracleBundle(q_star, v_star, policy, valid, kernel, agent_cost,
                        reachable_joint_states(net))

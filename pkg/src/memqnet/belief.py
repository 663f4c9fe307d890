"""Windowed Bayesian estimation of the other TXs' positions from local ARSS.

Each observer keeps a normalized discrete belief over candidate position
tuples of the hidden TXs inside a search window around per-TX anchors. The
window radius grows within an epoch and resets every ``reset_period`` steps;
updates are multiplicative with a Gaussian ARSS likelihood in dB.
"""

from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass, field
from functools import reduce

import numpy as np

from .wireless import NetworkConfig, mw_to_dbm, quantize_arss

MASS_TOL = 1e-9


@dataclass
class WindowSpec:
    """Anchors and growth parameters of the search window."""

    anchors: tuple              # ((x, y), ...) meters, one per hidden TX
    delta0: float               # initial radius (meters)
    cell_size: float
    reset_period: int           # l

    def __post_init__(self):
        if self.delta0 < 0:
            raise ValueError("delta0 must be nonnegative")
        if self.reset_period < 1:
            raise ValueError("reset_period must be >= 1")


def search_window(t: int, spec: WindowSpec) -> float:
    """Window radius at step t: delta0 + 2 * cell_size * min(l, t % l)."""
    if t < 0:
        raise ValueError("t must be nonnegative")
    l = spec.reset_period
    return spec.delta0 + 2.0 * spec.cell_size * min(l, t % l)


def window_positions(anchor, delta: float, grid_size: float, cell_size: float) -> np.ndarray:
    """Grid points within Chebyshev radius delta of the anchor, clipped to the grid.

    Returned lexicographically sorted so C-order argmax ties break toward the
    lowest position tuple.
    """
    ax, ay = anchor
    n_points = int(round(grid_size / cell_size)) + 1
    xs = np.arange(n_points) * cell_size
    keep_x = xs[np.abs(xs - ax) <= delta + 1e-9]
    keep_y = xs[np.abs(xs - ay) <= delta + 1e-9]
    if keep_x.size == 0 or keep_y.size == 0:
        raise ValueError("search window does not intersect the grid")
    gx, gy = np.meshgrid(keep_x, keep_y, indexing="ij")
    return np.stack([gx.ravel(), gy.ravel()], axis=1)


@dataclass
class BeliefGrid:
    """Joint belief over hidden-TX position tuples: per-TX axes and a mass tensor."""

    axes: list                   # one (w_j, 2) position array per hidden TX
    mass: np.ndarray             # shape (w_1, ..., w_k), sums to 1

    def __post_init__(self):
        shape = tuple(a.shape[0] for a in self.axes)
        self.mass = np.asarray(self.mass, dtype=float)
        if self.mass.shape != shape:
            raise ValueError("mass shape must match window axes")
        if self.mass.size == 0:
            raise ValueError("belief support must be nonempty")
        total = float(self.mass.sum())
        if abs(total - 1.0) > MASS_TOL:
            raise ValueError("belief mass must sum to 1")

    @property
    def n_candidates(self) -> int:
        return self.mass.size

    def positions_at(self, flat_index: int) -> tuple:
        idx = np.unravel_index(flat_index, self.mass.shape)
        return tuple(tuple(self.axes[j][i]) for j, i in enumerate(idx))


@dataclass
class LikelihoodModel:
    """Gaussian ARSS likelihood in dB with an optional residual-driven variance."""

    sigma_db: float = 1.0
    adaptive: bool = False
    min_sigma_db: float = 0.25
    history: int = 30
    residuals: deque = field(default_factory=lambda: deque(maxlen=64))

    def __post_init__(self):
        if self.sigma_db <= 0:
            raise ValueError("sigma_db must be positive")
        self.residuals = deque(self.residuals, maxlen=self.history)

    def sigma(self) -> float:
        if self.adaptive and len(self.residuals) >= 5:
            return max(float(np.std(self.residuals)), self.min_sigma_db)
        return self.sigma_db

    def record_residual(self, r: float) -> None:
        if math.isfinite(r):
            self.residuals.append(r)


def likelihood(i_obs_dbm: float, predicted_dbm: np.ndarray, sigma_db: float) -> np.ndarray:
    """Unnormalized Gaussian densities exp(-(obs - pred)^2 / (2 sigma^2)).

    Candidates with infinite predictions (e.g. a candidate on top of the
    observer) get zero density.
    """
    predicted = np.asarray(predicted_dbm, dtype=float)
    with np.errstate(invalid="ignore"):
        z = (i_obs_dbm - predicted) / sigma_db
        dens = np.exp(-0.5 * np.square(z))
    dens[~np.isfinite(predicted)] = 0.0
    return dens


def belief_update(b: BeliefGrid, densities: np.ndarray) -> BeliefGrid:
    """Multiplicative Bayes update, renormalized; degenerate evidence resets to uniform."""
    dens = np.asarray(densities, dtype=float)
    if dens.shape != b.mass.shape:
        raise ValueError("densities must align with the belief support")
    post = b.mass * dens
    total = float(post.sum())
    if total <= 0.0 or not math.isfinite(total):
        post = np.full_like(b.mass, 1.0 / b.mass.size)
    else:
        post = post / total
    return BeliefGrid(b.axes, post)


def map_estimate(b: BeliefGrid, densities: np.ndarray) -> tuple:
    """(position tuple, normalized posterior mass) maximizing density * belief.

    Ties break toward the lexicographically lowest tuple (C-order first max).
    """
    dens = np.asarray(densities, dtype=float)
    if dens.shape != b.mass.shape:
        raise ValueError("densities must align with the belief support")
    post = b.mass * dens
    total = float(post.sum())
    if total <= 0.0 or not math.isfinite(total):
        post = b.mass
        total = 1.0
    flat = int(np.argmax(post))
    return b.positions_at(flat), float(post.ravel()[flat] / total)


def reinit_belief(spec: WindowSpec, grid_size: float,
                  first_obs_densities: np.ndarray | None = None) -> BeliefGrid:
    """Fresh belief: radius-delta0 windows around the anchors, uniform or
    weighted by the first observation's densities."""
    axes = [window_positions(anchor, spec.delta0, grid_size, spec.cell_size)
            for anchor in spec.anchors]
    shape = tuple(a.shape[0] for a in axes)
    uniform = np.full(shape, 1.0 / int(np.prod(shape)))
    belief = BeliefGrid(axes, uniform)
    if first_obs_densities is not None:
        belief = belief_update(belief, first_obs_densities)
    return belief


def regrow_support(b: BeliefGrid, spec: WindowSpec, radius: float, grid_size: float,
                   diffusion: float = 0.05) -> BeliefGrid:
    """Expand the support to the given window radius, diffusing a little mass onto new cells.

    Old candidates keep (1 - diffusion) of their posterior; the remainder is
    spread uniformly so freshly admitted cells are reachable by later updates.
    """
    axes = [window_positions(anchor, radius, grid_size, spec.cell_size)
            for anchor in spec.anchors]
    shape = tuple(a.shape[0] for a in axes)
    if shape == b.mass.shape and all(np.array_equal(a, o) for a, o in zip(axes, b.axes)):
        return b
    embedded = np.zeros(shape)
    target_slices = []
    source_slices = []
    for new_axis, old_axis in zip(axes, b.axes):
        lookup = {tuple(p): i for i, p in enumerate(map(tuple, new_axis))}
        pairs = [(lookup[tuple(p)], i) for i, p in enumerate(map(tuple, old_axis))
                 if tuple(p) in lookup]
        # the window shrinks at an epoch wrap; out-of-window mass is dropped
        target_slices.append(np.array([t for t, _ in pairs], dtype=np.intp))
        source_slices.append(np.array([s for _, s in pairs], dtype=np.intp))
    if all(s.size for s in target_slices):
        embedded[np.ix_(*target_slices)] = b.mass[np.ix_(*source_slices)]
    mixed = (1.0 - diffusion) * embedded + diffusion / embedded.size
    return BeliefGrid(axes, mixed / mixed.sum())


def predicted_arss_dbm(axes: list, observer_xy, power_mw: float,
                       exponent: float = 2.0, extra_mw: float = 0.0) -> np.ndarray:
    """Forward model: predicted observer ARSS (dBm) for every candidate tuple.

    Contributions are separable per hidden TX, so the full tensor is an outer
    sum of per-axis terms. ``extra_mw`` adds power from TXs whose positions the
    observer treats as known.
    """
    ox, oy = observer_xy
    contribs = []
    for axis in axes:
        d2 = (axis[:, 0] - ox) ** 2 + (axis[:, 1] - oy) ** 2
        with np.errstate(divide="ignore"):
            contribs.append(np.where(d2 > 0, power_mw / d2 ** (exponent / 2.0), np.inf))
    total = reduce(np.add.outer, contribs) + extra_mw
    with np.errstate(divide="ignore"):
        dbm = 10.0 * np.log10(total)
    dbm[~np.isfinite(total)] = np.inf
    return dbm


def collision_mask(axes: list) -> np.ndarray | None:
    """False where two hidden candidates share a cell (physically excluded)."""
    k = len(axes)
    if k < 2:
        return None
    shape = tuple(a.shape[0] for a in axes)
    ok = np.ones(shape, dtype=bool)
    for jj in range(k):
        for kk in range(jj + 1, k):
            eq = np.all(axes[jj][:, None, :] == axes[kk][None, :, :], axis=2)
            expand = [None] * k
            expand[jj] = slice(None)
            expand[kk] = slice(None)
            ok &= ~eq[tuple(expand)]
    return ok


def gaussian_product(mu_a: np.ndarray, cov_a: np.ndarray,
                     mu_b: np.ndarray, cov_b: np.ndarray) -> tuple:
    """Mean/covariance of the (renormalized) product of two Gaussians.

    Used only by the uncertainty-shrinkage test: the posterior covariance
    never exceeds the prior in the PSD order.
    """
    prec = np.linalg.inv(cov_a) + np.linalg.inv(cov_b)
    cov = np.linalg.inv(prec)
    mu = cov @ (np.linalg.solve(cov_a, mu_a) + np.linalg.solve(cov_b, mu_b))
    return mu, cov


class JointStateEstimator:
    """One observer's running estimate of the other TXs' positions and bins.

    Owns a BeliefGrid, regrows its support with the scheduled window, folds in
    one ARSS observation per step, and exposes the MAP joint estimate with its
    posterior mass.
    """

    def __init__(self, cfg: NetworkConfig, observer: int, hidden: tuple,
                 sigma_db: float = 1.0, adaptive_sigma: bool = False,
                 diffusion: float = 0.05):
        self.cfg = cfg
        self.observer = observer
        self.hidden = tuple(hidden)
        self.model = LikelihoodModel(sigma_db=sigma_db, adaptive=adaptive_sigma,
                                     history=cfg.reset_period)
        self.diffusion = diffusion
        self.spec: WindowSpec | None = None
        self.belief: BeliefGrid | None = None
        self._last_densities: np.ndarray | None = None
        self._steps_since_reset = 0

    def reset(self, anchors, own_xy=None, obs_dbm: float | None = None) -> None:
        """Re-anchor the window and rebuild the belief (optionally seeded by an obs)."""
        snapped = tuple((round(a[0] / self.cfg.cell_size) * self.cfg.cell_size,
                         round(a[1] / self.cfg.cell_size) * self.cfg.cell_size)
                        for a in anchors)
        self.spec = WindowSpec(snapped, self.cfg.window_seed, self.cfg.cell_size,
                               self.cfg.reset_period)
        densities = None
        if obs_dbm is not None and own_xy is not None:
            axes = [window_positions(a, self.spec.delta0, self.cfg.grid_size,
                                     self.cfg.cell_size) for a in snapped]
            densities = self._densities(axes, own_xy, obs_dbm)
        self.belief = reinit_belief(self.spec, self.cfg.grid_size, densities)
        self._last_densities = np.ones(self.belief.mass.shape)
        self._steps_since_reset = 0

    def _densities(self, axes, own_xy, obs_dbm: float) -> np.ndarray:
        predicted = predicted_arss_dbm(axes, own_xy, self.cfg.tx_power_mw,
                                       self.cfg.pathloss_exponent)
        dens = likelihood(obs_dbm, predicted, self.model.sigma())
        mask = collision_mask(axes)
        if mask is not None:
            dens = np.where(mask, dens, 0.0)
        return dens

    def step(self, t: int, own_xy, obs_dbm: float) -> None:
        """Grow the window one step and fold in one observation.

        The radius follows the scheduled growth from the last reset, capped at
        delta0 + 2 * cell * reset_period; the caller's ``t`` is informational.
        """
        if self.belief is None:
            raise RuntimeError("estimator must be reset before stepping")
        self._steps_since_reset += 1
        radius = self.spec.delta0 + 2.0 * self.spec.cell_size * min(
            self.spec.reset_period, self._steps_since_reset)
        self.belief = regrow_support(self.belief, self.spec, radius,
                                     self.cfg.grid_size, self.diffusion)
        dens = self._densities(self.belief.axes, own_xy, obs_dbm)
        self._last_densities = dens
        self.belief = belief_update(self.belief, dens)
        if self.model.adaptive:
            (positions, _m) = map_estimate(self.belief, dens)
            predicted = predicted_arss_dbm(
                [np.array([p]) for p in positions], own_xy,
                self.cfg.tx_power_mw, self.cfg.pathloss_exponent)
            self.model.record_residual(float(obs_dbm - predicted.ravel()[0]))

    def map_positions(self) -> tuple:
        """(hidden position tuple, posterior mass) under the latest densities."""
        return map_estimate(self.belief, self._last_densities)

    def map_joint_states(self, own_xy, own_bin: int) -> tuple:
        """Per-agent state indices of the full joint estimate plus its mass.

        The observer's own component is exact; hidden components take the MAP
        positions with ARSS bins recomputed from the candidate geometry.
        """
        positions, mass = self.map_positions()
        n_tx = len(self.hidden) + 1
        xy = np.zeros((n_tx, 2))
        xy[self.observer] = own_xy
        for j, agent in enumerate(self.hidden):
            xy[agent] = positions[j]
        diff = xy[:, None, :] - xy[None, :, :]
        d2 = (diff ** 2).sum(axis=2)
        np.fill_diagonal(d2, np.inf)
        with np.errstate(divide="ignore"):
            contrib = self.cfg.tx_power_mw / d2 ** (self.cfg.pathloss_exponent / 2.0)
        states = []
        for agent in range(n_tx):
            cell = (int(round(xy[agent][0] / self.cfg.cell_size)),
                    int(round(xy[agent][1] / self.cfg.cell_size)))
            if agent == self.observer:
                b = own_bin
            else:
                b = quantize_arss(mw_to_dbm(float(contrib[agent].sum())), self.cfg)
            states.append(self.cfg.encode_state(cell[0], cell[1], b))
        return states, mass

    def position_error(self, true_xy) -> float:
        """Summed L2 error of the MAP positions against the true hidden positions."""
        positions, _ = self.map_positions()
        err = 0.0
        for j, agent in enumerate(self.hidden):
            err += math.hypot(positions[j][0] - true_xy[agent][0],
                              positions[j][1] - true_xy[agent][1])
        return err

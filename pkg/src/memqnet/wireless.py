"""Grid wireless network: topology, TX random walk, ARSS sensing, SNR, costs.

Units: positions in meters (grid points spaced ``cell_size`` apart), powers in
dBm where named ``_dbm`` and linear mW where named ``_mw``. ARSS propagation is
free-space with a configurable path-loss exponent; the SNR denominator always
uses squared distance per the cost model.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

MOVE_DELTAS = ((0, 0), (0, 1), (1, 0), (0, -1), (-1, 0))  # stay, U, R, D, L
N_MOVES = len(MOVE_DELTAS)


class ConfigError(ValueError):
    """A network/experiment configuration violates a documented invariant."""


def dbm_to_mw(dbm: float) -> float:
    return 10.0 ** (dbm / 10.0)


def mw_to_dbm(mw: float) -> float:
    if mw <= 0.0:
        return -math.inf
    return 10.0 * math.log10(mw)


def derived_thresholds(n_tx: int) -> tuple:
    """(i_min, i_max, i_thr) in dBm as functions of the TX count.

    i_max = 10 log10(n_tx - 1) - 10, with i_thr/i_min 35/50 dB below it.
    """
    x = 10.0 * math.log10(max(n_tx - 1, 1))
    return x - 60.0, x - 10.0, x - 45.0


@dataclass(frozen=True)
class NetworkConfig:
    """Full parameterization of the grid network."""

    grid_size: float = 10.0          # L (meters)
    cell_size: float = 1.0           # grid spacing
    n_tx: int = 3
    n_bs: int = 2
    tx_power_dbm: float = 20.0
    noise_std_mw: float = 1e-3
    modulation_k: float = 1.0
    n_bins: int = 10                 # ARSS quantization levels
    i_min_dbm: float | None = None   # None -> derived from n_tx
    i_max_dbm: float | None = None
    i_thr_dbm: float | None = None
    cost_weights: tuple = (1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0)
    window_seed: float = 2.0         # delta0 (meters)
    reset_period: int = 30           # l (steps)
    pathloss_exponent: float = 2.0
    fairness_sigma_db: float | None = None   # None -> one bin width
    snr_floor_mw: float = 1e-9
    sentinel_cost: float = 1e3
    tx_radius_range: tuple | None = None     # None -> (L/3, 2L/3)
    bs_radius_range: tuple | None = None
    bs_radius_override: tuple | None = None
    bs_positions_override: tuple | None = None   # ((x, y), ...) meters
    tx_positions_override: tuple | None = None
    ensure_coverage: bool = True
    max_topology_attempts: int = 2000

    def __post_init__(self):
        ratio = self.grid_size / self.cell_size
        if abs(ratio - round(ratio)) > 1e-9:
            raise ConfigError("cell_size must divide grid_size")
        if self.n_tx < 1 or self.n_bs < 1:
            raise ConfigError("need at least one TX and one BS")
        if self.n_bins < 2:
            raise ConfigError("n_bins must be >= 2")
        if len(self.cost_weights) != 3 or any(w < 0 for w in self.cost_weights):
            raise ConfigError("cost_weights must be three nonnegative values")
        if abs(sum(self.cost_weights) - 1.0) > 1e-9:
            raise ConfigError("cost_weights must sum to 1")
        if self.reset_period < 1:
            raise ConfigError("reset_period must be >= 1")
        if self.window_seed < 0:
            raise ConfigError("window_seed must be nonnegative")
        i_min, i_max, i_thr = self.arss_bounds()
        if not i_min < i_max:
            raise ConfigError("need i_min < i_max")
        # infinite thresholds are the documented protocol-reduction escape
        if math.isfinite(i_thr) and not (i_min < i_thr < i_max):
            raise ConfigError("need i_min < i_thr < i_max")
        if self.n_points ** 2 < self.n_tx + self.n_bs:
            raise ConfigError("grid too small for the requested entities")

    def arss_bounds(self) -> tuple:
        derived = derived_thresholds(self.n_tx)
        i_min = derived[0] if self.i_min_dbm is None else self.i_min_dbm
        i_max = derived[1] if self.i_max_dbm is None else self.i_max_dbm
        i_thr = derived[2] if self.i_thr_dbm is None else self.i_thr_dbm
        return i_min, i_max, i_thr

    @property
    def n_points(self) -> int:
        return int(round(self.grid_size / self.cell_size)) + 1

    @property
    def n_cells(self) -> int:
        return self.n_points ** 2

    @property
    def n_states(self) -> int:
        return self.n_cells * self.n_bins

    @property
    def tx_power_mw(self) -> float:
        return dbm_to_mw(self.tx_power_dbm)

    def bin_levels_dbm(self) -> np.ndarray:
        return _bin_levels(self)

    def fairness_sigma(self) -> float:
        if self.fairness_sigma_db is not None:
            return self.fairness_sigma_db
        levels = self.bin_levels_dbm()
        return float(levels[1] - levels[0])

    def encode_state(self, ix: int, iy: int, i_bin: int) -> int:
        return (ix * self.n_points + iy) * self.n_bins + i_bin

    def decode_state(self, s: int) -> tuple:
        cell, i_bin = divmod(s, self.n_bins)
        ix, iy = divmod(cell, self.n_points)
        return ix, iy, i_bin


@lru_cache(maxsize=64)
def _bin_levels(cfg: NetworkConfig) -> np.ndarray:
    i_min, i_max, _ = cfg.arss_bounds()
    levels = np.linspace(i_min, i_max, cfg.n_bins)
    levels.flags.writeable = False
    return levels


@dataclass(frozen=True)
class TxState:
    """Per-TX state: position (meters, on grid points) and quantized ARSS bin."""

    x: float
    y: float
    i_bin: int


@dataclass
class Topology:
    """Current entity layout; positions in meters."""

    bs_xy: np.ndarray
    bs_radius: np.ndarray
    tx_xy: np.ndarray
    tx_radius: np.ndarray

    @property
    def n_bs(self) -> int:
        return self.bs_xy.shape[0]

    @property
    def n_tx(self) -> int:
        return self.tx_xy.shape[0]


def _cells_to_xy(cells: np.ndarray, cfg: NetworkConfig) -> np.ndarray:
    return cells.astype(float) * cfg.cell_size


def _xy_to_cells(xy, cfg: NetworkConfig) -> np.ndarray:
    cells = np.asarray(xy, dtype=float) / cfg.cell_size
    rounded = np.rint(cells).astype(np.int64)
    if np.max(np.abs(cells - rounded)) > 1e-9:
        raise ConfigError("positions must sit on grid points")
    return rounded


def _grid_covered(bs_cells: np.ndarray, bs_radius: np.ndarray, cfg: NetworkConfig) -> bool:
    pts = np.arange(cfg.n_points)
    gx, gy = np.meshgrid(pts, pts, indexing="ij")
    grid = np.stack([gx.ravel(), gy.ravel()], axis=1) * cfg.cell_size
    bs_xy = _cells_to_xy(bs_cells, cfg)
    d = np.linalg.norm(grid[:, None, :] - bs_xy[None, :, :], axis=2)
    return bool(np.all((d <= bs_radius[None, :] + 1e-9).any(axis=1)))


def init_topology(cfg: NetworkConfig, rng: np.random.Generator) -> Topology:
    """Random collision-free placement; resamples until the grid is covered.

    BS cells are drawn first, then TX cells, then BS and TX radii; with
    ``ensure_coverage`` the whole draw repeats until every grid point lies in
    some BS's coverage area.
    """
    lo, hi = cfg.grid_size / 3.0, 2.0 * cfg.grid_size / 3.0
    bs_range = cfg.bs_radius_range or (lo, hi)
    tx_range = cfg.tx_radius_range or (lo, hi)
    for _ in range(cfg.max_topology_attempts):
        flat = rng.choice(cfg.n_cells, size=cfg.n_bs + cfg.n_tx, replace=False)
        cells = np.stack(divmod(flat, cfg.n_points), axis=1)
        bs_cells, tx_cells = cells[:cfg.n_bs], cells[cfg.n_bs:]
        if cfg.bs_positions_override is not None:
            bs_cells = _xy_to_cells(cfg.bs_positions_override, cfg)
        if cfg.tx_positions_override is not None:
            tx_cells = _xy_to_cells(cfg.tx_positions_override, cfg)
        if cfg.bs_radius_override is not None:
            bs_radius = np.asarray(cfg.bs_radius_override, dtype=float)
        else:
            bs_radius = rng.uniform(bs_range[0], bs_range[1], size=cfg.n_bs)
        tx_radius = rng.uniform(tx_range[0], tx_range[1], size=cfg.n_tx)
        occupied = [tuple(c) for c in np.vstack([bs_cells, tx_cells])]
        if len(set(occupied)) != len(occupied):
            continue
        if cfg.ensure_coverage and not _grid_covered(bs_cells, bs_radius, cfg):
            continue
        return Topology(_cells_to_xy(bs_cells, cfg), bs_radius,
                        _cells_to_xy(tx_cells, cfg), tx_radius)
    raise ConfigError("could not draw a collision-free covered topology; "
                      "widen bs_radius_range or disable ensure_coverage")


def move_tx(state: TxState, cfg: NetworkConfig, rng: np.random.Generator) -> TxState:
    """One 5-way random-walk step; moves leaving the grid become 'stay'."""
    move = MOVE_DELTAS[int(rng.integers(N_MOVES))]
    nx = state.x + move[0] * cfg.cell_size
    ny = state.y + move[1] * cfg.cell_size
    if not (0.0 <= nx <= cfg.grid_size and 0.0 <= ny <= cfg.grid_size):
        return state
    return TxState(nx, ny, state.i_bin)


def resolve_joint_move(tx_cells, proposals, bs_cells, n_points: int):
    """Apply proposed moves sequentially; blocked or off-grid moves become 'stay'.

    A target cell is blocked when occupied by a BS, by a not-yet-moved TX's
    current cell, or by an already-moved TX's new cell. Returns new cell tuples.
    """
    occupancy = {}
    for c in tx_cells:
        occupancy[tuple(c)] = occupancy.get(tuple(c), 0) + 1
    for c in bs_cells:
        occupancy[tuple(c)] = occupancy.get(tuple(c), 0) + 1
    new_cells = []
    for cell, move_idx in zip(tx_cells, proposals):
        cell = tuple(cell)
        d = MOVE_DELTAS[move_idx]
        target = (cell[0] + d[0], cell[1] + d[1])
        occupancy[cell] -= 1
        in_grid = 0 <= target[0] < n_points and 0 <= target[1] < n_points
        if in_grid and occupancy.get(target, 0) == 0 and target != cell:
            new = target
        else:
            new = cell
        occupancy[new] = occupancy.get(new, 0) + 1
        new_cells.append(new)
    return new_cells


def arss(topology: Topology, cfg: NetworkConfig, i: int) -> tuple:
    """Aggregated received signal strength at TX i: (linear mW, dBm)."""
    xy = topology.tx_xy
    if xy.shape[0] == 1:
        return 0.0, -math.inf
    diffs = xy - xy[i]
    d = np.sqrt((diffs ** 2).sum(axis=1))
    d = np.delete(d, i)
    if np.any(d <= 0.0):
        raise ValueError("coincident TXs make ARSS undefined")
    lin = float(np.sum(cfg.tx_power_mw / d ** cfg.pathloss_exponent))
    return lin, mw_to_dbm(lin)


def arss_all_mw(tx_xy: np.ndarray, cfg: NetworkConfig) -> np.ndarray:
    """Vectorized ARSS for every TX; coincident TXs yield +inf (oracle use)."""
    n = tx_xy.shape[0]
    if n == 1:
        return np.zeros(1)
    diff = tx_xy[:, None, :] - tx_xy[None, :, :]
    d2 = (diff ** 2).sum(axis=2)
    np.fill_diagonal(d2, np.inf)
    with np.errstate(divide="ignore"):
        contrib = cfg.tx_power_mw / d2 ** (cfg.pathloss_exponent / 2.0)
    return contrib.sum(axis=1)


def quantize_arss(dbm: float, cfg: NetworkConfig) -> int:
    """Clamp to [i_min, i_max] then snap to the nearest of n_bins uniform dBm levels."""
    i_min, i_max, _ = cfg.arss_bounds()
    clamped = min(max(dbm, i_min), i_max)
    levels = cfg.bin_levels_dbm()
    return int(np.argmin(np.abs(levels - clamped)))


def quantize_arss_many(dbm: np.ndarray, cfg: NetworkConfig) -> np.ndarray:
    i_min, i_max, _ = cfg.arss_bounds()
    clamped = np.clip(dbm, i_min, i_max)
    levels = cfg.bin_levels_dbm()
    return np.argmin(np.abs(levels[None, :] - clamped[:, None]), axis=1)


def dequantize_bin(i_bin: int, cfg: NetworkConfig) -> float:
    """Representative dBm level of a bin."""
    return float(cfg.bin_levels_dbm()[i_bin])


def gaussian_tail(x: float) -> float:
    """Standard normal upper-tail probability Q(x)."""
    return 0.5 * math.erfc(x / math.sqrt(2.0))


def snr(tx: TxState, bs_xy, cfg: NetworkConfig, noise_draw: float,
        interference_mw: float | None = None) -> float:
    """SNR = P / (d^2 * (n + I)), all linear mW; denominator floored."""
    d2 = (tx.x - bs_xy[0]) ** 2 + (tx.y - bs_xy[1]) ** 2
    if interference_mw is None:
        interference_mw = dbm_to_mw(dequantize_bin(tx.i_bin, cfg))
    if d2 <= 0.0:
        return math.inf
    denom = d2 * max(noise_draw + interference_mw, cfg.snr_floor_mw)
    return cfg.tx_power_mw / denom


def cost_components(tx: TxState, bs_xy, cfg: NetworkConfig, noise_draw: float) -> tuple:
    """(efficiency, reliability, fairness) cost terms for a valid association."""
    i_dbm = dequantize_bin(tx.i_bin, cfg)
    ratio = snr(tx, bs_xy, cfg, noise_draw, interference_mw=dbm_to_mw(i_dbm))
    if math.isinf(ratio):
        efficiency = 0.0
        reliability = 0.0
    else:
        efficiency = cfg.tx_power_mw / math.log2(1.0 + ratio)
        reliability = gaussian_tail(cfg.modulation_k * math.sqrt(ratio))
    _, _, i_thr = cfg.arss_bounds()
    if math.isinf(i_thr):
        fairness = 0.0 if i_thr > 0 else 1.0
    else:
        fairness = gaussian_tail((i_thr - i_dbm) / cfg.fairness_sigma())
    return efficiency, reliability, fairness


def action_valid(tx_xy, topology: Topology, action: int) -> bool:
    bs = topology.bs_xy[action]
    d = math.hypot(tx_xy[0] - bs[0], tx_xy[1] - bs[1])
    return d <= topology.bs_radius[action] + 1e-9


def cost(tx: TxState, action: int, topology: Topology, cfg: NetworkConfig,
         rng: np.random.Generator | None = None, noise_draw: float | None = None) -> float:
    """Convex combination of the three cost terms; invalid actions get the sentinel.

    The noise draw n ~ N(0, sigma^2) may be supplied directly (oracle callers
    pass 0.0); otherwise it is drawn from ``rng``.
    """
    if not 0 <= action < topology.n_bs:
        raise IndexError(f"action {action} out of range")
    if not action_valid((tx.x, tx.y), topology, action):
        return cfg.sentinel_cost
    if noise_draw is None:
        noise_draw = float(rng.normal(0.0, cfg.noise_std_mw)) if rng is not None else 0.0
    eff, rel, fair = cost_components(tx, topology.bs_xy[action], cfg, noise_draw)
    w = cfg.cost_weights
    return w[0] * eff + w[1] * rel + w[2] * fair


def is_coordinated(i_bins, cfg: NetworkConfig) -> bool:
    """True iff some TX's dequantized ARSS strictly exceeds the threshold."""
    _, _, i_thr = cfg.arss_bounds()
    levels = cfg.bin_levels_dbm()
    return bool(any(levels[b] > i_thr for b in i_bins))


class GridNetwork:
    """Live simulation session: topology, per-TX bins, joint stepping, costs.

    Dynamics are action-independent: positions random-walk and bins follow the
    geometry, so two runs sharing the environment RNG see identical state
    trajectories whatever actions their learners take.
    """

    def __init__(self, cfg: NetworkConfig, rng: np.random.Generator,
                 topology: Topology | None = None):
        self.cfg = cfg
        self.topology = topology if topology is not None else init_topology(cfg, rng)
        self.tx_cells = _xy_to_cells(self.topology.tx_xy, cfg)
        self.bs_cells = _xy_to_cells(self.topology.bs_xy, cfg)
        self._valid_by_cell = self._build_valid_masks()
        if self.cfg.ensure_coverage and not self._valid_by_cell.any(axis=1).all():
            raise ConfigError("topology leaves some grid cell with no reachable BS")
        self.bins = self._compute_bins()

    def _build_valid_masks(self) -> np.ndarray:
        pts = np.arange(self.cfg.n_points)
        gx, gy = np.meshgrid(pts, pts, indexing="ij")
        grid = np.stack([gx.ravel(), gy.ravel()], axis=1) * self.cfg.cell_size
        d = np.linalg.norm(grid[:, None, :] - self.topology.bs_xy[None, :, :], axis=2)
        return d <= self.topology.bs_radius[None, :] + 1e-9

    def _compute_bins(self) -> np.ndarray:
        mw = arss_all_mw(self.topology.tx_xy, self.cfg)
        self.arss_dbm = np.array([mw_to_dbm(m) for m in mw])
        return quantize_arss_many(self.arss_dbm, self.cfg)

    # -- state access ------------------------------------------------------

    def tx_state(self, i: int) -> TxState:
        x, y = self.topology.tx_xy[i]
        return TxState(float(x), float(y), int(self.bins[i]))

    def state_index(self, i: int) -> int:
        cell = self.tx_cells[i]
        return self.cfg.encode_state(int(cell[0]), int(cell[1]), int(self.bins[i]))

    def valid_mask(self, i: int) -> np.ndarray:
        cell = self.tx_cells[i]
        return self._valid_by_cell[cell[0] * self.cfg.n_points + cell[1]]

    def valid_mask_for_state(self, s: int) -> np.ndarray:
        return self._valid_by_cell[s // self.cfg.n_bins]

    def state_valid_masks(self) -> np.ndarray:
        """(n_states, n_bs) validity table shared by all TXs."""
        return np.repeat(self._valid_by_cell, self.cfg.n_bins, axis=0)

    def coordinated(self) -> bool:
        return is_coordinated(self.bins, self.cfg)

    # -- dynamics -----------------------------------------------------------

    def draw_noise(self, rng: np.random.Generator) -> np.ndarray:
        return rng.normal(0.0, self.cfg.noise_std_mw, size=self.cfg.n_tx)

    def step_cost(self, i: int, action: int, noise_draw: float) -> float:
        return cost(self.tx_state(i), action, self.topology, self.cfg,
                    noise_draw=noise_draw)

    def advance(self, rng: np.random.Generator) -> None:
        """Move every TX one walk step (sequential clamping) and re-sense ARSS."""
        proposals = rng.integers(N_MOVES, size=self.cfg.n_tx)
        new_cells = resolve_joint_move([tuple(c) for c in self.tx_cells], proposals,
                                       [tuple(c) for c in self.bs_cells],
                                       self.cfg.n_points)
        self.tx_cells = np.array(new_cells, dtype=np.int64)
        self.topology.tx_xy = _cells_to_xy(self.tx_cells, self.cfg)
        self.bins = self._compute_bins()

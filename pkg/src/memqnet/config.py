"""Experiment configuration: dataclass, INI-file parsing, invariant validation.

An empty config file reproduces the reference parameterization at reduced
scale (T=5000, l=30, gamma=0.95, alpha_t = 1/(1+t/1000), epsilon decaying by
0.99 to 0.01, u_t = 1-exp(-t/1000), 20 dBm TXs, sigma = 1e-3 mW, k = 1,
ARSS thresholds derived from the TX count, radii ~ unif[L/3, 2L/3]).
"""

from __future__ import annotations

import configparser
import math
from dataclasses import dataclass, field, fields, replace

from .mdp import LearningSchedule
from .wireless import ConfigError, NetworkConfig

ALGOS = ("mamemq", "iq", "hq", "psaq", "scq", "cmemq")


@dataclass(frozen=True)
class ExperimentConfig:
    """Everything one run needs: network, schedules, algorithm, harness knobs."""

    network: NetworkConfig = field(default_factory=NetworkConfig)
    schedule: LearningSchedule = field(default_factory=LearningSchedule)
    algo: str = "mamemq"
    n_steps: int = 5000
    seed: int = 0
    replications: int = 1
    # agent internals
    cousin_orders: tuple = (2, 3, 5)       # synthetic order per TX, cycled
    ptt_smoothing: float = 0.0
    ptt_refresh: int = 50
    buffer_capacity: int = 100_000
    use_max_bootstrap: bool = False
    eps_w: float | None = None             # None -> relative floor rule
    sigma_db: float = 1.0
    adaptive_sigma: bool = False
    belief_diffusion: float = 0.05
    use_true_joint_states: bool = False
    # baselines
    hq_beta_ratio: float = 0.1
    psaq_budget_frac: float = 0.1
    cmemq_order: int = 2
    # metrics / outputs
    metric_stride: int | None = None       # None -> 10 when n_steps >= 10_000 else 1
    oracle_enabled: bool = True
    oracle_max_entries: int = 1_000_000
    oracle_tol: float = 1e-10
    workers: int = 1

    def __post_init__(self):
        if self.algo not in ALGOS:
            raise ConfigError(f"algo must be one of {ALGOS}")
        if self.n_steps < 0:
            raise ConfigError("n_steps must be nonnegative")
        if self.replications < 1:
            raise ConfigError("replications must be >= 1")
        if not self.cousin_orders or any(n < 2 for n in self.cousin_orders):
            raise ConfigError("cousin orders must be >= 2")
        if self.cmemq_order < 2:
            raise ConfigError("cmemq_order must be >= 2")
        if not 0.0 < self.hq_beta_ratio <= 1.0:
            raise ConfigError("hq_beta_ratio must lie in (0, 1]")
        if self.eps_w is not None and self.eps_w <= 0:
            raise ConfigError("eps_w must be positive when given")
        if self.metric_stride is not None and self.metric_stride < 1:
            raise ConfigError("metric_stride must be >= 1")
        if self.workers < 1:
            raise ConfigError("workers must be >= 1")

    @property
    def effective_stride(self) -> int:
        if self.metric_stride is not None:
            return self.metric_stride
        return 10 if self.n_steps >= 10_000 else 1

    def joint_entries(self) -> int:
        s = self.network.n_states ** self.network.n_tx
        a = self.network.n_bs ** self.network.n_tx
        return s * a

    def oracle_fits(self) -> bool:
        return self.oracle_enabled and self.joint_entries() <= self.oracle_max_entries

    def order_for_agent(self, i: int) -> int:
        return self.cousin_orders[i % len(self.cousin_orders)]

    def resolved_items(self) -> dict:
        """Flat {section.key: value} view of every resolved parameter."""
        out = {}
        for f in fields(NetworkConfig):
            out[f"network.{f.name}"] = getattr(self.network, f.name)
        for f in fields(LearningSchedule):
            out[f"schedule.{f.name}"] = getattr(self.schedule, f.name)
        for f in fields(ExperimentConfig):
            if f.name in ("network", "schedule"):
                continue
            out[f"run.{f.name}"] = getattr(self, f.name)
        out["run.effective_stride"] = self.effective_stride
        i_min, i_max, i_thr = self.network.arss_bounds()
        out["network.resolved_i_min_dbm"] = i_min
        out["network.resolved_i_max_dbm"] = i_max
        out["network.resolved_i_thr_dbm"] = i_thr
        return out


def _parse_value(raw: str, example):
    raw = raw.strip()
    if isinstance(example, bool):
        if raw.lower() in ("1", "true", "yes", "on"):
            return True
        if raw.lower() in ("0", "false", "no", "off"):
            return False
        raise ConfigError(f"expected a boolean, got {raw!r}")
    if isinstance(example, int) and not isinstance(example, bool):
        return int(raw)
    if isinstance(example, float):
        if raw.lower() in ("inf", "+inf"):
            return math.inf
        if raw.lower() == "-inf":
            return -math.inf
        return float(raw)
    if isinstance(example, tuple):
        if not raw:
            return ()
        parts = [p.strip() for p in raw.replace(";", ",").split(",") if p.strip()]
        inner = example[0] if example else 1.0
        if isinstance(inner, tuple):
            # pairs like "1 1, 3 3"
            return tuple(tuple(float(x) for x in p.split()) for p in parts)
        return tuple(type(inner)(float(p)) if isinstance(inner, int) else float(p)
                     for p in parts)
    return raw


_OPTIONAL_FLOATS = {"i_min_dbm", "i_max_dbm", "i_thr_dbm", "fairness_sigma_db",
                    "eps_w", "metric_stride"}
_OPTIONAL_TUPLES = {"tx_radius_range", "bs_radius_range", "bs_radius_override",
                    "bs_positions_override", "tx_positions_override"}


def _section_kwargs(parser, section, cls_defaults):
    kwargs = {}
    if section not in parser:
        return kwargs
    known = {f.name: f for f in fields(cls_defaults)}
    for key, raw in parser[section].items():
        if key not in known:
            raise ConfigError(f"unknown key [{section}] {key}")
        default = getattr(cls_defaults, key)
        if key in _OPTIONAL_TUPLES:
            if key.endswith("positions_override"):
                kwargs[key] = _parse_value(raw, ((0.0, 0.0),))
            else:
                kwargs[key] = _parse_value(raw, (0.0,))
        elif key == "metric_stride":
            kwargs[key] = int(raw)
        elif default is None and key in _OPTIONAL_FLOATS:
            kwargs[key] = _parse_value(raw, 0.0)
        elif key == "cousin_orders":
            kwargs[key] = _parse_value(raw, (2,))
        elif key == "cost_weights":
            kwargs[key] = _parse_value(raw, (0.0,))
        else:
            kwargs[key] = _parse_value(raw, default)
    return kwargs


def load_config(path: str | None = None, overrides: dict | None = None) -> ExperimentConfig:
    """Build an ExperimentConfig from an INI file plus programmatic overrides.

    Sections: [network], [schedule], [run]. Every key defaults to the
    reference parameterization, so an empty file is valid.
    """
    parser = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
    if path is not None:
        with open(path) as fh:
            parser.read_file(fh)
    net_kwargs = _section_kwargs(parser, "network", NetworkConfig())
    sched_kwargs = _section_kwargs(parser, "schedule", LearningSchedule())
    run_defaults = ExperimentConfig()
    run_kwargs = {}
    if "run" in parser:
        known = {f.name for f in fields(ExperimentConfig)} - {"network", "schedule"}
        for key, raw in parser["run"].items():
            if key not in known:
                raise ConfigError(f"unknown key [run] {key}")
            default = getattr(run_defaults, key)
            if key == "eps_w":
                run_kwargs[key] = _parse_value(raw, 0.0)
            elif key == "metric_stride":
                run_kwargs[key] = int(raw)
            elif key == "cousin_orders":
                run_kwargs[key] = _parse_value(raw, (2,))
            else:
                run_kwargs[key] = _parse_value(raw, default)
    try:
        cfg = ExperimentConfig(network=NetworkConfig(**net_kwargs),
                               schedule=LearningSchedule(**sched_kwargs),
                               **run_kwargs)
    except (ValueError, TypeError) as exc:
        raise ConfigError(str(exc)) from exc
    if overrides:
        cfg = apply_overrides(cfg, overrides)
    return cfg


def apply_overrides(cfg: ExperimentConfig, overrides: dict) -> ExperimentConfig:
    """Replace top-level run fields (seed, algo, n_steps, replications, ...)."""
    valid = {f.name for f in fields(ExperimentConfig)}
    bad = set(overrides) - valid
    if bad:
        raise ConfigError(f"unknown override(s): {sorted(bad)}")
    try:
        return replace(cfg, **overrides)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


def validate_config(cfg: ExperimentConfig) -> tuple:
    """(errors, notes) for the CLI's validate command.

    Construction already enforces the hard invariants; this adds cross-field
    diagnostics. Errors make validation fail, notes are informational.
    """
    errors = []
    notes = []
    if cfg.algo == "cmemq" and cfg.joint_entries() > 50_000_000:
        errors.append("run: joint space too large for the centralized baseline")
    if cfg.oracle_enabled and not cfg.oracle_fits():
        notes.append(
            f"joint space {cfg.joint_entries()} exceeds the oracle cap "
            f"{cfg.oracle_max_entries}; oracle metrics will be absent")
    i_thr = cfg.network.arss_bounds()[2]
    if not math.isfinite(i_thr):
        notes.append("infinite i_thr: protocol-reduction mode "
                     f"({'never' if i_thr > 0 else 'always'} coordinated)")
    return errors, notes

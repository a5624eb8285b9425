"""JSON run configuration.

Speeds are given in mph, lengths in miles, densities in veh/mi and times in
seconds.  The fields ``xi``, ``k``, ``k1_0``, ``k1_0_frac``, ``T`` and
``delta`` may be arrays; the run then sweeps their Cartesian product in the
order listed.
"""

from __future__ import annotations

import itertools
import json
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Any, Dict, List, Optional

from .model import InvariantError, Scenario, SignalTiming, TriangularFD, TurningPolicy

SWEEP_KEYS = ("xi", "k", "k1_0", "k1_0_frac", "T", "delta")
ENGINES = ("lqm", "ctm")


class ConfigError(ValueError):
    """Configuration could not be parsed or failed validation."""


@dataclass
class RunConfig:
    L: float = 0.25
    v_f: float = 30.0
    w: Optional[float] = None
    k_c: Optional[float] = None
    k_j: float = 150.0
    T: Any = 60.0
    delta: Any = 2.0
    pi1: Optional[float] = None
    pi2: Optional[float] = None
    xi: Any = 0.7
    xi1: Optional[float] = None
    xi2: Optional[float] = None
    k: Any = 20.0
    k1_0: Any = None
    k1_0_frac: Any = None
    engine: str = "lqm"
    n_cycles: int = 10
    dt: float = 0.25
    sigma: float = 0.01
    max_cycles: int = 10_000
    k_grid: Optional[List[float]] = None
    dk: Optional[float] = None
    tol: Optional[float] = None
    n_max: int = 100
    phi_k: Optional[List[float]] = None
    snapshot_every: Optional[int] = None
    ctm_cycles: int = 40
    ctm_splits: int = 9
    parallel: int = 0
    out: str = "."
    scenarios: List[Scenario] = field(default_factory=list, repr=False)

    def fd(self) -> TriangularFD:
        if self.w is not None and self.k_c is not None:
            raise ConfigError("give either w or k_c, not both")
        if self.k_c is not None:
            if not 0.0 < self.k_c < self.k_j:
                raise ConfigError(f"k_c={self.k_c!r} must lie in (0, k_j)")
            w = self.v_f * self.k_c / (self.k_j - self.k_c)
        else:
            w = 7.5 * self.v_f / 30.0 if self.w is None else self.w
        return TriangularFD.from_mph(self.v_f, w, self.k_j)

    def densities(self) -> List[float]:
        """The k set for sweep-style commands."""
        if self.k_grid is not None:
            return [float(x) for x in self.k_grid]
        return [float(x) for x in _as_list(self.k)]


def _as_list(v) -> list:
    return list(v) if isinstance(v, (list, tuple)) else [v]


def _build_scenarios(cfg: RunConfig) -> List[Scenario]:
    fd = cfg.fd()
    if cfg.k1_0 is not None and cfg.k1_0_frac is not None:
        raise ConfigError("give either k1_0 or k1_0_frac, not both")
    if (cfg.xi1 is None) != (cfg.xi2 is None):
        raise ConfigError("xi1 and xi2 must be given together")
    xis = [None] if cfg.xi1 is not None else _as_list(cfg.xi)
    starts = _as_list(cfg.k1_0) if cfg.k1_0_frac is None else [f * fd.k_j for f in _as_list(cfg.k1_0_frac)]
    out = []
    for xi, k, k1_0, T, delta in itertools.product(
        xis, _as_list(cfg.k), starts, _as_list(cfg.T), _as_list(cfg.delta)
    ):
        turning = TurningPolicy(cfg.xi1, cfg.xi2) if xi is None else TurningPolicy.symmetric(float(xi))
        timing = SignalTiming(float(T), float(delta), cfg.pi1, cfg.pi2)
        k = float(k)
        out.append(
            Scenario(fd, cfg.L, timing, turning, k, k if k1_0 is None else float(k1_0))
        )
    return out


def config_from_dict(data: Dict[str, Any]) -> RunConfig:
    if not isinstance(data, dict):
        raise ConfigError("config must be a JSON object")
    known = {f.name for f in fields(RunConfig)} - {"scenarios"}
    unknown = sorted(set(data) - known)
    if unknown:
        raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
    for key, v in data.items():
        if isinstance(v, list) and key not in SWEEP_KEYS + ("k_grid", "phi_k"):
            raise ConfigError(f"{key} cannot be an array")
    cfg = RunConfig(**data)
    if cfg.engine not in ENGINES:
        raise ConfigError(f"engine must be one of {ENGINES}; got {cfg.engine!r}")
    for name in ("n_cycles", "max_cycles", "n_max", "ctm_cycles", "ctm_splits"):
        if getattr(cfg, name) < 1:
            raise ConfigError(f"{name} must be at least 1")
    if not 0.0 < cfg.sigma < 1.0:
        raise ConfigError(f"sigma={cfg.sigma!r} outside (0, 1)")
    try:
        cfg.scenarios = _build_scenarios(cfg)
    except InvariantError as e:
        raise ConfigError(f"invalid {e}") from e
    except ConfigError:
        raise
    except (TypeError, ValueError) as e:
        raise ConfigError(str(e)) from e
    return cfg


def read_config_file(path: str) -> Dict[str, Any]:
    """Parse a JSON config file; parse errors carry ``path:line:col``."""
    p = Path(path)
    try:
        text = p.read_text()
    except OSError as e:
        raise ConfigError(f"cannot read config {path}: {e.strerror}") from e
    try:
        return json.loads(text)
    except json.JSONDecodeError as e:
        raise ConfigError(f"{path}:{e.lineno}:{e.colno}: {e.msg}") from e


def load_config(path: Optional[str], overrides: Optional[Dict[str, Any]] = None) -> RunConfig:
    data: Dict[str, Any] = {} if path is None else read_config_file(path)
    if overrides:
        if not isinstance(data, dict):
            raise ConfigError("config must be a JSON object")
        data = {**data, **overrides}
    return config_from_dict(data)

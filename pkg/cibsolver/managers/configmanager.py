import json
import logging
from dataclasses import asdict, dataclass, fields, replace
from pathlib import Path
from typing import Any, Dict, List, Optional

logger = logging.getLogger("ConfigManager")

INTERPOLATION_MODES = ("multilinear", "nearest")
BELIEF_MODES = ("full", "aliased")


class ConfigError(ValueError):
    """Raised for unknown or ill-typed configuration keys."""
    def __init__(self, keys: List[str], detail: str = "") -> None:
        super().__init__(f"Invalid configuration keys: {', '.join(keys)}" + (f" ({detail})" if detail else ""))
        self.keys = keys


@dataclass(frozen=True)
class SolverConfig:
    bne_tol: float = 1e-6
    consistency_tol: float = 1e-9
    max_iters: int = 10_000
    restarts: int = 16
    damping: float = 0.5
    symmetric_mode: bool = False
    grid_fallback: bool = True
    interpolation: str = "multilinear"
    belief_mode: str = "full"
    off_path_aliasing: bool = False
    grid_budget: int = 2_000_000
    seed: int = 0
    workers: int = 1
    enumerate: bool = False
    scan_resolution: float = 1e-3
    scan_points: int = 4096
    max_induced_strategies: int = 64
    stall_iters: int = 200

    def validate(self) -> "SolverConfig":
        bad = []
        if not 0.0 < self.damping <= 1.0:
            bad.append("damping")
        if self.bne_tol <= 0 or self.consistency_tol <= 0:
            bad.append("bne_tol/consistency_tol")
        if self.interpolation not in INTERPOLATION_MODES:
            bad.append("interpolation")
        if self.belief_mode not in BELIEF_MODES:
            bad.append("belief_mode")
        if self.max_iters < 1 or self.restarts < 0 or self.workers < 1:
            bad.append("max_iters/restarts/workers")
        if bad:
            raise ConfigError(bad, "out of range")
        return self


@dataclass(frozen=True)
class VerifyConfig:
    eps_total: float = 1e-4
    bne_tol: float = 1e-6
    consistency_tol: float = 1e-9
    marginal_tol: float = 1e-10
    simulation_samples: int = 100_000
    simulation_cells: int = 4
    trajectory_budget: int = 1_000_000
    history_samples: int = 2000
    seed: int = 0
    workers: int = 1


def _coerce(cls, data: Dict[str, Any]):
    known = {f.name: f for f in fields(cls)}
    unknown = [key for key in data if key not in known]
    if unknown:
        raise ConfigError(unknown, "unknown")
    values = {}
    for key, value in data.items():
        default = getattr(cls(), key)
        try:
            if isinstance(default, bool):
                if not isinstance(value, bool):
                    raise TypeError
                values[key] = value
            else:
                values[key] = type(default)(value)
        except (TypeError, ValueError):
            raise ConfigError([key], f"expected {type(default).__name__}")
    return cls(**values)


class ConfigManager:
    """
    Loads solver and verifier settings from a JSON file.

    The file holds an optional "solver" and an optional "verify" object; keys
    missing from the file keep their defaults, unknown keys are rejected.
    """

    def __init__(self, config_path: Optional[Any] = None) -> None:
        self.config_path = Path(config_path) if config_path is not None else None
        self.solver = SolverConfig()
        self.verify = VerifyConfig()

    def load(self) -> "ConfigManager":
        if self.config_path is None:
            return self
        if not self.config_path.exists():
            raise ConfigError([str(self.config_path)], "file not found")
        with self.config_path.open("r", encoding="utf-8") as f:
            try:
                data = json.load(f)
            except json.JSONDecodeError as e:
                raise ConfigError([str(self.config_path)], f"line {e.lineno}: {e.msg}")
        unknown = [key for key in data if key not in ("solver", "verify")]
        if unknown:
            raise ConfigError(unknown, "unknown section")
        self.solver = _coerce(SolverConfig, data.get("solver", {})).validate()
        self.verify = _coerce(VerifyConfig, data.get("verify", {}))
        logger.info(f"Loaded configuration from {self.config_path}")
        return self

    def override(self, **solver_values: Any) -> SolverConfig:
        """Apply non-None CLI overrides on top of the loaded solver config."""
        values = {k: v for k, v in solver_values.items() if v is not None}
        self.solver = replace(self.solver, **values).validate()
        return self.solver

    def as_dict(self) -> Dict[str, Any]:
        return {"solver": asdict(self.solver), "verify": asdict(self.verify)}

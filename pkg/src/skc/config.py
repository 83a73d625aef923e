"""Run configuration shared by the search engines and the CLI."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Optional

from .bounds import PRECONDITIONERS, CGConfig
from .exceptions import ConfigError
from .kernels import BASE_KINDS
from .optimize import OptimizerConfig, PriorConfig

MODES = ("cks", "skc", "skc-lb")


@dataclass
class RunConfig:
    mode: str = "skc"
    depth: int = 3
    m: int = 40
    buffer: int = 5
    restarts: int = 10
    seed: int = 0
    base_kinds: tuple = BASE_KINDS
    precond: str = "pic"
    cg_tol: float = 1e-10
    cg_max_iter: Optional[int] = None
    block_size: Optional[int] = None
    count_noise: bool = True
    early_stop: bool = True
    max_exact_n: int = 3000
    allow_large_exact: bool = False
    audit_exact: bool = False
    record_timing: bool = False
    workers: int = 1
    priors: PriorConfig = field(default_factory=PriorConfig)
    optimizer: OptimizerConfig = field(default_factory=OptimizerConfig)

    def __post_init__(self):
        if isinstance(self.priors, dict):
            self.priors = PriorConfig.from_dict(self.priors)
        if isinstance(self.optimizer, dict):
            self.optimizer = OptimizerConfig(**self.optimizer)
        self.base_kinds = tuple(self.base_kinds)
        self.validate()

    def validate(self):
        if self.mode not in MODES:
            raise ConfigError(f"mode must be one of {MODES}, got {self.mode!r}")
        for name in ("depth", "m", "buffer", "restarts", "max_exact_n", "workers"):
            value = getattr(self, name)
            if not isinstance(value, int) or value < (0 if name == "depth" else 1):
                raise ConfigError(f"{name} must be a positive integer, got {value!r}")
        if self.precond not in PRECONDITIONERS:
            raise ConfigError(f"precond must be one of {PRECONDITIONERS}, got {self.precond!r}")
        bad = [k for k in self.base_kinds if k not in BASE_KINDS]
        if bad or not self.base_kinds:
            raise ConfigError(f"base_kinds must be a non-empty subset of {BASE_KINDS}")
        if not self.cg_tol > 0:
            raise ConfigError("cg_tol must be positive")
        if self.cg_max_iter is not None and self.cg_max_iter < 1:
            raise ConfigError("cg_max_iter must be at least 1")

    @property
    def cg(self):
        return CGConfig(self.precond, self.cg_max_iter, self.cg_tol, self.block_size)

    def to_dict(self):
        d = asdict(self)
        d["base_kinds"] = list(self.base_kinds)
        return d

    @classmethod
    def from_dict(cls, d):
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown configuration keys: {sorted(unknown)}")
        try:
            return cls(**d)
        except (TypeError, ValueError) as exc:
            raise ConfigError(str(exc)) from exc


def load_config_file(path):
    """Read a JSON or YAML mapping of RunConfig fields (plus CLI-only keys)."""
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config file {path}: {exc}") from exc
    try:
        if path.suffix.lower() in (".yaml", ".yml"):
            import yaml

            data = yaml.safe_load(text) or {}
        else:
            data = json.loads(text)
    except Exception as exc:
        raise ConfigError(f"cannot parse config file {path}: {exc}") from exc
    if not isinstance(data, dict):
        raise ConfigError("config file must contain a mapping")
    return data

"""Experiment configuration.

Config files are flat ``block.key = value`` lines; ``#`` starts a comment.
Every key has a default, so an empty file is a valid config. Lists are
comma-separated. Example::

    # desk training run
    train.T = 200
    transfer.N_grid = 1, 2, 4, 8, 16, 32, 64
"""

from __future__ import annotations

import dataclasses
import math
import typing
from dataclasses import dataclass, field
from pathlib import Path


class ConfigError(ValueError):
    def __init__(self, message: str, line: int | None = None, key: str | None = None):
        where = []
        if line is not None:
            where.append(f"line {line}")
        if key is not None:
            where.append(f"field {key!r}")
        super().__init__(f"{', '.join(where)}: {message}" if where else message)
        self.line = line
        self.key = key


@dataclass
class DistributionBlock:
    d: int = 128
    C: int = 6
    L: int = 16
    q: float = 0.3
    sigma2: float = 1.0 / 128
    threshold_frac: float = 0.9
    partition: str = "localized"  # localized | random | path to a label file
    grid_rows: int = 8
    grid_cols: int = 12
    block_rows: int = 2
    block_cols: int = 3

    @property
    def D(self) -> int:
        return self.C * self.L


@dataclass
class ModelBlock:
    p: int = 3
    nu: float = 0.01
    tau: float = 2e-4
    sigma_A: float = 6e-4


@dataclass
class TrainBlock:
    eta: float = 5e-5
    T: int = 200
    omega: float = 1e-6
    N: int = 8192
    eval_every: int = 25
    eval_M: int = 4000
    checkpoint_every: int = 0  # 0 disables checkpoints


@dataclass
class EvalBlock:
    M: int = 20000
    baseline_M: int = 100000
    spurious_beta: float = 0.0  # 0 means 5 * tau


@dataclass
class TransferBlock:
    N_grid: list = field(default_factory=lambda: [1, 2, 4, 8, 16, 32, 64])
    seeds: int = 10
    target: str = "orthogonal"  # orthogonal | fresh
    budgets: list = field(default_factory=lambda: [10, 25, 50, 100, 150, 300])
    M_test: int = 2000


@dataclass
class IdealizedBlock:
    eta: float = 0.1
    nu: float = 1e-4
    beta: float = 6.3
    c_alpha: float = 1e-6
    c_gamma: float = 1.0
    c_rho: float = 1.0
    lambda0: float = 0.0  # 0 means D ** 0.01
    polylog: float = math.log(128)
    T: int = 5000


@dataclass
class GradcheckBlock:
    instances: int = 20
    h: float = 1e-5
    tol: float = 1e-6


@dataclass
class RunBlock:
    seed: int = 0
    out: str = "out"
    data_format: str = "txt"  # txt (plain text) | npz (compressed binary)


@dataclass
class ExperimentConfig:
    distribution: DistributionBlock = field(default_factory=DistributionBlock)
    model: ModelBlock = field(default_factory=ModelBlock)
    train: TrainBlock = field(default_factory=TrainBlock)
    eval: EvalBlock = field(default_factory=EvalBlock)
    transfer: TransferBlock = field(default_factory=TransferBlock)
    idealized: IdealizedBlock = field(default_factory=IdealizedBlock)
    gradcheck: GradcheckBlock = field(default_factory=GradcheckBlock)
    run: RunBlock = field(default_factory=RunBlock)

    def set(self, key: str, raw: str, line: int | None = None) -> None:
        block_name, _, name = key.partition(".")
        block = getattr(self, block_name, None) if name else None
        if block is None or not dataclasses.is_dataclass(block):
            raise ConfigError("unknown block", line, key)
        types = typing.get_type_hints(type(block))
        if name not in types:
            raise ConfigError("unknown key", line, key)
        try:
            value = _coerce(raw, types[name], getattr(block, name))
        except ValueError as exc:
            raise ConfigError(str(exc), line, key) from None
        setattr(block, name, value)

    def resolved_lines(self) -> list[str]:
        out = []
        for blk in dataclasses.fields(self):
            block = getattr(self, blk.name)
            for f in dataclasses.fields(block):
                out.append(f"{blk.name}.{f.name} = {_render(getattr(block, f.name))}")
        return out

    def validate(self) -> None:
        dist, m, tr = self.distribution, self.model, self.train
        checks = [
            ("distribution.d", dist.d >= 1, "must be positive"),
            ("distribution.C", dist.C >= 1, "must be positive"),
            ("distribution.L", dist.L >= 1, "must be positive"),
            ("distribution.q", 0 <= dist.q <= 1, "must lie in [0, 1]"),
            ("distribution.sigma2", dist.sigma2 >= 0, "must be non-negative"),
            ("distribution.threshold_frac", 0 < dist.threshold_frac < 1, "must lie in (0, 1)"),
            ("model.p", m.p >= 3 and m.p % 2 == 1, "must be an odd integer >= 3"),
            ("model.nu", m.nu >= 0, "must be non-negative"),
            ("model.tau", m.tau > 0, "must be positive"),
            ("train.eta", tr.eta > 0, "must be positive"),
            ("train.T", tr.T >= 0, "must be non-negative"),
            ("train.omega", tr.omega >= 0, "must be non-negative"),
            ("train.N", tr.N >= 1, "must be positive"),
            ("train.eval_every", tr.eval_every >= 1, "must be positive"),
            ("transfer.seeds", self.transfer.seeds >= 1, "must be positive"),
            ("transfer.target", self.transfer.target in ("orthogonal", "fresh"), "must be orthogonal or fresh"),
            ("gradcheck.h", self.gradcheck.h > 0, "must be positive"),
            ("run.data_format", self.run.data_format in ("txt", "npz"), "must be txt or npz"),
        ]
        if dist.partition == "localized":
            checks.append(("distribution.grid_rows", dist.grid_rows * dist.grid_cols == dist.D,
                           f"grid_rows*grid_cols must equal C*L = {dist.D}"))
            checks.append(("distribution.block_rows", dist.block_rows * dist.block_cols == dist.C,
                           f"block_rows*block_cols must equal C = {dist.C}"))
        for key, ok, msg in checks:
            if not ok:
                raise ConfigError(msg, key=key)


def _coerce(raw: str, typ, default):
    raw = raw.strip()
    if typ is list or isinstance(default, list):
        items = [s.strip() for s in raw.split(",") if s.strip()]
        return [int(s) for s in items]
    if typ is bool:
        if raw.lower() in ("true", "1", "yes"):
            return True
        if raw.lower() in ("false", "0", "no"):
            return False
        raise ValueError(f"expected a boolean, got {raw!r}")
    if typ is int:
        try:
            return int(raw)
        except ValueError:
            raise ValueError(f"expected an integer, got {raw!r}") from None
    if typ is float:
        try:
            return float(raw)
        except ValueError:
            raise ValueError(f"expected a number, got {raw!r}") from None
    return raw


def _render(value) -> str:
    if isinstance(value, list):
        return ", ".join(str(v) for v in value)
    if isinstance(value, float):
        return format(value, ".17g")
    return str(value)


def parse_config(text: str, overrides: list[str] | None = None) -> ExperimentConfig:
    cfg = ExperimentConfig()
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        key, eq, value = line.partition("=")
        if not eq:
            raise ConfigError("expected 'block.key = value'", lineno)
        cfg.set(key.strip(), value, lineno)
    for item in overrides or []:
        key, eq, value = item.partition("=")
        if not eq:
            raise ConfigError(f"override {item!r} is not key=value")
        cfg.set(key.strip(), value)
    cfg.validate()
    return cfg


def load_config(path: str | None, overrides: list[str] | None = None) -> ExperimentConfig:
    text = Path(path).read_text() if path else ""
    return parse_config(text, overrides)

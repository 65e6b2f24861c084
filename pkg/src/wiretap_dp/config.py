"""Experiment configuration: flat ``key = value`` text with strict keys.

Blank lines and lines starting with ``#`` are ignored. Grids are
comma-separated. Every key has a default, so an empty file is valid.
"""

from __future__ import annotations

from dataclasses import dataclass, field, fields, replace
from pathlib import Path

from .shield import ShieldConfig
from .wiretap import CODE_PRESETS

THREATS = ("basic", "stronger")
SCHEMES = ("proposed", "direct", "traditional_dp")


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class ExperimentConfig:
    seed: int = 0
    # toy scale
    K: int = 8
    D: int = 16
    M: int = 192
    shared_count: int = 2
    generator_seed: int = 0
    # data
    train_identities: int = 400
    test_identities: int = 100
    per_identity: int = 5
    shared_jitter: float = 0.2
    # grids
    epsilons: tuple[float, ...] = (1.0, 5.0, 10.0, 30.0, 100.0, 200.0, 300.0, 500.0, 800.0, 2000.0)
    snrs_db: tuple[float, ...] = (0.0, 5.0, 10.0, 15.0, 20.0)
    train_snr_db: float = 20.0
    P: float = 1.0
    # training
    lam: float = 1.0
    lr: float = 3e-3
    d_lr: float = 3e-4
    eve_lr: float = 3e-3
    optimizer: str = "adam"
    momentum: float = 0.9
    T_0: int = 10
    T_mult: int = 2
    epochs: int = 60
    eve_epochs: int = 30
    batch_size: int = 64
    init: str = "uniform"
    aux_noise: int = 0
    d_hidden: int = 0
    # inversion
    invert_iters: int = 200
    invert_lr: float = 40.0
    # threat model and partitions
    threat: str = "basic"
    private_preset: str = ""
    eve_guess_preset: str = "stronger_eve_guess"
    # baselines and metrics
    schemes: tuple[str, ...] = SCHEMES
    tau_rate: float = 0.05
    out_dir: str = "out"
    data_dir: str = ""

    def __post_init__(self):
        if self.threat not in THREATS:
            raise ConfigError(f"threat must be one of {THREATS}, got {self.threat!r}")
        bad = [s for s in self.schemes if s not in SCHEMES]
        if bad or not self.schemes:
            raise ConfigError(f"unknown schemes {bad}; choose from {SCHEMES}")
        if not self.epsilons or any(e <= 0 for e in self.epsilons):
            raise ConfigError("epsilons must be a non-empty list of positive values")
        if not self.snrs_db:
            raise ConfigError("snrs_db must not be empty")
        for name in ("private_preset", "eve_guess_preset"):
            value = getattr(self, name)
            if value and value not in CODE_PRESETS:
                raise ConfigError(f"{name} must be one of {sorted(CODE_PRESETS)}, got {value!r}")
        if self.optimizer not in ("sgd", "adam"):
            raise ConfigError(f"optimizer must be sgd or adam, got {self.optimizer!r}")
        if self.init not in ("uniform", "identity"):
            raise ConfigError(f"init must be uniform or identity, got {self.init!r}")
        for name in ("epochs", "batch_size", "invert_iters", "per_identity", "train_identities", "test_identities"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be at least 1")

    @property
    def partition_preset(self) -> str:
        return self.private_preset or ("stronger" if self.threat == "stronger" else "basic")

    @property
    def mid_epsilon(self) -> float:
        return self.epsilons[(len(self.epsilons) - 1) // 2]

    def data_path(self) -> Path:
        return Path(self.data_dir or self.out_dir)

    def shield(self) -> ShieldConfig:
        return ShieldConfig(
            lam=self.lam,
            batch_size=self.batch_size,
            epochs=self.epochs,
            eve_epochs=self.eve_epochs,
            lr=self.lr,
            d_lr=self.d_lr,
            eve_lr=self.eve_lr,
            optimizer=self.optimizer,
            momentum=self.momentum,
            T_0=self.T_0,
            T_mult=self.T_mult,
            snr_db=self.train_snr_db,
            P=self.P,
            aux_noise=self.aux_noise,
            d_hidden=self.d_hidden,
            init=self.init,
        )

    def with_overrides(self, **kw) -> "ExperimentConfig":
        return replace(self, **kw)


_FIELDS = {f.name: f for f in fields(ExperimentConfig)}


def _convert(name: str, raw: str):
    default = _FIELDS[name].default
    try:
        if isinstance(default, tuple):
            items = [v.strip() for v in raw.split(",") if v.strip()]
            return tuple(items) if name == "schemes" else tuple(float(v) for v in items)
        if isinstance(default, bool):
            return raw.lower() in ("1", "true", "yes")
        if isinstance(default, int):
            return int(raw)
        if isinstance(default, float):
            return float(raw)
    except ValueError as exc:
        raise ConfigError(f"bad value for {name}: {raw!r}") from exc
    return raw


def parse_config(text: str) -> ExperimentConfig:
    values = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected key = value")
        key, _, raw = (p.strip() for p in line.partition("="))
        if key not in _FIELDS:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        if key in values:
            raise ConfigError(f"line {lineno}: duplicate key {key!r}")
        values[key] = _convert(key, raw)
    return ExperimentConfig(**values)


def _fmt(v) -> str:
    if isinstance(v, tuple):
        return ", ".join(_fmt(x) for x in v)
    if isinstance(v, float):
        return repr(v)
    return str(v)


def emit_config(cfg: ExperimentConfig) -> str:
    return "".join(f"{f.name} = {_fmt(getattr(cfg, f.name))}\n" for f in fields(cfg))


def load_config(path: str | Path | None) -> ExperimentConfig:
    if path is None:
        return ExperimentConfig()
    return parse_config(Path(path).read_text())

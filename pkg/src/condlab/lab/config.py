"""INI experiment configuration with named profiles.

A config file overrides the selected profile key by key; unknown sections or
keys and unparsable values raise ``ConfigError`` carrying the line number.
"""
from __future__ import annotations

import configparser
import os
import re
from dataclasses import dataclass, field, replace

from ..errors import InvalidArgument
from ..grid import Grid2D, make_grid
from ..mixture import ParamRanges
from ..nop.model import ModelConfig
from ..nop.train import TrainConfig

PROFILES = ("desk", "paper")
DATA_DIR_ENV = "CONDLAB_DATA_DIR"


class ConfigError(InvalidArgument):
    def __init__(self, message, line=None, path=None):
        where = f"{path or '<config>'}:{line}: " if line is not None else ""
        super().__init__(where + message)
        self.line = line


@dataclass(frozen=True)
class DataConfig:
    family: str = "gmm"
    K: int = 1
    n_train: int = 2000
    n_val: int = 200
    n_test: int = 200
    nx: int = 32
    ny: int = 32
    x_min: float = -6.0
    x_max: float = 6.0
    y_min: float = -6.0
    y_max: float = 6.0
    mean_range: tuple[float, float] = (-3.0, 3.0)
    sigma_range: tuple[float, float] = (0.3, 1.2)
    corr_range: tuple[float, float] = (-0.7, 0.7)
    seed_train: int = 0
    seed_val: int = 1
    seed_test: int = 2
    kde_records: int = 200
    kde_samples: int = 2000
    kde_seed: int = 2
    out_dir: str = ""

    def grid(self) -> Grid2D:
        return make_grid(self.x_min, self.x_max, self.nx, self.y_min, self.y_max, self.ny)

    def ranges(self) -> ParamRanges:
        return ParamRanges(self.mean_range, self.sigma_range, self.corr_range)

    def root(self) -> str:
        return self.out_dir or os.environ.get(DATA_DIR_ENV) or "data"


@dataclass(frozen=True)
class EvalConfig:
    checkpoint: str = "model.cnop"
    history: str = "history.csv"
    report: str = "eval.csv"
    baseline_report: str = "baseline_kde.csv"
    delta_floor: float = 1e-6


@dataclass(frozen=True)
class AuditConfig:
    trials: int = 1000
    seed: int = 0
    tol: float = 1e-9
    grid_n: int = 64
    holder_n: int = 24
    K: int = 3
    floor: float = 0.1
    delta: float = 1e-3
    y_bounds: tuple[float, float] = (-3.0, 3.0)
    alpha: float = 1.0
    R: float = 10.0
    M_values: tuple[float, ...] = (0.5, 1.0, 2.0, 4.0)


@dataclass(frozen=True)
class ExperimentConfig:
    profile: str = "desk"
    data: DataConfig = field(default_factory=DataConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)
    audit: AuditConfig = field(default_factory=AuditConfig)


def profile_config(name: str = "desk") -> ExperimentConfig:
    if name == "desk":
        return ExperimentConfig("desk", train=TrainConfig(batch_size=16, max_epochs=20))
    if name == "paper":
        return ExperimentConfig(
            "paper",
            data=DataConfig(n_train=50000, n_val=1000, n_test=1000, nx=64, ny=64, kde_records=1000),
            model=ModelConfig(width=128, modes=16, depth=4, lift_hidden=(256,), proj_hidden=(256,)),
            train=TrainConfig(batch_size=64, max_epochs=500),
        )
    raise ConfigError(f"unknown profile {name!r}; choose from {PROFILES}")


SECTIONS = {"data": DataConfig, "model": ModelConfig, "train": TrainConfig,
            "eval": EvalConfig, "audit": AuditConfig}


def _locate(text: str, section: str, key: str | None = None) -> int | None:
    """1-based line of ``[section]`` or of ``key`` inside it."""
    current = None
    for n, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        m = re.fullmatch(r"\[([^\]]+)\]", line)
        if m:
            current = m.group(1).strip()
            if key is None and current == section:
                return n
            continue
        if key is not None and current == section:
            m = re.match(r"([^=:]+)[=:]", line)
            if m and m.group(1).strip().lower() == key.lower():
                return n
    return None


def _coerce(default, text: str):
    text = text.strip()
    if isinstance(default, bool):
        low = text.lower()
        if low in ("1", "true", "yes", "on"):
            return True
        if low in ("0", "false", "no", "off"):
            return False
        raise ValueError(f"expected a boolean, got {text!r}")
    if isinstance(default, int):
        return int(text)
    if isinstance(default, float):
        return float(text)
    if isinstance(default, tuple):
        items = [t for t in re.split(r"[,\s]+", text) if t]
        kind = type(default[0]) if default else int
        return tuple(kind(t) for t in items)
    return text


def parse_config(text: str, profile: str | None = None, path: str | None = None) -> ExperimentConfig:
    cp = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=(";", "#"))
    cp.optionxform = str
    try:
        cp.read_string(text)
    except configparser.Error as exc:
        line = getattr(exc, "lineno", None)
        if line is None and getattr(exc, "errors", None):
            line = exc.errors[0][0]
        raise ConfigError(f"cannot parse config: {exc.message if hasattr(exc, 'message') else exc}",
                          line, path) from exc
    chosen = profile
    if chosen is None and cp.has_section("experiment"):
        chosen = cp["experiment"].get("profile")
    cfg = profile_config(chosen or "desk")
    parts = {}
    for section in cp.sections():
        if section == "experiment":
            for key in cp[section]:
                if key != "profile":
                    raise ConfigError(f"unknown key {key!r} in [experiment]",
                                      _locate(text, section, key), path)
            continue
        if section not in SECTIONS:
            raise ConfigError(f"unknown section [{section}]", _locate(text, section), path)
        base = getattr(cfg, section)
        updates = {}
        for key, raw in cp[section].items():
            if not hasattr(base, key):
                raise ConfigError(f"unknown key {key!r} in [{section}]", _locate(text, section, key), path)
            try:
                updates[key] = _coerce(getattr(base, key), raw)
            except ValueError as exc:
                raise ConfigError(f"bad value for {section}.{key}: {exc}",
                                  _locate(text, section, key), path) from exc
        try:
            parts[section] = replace(base, **updates)
        except InvalidArgument as exc:
            key = next(iter(updates), None)
            raise ConfigError(f"invalid [{section}] settings: {exc}",
                              _locate(text, section, key) if key else _locate(text, section), path) from exc
    cfg = replace(cfg, **parts)
    validate(cfg)
    return cfg


def validate(cfg: ExperimentConfig):
    d = cfg.data
    if d.family not in ("gmm", "kde"):
        raise ConfigError(f"data.family must be gmm or kde, got {d.family!r}")
    if d.K < 1 or min(d.n_train, d.n_val, d.n_test, d.kde_records) < 0 or d.kde_samples < 0:
        raise ConfigError("data counts must be nonnegative and K >= 1")
    d.grid()
    d.ranges()
    if cfg.model.in_channels != 1:
        raise ConfigError("experiments feed a single density channel; model.in_channels must be 1")


def load_config(path: str | None, profile: str | None = None) -> ExperimentConfig:
    if path is None:
        return profile_config(profile or "desk")
    with open(path, encoding="utf-8") as fh:
        return parse_config(fh.read(), profile, path)


def family_tag(cfg: DataConfig) -> str:
    if cfg.family == "kde":
        return "kde"
    return {1: "gmm_k1", 3: "gmm_k3"}.get(cfg.K, "gmm")

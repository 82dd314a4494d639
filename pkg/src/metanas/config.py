"""Configuration objects and the key-value (INI) config file reader."""

from __future__ import annotations

import configparser
import dataclasses
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path

import yaml


class ConfigError(ValueError):
    pass


class Mode(str, Enum):
    CHAIN = "chain"
    MULTI_BRANCH = "multibranch"


# Stand-ins for dataset hardness; higher means easier.
DIFFICULTY = {
    "omniglot": 0.9,
    "vgg_flower": 0.7,
    "aircraft": 0.6,
    "dtd": 0.4,
    "cu_birds": 0.3,
}

TRAIN_ENVS = ("omniglot", "vgg_flower", "dtd")
EVAL_ENVS = ("aircraft", "cu_birds")


@dataclass(frozen=True)
class NscSpace:
    """Layer types and hyperparameter sets an architecture may use."""

    conv_kernels: tuple[int, ...] = (1, 3, 5)
    pool_sizes: tuple[int, ...] = (2, 3)
    types: tuple[int, ...] = (0, 1, 2, 3, 5, 6, 7)

    @property
    def max_kernel(self) -> int:
        return max(self.conv_kernels + self.pool_sizes)


@dataclass(frozen=True)
class EnvironmentConfig:
    env_id: str = "omniglot"
    d: int = 10
    tau: int = 10
    mode: Mode = Mode.CHAIN
    sigma: float = 0.0
    k: int = 5
    input_shape: tuple[int, int, int] = (84, 84, 3)
    difficulty: float | None = None
    seed: int = 0
    filters: int = 32
    space: NscSpace = field(default_factory=NscSpace)

    def __post_init__(self):
        object.__setattr__(self, "mode", Mode(self.mode))
        object.__setattr__(self, "input_shape", tuple(int(v) for v in self.input_shape))
        if self.difficulty is None:
            if self.env_id not in DIFFICULTY:
                raise ConfigError(f"no difficulty known for env {self.env_id!r}; set it explicitly")
            object.__setattr__(self, "difficulty", DIFFICULTY[self.env_id])
        if self.d < 1:
            raise ConfigError("d must be >= 1")
        if self.tau < 1:
            raise ConfigError("tau must be >= 1")
        if not 0.0 <= self.sigma <= 1.0:
            raise ConfigError("sigma must lie in [0, 1]")
        if not 0.0 < self.difficulty <= 1.0:
            raise ConfigError("difficulty must lie in (0, 1]")
        if len(self.input_shape) != 3 or min(self.input_shape) < 1:
            raise ConfigError("input_shape must be three positive integers")

    def for_env(self, env_id: str, difficulty: float | None = None) -> "EnvironmentConfig":
        return dataclasses.replace(self, env_id=env_id, difficulty=difficulty)


@dataclass(frozen=True)
class A2cConfig:
    j: int | None = None  # None: 5 for chain, 10 for multi-branch
    gamma: float = 0.9
    eta: float = 0.01
    alpha: float = 0.001
    lstm_units: int = 128
    value_loss_weight: float = 0.5
    grad_clip: float = 0.5

    def __post_init__(self):
        if not 0.0 < self.gamma <= 1.0:
            raise ConfigError("gamma must lie in (0, 1]")
        if self.j is not None and self.j < 1:
            raise ConfigError("j must be >= 1")

    def horizon(self, mode: Mode) -> int:
        if self.j is not None:
            return self.j
        return 5 if Mode(mode) == Mode.CHAIN else 10


@dataclass(frozen=True)
class DqnConfig:
    batch_size: int = 20
    alpha: float = 0.0005
    gamma: float = 0.9
    eps_start: float = 1.0
    eps_end: float = 0.1
    target_sync_interval: int = 100
    hidden_units: int = 128
    # None means t_max // 2 of the stage being run
    buffer_size: int | None = None


AGENT_KINDS = ("meta_a2c", "dqn", "random")


@dataclass(frozen=True)
class TrialConfig:
    stages: tuple[tuple[str, int], ...] = (("omniglot", 800), ("vgg_flower", 700), ("dtd", 700))
    agent: str = "meta_a2c"
    transfer_policy: bool | None = None  # None: on for meta_a2c, off otherwise
    seed: int = 0
    out_dir: str | None = None
    cache_dir: str | None = None
    env: EnvironmentConfig = field(default_factory=EnvironmentConfig)
    a2c: A2cConfig = field(default_factory=A2cConfig)
    dqn: DqnConfig = field(default_factory=DqnConfig)

    def __post_init__(self):
        object.__setattr__(self, "stages", tuple((str(e), int(t)) for e, t in self.stages))
        if self.agent not in AGENT_KINDS:
            raise ConfigError(f"agent must be one of {AGENT_KINDS}, got {self.agent!r}")
        if not self.stages:
            raise ConfigError("at least one stage is required")
        for env_id, t_max in self.stages:
            if t_max < 1:
                raise ConfigError(f"t_max for {env_id} must be >= 1")
        if self.transfer_policy is None:
            object.__setattr__(self, "transfer_policy", self.agent == "meta_a2c")
        if self.transfer_policy and self.agent != "meta_a2c":
            raise ConfigError("transfer_policy is only valid for the meta_a2c agent")

    @property
    def mode(self) -> Mode:
        return self.env.mode


def _parse_bool(text: str) -> bool:
    low = text.strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ConfigError(f"not a boolean: {text!r}")


def _coerce(cls, section: configparser.SectionProxy, skip=()) -> dict:
    out = {}
    fields = {f.name: f for f in dataclasses.fields(cls)}
    for key, raw in section.items():
        if key in skip:
            continue
        if key not in fields:
            raise ConfigError(f"unknown key {key!r} in [{section.name}]")
        default = fields[key].default
        try:
            if key == "input_shape":
                out[key] = tuple(int(v) for v in raw.replace("x", ",").split(","))
            elif key == "mode":
                out[key] = Mode(raw.strip())
            elif key == "j":
                out[key] = int(raw)
            elif isinstance(default, bool) or key == "transfer_policy":
                out[key] = _parse_bool(raw)
            elif isinstance(default, int) and not isinstance(default, bool):
                out[key] = int(raw)
            elif isinstance(default, float):
                out[key] = float(raw)
            elif key in ("difficulty",):
                out[key] = float(raw)
            elif key in ("buffer_size",):
                out[key] = int(raw)
            else:
                out[key] = raw.strip()
        except ValueError as exc:
            raise ConfigError(f"[{section.name}] {key}: {exc}") from None
    return out


def parse_stages(text: str) -> tuple[tuple[str, int], ...]:
    """Parse ``"omniglot:800, vgg_flower:700"`` into stage tuples."""
    stages = []
    for chunk in text.split(","):
        chunk = chunk.strip()
        if not chunk:
            continue
        if ":" not in chunk:
            raise ConfigError(f"stage {chunk!r} must look like env_id:t_max")
        env_id, t_max = chunk.split(":", 1)
        try:
            stages.append((env_id.strip(), int(t_max)))
        except ValueError:
            raise ConfigError(f"bad t_max in stage {chunk!r}") from None
    return tuple(stages)


def load_config(path: str | Path) -> TrialConfig:
    """Read a trial configuration from an INI file.

    Sections are ``[trial]``, ``[environment]``, ``[a2c]`` and ``[dqn]``;
    every key is optional and falls back to the dataclass default.
    """
    parser = configparser.ConfigParser()
    try:
        with open(path) as fh:
            parser.read_file(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    except configparser.Error as exc:
        raise ConfigError(str(exc)) from None

    unknown = set(parser.sections()) - {"trial", "environment", "a2c", "dqn"}
    if unknown:
        raise ConfigError(f"unknown sections: {sorted(unknown)}")

    env_kw = {}
    if parser.has_section("environment"):
        sec = parser["environment"]
        env_kw = _coerce(EnvironmentConfig, sec, skip=("space",))
        if "space" in sec:
            # a YAML file, relative to the config file
            env_kw["space"] = load_nsc_space(Path(path).parent / sec["space"].strip())
    a2c_kw = _coerce(A2cConfig, parser["a2c"]) if parser.has_section("a2c") else {}
    dqn_kw = _coerce(DqnConfig, parser["dqn"]) if parser.has_section("dqn") else {}
    trial_kw = {}
    if parser.has_section("trial"):
        sec = parser["trial"]
        trial_kw = _coerce(TrialConfig, sec, skip=("stages",))
        if "stages" in sec:
            trial_kw["stages"] = parse_stages(sec["stages"])
    stages = trial_kw.get("stages", TrialConfig.stages)
    env_kw.setdefault("env_id", stages[0][0] if stages else "omniglot")
    try:
        return TrialConfig(
            env=EnvironmentConfig(**env_kw),
            a2c=A2cConfig(**a2c_kw),
            dqn=DqnConfig(**dqn_kw),
            **trial_kw,
        )
    except TypeError as exc:
        raise ConfigError(str(exc)) from None


def load_nsc_space(path: str | Path) -> NscSpace:
    """Load an NSC space definition from YAML.

    Recognised keys: ``conv_kernels``, ``pool_sizes``, ``types``.
    """
    try:
        with open(path) as fh:
            data = yaml.safe_load(fh) or {}
    except OSError as exc:
        raise ConfigError(f"cannot read NSC space {path}: {exc}") from None
    except yaml.YAMLError as exc:
        raise ConfigError(f"bad NSC space {path}: {exc}") from None
    if not isinstance(data, dict):
        raise ConfigError(f"NSC space {path} must be a mapping")
    unknown = set(data) - {"conv_kernels", "pool_sizes", "types"}
    if unknown:
        raise ConfigError(f"unknown NSC space keys: {sorted(unknown)}")
    kw = {key: tuple(int(v) for v in data[key]) for key in data}
    space = NscSpace(**kw)
    if 4 in space.types:
        raise ConfigError("type 4 (identity) is not part of the NSC space")
    return space

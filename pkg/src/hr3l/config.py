"""Experiment configuration: a flat, sectioned ``key = value`` format.

Keys before any ``[section]`` header belong to ``[experiment]``. Unknown
sections and keys are rejected; anything not given keeps its default.
"""
from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass, field, fields

from .channel import channel_preset
from .envs import ENV_NAMES
from .receiver import PpoParams
from .transmitter import TxParams

METHODS = ("hr3l", "ppo_hold", "ppo_delay_aug")
MODES = ("full", "compressed")
FULL_BUDGET_STEPS = 2_000_000
DESK_BUDGET_ROUNDS = 74


class ConfigError(ValueError):
    pass


class ParseError(ConfigError):
    def __init__(self, msg: str, line: int):
        super().__init__(f"line {line}: {msg}")
        self.line = line


class ValidationError(ConfigError):
    def __init__(self, field_name: str, msg: str):
        super().__init__(f"{field_name}: {msg}")
        self.field = field_name


@dataclass
class ExperimentConfig:
    env: str = "pendulum"
    channel: str = "ideal"
    method: str = "hr3l"
    seeds: tuple = (0,)
    rounds: int = DESK_BUDGET_ROUNDS
    steps_per_round: int = 4096
    full_budget: bool = False
    mode: str = "full"
    G: int | None = None  # None sends every feature
    quantize: bool = True
    transmitter: TxParams = field(default_factory=TxParams)
    receiver: PpoParams = field(default_factory=PpoParams)

    @property
    def n_rounds(self) -> int:
        if self.full_budget:
            return math.ceil(FULL_BUDGET_STEPS / self.steps_per_round)
        return self.rounds

    @property
    def total_steps(self) -> int:
        return self.n_rounds * self.steps_per_round

    @property
    def n_sent_features(self) -> int:
        return self.transmitter.n_features if self.G is None else self.G

    @property
    def channel_config(self):
        return channel_preset(self.channel)

    def replace(self, **kw) -> "ExperimentConfig":
        return dataclasses.replace(self, **kw)

    def validate(self) -> "ExperimentConfig":
        if self.env not in ENV_NAMES:
            raise ValidationError("env", f"unknown environment {self.env!r}")
        try:
            channel_preset(self.channel)
        except ValueError as e:
            raise ValidationError("channel", str(e)) from None
        if self.method not in METHODS:
            raise ValidationError("method", f"expected one of {METHODS}")
        if self.mode not in MODES:
            raise ValidationError("mode", f"expected one of {MODES}")
        if not self.seeds:
            raise ValidationError("seeds", "at least one seed required")
        if self.rounds < 1:
            raise ValidationError("rounds", "must be >= 1")
        if self.steps_per_round < 1:
            raise ValidationError("steps_per_round", "must be >= 1")
        F = self.transmitter.n_features
        if self.G is not None and not 1 <= self.G <= F:
            raise ValidationError("G", f"must lie in [1, {F}] (F = {F})")
        if not 0.0 <= self.transmitter.rho <= 1.0:
            raise ValidationError("transmitter.rho", "must lie in [0, 1]")
        return self


_SECTIONS = ("experiment", "transmitter", "receiver")


def _section_fields(section: str):
    cls = {"experiment": ExperimentConfig, "transmitter": TxParams, "receiver": PpoParams}[section]
    skip = {"transmitter", "receiver"} if section == "experiment" else set()
    return {f.name: f for f in fields(cls) if f.name not in skip}


def _convert(default, raw: str):
    if default is None:
        return None if raw.lower() in ("none", "") else _convert(0, raw)
    if isinstance(default, bool):
        low = raw.lower()
        if low in ("true", "yes", "1", "on"):
            return True
        if low in ("false", "no", "0", "off"):
            return False
        raise ValueError(f"not a boolean: {raw!r}")
    if isinstance(default, int):
        try:
            return int(raw)
        except ValueError:
            x = float(raw)  # allows 5e5
            if not x.is_integer():
                raise ValueError(f"not an integer: {raw!r}") from None
            return int(x)
    if isinstance(default, float):
        return float(raw)
    if isinstance(default, tuple):
        parts = [p.strip() for p in raw.split(",") if p.strip()]
        return tuple(int(p) for p in parts)
    return raw


def _default_of(f):
    if f.default is not dataclasses.MISSING:
        return f.default
    return f.default_factory()


def parse_config(text: str) -> ExperimentConfig:
    values: dict[str, dict] = {s: {} for s in _SECTIONS}
    section = "experiment"
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line or line.startswith(";"):
            continue
        if line.startswith("["):
            if not line.endswith("]"):
                raise ParseError(f"malformed section header {line!r}", lineno)
            section = line[1:-1].strip().lower()
            if section not in _SECTIONS:
                raise ParseError(f"unknown section [{section}]", lineno)
            continue
        if "=" not in line:
            raise ParseError(f"expected key = value, got {line!r}", lineno)
        key, val = (s.strip() for s in line.split("=", 1))
        if not key:
            raise ParseError("empty key", lineno)
        known = _section_fields(section)
        if key not in known:
            name = key if section == "experiment" else f"{section}.{key}"
            raise ValidationError(name, f"unknown key (line {lineno})")
        try:
            values[section][key] = _convert(_default_of(known[key]), val)
        except ValueError as e:
            name = key if section == "experiment" else f"{section}.{key}"
            raise ValidationError(name, f"{e} (line {lineno})") from None
    cfg = ExperimentConfig(
        **values["experiment"],
        transmitter=TxParams(**values["transmitter"]),
        receiver=PpoParams(**values["receiver"]),
    )
    return cfg.validate()


def _fmt(v) -> str:
    if v is None:
        return "none"
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, tuple):
        return ",".join(str(x) for x in v)
    if isinstance(v, float):
        return repr(v)
    return str(v)


def serialize_config(cfg: ExperimentConfig) -> str:
    """Canonical text form: every key, fixed order, one section each."""
    out = ["[experiment]"]
    for name in _section_fields("experiment"):
        out.append(f"{name} = {_fmt(getattr(cfg, name))}")
    for section, obj in (("transmitter", cfg.transmitter), ("receiver", cfg.receiver)):
        out += ["", f"[{section}]"]
        for name in _section_fields(section):
            out.append(f"{name} = {_fmt(getattr(obj, name))}")
    return "\n".join(out) + "\n"

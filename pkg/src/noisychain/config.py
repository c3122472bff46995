"""Experiment configuration: INI-style text with sections, strict schema, content hash."""

from __future__ import annotations

import configparser
import dataclasses
import hashlib
import json
from dataclasses import dataclass, fields
from typing import Any

from .chain import BoundaryCondition
from .conductivity import VARIANTS
from .errors import ParameterError


class ConfigError(ParameterError):
    """Configuration does not match the schema."""


def _floats(text: str) -> tuple[float, ...]:
    return tuple(float(x) for x in text.replace(",", " ").split())


def _ints(text: str) -> tuple[int, ...]:
    return tuple(int(x) for x in text.replace(",", " ").split())


def _optional_float(text: str) -> float | None:
    return None if text.strip().lower() in ("", "none", "auto") else float(text)


# section -> field -> parser
SCHEMA: dict[str, dict[str, Any]] = {
    "chain": {
        "variant": str,
        "n": int,
        "sizes": _ints,
        "bc": str,
        "nu_min": float,
        "nu_max": float,
        "mass_min": float,
        "mass_max": float,
    },
    "physics": {
        "temperature": float,
        "lambdas": _floats,
        "lambda_prime": float,
        "lambda_prime_ratio": _optional_float,
        "potential_onsite": str,
        "potential_bond": str,
    },
    "schedule": {
        "t_end": float,
        "t_values": _floats,
        "z_factors": _floats,
        "dt": _optional_float,
        "burn_in": int,
        "sweep_method": str,
    },
    "ensemble": {
        "n_disorder": int,
        "n_trajectories": int,
        "seed": int,
        "threads": int,
    },
    "output": {"out_dir": str},
}

# excluded from the content hash: they never change artifact contents
NON_SCIENTIFIC = ("threads", "out_dir")


@dataclass(frozen=True)
class ExperimentConfig:
    variant: str = "pinned-disordered"
    n: int = 32
    sizes: tuple[int, ...] = ()
    bc: str = "periodic"
    nu_min: float = 1.0
    nu_max: float = 2.0
    mass_min: float = 1.0
    mass_max: float = 2.0
    temperature: float = 1.0
    lambdas: tuple[float, ...] = (0.5,)
    lambda_prime: float = 0.0
    lambda_prime_ratio: float | None = None
    potential_onsite: str = "quartic"
    potential_bond: str = "sqrt"
    t_end: float = 100.0
    t_values: tuple[float, ...] = (10.0, 30.0, 100.0, 300.0)
    z_factors: tuple[float, ...] = (1e-1, 1e-2, 1e-3)
    dt: float | None = None
    burn_in: int = 500
    sweep_method: str = "resolvent"
    n_disorder: int = 20
    n_trajectories: int = 50
    seed: int = 0
    threads: int = 1
    out_dir: str = "results"

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        if self.variant not in VARIANTS:
            raise ConfigError(f"variant must be one of {VARIANTS}")
        try:
            BoundaryCondition.parse(self.bc)
        except ParameterError as exc:
            raise ConfigError(str(exc)) from exc
        if self.n < 2 or any(s < 2 for s in self.sizes):
            raise ConfigError("chain sizes must be at least 2")
        if not 0 < self.nu_min <= self.nu_max:
            raise ConfigError("need 0 < nu_min <= nu_max")
        if not 0 < self.mass_min <= self.mass_max:
            raise ConfigError("need 0 < mass_min <= mass_max")
        if not self.temperature > 0:
            raise ConfigError("temperature must be positive")
        if not self.lambdas or any(l < 0 for l in self.lambdas):
            raise ConfigError("lambdas must be a nonempty list of nonnegative rates")
        if self.lambda_prime < 0 or (self.lambda_prime_ratio is not None and self.lambda_prime_ratio < 0):
            raise ConfigError("lambda_prime must be nonnegative")
        if self.t_end <= 0 or any(t <= 0 for t in self.t_values):
            raise ConfigError("times must be positive")
        if any(z <= 0 for z in self.z_factors) or len(self.z_factors) < 2:
            raise ConfigError("need at least two positive z factors")
        if self.dt is not None and self.dt <= 0:
            raise ConfigError("dt must be positive")
        if self.sweep_method not in ("resolvent", "mc"):
            raise ConfigError("sweep_method must be 'resolvent' or 'mc'")
        if self.n_disorder < 1 or self.n_trajectories < 1 or self.burn_in < 0:
            raise ConfigError("ensemble sizes must be positive")
        if not 0 <= self.seed < 2**64:
            raise ConfigError("seed must be an unsigned 64-bit integer")
        if self.threads < 1:
            raise ConfigError("threads must be at least 1")

    @property
    def chain_sizes(self) -> tuple[int, ...]:
        return self.sizes or (self.n,)

    def lambda_prime_for(self, lam: float) -> float:
        return self.lambda_prime_ratio * lam if self.lambda_prime_ratio is not None else self.lambda_prime

    # -- serialization -------------------------------------------------------

    def as_dict(self) -> dict:
        return {f.name: (list(v) if isinstance(v := getattr(self, f.name), tuple) else v) for f in fields(self)}

    @classmethod
    def from_dict(cls, data: dict) -> "ExperimentConfig":
        names = {f.name for f in fields(cls)}
        unknown = set(data) - names
        if unknown:
            raise ConfigError(f"unknown keys: {sorted(unknown)}")
        clean = {k: tuple(v) if isinstance(v, list) else v for k, v in data.items()}
        try:
            return cls(**clean)
        except TypeError as exc:
            raise ConfigError(str(exc)) from exc

    @classmethod
    def from_ini(cls, text: str) -> "ExperimentConfig":
        parser = configparser.ConfigParser(interpolation=None, default_section="__none__", inline_comment_prefixes=(";", "#"))
        parser.optionxform = str
        try:
            parser.read_string(text)
        except configparser.Error as exc:
            raise ConfigError(f"malformed config: {exc}") from exc
        values: dict[str, Any] = {}
        for section in parser.sections():
            if section not in SCHEMA:
                raise ConfigError(f"unknown section [{section}]")
            for key, raw in parser.items(section):
                if key not in SCHEMA[section]:
                    raise ConfigError(f"unknown key {key!r} in [{section}]")
                try:
                    values[key] = SCHEMA[section][key](raw)
                except ValueError as exc:
                    raise ConfigError(f"bad value for {key}: {raw!r}") from exc
        return cls.from_dict(values)

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        try:
            with open(path) as fh:
                return cls.from_ini(fh.read())
        except OSError as exc:
            raise ConfigError(f"cannot read config: {exc}") from exc

    def to_ini(self) -> str:
        lines = []
        for section, keys in SCHEMA.items():
            lines.append(f"[{section}]")
            for key in keys:
                v = getattr(self, key)
                if isinstance(v, tuple):
                    text = ", ".join(repr(x) for x in v)
                elif v is None:
                    text = "none"
                else:
                    text = repr(v) if isinstance(v, float) else str(v)
                lines.append(f"{key} = {text}")
            lines.append("")
        return "\n".join(lines)

    def replace(self, **changes) -> "ExperimentConfig":
        return dataclasses.replace(self, **changes)

    def content_hash(self) -> str:
        """SHA-256 of the canonical JSON of all fields that affect results."""
        payload = {k: v for k, v in self.as_dict().items() if k not in NON_SCIENTIFIC}
        blob = json.dumps(payload, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()

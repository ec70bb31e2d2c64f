"""
Lab configuration.

An EnsembleConfig is read from INI text with one section per concern:

    [velocity]     U, beta, K_max
    [source]       kappa_g, gamma (k2:value, ...), modes (kx ky; ...), seed
    [correlation]  shape, chi, eta
    [ensemble]     n_samples, seed, mode, threads, slack, mean_tolerance, ...
    [solver]       tol, max_iter, dt, order, picard_tol, picard_max_iter
    [bands]        kappas (comma separated)

Unknown sections and keys are errors that name the offender; dump_config
writes the same format back.
"""

import configparser
from pathlib import Path
from typing import Dict, List, Literal, Optional, Union

from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from src.core.errors import ConfigError
from src.core.fields import SourceSpec, VelocitySpec
from src.core.phases import CorrelationLaw


class EnsembleSettings(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)

    n_samples: int = Field(400, ge=2)
    seed: int = Field(20240601, ge=0)
    mode: Literal["static", "timedep"] = "static"
    threads: Optional[int] = Field(None, ge=1)
    slack: float = Field(2.0, gt=0, description="multiplier on variance bounds")
    mean_tolerance: Dict[float, float] = Field(
        default_factory=lambda: {16.0: 0.15, 32.0: 0.10},
        description="relative tolerance on band means, keyed by the smallest kappa it covers",
    )
    sigma: float = Field(3.0, gt=0, description="standard errors allowed between mean and prediction")
    full_solve: bool = Field(False, description="also iterate the full static problem per sample")
    freeze_source: bool = Field(False, description="keep the source phases xi fixed across samples")
    identical_samples: bool = Field(False, description="reuse sample 0's phases for every sample")
    relaxations: float = Field(10.0, gt=0, description="t_end = relaxations / kappa_min^2 in timedep mode")

    @field_validator("mean_tolerance", mode="before")
    @classmethod
    def _single_tolerance(cls, v):
        if isinstance(v, (int, float)):
            return {0.0: float(v)}
        return v

    @field_validator("mean_tolerance")
    @classmethod
    def _tolerance_table(cls, v: Dict[float, float]) -> Dict[float, float]:
        if not v:
            raise ValueError("the mean tolerance table is empty")
        if any(t <= 0 for t in v.values()):
            raise ValueError("mean tolerances must be positive")
        return dict(sorted(v.items()))

    def tolerance_for(self, kappa: float) -> float:
        """Entry with the largest key <= kappa; bands below every key take the first entry."""
        keys = list(self.mean_tolerance)
        chosen = keys[0]
        for key in keys:
            if key <= kappa:
                chosen = key
        return self.mean_tolerance[chosen]


class SolverSettings(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)

    tol: Optional[float] = Field(None, gt=0)
    max_iter: int = Field(200, ge=1)
    dt: Optional[float] = Field(None, gt=0)
    order: int = Field(1, ge=1, le=2, description="exponential integrator order")
    picard_tol: float = Field(1e-10, gt=0)
    picard_max_iter: int = Field(60, ge=1)


class BandLadder(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)

    kappas: List[float] = Field(default_factory=lambda: [8.0, 16.0, 32.0])

    @field_validator("kappas")
    @classmethod
    def _positive_sorted(cls, v: List[float]) -> List[float]:
        if not v:
            raise ValueError("the band ladder is empty")
        if any(k <= 0 for k in v):
            raise ValueError("kappa values must be positive")
        return sorted(set(float(k) for k in v))


class EnsembleConfig(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)

    velocity: VelocitySpec = Field(default_factory=VelocitySpec)
    source: SourceSpec = Field(default_factory=SourceSpec)
    correlation: CorrelationLaw = Field(default_factory=CorrelationLaw)
    ensemble: EnsembleSettings = Field(default_factory=EnsembleSettings)
    solver: SolverSettings = Field(default_factory=SolverSettings)
    bands: BandLadder = Field(default_factory=BandLadder)

    @model_validator(mode="after")
    def _bands_inside_truncation(self):
        limit = self.velocity.K_max + 1
        for kappa in self.bands.kappas:
            if 2 * kappa > limit:
                raise ValueError(f"band kappa={kappa:g} needs 2 kappa <= K_max + 1 = {limit}")
        if self.source.kappa_g ** 2 > self.velocity.K_max ** 2 + 1:
            raise ValueError(f"kappa_g={self.source.kappa_g:g} exceeds K_max={self.velocity.K_max}")
        return self


SECTIONS = ("velocity", "source", "correlation", "ensemble", "solver", "bands")


# --- Value codecs for the list-valued keys ---

def _parse_gamma(text: str) -> Dict[int, float]:
    table = {}
    for item in filter(None, (p.strip() for p in text.split(","))):
        k2, _, value = item.partition(":")
        table[int(k2)] = float(value)
    return table


def _parse_modes(text: str) -> List[List[int]]:
    modes = []
    for item in filter(None, (p.strip() for p in text.split(";"))):
        kx, ky = item.split()
        modes.append([int(kx), int(ky)])
    return modes


def _parse_tolerances(text: str) -> Dict[float, float]:
    """A bare number applies to every band; "16:0.15, 32:0.10" keys each value by the smallest kappa it covers."""
    if ":" not in text:
        return {0.0: float(text)}
    table = {}
    for item in filter(None, (p.strip() for p in text.split(","))):
        kappa, _, value = item.partition(":")
        table[float(kappa)] = float(value)
    return table


def _parse_kappas(text: str) -> List[float]:
    return [float(p) for p in text.split(",") if p.strip()]


_DECODERS = {
    ("source", "gamma"): _parse_gamma,
    ("source", "modes"): _parse_modes,
    ("ensemble", "mean_tolerance"): _parse_tolerances,
    ("bands", "kappas"): _parse_kappas,
}


def _format_value(value) -> str:
    if isinstance(value, dict):
        return ", ".join(f"{k}:{v!r}" for k, v in sorted(value.items()))
    if isinstance(value, list) and value and isinstance(value[0], (list, tuple)):
        return "; ".join(f"{a} {b}" for a, b in value)
    if isinstance(value, list):
        return ", ".join(repr(float(v)) for v in value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _describe(error: ValidationError) -> str:
    parts = []
    for e in error.errors():
        loc = ".".join(str(p) for p in e["loc"]) or "config"
        parts.append(f"{loc}: {e['msg']}")
    return "; ".join(parts)


def parse_config(text: str, source: str = "<config>") -> EnsembleConfig:
    parser = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#",))
    parser.optionxform = str
    try:
        parser.read_string(text, source=source)
    except configparser.Error as e:
        raise ConfigError(f"{source}: {e}") from e

    raw: Dict[str, Dict[str, Union[str, object]]] = {}
    for section in parser.sections():
        if section not in SECTIONS:
            raise ConfigError(f"{source}: unknown section [{section}]")
        values = {}
        for key, value in parser.items(section):
            decoder = _DECODERS.get((section, key))
            if decoder is not None:
                try:
                    values[key] = decoder(value)
                except ValueError as e:
                    raise ConfigError(f"{source}: {section}.{key}: cannot parse {value!r}") from e
            elif value.strip() == "":
                continue
            else:
                values[key] = value.strip()
        raw[section] = values
    try:
        return EnsembleConfig.model_validate(raw)
    except ValidationError as e:
        raise ConfigError(f"{source}: {_describe(e)}") from e


def load_config(path: Union[str, Path]) -> EnsembleConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as e:
        raise ConfigError(f"cannot read {path}: {e}") from e
    return parse_config(text, source=str(path))


def dump_config(config: EnsembleConfig) -> str:
    lines = []
    for section in SECTIONS:
        lines.append(f"[{section}]")
        for key, value in getattr(config, section).model_dump().items():
            if value is None:
                continue
            lines.append(f"{key} = {_format_value(value)}")
        lines.append("")
    return "\n".join(lines)


def with_overrides(config: EnsembleConfig, seed: Optional[int] = None, threads: Optional[int] = None) -> EnsembleConfig:
    """Apply command-line overrides; the result is validated again."""
    updates = {}
    if seed is not None:
        updates["seed"] = seed
    if threads is not None:
        updates["threads"] = threads
    if not updates:
        return config
    data = config.model_dump()
    data["ensemble"].update(updates)
    try:
        return EnsembleConfig.model_validate(data)
    except ValidationError as e:
        raise ConfigError(_describe(e)) from e

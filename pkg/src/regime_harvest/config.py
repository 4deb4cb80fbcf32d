"""Scenario configuration files: JSON with one section per component.

Parse and validation errors raise ConfigError with the line number of the
offending key when it can be located.
"""

from __future__ import annotations

import hashlib
import json
import re
from dataclasses import asdict, dataclass, field, fields

from .errors import ConfigError
from .model_core import DetectionConfig, MarketParams, ResourceParams, validate
from .sde_sim import SimConfig
from .sequential import EpisodeConfig


@dataclass(frozen=True)
class EpisodeSection:
    n_periods: int = 4
    lambda0: float = -1.5
    mode: str = "expected_horizon"
    on_irreversible: str = "continue"
    policy_source: str = "auto"
    x_max: float = 100.0
    n_episodes: int = 1
    corrected_threshold: bool = True


@dataclass(frozen=True)
class SurfaceSection:
    lambdas: list = field(default_factory=lambda: [0.0])
    horizons: list = field(default_factory=lambda: [10.0])
    x_min: float = 0.0
    x_max: float = 15.0
    nx: int = 61
    t: float = 0.0


@dataclass(frozen=True)
class CatastropheSection:
    scenarios: list = field(default_factory=list)
    t_max: float = 20.0
    n_t: int = 201
    next_horizon: float | None = None
    extraction: str = "none"
    nx: int = 400
    nt: int = 4000


@dataclass(frozen=True)
class DetectSection:
    lambda_target: float = -1.5
    drift: float | None = None
    corrected_threshold: bool = True


@dataclass(frozen=True)
class OutputSection:
    dir: str | None = None


_SECTIONS = {
    "market": MarketParams,
    "resource": ResourceParams,
    "detection": DetectionConfig,
    "sim": SimConfig,
    "episode": EpisodeSection,
    "surface": SurfaceSection,
    "catastrophe": CatastropheSection,
    "detect": DetectSection,
    "output": OutputSection,
}
_REQUIRED = ("market", "resource")


@dataclass(frozen=True)
class ScenarioConfig:
    market: MarketParams
    resource: ResourceParams
    detection: DetectionConfig = field(default_factory=DetectionConfig)
    sim: SimConfig = field(default_factory=SimConfig)
    episode: EpisodeSection = field(default_factory=EpisodeSection)
    surface: SurfaceSection = field(default_factory=SurfaceSection)
    catastrophe: CatastropheSection = field(default_factory=CatastropheSection)
    detect: DetectSection = field(default_factory=DetectSection)
    output: OutputSection = field(default_factory=OutputSection)

    def to_dict(self) -> dict:
        return {f.name: asdict(getattr(self, f.name)) for f in fields(self)}

    def digest(self) -> str:
        text = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(text.encode()).hexdigest()[:16]

    def episode_config(self, seed: int | None = None) -> EpisodeConfig:
        sim = self.sim if seed is None else SimConfig(self.sim.dt, seed, self.sim.n_paths,
                                                      self.sim.stepper)
        e = self.episode
        return EpisodeConfig(n_periods=e.n_periods, lambda0=e.lambda0, mode=e.mode,
                             on_irreversible=e.on_irreversible, detection=self.detection,
                             sim=sim, policy_source=e.policy_source, x_max=e.x_max,
                             corrected_threshold=e.corrected_threshold)


def _line_of(text: str, key: str) -> int | None:
    m = re.search(r'"%s"\s*:' % re.escape(key), text)
    return text.count("\n", 0, m.start()) + 1 if m else None


def _fail(text, key, msg):
    line = _line_of(text, key) if text is not None else None
    where = f"line {line}: " if line else ""
    raise ConfigError(f"{where}{msg}")


def from_dict(data: dict, text: str | None = None) -> ScenarioConfig:
    if not isinstance(data, dict):
        raise ConfigError("line 1: top level must be an object")
    for name in data:
        if name not in _SECTIONS:
            _fail(text, name, f"unknown section {name!r}")
    for name in _REQUIRED:
        if name not in data:
            raise ConfigError(f"missing required section {name!r}")
    built = {}
    for name, cls in _SECTIONS.items():
        if name not in data:
            continue
        body = data[name]
        if not isinstance(body, dict):
            _fail(text, name, f"section {name!r} must be an object")
        known = {f.name for f in fields(cls) if f.init}
        for key in body:
            if key not in known:
                _fail(text, key, f"unknown key {name}.{key}")
        try:
            built[name] = cls(**body)
        except (TypeError, ValueError) as exc:
            _fail(text, name, f"section {name!r}: {exc}")
    cfg = ScenarioConfig(**built)
    bad = validate(cfg.market, cfg.resource, cfg.detection)
    if bad:
        section = "market" if bad[0].name in {
            "DemandInterceptNonPositive", "DemandSlopeNonPositive", "CostNegative",
            "FixedCostNegative", "DiscountNonPositive"} else "resource"
        _fail(text, section, "; ".join(v.value for v in bad))
    try:
        cfg.episode_config()
    except ValueError as exc:
        _fail(text, "episode", str(exc))
    return cfg


def loads(text: str) -> ScenarioConfig:
    if not text.strip():
        raise ConfigError("line 1: empty configuration")
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"line {exc.lineno}: {exc.msg}") from None
    return from_dict(data, text)


def load(path) -> ScenarioConfig:
    try:
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc}") from None
    return loads(text)


def dumps(cfg: ScenarioConfig) -> str:
    return json.dumps(cfg.to_dict(), indent=2, sort_keys=True) + "\n"

"""Configuration records and TOML loading.

Every tunable number lives here. The dataclass defaults are authoritative;
``data/defaults.toml`` mirrors them for documentation and editing.
"""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, Mapping, Optional, Tuple

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from .model import GraspType


class ConfigError(ValueError):
    pass


Range = Tuple[float, float]


def _check_range(value, name, *, lo=None, hi=None, strict=True):
    if len(value) != 2:
        raise ConfigError(f"{name} must be a [min, max] pair")
    a, b = value
    if strict and not a < b:
        raise ConfigError(f"{name} must satisfy min < max, got {list(value)}")
    if not strict and not a <= b:
        raise ConfigError(f"{name} must satisfy min <= max, got {list(value)}")
    if lo is not None and a < lo or hi is not None and b > hi:
        raise ConfigError(f"{name} must lie within [{lo}, {hi}]")


def _positive(values, name):
    if not all(isinstance(v, (int, float)) and math.isfinite(v) and v > 0 for v in values):
        raise ConfigError(f"{name} entries must be positive")


@dataclass(frozen=True)
class ConstraintConfig:
    finger_count_range: Range = (2, 5)
    joint_diameter_range_mm: Range = (8.0, 20.0)
    link_width_range_mm: Range = (8.0, 25.0)
    slenderness_range: Range = (1.5, 6.0)
    finger_total_length_range_mm: Range = (40.0, 140.0)
    mount_angle_abs_max_deg: float = 75.0
    min_mount_separation_mm: float = 12.0
    build_volume_mm: Tuple[float, float, float] = (220.0, 220.0, 250.0)

    def __post_init__(self):
        for name in ("finger_count_range", "joint_diameter_range_mm", "link_width_range_mm",
                     "slenderness_range", "finger_total_length_range_mm"):
            _check_range(getattr(self, name), name)
        _positive((self.mount_angle_abs_max_deg, *self.build_volume_mm), "constraints")
        if self.min_mount_separation_mm < 0:
            raise ConfigError("min_mount_separation_mm must be non-negative")
        if len(self.build_volume_mm) != 3:
            raise ConfigError("build_volume_mm needs three extents")


@dataclass(frozen=True)
class RatioConfig:
    """Fixed proportions that expand one finger scale into full finger geometry."""

    base_phalanx_lengths_mm: Tuple[float, float, float] = (40.0, 40.0, 40.0)
    phalanx_ratios: Tuple[float, float, float] = (1.0, 0.65, 0.50)
    base_joint_diameter_mm: float = 14.0
    joint_ratios: Tuple[float, float, float] = (1.0, 0.9, 0.8)
    base_link_width_mm: float = 15.0
    link_ratios: Tuple[float, float, float] = (1.0, 0.8, 0.65)

    def __post_init__(self):
        for name in ("base_phalanx_lengths_mm", "phalanx_ratios", "joint_ratios", "link_ratios"):
            v = getattr(self, name)
            if len(v) != 3:
                raise ConfigError(f"{name} needs three entries")
            _positive(v, name)
        _positive((self.base_joint_diameter_mm, self.base_link_width_mm), "ratios")


@dataclass(frozen=True)
class GraspPrior:
    finger_scale_multiplier: float = 1.0
    joint_size_multiplier: float = 1.0
    link_width_multiplier: float = 1.0
    curvature_range: Range = (0.0, 1.0)
    bone_length_offset_mm: float = 0.0

    def __post_init__(self):
        _positive((self.finger_scale_multiplier, self.joint_size_multiplier,
                   self.link_width_multiplier), "prior multipliers")
        _check_range(self.curvature_range, "curvature_range", lo=0.0, hi=1.0, strict=False)


IDENTITY_PRIOR = GraspPrior()


def _default_priors() -> Dict[GraspType, GraspPrior]:
    return {
        GraspType.FINE_MANIPULATION: GraspPrior(0.85, 0.8, 0.85, (0.4, 1.0), -5.0),
        GraspType.FORCE_BASED: GraspPrior(1.2, 1.2, 1.25, (0.0, 0.6), 5.0),
        GraspType.TOOL_BASED: GraspPrior(1.05, 1.1, 1.1, (0.2, 0.8), 0.0),
    }


@dataclass(frozen=True)
class GraspPriorTable:
    rows: Mapping[GraspType, GraspPrior] = field(default_factory=_default_priors)

    def __post_init__(self):
        missing = [g.value for g in GraspType if g not in self.rows]
        if missing:
            raise ConfigError(f"prior table lacks rows for {missing}")

    def __getitem__(self, grasp: GraspType) -> GraspPrior:
        return self.rows[GraspType(grasp)]


@dataclass(frozen=True)
class ValidatorConfig:
    w_rule: float = 0.5
    w_llm: float = 0.5
    threshold: float = 0.7
    max_iterations: int = 3
    severity_weights: Mapping[str, float] = field(
        default_factory=lambda: {"info": 1.0, "warning": 2.0, "critical": 4.0})

    def __post_init__(self):
        if not math.isclose(self.w_rule + self.w_llm, 1.0, abs_tol=1e-9):
            raise ConfigError("validator weights must sum to 1")
        if min(self.w_rule, self.w_llm) < 0:
            raise ConfigError("validator weights must be non-negative")
        if not 0 <= self.threshold <= 1:
            raise ConfigError("validator threshold must lie in [0, 1]")
        if self.max_iterations < 1:
            raise ConfigError("max_iterations must be >= 1")
        if set(self.severity_weights) != {"info", "warning", "critical"}:
            raise ConfigError("severity_weights needs info, warning, critical")


@dataclass(frozen=True)
class RankConfig:
    w_sem: float = 0.6
    w_size: float = 0.4
    quality_threshold: float = 7.0
    max_refinements: int = 1

    def __post_init__(self):
        if not math.isclose(self.w_sem + self.w_size, 1.0, abs_tol=1e-9):
            raise ConfigError("w_sem + w_size must equal 1")
        if min(self.w_sem, self.w_size) < 0:
            raise ConfigError("ranking weights must be non-negative")
        if self.max_refinements not in (0, 1):
            raise ConfigError("max_refinements must be 0 or 1")


@dataclass(frozen=True)
class DiversityWeights:
    text: float = 0.35
    graph: float = 0.40
    geometry: float = 0.25

    def __post_init__(self):
        if min(self.text, self.graph, self.geometry) < 0:
            raise ConfigError("diversity weights must be non-negative")
        if not math.isclose(self.text + self.graph + self.geometry, 1.0, abs_tol=1e-9):
            raise ConfigError("diversity weights must sum to 1")


@dataclass(frozen=True)
class GflWeights:
    w_joint: float = 0.30
    w_width: float = 0.25
    w_length: float = 0.15
    w_count: float = 0.15
    w_harmony: float = 0.15

    def __post_init__(self):
        values = dataclasses.astuple(self)
        if min(values) < 0:
            raise ConfigError("GFL weights must be non-negative")
        if not math.isclose(sum(values), 1.0, abs_tol=1e-9):
            raise ConfigError("GFL weights must sum to 1")


@dataclass(frozen=True)
class ParamRanges:
    """Per-parameter ranges: geometry normalisation and random-baseline sampling."""

    finger_count: Tuple[int, int] = (2, 5)
    mount_angle_deg: Range = (-45.0, 45.0)
    mount_translation_mm: Range = (-40.0, 40.0)
    metacarpal_length_mm: Range = (15.0, 60.0)
    scale: Range = (0.6, 1.4)
    palm_width_mm: Range = (50.0, 120.0)
    palm_curvature: Range = (0.0, 1.0)

    def __post_init__(self):
        for f in dataclasses.fields(self):
            _check_range(getattr(self, f.name), f.name)
        if self.scale[0] <= 0 or self.metacarpal_length_mm[0] <= 0 or self.palm_width_mm[0] <= 0:
            raise ConfigError("scale, metacarpal and palm width ranges must be positive")
        if self.finger_count[0] < 1:
            raise ConfigError("finger_count range must start at >= 1")


DEFAULT_CUES = (
    "Favor a modular, symmetric layout that prints cleanly on a desktop FDM printer: "
    "identical fingers, evenly spaced, simple joints.",
    "Favor a compact, asymmetric layout: fewer fingers, one opposing digit, short "
    "links kept close to the palm.",
    "Favor extended reach and articulation: more or longer finger chains with extra "
    "joints, wider finger spread.",
)


@dataclass(frozen=True)
class ProviderConfig:
    kind: str = "stub"
    fixtures: Optional[str] = None
    model: str = ""
    timeout_s: float = 60.0
    max_in_flight: int = 4

    def __post_init__(self):
        if self.kind not in ("http", "stub", "replay", "record"):
            raise ConfigError(f"unknown provider kind {self.kind!r}")


@dataclass(frozen=True)
class RenderConfig:
    renderer: Optional[str] = None
    timeout_s: float = 120.0
    image_size: Tuple[int, int] = (800, 600)
    preview: bool = False


@dataclass(frozen=True)
class RunConfig:
    task: str = ""
    variants: int = 3
    diversity_cues: Tuple[str, ...] = DEFAULT_CUES
    seed: int = 0
    output_dir: str = "runs"
    workers: int = 3
    constraints: ConstraintConfig = field(default_factory=ConstraintConfig)
    ratios: RatioConfig = field(default_factory=RatioConfig)
    priors: GraspPriorTable = field(default_factory=GraspPriorTable)
    validator: ValidatorConfig = field(default_factory=ValidatorConfig)
    ranking: RankConfig = field(default_factory=RankConfig)
    diversity: DiversityWeights = field(default_factory=DiversityWeights)
    gfl: GflWeights = field(default_factory=GflWeights)
    ranges: ParamRanges = field(default_factory=ParamRanges)
    provider: ProviderConfig = field(default_factory=ProviderConfig)
    render: RenderConfig = field(default_factory=RenderConfig)

    def __post_init__(self):
        if self.variants < 1:
            raise ConfigError("variant count must be >= 1")
        if self.workers < 1:
            raise ConfigError("workers must be >= 1")


# --------------------------------------------------------------------------
# TOML overlay

_SECTIONS = {
    "constraints": ConstraintConfig,
    "ratios": RatioConfig,
    "validator": ValidatorConfig,
    "ranking": RankConfig,
    "diversity": DiversityWeights,
    "gfl": GflWeights,
    "ranges": ParamRanges,
    "provider": ProviderConfig,
    "render": RenderConfig,
}
_RUN_KEYS = ("task", "variants", "diversity_cues", "seed", "output_dir", "workers")


def _tupled(value):
    if isinstance(value, list):
        return tuple(_tupled(v) for v in value)
    return value


def _overlay(instance, table: Mapping[str, Any], where: str):
    names = {f.name for f in dataclasses.fields(instance)}
    unknown = sorted(set(table) - names)
    if unknown:
        raise ConfigError(f"[{where}] unknown keys: {', '.join(unknown)}")
    try:
        return dataclasses.replace(instance, **{k: _tupled(v) for k, v in table.items()})
    except (TypeError, ValueError) as e:
        raise ConfigError(f"[{where}] {e}") from None


def config_from_mapping(data: Mapping[str, Any], base: Optional[RunConfig] = None) -> RunConfig:
    cfg = base or RunConfig()
    allowed = set(_SECTIONS) | {"priors", "run"}
    unknown = sorted(set(data) - allowed)
    if unknown:
        raise ConfigError(f"unknown config sections: {', '.join(unknown)}")
    updates: Dict[str, Any] = {}
    for name, cls in _SECTIONS.items():
        if name in data:
            updates[name] = _overlay(getattr(cfg, name), data[name], name)
    if "priors" in data:
        rows = dict(cfg.priors.rows)
        for grasp, table in data["priors"].items():
            try:
                g = GraspType(grasp)
            except ValueError:
                raise ConfigError(f"[priors] unknown grasp type {grasp!r}") from None
            rows[g] = _overlay(rows[g], table, f"priors.{grasp}")
        updates["priors"] = GraspPriorTable(rows)
    if "run" in data:
        run = data["run"]
        unknown = sorted(set(run) - set(_RUN_KEYS))
        if unknown:
            raise ConfigError(f"[run] unknown keys: {', '.join(unknown)}")
        updates.update({k: _tupled(v) for k, v in run.items()})
    try:
        return dataclasses.replace(cfg, **updates)
    except (TypeError, ValueError) as e:
        raise ConfigError(str(e)) from None


def load_config(path=None, base: Optional[RunConfig] = None) -> RunConfig:
    if path is None:
        return base or RunConfig()
    try:
        with open(Path(path), "rb") as fh:
            data = tomllib.load(fh)
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    except tomllib.TOMLDecodeError as e:
        raise ConfigError(f"invalid TOML in {path}: {e}") from None
    return config_from_mapping(data, base)

"""Parameter sets for every stage and the plain-text config file.

The file format is ``key = value`` lines grouped under ``[section]``
headers, ``#`` starts a comment. Keys given before any header are looked
up across all sections. Angles are radians; a ``deg`` suffix is accepted.
"""

from __future__ import annotations

from dataclasses import dataclass, field, fields, replace
from pathlib import Path
from typing import Optional

import numpy as np

from .errors import ConfigError, ParameterError
from .preprocessing import FilterParams
from .registration import MatchParams
from .segmentation import SegmentationParams


@dataclass(frozen=True)
class CellSearchParams:
    cell_tolerance: float = 5.0
    alpha: float = 0.3
    beta: float = 1.5
    stride_fraction: float = 0.5
    # cell poses closer than this are the same location hypothesis
    distinct_translation: float = 1.0
    # a matched pair counts toward the cell ratio only if its offset agrees this well
    inlier_distance: float = 0.3

    def validate(self):
        if not self.cell_tolerance > 0:
            raise ParameterError("cell_tolerance must be positive", key="cell_tolerance")
        if not 0 < self.alpha < 1:
            raise ParameterError("alpha must lie in (0, 1)", key="alpha")
        if not self.beta > 1:
            raise ParameterError("beta must exceed 1", key="beta")
        if not 0 < self.stride_fraction <= 1:
            raise ParameterError("stride_fraction must lie in (0, 1]", key="stride_fraction")
        for name in ("distinct_translation", "inlier_distance"):
            if not getattr(self, name) > 0:
                raise ParameterError(f"{name} must be positive", key=name)
        return self


@dataclass(frozen=True)
class MetascanParams:
    min_overlapping_surfaces: int = 3
    min_pose_angle: float = float(np.deg2rad(0.5))
    min_pose_translation: float = 0.05
    max_iterations_per_cloud: int = 10

    def validate(self):
        if self.min_overlapping_surfaces < 1:
            raise ParameterError("min_overlapping_surfaces must be at least 1",
                                 key="min_overlapping_surfaces")
        for name in ("min_pose_angle", "min_pose_translation"):
            if not getattr(self, name) > 0:
                raise ParameterError(f"{name} must be positive", key=name)
        if self.max_iterations_per_cloud < 1:
            raise ParameterError("max_iterations_per_cloud must be at least 1",
                                 key="max_iterations_per_cloud")
        return self


@dataclass(frozen=True)
class LocalizationParams:
    section_tolerance: float = 3.0
    max_correction_angle: float = float(np.deg2rad(30.0))
    max_correction_fraction: float = 0.5
    preprocess: bool = True
    # run relative optimization when tracking without a map
    relative_without_map: bool = False
    use_icp: bool = False
    icp_max_iter: int = 30
    icp_max_corr_dist: float = 0.3

    def validate(self):
        if self.section_tolerance < 0:
            raise ParameterError("section_tolerance must be non-negative", key="section_tolerance")
        for name in ("max_correction_angle", "max_correction_fraction", "icp_max_corr_dist"):
            if not getattr(self, name) > 0:
                raise ParameterError(f"{name} must be positive", key=name)
        if self.icp_max_iter < 1:
            raise ParameterError("icp_max_iter must be at least 1", key="icp_max_iter")
        return self


@dataclass(frozen=True)
class Config:
    filter: FilterParams = field(default_factory=FilterParams)
    segmentation: SegmentationParams = field(default_factory=SegmentationParams)
    matching: MatchParams = field(default_factory=MatchParams)
    cell_search: CellSearchParams = field(default_factory=CellSearchParams)
    metascan: MetascanParams = field(default_factory=MetascanParams)
    localization: LocalizationParams = field(default_factory=LocalizationParams)

    def validate(self):
        for f in fields(self):
            try:
                getattr(self, f.name).validate()
            except ParameterError as exc:
                raise ConfigError(f"[{f.name}] {exc}", key=exc.key) from exc
        return self

    def to_text(self) -> str:
        lines = []
        for f in fields(self):
            lines.append(f"[{f.name}]")
            section = getattr(self, f.name)
            for sf in fields(section):
                lines.append(f"{sf.name} = {getattr(section, sf.name)}")
            lines.append("")
        return "\n".join(lines)


SECTIONS = tuple(f.name for f in fields(Config))


def _parse_value(raw: str, current, key: str, lineno: int):
    text = raw.strip()
    try:
        if isinstance(current, bool):
            low = text.lower()
            if low in ("true", "yes", "on", "1"):
                return True
            if low in ("false", "no", "off", "0"):
                return False
            raise ValueError(text)
        if isinstance(current, int):
            return int(text)
        if text.lower().endswith("deg"):
            return float(np.deg2rad(float(text[:-3])))
        return float(text)
    except ValueError:
        raise ConfigError(f"line {lineno}: bad value {text!r} for {key}", key=key) from None


def parse_config(text: str) -> Config:
    cfg = Config()
    sections = {name: getattr(cfg, name) for name in SECTIONS}
    owners: dict = {}
    for name, section in sections.items():
        for f in fields(section):
            owners.setdefault(f.name, []).append(name)

    updates = {name: {} for name in SECTIONS}
    unknown = []
    current = None
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if line.startswith("[") and line.endswith("]"):
            current = line[1:-1].strip()
            if current not in sections:
                unknown.append(f"[{current}]")
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value'")
        key, value = (part.strip() for part in line.split("=", 1))
        if current is None:
            homes = owners.get(key, [])
            if len(homes) > 1:
                raise ConfigError(f"line {lineno}: key {key} is ambiguous, put it under a section",
                                  key=key)
            section_name = homes[0] if homes else None
        elif current in sections:
            section_name = current if key in owners and current in owners[key] else None
        else:
            continue
        if section_name is None:
            unknown.append(key if current is None else f"{current}.{key}")
            continue
        default = getattr(sections[section_name], key)
        updates[section_name][key] = _parse_value(value, default, key, lineno)

    if unknown:
        raise ConfigError("unknown config keys: " + ", ".join(unknown), key=unknown[0])
    new = {name: replace(sections[name], **updates[name]) for name in SECTIONS}
    return Config(**new).validate()


def load_config(path: Optional[str | Path] = None) -> Config:
    """Read a config file; a missing path or file gives all defaults."""
    if path is None:
        return Config()
    p = Path(path)
    if not p.exists():
        return Config()
    return parse_config(p.read_text())

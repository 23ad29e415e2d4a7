"""Seeded sampling of joint configurations and hand appearance.

Every sample draws from its own generator, seeded by a frozen mixing of
``(master_seed, sample_index, stream)``. Nothing here touches global random
state, so records can be produced in any order or on any worker.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum, IntEnum

import numpy as np

from .kinematics import JointSpace, JointVector

U64_MASK = (1 << 64) - 1

# Recorded in the dataset manifest; bump the suffix if the derivation changes.
GENERATOR_NAME = "numpy.PCG64/splitmix64-v1"

TEXTURE_SCALE_BOUNDS = (0.5, 2.0)


class SeedStream(IntEnum):
    """Independent per-sample random streams."""

    JOINTS = 1
    APPEARANCE = 2


class TextureKind(str, Enum):
    SOLID = "solid"
    NOISE = "noise"
    STRIPES = "stripes"


def _check_u64(value: int, name: str) -> int:
    if isinstance(value, bool) or not isinstance(value, (int, np.integer)):
        raise TypeError(f"{name} must be an integer, got {type(value).__name__}")
    value = int(value)
    if not 0 <= value <= U64_MASK:
        raise ValueError(f"{name}={value} is outside the unsigned 64-bit range")
    return value


@dataclass(frozen=True)
class SeedSpec:
    master_seed: int
    sample_index: int

    def __post_init__(self) -> None:
        object.__setattr__(self, "master_seed", _check_u64(self.master_seed, "master_seed"))
        object.__setattr__(self, "sample_index", _check_u64(self.sample_index, "sample_index"))

    def generator(self, stream: SeedStream) -> np.random.Generator:
        seed = derive_sample_seed(self.master_seed, self.sample_index, stream)
        return np.random.Generator(np.random.PCG64(seed))


@dataclass(frozen=True)
class AppearanceRanges:
    """Declared sampling ranges for hand appearance."""

    color_min: float = 0.15
    color_max: float = 0.6
    scale_min: float = TEXTURE_SCALE_BOUNDS[0]
    scale_max: float = TEXTURE_SCALE_BOUNDS[1]
    texture_kinds: tuple[TextureKind, ...] = field(default_factory=lambda: tuple(TextureKind))

    def __post_init__(self) -> None:
        kinds = tuple(TextureKind(k) for k in self.texture_kinds)
        object.__setattr__(self, "texture_kinds", kinds)
        if not 0.0 <= self.color_min <= self.color_max <= 1.0:
            raise ValueError(
                f"color range [{self.color_min}, {self.color_max}] must lie within [0, 1]"
            )
        low, high = TEXTURE_SCALE_BOUNDS
        if not low <= self.scale_min <= self.scale_max <= high:
            raise ValueError(
                f"texture scale range [{self.scale_min}, {self.scale_max}] "
                f"must lie within [{low}, {high}]"
            )
        if not kinds:
            raise ValueError("at least one texture kind is required")

    def to_dict(self) -> dict:
        return {
            "color_min": self.color_min,
            "color_max": self.color_max,
            "scale_min": self.scale_min,
            "scale_max": self.scale_max,
            "texture_kinds": [k.value for k in self.texture_kinds],
        }

    @classmethod
    def from_dict(cls, data: dict) -> AppearanceRanges:
        return cls(
            color_min=float(data["color_min"]),
            color_max=float(data["color_max"]),
            scale_min=float(data["scale_min"]),
            scale_max=float(data["scale_max"]),
            texture_kinds=tuple(TextureKind(k) for k in data["texture_kinds"]),
        )


DEFAULT_APPEARANCE_RANGES = AppearanceRanges()


@dataclass(frozen=True)
class AppearanceParams:
    base_color: tuple[float, float, float]
    texture_scale: float
    texture_kind: TextureKind

    def __post_init__(self) -> None:
        if len(self.base_color) != 3 or not all(0.0 <= c <= 1.0 for c in self.base_color):
            raise ValueError(f"base_color {self.base_color} must be an RGB triple in [0, 1]")
        low, high = TEXTURE_SCALE_BOUNDS
        if not low <= self.texture_scale <= high:
            raise ValueError(f"texture_scale {self.texture_scale} outside [{low}, {high}]")


def _mix64(z: int) -> int:
    """SplitMix64 finalizer."""
    z = (z + 0x9E3779B97F4A7C15) & U64_MASK
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & U64_MASK
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & U64_MASK
    return z ^ (z >> 31)


def derive_sample_seed(master_seed: int, index: int, stream: SeedStream) -> int:
    """Per-sample 64-bit seed. Frozen: changing it changes every dataset."""

    h = _mix64(_check_u64(master_seed, "master_seed"))
    h = _mix64(h ^ _check_u64(index, "index"))
    return _mix64(h ^ int(SeedStream(stream)))


def sample_configuration(space: JointSpace, seed: SeedSpec) -> JointVector:
    """Draw every joint independently from U(min_angle_j, max_angle_j)."""

    rng = seed.generator(SeedStream.JOINTS)
    return JointVector(rng.uniform(space.mins, space.maxs))


def sample_appearance(
    seed: SeedSpec, ranges: AppearanceRanges = DEFAULT_APPEARANCE_RANGES
) -> AppearanceParams:
    rng = seed.generator(SeedStream.APPEARANCE)
    color = rng.uniform(ranges.color_min, ranges.color_max, size=3)
    scale = rng.uniform(ranges.scale_min, ranges.scale_max)
    kind = ranges.texture_kinds[int(rng.integers(len(ranges.texture_kinds)))]
    return AppearanceParams(
        base_color=(float(color[0]), float(color[1]), float(color[2])),
        texture_scale=float(scale),
        texture_kind=kind,
    )

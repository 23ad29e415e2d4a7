"""Joint space definition and forward kinematics for the articulated hand.

The joint space is read from a dotenv-style definition file in which every joint
is a numbered group of keys::

    JOINT1_NAME=lh_WRJ2
    JOINT1_PARENT=wrist
    JOINT1_AXIS=0,0,1
    JOINT1_LENGTH=0.03
    JOINT1_MIN=-0.524
    JOINT1_MAX=0.175

Optional keys ``JOINT<N>_ORIGIN``, ``JOINT<N>_RPY`` and ``JOINT<N>_RADIUS`` place
the joint inside its parent frame and size the rendered link. The group number
fixes the canonical joint order.
"""

from __future__ import annotations

import hashlib
import io
import logging
import math
import re
from dataclasses import dataclass
from functools import cached_property
from pathlib import Path

import numpy as np
from dotenv import dotenv_values

ROOT_LINK = "wrist"
DEFAULT_DEFINITION = Path(__file__).resolve().parent / "data" / "shadow_hand.env"
DEFAULT_LINK_RADIUS = 0.009
AXIS_TOLERANCE = 1e-9

REQUIRED_FIELDS = ("NAME", "PARENT", "AXIS", "LENGTH", "MIN", "MAX")
OPTIONAL_FIELDS = ("ORIGIN", "RPY", "RADIUS")

_KEY_PATTERN = re.compile(r"^JOINT(\d+)_([A-Z]+)$")
_ASSIGNMENT_PATTERN = re.compile(r"^\s*(?:export\s+)?([A-Za-z_][A-Za-z0-9_]*)\s*=")

Vector3 = tuple[float, float, float]


class JointSpaceError(ValueError):
    """Raised for malformed joint definitions and kinematic tree errors."""


@dataclass(frozen=True)
class JointSpec:
    """A single revolute joint and the link it drives."""

    name: str
    parent_link: str
    axis: Vector3
    link_length: float
    min_angle: float
    max_angle: float
    origin: Vector3 | None = None
    rpy: Vector3 = (0.0, 0.0, 0.0)
    radius: float = DEFAULT_LINK_RADIUS

    def __post_init__(self) -> None:
        if not self.name:
            raise JointSpaceError("joint name must not be empty")
        if not self.min_angle <= self.max_angle:
            raise JointSpaceError(
                f"joint {self.name}: min_angle {self.min_angle} > max_angle {self.max_angle}"
            )
        norm = math.sqrt(sum(c * c for c in self.axis))
        if abs(norm - 1.0) > AXIS_TOLERANCE:
            raise JointSpaceError(
                f"joint {self.name}: axis {self.axis} is not unit length (norm={norm!r})"
            )
        if self.link_length < 0:
            raise JointSpaceError(f"joint {self.name}: negative link length {self.link_length}")
        if self.radius <= 0:
            raise JointSpaceError(f"joint {self.name}: radius must be positive")

    def canonical(self) -> str:
        origin = "-" if self.origin is None else _join(self.origin)
        return "|".join(
            [
                self.name,
                self.parent_link,
                _join(self.axis),
                repr(float(self.link_length)),
                repr(float(self.min_angle)),
                repr(float(self.max_angle)),
                origin,
                _join(self.rpy),
                repr(float(self.radius)),
            ]
        )


@dataclass(frozen=True)
class JointSpace:
    """Ordered, immutable set of joints; order is the serialization order."""

    joints: tuple[JointSpec, ...]

    def __post_init__(self) -> None:
        seen: set[str] = set()
        for spec in self.joints:
            if spec.name in seen:
                raise JointSpaceError(f"duplicate joint name {spec.name}")
            seen.add(spec.name)

    def __len__(self) -> int:
        return len(self.joints)

    @property
    def names(self) -> tuple[str, ...]:
        return tuple(spec.name for spec in self.joints)

    @cached_property
    def mins(self) -> np.ndarray:
        return _frozen(np.array([s.min_angle for s in self.joints], dtype=np.float64))

    @cached_property
    def maxs(self) -> np.ndarray:
        return _frozen(np.array([s.max_angle for s in self.joints], dtype=np.float64))

    @cached_property
    def link_lengths(self) -> np.ndarray:
        return _frozen(np.array([s.link_length for s in self.joints], dtype=np.float64))

    @cached_property
    def fingerprint(self) -> str:
        """SHA-256 over the canonicalized definition."""
        canonical = "\n".join(spec.canonical() for spec in self.joints) + "\n"
        return hashlib.sha256(canonical.encode("utf8")).hexdigest()

    def index(self, name: str) -> int:
        for i, spec in enumerate(self.joints):
            if spec.name == name:
                return i
        raise KeyError(name)


@dataclass(frozen=True)
class JointVector:
    """One configuration: an angle in radians per joint, in joint-space order."""

    angles: np.ndarray

    def __post_init__(self) -> None:
        angles = np.array(self.angles, dtype=np.float64).reshape(-1)
        object.__setattr__(self, "angles", _frozen(angles))

    def __len__(self) -> int:
        return len(self.angles)


@dataclass(frozen=True)
class HandPose:
    """World-frame rigid transform of every link, index-aligned with the joints."""

    rotations: np.ndarray
    translations: np.ndarray
    link_lengths: np.ndarray

    def __len__(self) -> int:
        return len(self.rotations)

    @property
    def link_transforms(self) -> list[tuple[np.ndarray, np.ndarray]]:
        return list(zip(self.rotations, self.translations))

    def link_segment(self, j: int) -> tuple[np.ndarray, np.ndarray]:
        """Start and end point of link ``j``; links extend along local +x."""
        start = self.translations[j]
        return start, start + self.rotations[j][:, 0] * self.link_lengths[j]


def _join(values) -> str:
    return ",".join(repr(float(v)) for v in values)


def _frozen(array: np.ndarray) -> np.ndarray:
    array.setflags(write=False)
    return array


# ---------------------------------------------------------------------------
# Definition file
# ---------------------------------------------------------------------------


def _scan_key_lines(text: str, path: Path) -> dict[str, int]:
    """Map each assigned key to its line number, rejecting malformed lines."""

    key_lines: dict[str, int] = {}
    for number, line in enumerate(text.splitlines(), start=1):
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        match = _ASSIGNMENT_PATTERN.match(line)
        if not match:
            raise JointSpaceError(f"{path}:{number}: malformed line {stripped!r}")
        key = match.group(1)
        if key in key_lines:
            raise JointSpaceError(
                f"{path}:{number}: duplicate key {key} (first set on line {key_lines[key]})"
            )
        key_lines[key] = number
    return key_lines


def _parse_float(raw: str, key: str, where: str) -> float:
    try:
        value = float(raw)
    except ValueError:
        raise JointSpaceError(f"{where}: {key}={raw!r} is not a number") from None
    if not math.isfinite(value):
        raise JointSpaceError(f"{where}: {key}={raw!r} is not finite")
    return value


def _parse_vector(raw: str, key: str, where: str) -> Vector3:
    parts = [p.strip() for p in raw.split(",")]
    if len(parts) != 3:
        raise JointSpaceError(f"{where}: {key}={raw!r} must hold three comma-separated floats")
    x, y, z = (_parse_float(p, key, where) for p in parts)
    return (x, y, z)


def load_joint_space(definition_file: str | Path = DEFAULT_DEFINITION) -> JointSpace:
    """Read and validate a joint definition file.

    Errors name the offending joint and the line it was declared on.
    """

    path = Path(definition_file)
    text = path.read_text(encoding="utf8")
    key_lines = _scan_key_lines(text, path)
    values = dotenv_values(stream=io.StringIO(text), interpolate=False)

    groups: dict[int, dict[str, str]] = {}
    for key, value in values.items():
        match = _KEY_PATTERN.match(key)
        if not match or match.group(2) not in REQUIRED_FIELDS + OPTIONAL_FIELDS:
            raise JointSpaceError(f"{path}:{key_lines.get(key, '?')}: unknown key {key}")
        groups.setdefault(int(match.group(1)), {})[match.group(2)] = value or ""

    if not groups:
        raise JointSpaceError(f"{path}: no joints defined")

    joints: list[JointSpec] = []
    for expected, number in enumerate(sorted(groups), start=1):
        fields = groups[number]
        first_line = min(key_lines.get(f"JOINT{number}_{f}", 0) for f in fields)
        if number != expected:
            raise JointSpaceError(
                f"{path}:{first_line}: joint numbering skips JOINT{expected} before JOINT{number}"
            )
        name = fields.get("NAME", f"JOINT{number}")
        line = key_lines.get(f"JOINT{number}_NAME", first_line)
        where = f"{path}:{line}: joint {name}"
        missing = [f for f in REQUIRED_FIELDS if f not in fields]
        if missing:
            raise JointSpaceError(f"{where}: missing {', '.join(missing)}")

        try:
            spec = JointSpec(
                name=name,
                parent_link=fields["PARENT"],
                axis=_parse_vector(fields["AXIS"], f"JOINT{number}_AXIS", where),
                link_length=_parse_float(fields["LENGTH"], f"JOINT{number}_LENGTH", where),
                min_angle=_parse_float(fields["MIN"], f"JOINT{number}_MIN", where),
                max_angle=_parse_float(fields["MAX"], f"JOINT{number}_MAX", where),
                origin=(
                    _parse_vector(fields["ORIGIN"], f"JOINT{number}_ORIGIN", where)
                    if "ORIGIN" in fields
                    else None
                ),
                rpy=(
                    _parse_vector(fields["RPY"], f"JOINT{number}_RPY", where)
                    if "RPY" in fields
                    else (0.0, 0.0, 0.0)
                ),
                radius=(
                    _parse_float(fields["RADIUS"], f"JOINT{number}_RADIUS", where)
                    if "RADIUS" in fields
                    else DEFAULT_LINK_RADIUS
                ),
            )
        except JointSpaceError as exc:
            if str(exc).startswith(str(path)):
                raise
            raise JointSpaceError(f"{path}:{line}: {exc}") from exc

        if any(j.name == spec.name for j in joints):
            raise JointSpaceError(f"{where}: duplicate joint name {spec.name}")
        joints.append(spec)

    space = JointSpace(tuple(joints))
    logging.debug(
        "Loaded joint space path=%s joints=%d fingerprint=%s",
        path,
        len(space),
        space.fingerprint,
    )
    return space


def dump_joint_space(space: JointSpace) -> str:
    """Serialize ``space`` back into the definition-file format."""

    lines: list[str] = []
    for number, spec in enumerate(space.joints, start=1):
        prefix = f"JOINT{number}"
        lines.extend(
            [
                f"{prefix}_NAME={spec.name}",
                f"{prefix}_PARENT={spec.parent_link}",
                f"{prefix}_AXIS={_join(spec.axis)}",
                f"{prefix}_LENGTH={float(spec.link_length)!r}",
                f"{prefix}_MIN={float(spec.min_angle)!r}",
                f"{prefix}_MAX={float(spec.max_angle)!r}",
            ]
        )
        if spec.origin is not None:
            lines.append(f"{prefix}_ORIGIN={_join(spec.origin)}")
        lines.append(f"{prefix}_RPY={_join(spec.rpy)}")
        lines.append(f"{prefix}_RADIUS={float(spec.radius)!r}")
        lines.append("")
    return "\n".join(lines)


# ---------------------------------------------------------------------------
# Kinematics
# ---------------------------------------------------------------------------


def _angles_for(space: JointSpace, q: JointVector) -> np.ndarray:
    if len(q) != len(space):
        raise JointSpaceError(
            f"joint vector has {len(q)} angles, joint space has {len(space)} joints"
        )
    return q.angles


def axis_angle_matrix(axis: Vector3, angle: float) -> np.ndarray:
    """Rodrigues rotation about a unit ``axis``."""

    x, y, z = axis
    k = np.array([[0.0, -z, y], [z, 0.0, -x], [-y, x, 0.0]])
    return np.eye(3) + math.sin(angle) * k + (1.0 - math.cos(angle)) * (k @ k)


def rpy_matrix(rpy: Vector3) -> np.ndarray:
    """Fixed-axis roll/pitch/yaw rotation, ``Rz(yaw) @ Ry(pitch) @ Rx(roll)``."""

    roll, pitch, yaw = rpy
    if roll == pitch == yaw == 0.0:
        return np.eye(3)
    return (
        axis_angle_matrix((0.0, 0.0, 1.0), yaw)
        @ axis_angle_matrix((0.0, 1.0, 0.0), pitch)
        @ axis_angle_matrix((1.0, 0.0, 0.0), roll)
    )


def forward_kinematics(space: JointSpace, q: JointVector) -> HandPose:
    """Compose parent transforms with per-joint rotations, root at the wrist."""

    angles = _angles_for(space, q)
    count = len(space)
    rotations = np.empty((count, 3, 3))
    translations = np.empty((count, 3))
    index: dict[str, int] = {ROOT_LINK: -1}

    for j, spec in enumerate(space.joints):
        parent = index.get(spec.parent_link)
        if parent is None:
            raise JointSpaceError(
                f"joint {spec.name}: unknown parent link {spec.parent_link!r}"
            )
        if parent < 0:
            parent_rotation = np.eye(3)
            parent_translation = np.zeros(3)
            default_origin = np.zeros(3)
        else:
            parent_rotation = rotations[parent]
            parent_translation = translations[parent]
            default_origin = np.array([space.joints[parent].link_length, 0.0, 0.0])

        origin = default_origin if spec.origin is None else np.asarray(spec.origin)
        rotations[j] = (
            parent_rotation @ rpy_matrix(spec.rpy) @ axis_angle_matrix(spec.axis, angles[j])
        )
        translations[j] = parent_translation + parent_rotation @ origin
        index[spec.name] = j

    return HandPose(_frozen(rotations), _frozen(translations), space.link_lengths)


def clamp_to_ranges(space: JointSpace, q: JointVector) -> JointVector:
    angles = _angles_for(space, q)
    return JointVector(np.clip(angles, space.mins, space.maxs))


def rest_configuration(space: JointSpace) -> JointVector:
    """All-zero configuration clamped into the joint ranges."""
    return clamp_to_ranges(space, JointVector(np.zeros(len(space))))


def midpoint_configuration(space: JointSpace) -> JointVector:
    return JointVector(0.5 * (space.mins + space.maxs))

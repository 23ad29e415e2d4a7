"""Joint-angle label strings and on-disk dataset records.

A label is the concatenation of ``<name>value</name>`` elements in joint-space
order with no separators, e.g. ``<lh_WRJ2>0.1</lh_WRJ2><lh_WRJ1>-0.25</lh_WRJ1>``.
The strict parser accepts exactly that shape; the lenient parser accepts model
output with whitespace, surrounding text and arbitrary element order.
"""

from __future__ import annotations

import logging
import re
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import NewType

import numpy as np

from .kinematics import JointSpace, JointSpaceError, JointVector
from .renderer import Image, decode_png, encode_png

AngleString = NewType("AngleString", str)

DECIMALS = 6
RANGE_SLACK = 5e-7
MAX_ISSUES = 1000

IMAGES_DIR = "images"
LABELS_DIR = "labels"

_NUMBER = re.compile(r"[+-]?(?:\d+(?:\.\d*)?|\.\d+)(?:[eE][+-]?\d+)?")
_NAME = r"[A-Za-z_][A-Za-z0-9_]*"
_STRICT_OPEN = re.compile(rf"<({_NAME})>")
_STRICT_CLOSE = re.compile(rf"</({_NAME})>")
_LENIENT_TAG = re.compile(rf"<\s*(/\s*)?({_NAME})\s*>")


class IssueKind(str, Enum):
    MISSING_TAG = "missing_tag"
    DUPLICATE_TAG = "duplicate_tag"
    UNKNOWN_TAG = "unknown_tag"
    MALFORMED_NUMBER = "malformed_number"
    MISMATCHED_CLOSE = "mismatched_close"
    OUT_OF_RANGE = "out_of_range"
    OUT_OF_ORDER = "out_of_order"
    UNEXPECTED_TEXT = "unexpected_text"


LENIENT_FATAL = frozenset(
    {
        IssueKind.MISSING_TAG,
        IssueKind.DUPLICATE_TAG,
        IssueKind.MALFORMED_NUMBER,
        IssueKind.MISMATCHED_CLOSE,
    }
)


class LabelParseError(ValueError):
    """A label file could not be parsed strictly."""


class RecordNotFoundError(FileNotFoundError):
    """The image or label file of a record is absent."""


@dataclass(frozen=True)
class ParseIssue:
    kind: IssueKind
    joint: str | None
    position: int
    fatal: bool = True

    def to_dict(self) -> dict:
        return {
            "kind": self.kind.value,
            "joint": self.joint,
            "position": self.position,
            "fatal": self.fatal,
        }

    def __str__(self) -> str:
        joint = f" joint={self.joint}" if self.joint else ""
        return f"{self.kind.value}{joint} at offset {self.position}"


@dataclass
class ParseReport:
    mode: str
    vector: JointVector | None = None
    issues: list[ParseIssue] = field(default_factory=list)
    dropped_issues: int = 0

    @property
    def fatal(self) -> bool:
        return any(issue.fatal for issue in self.issues)

    def add(self, kind: IssueKind, joint: str | None, position: int, fatal: bool = True) -> None:
        if len(self.issues) >= MAX_ISSUES:
            self.dropped_issues += 1
            return
        self.issues.append(ParseIssue(kind, joint, position, fatal))

    def to_dict(self) -> dict:
        return {
            "mode": self.mode,
            "vector": None if self.vector is None else self.vector.angles.tolist(),
            "issues": [issue.to_dict() for issue in self.issues],
            "dropped_issues": self.dropped_issues,
        }


def format_angle(value: float) -> str:
    """Shortest decimal with at most six fractional digits."""

    text = f"{value:.{DECIMALS}f}".rstrip("0").rstrip(".")
    return "0" if text in {"-0", ""} else text


def encode_angles(space: JointSpace, q: JointVector) -> AngleString:
    if len(q) != len(space):
        raise JointSpaceError(
            f"joint vector has {len(q)} angles, joint space has {len(space)} joints"
        )
    return AngleString(
        "".join(
            f"<{name}>{format_angle(value)}</{name}>"
            for name, value in zip(space.names, q.angles)
        )
    )


def _out_of_range(space: JointSpace, j: int, value: float) -> bool:
    return (
        value < space.joints[j].min_angle - RANGE_SLACK
        or value > space.joints[j].max_angle + RANGE_SLACK
    )


def parse_angles_strict(space: JointSpace, text: str) -> ParseReport:
    """Accept only the canonical encoding; every deviation is fatal."""

    report = ParseReport(mode="strict")
    index = {name: j for j, name in enumerate(space.names)}
    values: dict[str, float] = {}
    expected = 0
    pos = 0

    while pos < len(text):
        opening = _STRICT_OPEN.match(text, pos)
        if opening is None:
            report.add(IssueKind.UNEXPECTED_TEXT, None, pos)
            resync = _STRICT_OPEN.search(text, pos + 1)
            if resync is None:
                break
            pos = resync.start()
            continue

        name = opening.group(1)
        value_start = opening.end()
        value_end = text.find("<", value_start)
        if value_end < 0:
            report.add(IssueKind.MISMATCHED_CLOSE, name, value_start)
            break
        closing = _STRICT_CLOSE.match(text, value_end)
        if closing is None or closing.group(1) != name:
            report.add(IssueKind.MISMATCHED_CLOSE, name, value_end)
            pos = closing.end() if closing is not None else value_end
            continue
        pos = closing.end()

        if name not in index:
            report.add(IssueKind.UNKNOWN_TAG, name, opening.start())
            continue
        if name in values:
            report.add(IssueKind.DUPLICATE_TAG, name, opening.start())
            continue
        if expected >= len(space) or space.names[expected] != name:
            report.add(IssueKind.OUT_OF_ORDER, name, opening.start())
        expected = index[name] + 1

        raw = text[value_start:value_end]
        if _NUMBER.fullmatch(raw) is None:
            report.add(IssueKind.MALFORMED_NUMBER, name, value_start)
            values[name] = float("nan")
            continue
        value = float(raw)
        if _out_of_range(space, index[name], value):
            report.add(IssueKind.OUT_OF_RANGE, name, value_start)
        values[name] = value

    for name in space.names:
        if name not in values:
            report.add(IssueKind.MISSING_TAG, name, len(text))

    if not report.issues and not report.dropped_issues:
        report.vector = JointVector(np.array([values[n] for n in space.names]))
    return report


def parse_angles_lenient(space: JointSpace, text: str) -> ParseReport:
    """Collect values by tag name, tolerating whitespace, order and stray text.

    Missing, duplicate, unclosed and non-numeric joint elements are fatal.
    Unknown tags, closed or not, are warnings, and out-of-range values are
    clamped with a warning.
    """

    report = ParseReport(mode="lenient")
    index = {name: j for j, name in enumerate(space.names)}
    values: dict[str, float] = {}
    open_name: str | None = None
    open_start = open_end = 0

    def drop_open() -> None:
        # An unclosed joint element loses its value; a stray unknown tag does not.
        if open_name in index:
            report.add(IssueKind.MISMATCHED_CLOSE, open_name, open_start)
        else:
            report.add(IssueKind.UNKNOWN_TAG, open_name, open_start, fatal=False)

    for tag in _LENIENT_TAG.finditer(text):
        closing, name = tag.group(1) is not None, tag.group(2)
        if not closing:
            if open_name is not None:
                drop_open()
            open_name, open_start, open_end = name, tag.start(), tag.end()
            continue
        if open_name is None:
            report.add(IssueKind.MISMATCHED_CLOSE, name, tag.start(), fatal=False)
            continue
        if name != open_name:
            drop_open()
            open_name = None
            report.add(IssueKind.MISMATCHED_CLOSE, name, tag.start(), fatal=False)
            continue

        raw = text[open_end:tag.start()].strip()
        value_start = open_end
        open_name = None
        if name not in index:
            report.add(IssueKind.UNKNOWN_TAG, name, open_start, fatal=False)
            continue
        if name in values:
            report.add(IssueKind.DUPLICATE_TAG, name, open_start)
            continue
        if _NUMBER.fullmatch(raw) is None:
            report.add(IssueKind.MALFORMED_NUMBER, name, value_start)
            values[name] = float("nan")
            continue
        value = float(raw)
        spec = space.joints[index[name]]
        if _out_of_range(space, index[name], value):
            report.add(IssueKind.OUT_OF_RANGE, name, value_start, fatal=False)
            value = min(max(value, spec.min_angle), spec.max_angle)
        values[name] = value

    if open_name is not None:
        drop_open()

    for name in space.names:
        if name not in values:
            report.add(IssueKind.MISSING_TAG, name, len(text))

    if not report.fatal and not report.dropped_issues:
        report.vector = JointVector(np.array([values[n] for n in space.names]))
    return report


def parse_angles(space: JointSpace, text: str, mode: str = "strict") -> ParseReport:
    if mode == "strict":
        return parse_angles_strict(space, text)
    if mode == "lenient":
        return parse_angles_lenient(space, text)
    raise ValueError(f"unknown parse mode {mode!r}")


# ---------------------------------------------------------------------------
# Records
# ---------------------------------------------------------------------------


def record_paths(root: str | Path, index: int) -> tuple[Path, Path]:
    stem = f"{index:08d}"
    root = Path(root)
    return root / IMAGES_DIR / f"{stem}.png", root / LABELS_DIR / f"{stem}.txt"


def label_bytes(angles: AngleString) -> bytes:
    return (angles + "\n").encode("utf8")


def write_record(root: str | Path, index: int, image: Image, angles: AngleString) -> int:
    """Write one image/label pair and return the bytes written."""

    image_path, label_path = record_paths(root, index)
    image_path.parent.mkdir(parents=True, exist_ok=True)
    label_path.parent.mkdir(parents=True, exist_ok=True)
    written = encode_png(image, image_path)
    data = label_bytes(angles)
    label_path.write_bytes(data)
    return written + len(data)


def read_label(path: Path) -> str:
    text = path.read_bytes().decode("utf8")
    return text[:-1] if text.endswith("\n") else text


def read_record(root: str | Path, index: int, space: JointSpace) -> tuple[Image, JointVector]:
    image_path, label_path = record_paths(root, index)
    if not image_path.is_file() or not label_path.is_file():
        raise RecordNotFoundError(
            f"record {index} not found: expected {image_path} and {label_path}"
        )
    try:
        text = read_label(label_path)
    except UnicodeDecodeError as exc:
        raise LabelParseError(f"{label_path}: not UTF-8 ({exc})") from exc
    report = parse_angles_strict(space, text)
    if report.vector is None:
        detail = ", ".join(str(issue) for issue in report.issues[:3])
        logging.debug("Label parse failed path=%s issues=%d", label_path, len(report.issues))
        raise LabelParseError(f"{label_path}: {detail}")
    return decode_png(image_path), report.vector

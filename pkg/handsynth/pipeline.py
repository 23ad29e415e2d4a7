"""Dataset generation and verification.

Record ``i`` of a dataset is a pure function of the manifest and ``i``:
sample joints and appearance from the per-sample seed, pose the hand, render it
and write the image/label pair. The manifest is written last and marks a
complete dataset.
"""

from __future__ import annotations

import hashlib
import json
import logging
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from itertools import repeat
from pathlib import Path
from typing import Iterator

from .codec import (
    IMAGES_DIR,
    LABELS_DIR,
    AngleString,
    encode_angles,
    label_bytes,
    parse_angles_strict,
    read_label,
    read_record,
    record_paths,
    write_record,
)
from .kinematics import JointSpace, JointVector, dump_joint_space, forward_kinematics, load_joint_space
from .renderer import (
    DEFAULT_CAMERA,
    DEFAULT_LIGHT,
    CameraConfig,
    Image,
    LightConfig,
    build_hand_mesh,
    decode_png,
    png_bytes,
    render,
)
from .sampling import (
    DEFAULT_APPEARANCE_RANGES,
    GENERATOR_NAME,
    AppearanceParams,
    AppearanceRanges,
    SeedSpec,
    sample_appearance,
    sample_configuration,
)

FORMAT_VERSION = 1
MANIFEST_NAME = "manifest.json"
JOINTS_NAME = "joints.env"
DEFAULT_VAL_COUNT = 500
REDERIVE_STRIDE = 100
_BLOCK_PER_WORKER = 64


class ManifestError(ValueError):
    """Missing or inconsistent dataset manifest."""


def default_val_count(count: int) -> int:
    return min(DEFAULT_VAL_COUNT, count // 5)


@dataclass(frozen=True)
class DatasetManifest:
    master_seed: int
    count: int
    train_count: int
    val_count: int
    joint_space_fingerprint: str
    camera: CameraConfig = DEFAULT_CAMERA
    light: LightConfig = DEFAULT_LIGHT
    appearance_ranges: AppearanceRanges = DEFAULT_APPEARANCE_RANGES
    generator_name: str = GENERATOR_NAME
    format_version: int = FORMAT_VERSION

    def __post_init__(self) -> None:
        for name in ("count", "train_count", "val_count"):
            if getattr(self, name) < 0:
                raise ManifestError(f"{name} must be non-negative")
        if self.train_count + self.val_count != self.count:
            raise ManifestError(
                f"train_count {self.train_count} + val_count {self.val_count} "
                f"!= count {self.count}"
            )
        if self.format_version != FORMAT_VERSION:
            raise ManifestError(
                f"unsupported format_version {self.format_version} (expected {FORMAT_VERSION})"
            )

    def to_dict(self) -> dict:
        return {
            "master_seed": self.master_seed,
            "count": self.count,
            "train_count": self.train_count,
            "val_count": self.val_count,
            "joint_space_fingerprint": self.joint_space_fingerprint,
            "camera": self.camera.to_dict(),
            "light": self.light.to_dict(),
            "appearance_ranges": self.appearance_ranges.to_dict(),
            "generator_name": self.generator_name,
            "format_version": self.format_version,
        }

    @classmethod
    def from_dict(cls, data: dict) -> DatasetManifest:
        try:
            return cls(
                master_seed=int(data["master_seed"]),
                count=int(data["count"]),
                train_count=int(data["train_count"]),
                val_count=int(data["val_count"]),
                joint_space_fingerprint=str(data["joint_space_fingerprint"]),
                camera=CameraConfig.from_dict(data["camera"]),
                light=LightConfig.from_dict(data["light"]),
                appearance_ranges=AppearanceRanges.from_dict(data["appearance_ranges"]),
                generator_name=str(data["generator_name"]),
                format_version=int(data["format_version"]),
            )
        except (KeyError, TypeError) as exc:
            raise ManifestError(f"manifest field missing or malformed: {exc}") from exc


def build_manifest(
    space: JointSpace,
    master_seed: int,
    count: int,
    val_count: int | None = None,
    camera: CameraConfig = DEFAULT_CAMERA,
    light: LightConfig = DEFAULT_LIGHT,
    appearance_ranges: AppearanceRanges = DEFAULT_APPEARANCE_RANGES,
) -> DatasetManifest:
    if val_count is None:
        val_count = default_val_count(count)
    return DatasetManifest(
        master_seed=master_seed,
        count=count,
        train_count=count - val_count,
        val_count=val_count,
        joint_space_fingerprint=space.fingerprint,
        camera=camera,
        light=light,
        appearance_ranges=appearance_ranges,
    )


@dataclass(frozen=True)
class RenderedSample:
    index: int
    seed: SeedSpec
    angles: JointVector
    appearance: AppearanceParams
    image: Image


@dataclass(frozen=True)
class GenerationSummary:
    count: int
    wall_time: float
    bytes_written: int


@dataclass(frozen=True)
class VerificationFailure:
    index: int
    cause: str


@dataclass
class VerificationReport:
    records_checked: int = 0
    failures: list[VerificationFailure] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.failures

    def to_dict(self) -> dict:
        return {
            "records_checked": self.records_checked,
            "failures": [{"index": f.index, "cause": f.cause} for f in self.failures],
        }


def render_sample(space: JointSpace, manifest: DatasetManifest, index: int) -> RenderedSample:
    """Produce record ``index`` from seeds alone."""

    seed = SeedSpec(manifest.master_seed, index)
    angles = sample_configuration(space, seed)
    appearance = sample_appearance(seed, manifest.appearance_ranges)
    mesh = build_hand_mesh(space, forward_kinematics(space, angles), appearance)
    image = render(mesh, manifest.camera, manifest.light)
    return RenderedSample(index, seed, angles, appearance, image)


def _write_sample(space: JointSpace, manifest: DatasetManifest, out: Path, index: int) -> int:
    sample = render_sample(space, manifest, index)
    return write_record(out, index, sample.image, encode_angles(space, sample.angles))


def _blocks(count: int, size: int) -> Iterator[range]:
    for start in range(0, count, size):
        yield range(start, min(start + size, count))


def _stray_records(root: Path, count: int) -> Iterator[tuple[int, Path]]:
    """Record files whose index is at or beyond ``count``."""
    for directory, suffix in ((IMAGES_DIR, ".png"), (LABELS_DIR, ".txt")):
        for path in sorted((root / directory).glob(f"*{suffix}")):
            if path.stem.isdigit() and int(path.stem) >= count:
                yield int(path.stem), path


def generate_dataset(
    space: JointSpace, manifest: DatasetManifest, out: str | Path, workers: int = 1
) -> GenerationSummary:
    """Write ``manifest.count`` records under ``out``; identical for any ``workers``.

    Record files left over from a larger earlier run are removed first.
    """

    if workers < 1:
        raise ValueError(f"workers must be a positive integer, got {workers}")
    if manifest.joint_space_fingerprint != space.fingerprint:
        raise ManifestError("manifest fingerprint does not match the joint space")

    out = Path(out)
    started = time.perf_counter()
    out.mkdir(parents=True, exist_ok=True)
    manifest_path = out / MANIFEST_NAME
    manifest_path.unlink(missing_ok=True)
    (out / IMAGES_DIR).mkdir(exist_ok=True)
    (out / LABELS_DIR).mkdir(exist_ok=True)
    stale = list(_stray_records(out, manifest.count))
    for _, path in stale:
        path.unlink()
    if stale:
        logging.info("Removed %d stale record files from %s", len(stale), out)
    (out / JOINTS_NAME).write_text(dump_joint_space(space), encoding="utf8")

    bytes_written = 0
    if workers == 1:
        for index in range(manifest.count):
            bytes_written += _write_sample(space, manifest, out, index)
    else:
        with ProcessPoolExecutor(max_workers=workers) as executor:
            for block in _blocks(manifest.count, workers * _BLOCK_PER_WORKER):
                bytes_written += sum(
                    executor.map(
                        _write_sample,
                        repeat(space),
                        repeat(manifest),
                        repeat(out),
                        block,
                        chunksize=max(1, len(block) // (workers * 4)),
                    )
                )

    data = (json.dumps(manifest.to_dict(), indent=2) + "\n").encode("utf8")
    manifest_path.write_bytes(data)
    bytes_written += len(data)

    summary = GenerationSummary(manifest.count, time.perf_counter() - started, bytes_written)
    logging.info(
        "Generated dataset out=%s count=%d workers=%d wall_time=%.2fs bytes_written=%d",
        out,
        summary.count,
        workers,
        summary.wall_time,
        summary.bytes_written,
    )
    return summary


def load_manifest(root: str | Path) -> DatasetManifest:
    path = Path(root) / MANIFEST_NAME
    if not path.is_file():
        raise ManifestError(f"{path} not found: dataset is missing or incomplete")
    try:
        data = json.loads(path.read_text(encoding="utf8"))
    except json.JSONDecodeError as exc:
        raise ManifestError(f"{path}: invalid JSON ({exc})") from exc
    return DatasetManifest.from_dict(data)


def dataset_fingerprint(root: str | Path) -> str:
    """SHA-256 of the manifest bytes."""
    path = Path(root) / MANIFEST_NAME
    return hashlib.sha256(path.read_bytes()).hexdigest()


def split_indices(manifest: DatasetManifest, split: str) -> range:
    if split == "train":
        return range(0, manifest.train_count)
    if split == "val":
        return range(manifest.train_count, manifest.count)
    raise ValueError(f"unknown split {split!r} (expected 'train' or 'val')")


@dataclass(frozen=True)
class DatasetSplit:
    """One split of a generated dataset, loaded lazily record by record."""

    root: Path
    name: str
    space: JointSpace
    manifest: DatasetManifest
    indices: range

    def __len__(self) -> int:
        return len(self.indices)

    def records(self) -> Iterator[tuple[int, Image, JointVector]]:
        for index in self.indices:
            image, angles = read_record(self.root, index, self.space)
            yield index, image, angles


def load_split(root: str | Path, split: str) -> DatasetSplit:
    root = Path(root)
    manifest = load_manifest(root)
    space = load_joint_space(root / JOINTS_NAME)
    if space.fingerprint != manifest.joint_space_fingerprint:
        raise ManifestError(
            f"{root / JOINTS_NAME} fingerprint {space.fingerprint} does not match the manifest"
        )
    return DatasetSplit(root, split, space, manifest, split_indices(manifest, split))


def _check_record(
    root: Path, index: int, space: JointSpace, manifest: DatasetManifest
) -> list[str]:
    causes: list[str] = []
    image_path, label_path = record_paths(root, index)

    label_raw: bytes | None = None
    if not label_path.is_file():
        causes.append(f"missing label {label_path.name}")
    else:
        label_raw = label_path.read_bytes()
        try:
            report = parse_angles_strict(space, read_label(label_path))
        except UnicodeDecodeError:
            causes.append("label is not UTF-8")
        else:
            if report.vector is None:
                causes.append("label: " + ", ".join(str(i) for i in report.issues[:3]))

    image_raw: bytes | None = None
    if not image_path.is_file():
        causes.append(f"missing image {image_path.name}")
    else:
        try:
            image = decode_png(image_path)
        except OSError as exc:
            causes.append(f"image decode failed: {exc}")
        else:
            image_raw = image_path.read_bytes()
            if (image.width, image.height) != (manifest.camera.width, manifest.camera.height):
                causes.append(
                    f"image is {image.width}x{image.height}, manifest says "
                    f"{manifest.camera.width}x{manifest.camera.height}"
                )

    if index % REDERIVE_STRIDE == 0 and not causes:
        sample = render_sample(space, manifest, index)
        if png_bytes(sample.image) != image_raw:
            causes.append("image bytes differ from regenerated record")
        if label_bytes(AngleString(encode_angles(space, sample.angles))) != label_raw:
            causes.append("label bytes differ from regenerated record")
    return causes


def verify_dataset(root: str | Path) -> VerificationReport:
    """Check every record and re-derive a 1% sample from seeds."""

    root = Path(root)
    manifest = load_manifest(root)
    space = load_joint_space(root / JOINTS_NAME)
    if space.fingerprint != manifest.joint_space_fingerprint:
        raise ManifestError("joint definition fingerprint does not match the manifest")

    report = VerificationReport()
    for index in range(manifest.count):
        causes = _check_record(root, index, space, manifest)
        report.records_checked += 1
        if causes:
            failure = VerificationFailure(index, "; ".join(causes))
            logging.warning("Verification failure index=%d cause=%s", index, failure.cause)
            report.failures.append(failure)
    for index, path in _stray_records(root, manifest.count):
        cause = f"{path.parent.name}/{path.name} is beyond count {manifest.count}"
        failure = VerificationFailure(index, cause)
        logging.warning("Verification failure index=%d cause=%s", index, failure.cause)
        report.failures.append(failure)

    logging.info(
        "Verified dataset root=%s records_checked=%d failures=%d",
        root,
        report.records_checked,
        len(report.failures),
    )
    return report

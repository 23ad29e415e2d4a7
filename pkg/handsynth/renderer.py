"""Deterministic software rasterizer for the hand model.

Links are tessellated as capsules, shaded per vertex with a single point light
(Lambert plus an ambient floor) and rasterized with a z-buffer onto a white
background. All work is vectorized with numpy; results depend only on the
inputs.
"""

from __future__ import annotations

import io
import math
from dataclasses import dataclass
from functools import lru_cache
from pathlib import Path

import numpy as np
from PIL import Image as PILImage

from .kinematics import HandPose, JointSpace, JointSpaceError
from .sampling import AppearanceParams, TextureKind

# Frozen tessellation: changing any of these changes every rendered dataset.
SEGMENTS_AROUND = 16
RINGS_ALONG = 8
CAP_BANDS = 4

AMBIENT = 0.15
NEAR_PLANE = 1e-4
STRIPE_PERIOD = 0.01
DEGENERATE_LENGTH = 1e-12

# Upper bound on (triangle, pixel) candidate pairs held in memory at once.
_MAX_PAIRS = 2_000_000

WHITE = 255


def _vec3(value, name: str) -> tuple[float, float, float]:
    values = tuple(float(v) for v in value)
    if len(values) != 3 or not all(math.isfinite(v) for v in values):
        raise ValueError(f"{name} must be three finite floats, got {value!r}")
    return values  # type: ignore[return-value]


@dataclass(frozen=True)
class CameraConfig:
    """Fixed pinhole camera.

    The default looks at the palm from 35 degrees off its normal, on the
    fingertip side, so finger flexion moves across the image plane.
    """

    position: tuple[float, float, float] = (0.37, 0.0, -0.37)
    look_at: tuple[float, float, float] = (0.11, 0.0, 0.0)
    up: tuple[float, float, float] = (1.0, 0.0, 0.0)
    vertical_fov: float = math.radians(40.0)
    width: int = 224
    height: int = 224

    def __post_init__(self) -> None:
        object.__setattr__(self, "position", _vec3(self.position, "position"))
        object.__setattr__(self, "look_at", _vec3(self.look_at, "look_at"))
        object.__setattr__(self, "up", _vec3(self.up, "up"))
        if int(self.width) <= 0 or int(self.height) <= 0:
            raise ValueError(f"image size must be positive, got {self.width}x{self.height}")
        object.__setattr__(self, "width", int(self.width))
        object.__setattr__(self, "height", int(self.height))
        if not 0.0 < self.vertical_fov < math.pi:
            raise ValueError(f"vertical_fov {self.vertical_fov} must lie in (0, pi)")
        up = np.asarray(self.up)
        if abs(np.linalg.norm(up) - 1.0) > 1e-9:
            raise ValueError(f"up vector {self.up} must be unit length")
        view = np.asarray(self.look_at) - np.asarray(self.position)
        if np.linalg.norm(view) == 0.0:
            raise ValueError("camera position and look_at coincide")
        if np.linalg.norm(np.cross(view / np.linalg.norm(view), up)) < 1e-9:
            raise ValueError("up vector is parallel to the view direction")

    def basis(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Right, up and forward unit vectors of the camera frame."""
        forward = np.asarray(self.look_at) - np.asarray(self.position)
        forward = forward / np.linalg.norm(forward)
        right = np.cross(forward, np.asarray(self.up))
        right = right / np.linalg.norm(right)
        return right, np.cross(right, forward), forward

    @property
    def focal_length(self) -> float:
        """Focal length in pixels."""
        return 0.5 * self.height / math.tan(0.5 * self.vertical_fov)

    def to_dict(self) -> dict:
        return {
            "position": list(self.position),
            "look_at": list(self.look_at),
            "up": list(self.up),
            "vertical_fov": self.vertical_fov,
            "width": self.width,
            "height": self.height,
        }

    @classmethod
    def from_dict(cls, data: dict) -> CameraConfig:
        return cls(
            position=tuple(data["position"]),
            look_at=tuple(data["look_at"]),
            up=tuple(data["up"]),
            vertical_fov=float(data["vertical_fov"]),
            width=int(data["width"]),
            height=int(data["height"]),
        )


@dataclass(frozen=True)
class LightConfig:
    """Single fixed point light."""

    position: tuple[float, float, float] = (0.11, 0.0, -0.35)
    intensity: float = 1.0

    def __post_init__(self) -> None:
        object.__setattr__(self, "position", _vec3(self.position, "position"))
        if not 0.0 < self.intensity <= 10.0:
            raise ValueError(f"light intensity {self.intensity} must lie in (0, 10]")

    def to_dict(self) -> dict:
        return {"position": list(self.position), "intensity": self.intensity}

    @classmethod
    def from_dict(cls, data: dict) -> LightConfig:
        return cls(position=tuple(data["position"]), intensity=float(data["intensity"]))


DEFAULT_CAMERA = CameraConfig()
DEFAULT_LIGHT = LightConfig()


@dataclass(frozen=True)
class Image:
    """Row-major RGB8 image; ``pixels`` has shape (height, width, 3)."""

    width: int
    height: int
    pixels: np.ndarray

    def __post_init__(self) -> None:
        pixels = np.ascontiguousarray(self.pixels, dtype=np.uint8)
        if pixels.shape != (self.height, self.width, 3):
            raise ValueError(
                f"pixel buffer shape {pixels.shape} does not match "
                f"{self.width}x{self.height} RGB"
            )
        object.__setattr__(self, "pixels", pixels)

    @classmethod
    def blank(cls, width: int, height: int) -> Image:
        return cls(width, height, np.full((height, width, 3), WHITE, dtype=np.uint8))

    @property
    def buffer(self) -> bytes:
        return self.pixels.tobytes()


@dataclass(frozen=True)
class HandMesh:
    """Triangle soup with per-vertex normals and colors."""

    vertices: np.ndarray
    normals: np.ndarray
    colors: np.ndarray
    triangles: np.ndarray

    @classmethod
    def empty(cls) -> HandMesh:
        zeros = np.zeros((0, 3))
        return cls(zeros, zeros, zeros, np.zeros((0, 3), dtype=np.int64))

    @property
    def triangle_count(self) -> int:
        return len(self.triangles)


# ---------------------------------------------------------------------------
# Mesh construction
# ---------------------------------------------------------------------------


def capsule_triangle_count(degenerate: bool = False) -> int:
    caps = 2 * SEGMENTS_AROUND * (2 * CAP_BANDS - 1)
    return caps if degenerate else 2 * SEGMENTS_AROUND * RINGS_ALONG + caps


def _band_triangles(rings: int, offset: int) -> np.ndarray:
    """Quads between consecutive rings of SEGMENTS_AROUND vertices, split in two."""

    ring, k = np.meshgrid(np.arange(rings - 1), np.arange(SEGMENTS_AROUND), indexing="ij")
    ring, k = ring.ravel(), k.ravel()
    k_next = (k + 1) % SEGMENTS_AROUND
    a = offset + ring * SEGMENTS_AROUND + k
    b = offset + ring * SEGMENTS_AROUND + k_next
    c = a + SEGMENTS_AROUND
    d = b + SEGMENTS_AROUND
    return np.concatenate([np.stack([a, b, d], 1), np.stack([a, d, c], 1)])


@lru_cache(maxsize=128)
def _capsule_template(length: float, radius: float) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Capsule in link-local coordinates, axis along +x from 0 to ``length``.

    A zero-length link yields only the two hemispherical caps, i.e. a sphere.
    """

    phi = 2.0 * np.pi * np.arange(SEGMENTS_AROUND) / SEGMENTS_AROUND
    cos_phi, sin_phi = np.cos(phi), np.sin(phi)
    positions: list[np.ndarray] = []
    normals: list[np.ndarray] = []
    triangles: list[np.ndarray] = []
    offset = 0

    if length > DEGENERATE_LENGTH:
        xs = length * np.arange(RINGS_ALONG + 1) / RINGS_ALONG
        normal = np.stack(
            [
                np.zeros(len(xs) * SEGMENTS_AROUND),
                np.tile(cos_phi, len(xs)),
                np.tile(sin_phi, len(xs)),
            ],
            axis=1,
        )
        position = radius * normal
        position[:, 0] = np.repeat(xs, SEGMENTS_AROUND)
        positions.append(position)
        normals.append(normal)
        triangles.append(_band_triangles(RINGS_ALONG + 1, offset))
        offset += len(position)
    else:
        length = 0.0

    elevation = 0.5 * np.pi * np.arange(CAP_BANDS) / CAP_BANDS
    for direction, center in ((1.0, length), (-1.0, 0.0)):
        cos_e = np.repeat(np.cos(elevation), SEGMENTS_AROUND)
        sin_e = np.repeat(np.sin(elevation), SEGMENTS_AROUND)
        normal = np.stack(
            [
                direction * sin_e,
                cos_e * np.tile(cos_phi, CAP_BANDS),
                cos_e * np.tile(sin_phi, CAP_BANDS),
            ],
            axis=1,
        )
        normal = np.vstack([normal, [direction, 0.0, 0.0]])
        position = radius * normal
        position[:, 0] += center

        pole = offset + CAP_BANDS * SEGMENTS_AROUND
        last_ring = offset + (CAP_BANDS - 1) * SEGMENTS_AROUND + np.arange(SEGMENTS_AROUND)
        fan = np.stack(
            [last_ring, offset + (CAP_BANDS - 1) * SEGMENTS_AROUND
             + (np.arange(SEGMENTS_AROUND) + 1) % SEGMENTS_AROUND,
             np.full(SEGMENTS_AROUND, pole)],
            axis=1,
        )
        positions.append(position)
        normals.append(normal)
        triangles.extend([_band_triangles(CAP_BANDS, offset), fan])
        offset += len(position)

    result = (np.vstack(positions), np.vstack(normals), np.vstack(triangles).astype(np.int64))
    for array in result:
        array.setflags(write=False)
    return result


def _vertex_colors(local: np.ndarray, appearance: AppearanceParams) -> np.ndarray:
    """Texture in link-local coordinates so patterns stay attached to the link."""

    base = np.asarray(appearance.base_color, dtype=np.float64)
    scale = appearance.texture_scale
    kind = TextureKind(appearance.texture_kind)
    if kind is TextureKind.STRIPES:
        band = np.floor(local[:, 0] * scale / STRIPE_PERIOD).astype(np.int64)
        shade = np.where(band % 2 == 1, 0.7, 1.0)
    elif kind is TextureKind.NOISE:
        x, y, z = local[:, 0], local[:, 1], local[:, 2]
        shade = 1.0 + 0.2 * (
            np.sin(311.0 * scale * x + 1.3)
            * np.sin(419.0 * scale * y + 0.7)
            * np.sin(523.0 * scale * z + 2.9)
        )
    else:
        shade = np.ones(len(local))
    return np.clip(shade[:, None] * base[None, :], 0.0, 1.0)


def build_hand_mesh(
    space: JointSpace, pose: HandPose, appearance: AppearanceParams
) -> HandMesh:
    """One capsule per link; zero-length links become spheres."""

    if len(pose) != len(space):
        raise JointSpaceError(
            f"pose has {len(pose)} link transforms, kinematic tree has {len(space)} links"
        )

    vertices, normals, colors, triangles = [], [], [], []
    offset = 0
    for j, spec in enumerate(space.joints):
        local, local_normals, local_tris = _capsule_template(
            float(spec.link_length), float(spec.radius)
        )
        rotation, translation = pose.rotations[j], pose.translations[j]
        vertices.append(local @ rotation.T + translation)
        normals.append(local_normals @ rotation.T)
        colors.append(_vertex_colors(local, appearance))
        triangles.append(local_tris + offset)
        offset += len(local)

    if not vertices:
        return HandMesh.empty()
    return HandMesh(
        vertices=np.vstack(vertices),
        normals=np.vstack(normals),
        colors=np.vstack(colors),
        triangles=np.vstack(triangles),
    )


# ---------------------------------------------------------------------------
# Rasterization
# ---------------------------------------------------------------------------


def _shade_vertices(mesh: HandMesh, light: LightConfig) -> np.ndarray:
    to_light = np.asarray(light.position) - mesh.vertices
    distance = np.linalg.norm(to_light, axis=1, keepdims=True)
    direction = to_light / np.maximum(distance, 1e-12)
    lambert = np.clip(np.einsum("ij,ij->i", mesh.normals, direction), 0.0, None)
    factor = np.minimum(1.0, AMBIENT + (1.0 - AMBIENT) * light.intensity * lambert)
    return mesh.colors * factor[:, None]


def _chunks(counts: np.ndarray):
    """Split triangle indices into runs whose pixel candidates fit in memory."""

    start = 0
    total = len(counts)
    while start < total:
        running = np.cumsum(counts[start:])
        stop = start + max(1, int(np.searchsorted(running, _MAX_PAIRS, side="right")))
        yield start, min(stop, total)
        start = stop


def render(mesh: HandMesh, camera: CameraConfig, light: LightConfig) -> Image:
    """Rasterize ``mesh``; uncovered pixels stay exactly white."""

    width, height = camera.width, camera.height
    image = np.full((height, width, 3), WHITE, dtype=np.uint8)
    if mesh.triangle_count == 0:
        return Image(width, height, image)

    right, up, forward = camera.basis()
    eye = np.asarray(camera.position)
    relative = mesh.vertices - eye
    depth = relative @ forward
    safe_depth = np.where(depth > NEAR_PLANE, depth, 1.0)
    focal = camera.focal_length
    sx = 0.5 * width + focal * (relative @ right) / safe_depth
    sy = 0.5 * height - focal * (relative @ up) / safe_depth

    tris = mesh.triangles
    facing = np.einsum("ij,ij->i", mesh.normals, -relative) > 0.0
    visible = np.all(depth[tris] > NEAR_PLANE, axis=1) & facing[tris].any(axis=1)
    tris = tris[visible]

    x, y, z = sx[tris], sy[tris], depth[tris]
    area = (x[:, 1] - x[:, 0]) * (y[:, 2] - y[:, 0]) - (y[:, 1] - y[:, 0]) * (x[:, 2] - x[:, 0])
    col_lo = np.maximum(np.ceil(x.min(axis=1) - 0.5), 0).astype(np.int64)
    col_hi = np.minimum(np.floor(x.max(axis=1) - 0.5), width - 1).astype(np.int64)
    row_lo = np.maximum(np.ceil(y.min(axis=1) - 0.5), 0).astype(np.int64)
    row_hi = np.minimum(np.floor(y.max(axis=1) - 0.5), height - 1).astype(np.int64)
    keep = (np.abs(area) > 1e-12) & (col_hi >= col_lo) & (row_hi >= row_lo)

    tris, x, y, z, area = tris[keep], x[keep], y[keep], z[keep], area[keep]
    col_lo, row_lo = col_lo[keep], row_lo[keep]
    span_x = col_hi[keep] - col_lo + 1
    span_y = row_hi[keep] - row_lo + 1
    counts = span_x * span_y

    shaded = _shade_vertices(mesh, light)
    z_buffer = np.full(width * height, np.inf)
    color_buffer = np.zeros((width * height, 3))

    for start, stop in _chunks(counts):
        n = counts[start:stop]
        owner = np.repeat(np.arange(start, stop), n)
        if len(owner) == 0:
            continue
        local = np.arange(len(owner)) - np.repeat(np.cumsum(n) - n, n)
        px = col_lo[owner] + local % span_x[owner]
        py = row_lo[owner] + local // span_x[owner]
        cx, cy = px + 0.5, py + 0.5

        x0, x1, x2 = x[owner, 0], x[owner, 1], x[owner, 2]
        y0, y1, y2 = y[owner, 0], y[owner, 1], y[owner, 2]
        a = area[owner]
        w0 = ((x2 - x1) * (cy - y1) - (y2 - y1) * (cx - x1)) / a
        w1 = ((x0 - x2) * (cy - y2) - (y0 - y2) * (cx - x2)) / a
        w2 = ((x1 - x0) * (cy - y0) - (y1 - y0) * (cx - x0)) / a
        inside = (w0 >= 0.0) & (w1 >= 0.0) & (w2 >= 0.0)
        if not inside.any():
            continue

        owner, w0, w1, w2 = owner[inside], w0[inside], w1[inside], w2[inside]
        pixel = (py * width + px)[inside]
        fragment_depth = w0 * z[owner, 0] + w1 * z[owner, 1] + w2 * z[owner, 2]

        # Nearest fragment per pixel; equal depths resolve to the lower triangle.
        order = np.lexsort((owner, fragment_depth, pixel))
        pixel, owner = pixel[order], owner[order]
        fragment_depth = fragment_depth[order]
        w0, w1, w2 = w0[order], w1[order], w2[order]
        first = np.ones(len(pixel), dtype=bool)
        first[1:] = pixel[1:] != pixel[:-1]
        pixel, owner, fragment_depth = pixel[first], owner[first], fragment_depth[first]
        w0, w1, w2 = w0[first], w1[first], w2[first]

        closer = fragment_depth < z_buffer[pixel]
        pixel, owner = pixel[closer], owner[closer]
        w0, w1, w2 = w0[closer], w1[closer], w2[closer]
        corner = tris[owner]
        color_buffer[pixel] = (
            w0[:, None] * shaded[corner[:, 0]]
            + w1[:, None] * shaded[corner[:, 1]]
            + w2[:, None] * shaded[corner[:, 2]]
        )
        z_buffer[pixel] = fragment_depth[closer]

    covered = np.isfinite(z_buffer)
    flat = image.reshape(-1, 3)
    flat[covered] = np.clip(np.rint(color_buffer[covered] * 255.0), 0, 255).astype(np.uint8)
    return Image(width, height, image)


# ---------------------------------------------------------------------------
# PNG
# ---------------------------------------------------------------------------


def png_bytes(image: Image) -> bytes:
    """8-bit RGB PNG encoding of ``image``."""

    buffer = io.BytesIO()
    PILImage.fromarray(image.pixels).save(buffer, format="PNG")
    return buffer.getvalue()


def encode_png(image: Image, out: str | Path) -> int:
    """Write ``image`` as PNG and return the number of bytes written."""

    data = png_bytes(image)
    Path(out).write_bytes(data)
    return len(data)


def decode_png(path: str | Path) -> Image:
    """Read a PNG written by :func:`encode_png`; corrupt files raise ``OSError``."""

    try:
        with PILImage.open(path) as handle:
            handle.load()
            rgb = handle if handle.mode == "RGB" else handle.convert("RGB")
            pixels = np.array(rgb, dtype=np.uint8)
    except (SyntaxError, ValueError, EOFError) as exc:
        raise OSError(f"cannot decode image {path}: {exc}") from exc
    return Image(pixels.shape[1], pixels.shape[0], pixels)

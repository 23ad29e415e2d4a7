import hashlib

import numpy as np
import pytest

from handsynth.kinematics import JointSpace, JointSpec, JointVector, forward_kinematics, rest_configuration
from handsynth.renderer import (
    DEFAULT_CAMERA,
    DEFAULT_LIGHT,
    CameraConfig,
    HandMesh,
    Image,
    LightConfig,
    build_hand_mesh,
    capsule_triangle_count,
    decode_png,
    encode_png,
    png_bytes,
    render,
)
from handsynth.sampling import AppearanceParams, SeedSpec, TextureKind, sample_appearance, sample_configuration

GRAY = AppearanceParams((0.8, 0.8, 0.8), 1.0, TextureKind.SOLID)


def _render_config(space, q, appearance=GRAY, camera=DEFAULT_CAMERA):
    mesh = build_hand_mesh(space, forward_kinematics(space, q), appearance)
    return render(mesh, camera, DEFAULT_LIGHT)


def _single_triangle(normal_z: float) -> HandMesh:
    vertices = np.array([[0.16, -0.05, 0.0], [0.06, -0.05, 0.0], [0.11, 0.05, 0.0]])
    normals = np.tile([0.0, 0.0, normal_z], (3, 1))
    colors = np.full((3, 3), 0.8)
    return HandMesh(vertices, normals, colors, np.array([[0, 1, 2]]))


def _non_white_fraction(image: Image) -> float:
    return float(np.mean(np.any(image.pixels != 255, axis=2)))


class TestCameraConfig:
    def test_defaults(self):
        assert (DEFAULT_CAMERA.width, DEFAULT_CAMERA.height) == (224, 224)

    @pytest.mark.parametrize(
        "kwargs",
        [
            {"width": 0},
            {"height": -3},
            {"vertical_fov": 0.0},
            {"vertical_fov": 3.2},
            {"position": (0.11, 0.0, -0.5), "look_at": (0.11, 0.0, 0.0), "up": (0.0, 0.0, 1.0)},
            {"up": (2.0, 0.0, 0.0)},
            {"look_at": DEFAULT_CAMERA.position},
        ],
    )
    def test_invalid(self, kwargs):
        with pytest.raises(ValueError):
            CameraConfig(**kwargs)

    def test_dict_round_trip(self):
        camera = CameraConfig(width=64, height=48)
        assert CameraConfig.from_dict(camera.to_dict()) == camera

    def test_light_intensity_positive(self):
        with pytest.raises(ValueError):
            LightConfig(intensity=0.0)


class TestBuildHandMesh:
    def test_single_capsule_triangle_count(self, single_joint_space):
        pose = forward_kinematics(single_joint_space, JointVector([0.0]))
        mesh = build_hand_mesh(single_joint_space, pose, GRAY)
        assert mesh.triangle_count == capsule_triangle_count() == 480

    def test_zero_length_link_is_sphere(self):
        radius = 0.01
        space = JointSpace((JointSpec("knuckle", "wrist", (0.0, 0.0, 1.0), 0.0, -1.0, 1.0, radius=radius),))
        pose = forward_kinematics(space, JointVector([0.3]))
        mesh = build_hand_mesh(space, pose, GRAY)
        assert mesh.triangle_count == capsule_triangle_count(degenerate=True) == 224
        distance = np.linalg.norm(mesh.vertices - pose.translations[0], axis=1)
        assert np.all(distance <= radius + 1e-12)

    def test_normals_unit_length(self, default_space):
        q = sample_configuration(default_space, SeedSpec(4, 4))
        mesh = build_hand_mesh(default_space, forward_kinematics(default_space, q), GRAY)
        lengths = np.linalg.norm(mesh.normals, axis=1)
        assert np.all(np.abs(lengths - 1.0) < 1e-6)

    def test_triangle_indices_in_bounds(self, default_space):
        q = rest_configuration(default_space)
        mesh = build_hand_mesh(default_space, forward_kinematics(default_space, q), GRAY)
        assert mesh.triangles.min() >= 0
        assert mesh.triangles.max() < len(mesh.vertices)

    def test_colors_within_unit_interval(self, default_space):
        q = rest_configuration(default_space)
        pose = forward_kinematics(default_space, q)
        for kind in TextureKind:
            appearance = AppearanceParams((0.85, 0.85, 0.85), 2.0, kind)
            mesh = build_hand_mesh(default_space, pose, appearance)
            assert mesh.colors.min() >= 0.0
            assert mesh.colors.max() <= 1.0


class TestRender:
    def test_empty_mesh_is_white(self):
        image = render(HandMesh.empty(), DEFAULT_CAMERA, DEFAULT_LIGHT)
        assert np.all(image.pixels == 255)

    def test_resolution_contract(self, default_space):
        camera = CameraConfig(width=40, height=30)
        image = _render_config(default_space, rest_configuration(default_space), camera=camera)
        assert (image.width, image.height) == (40, 30)
        assert image.pixels.shape == (30, 40, 3)
        assert len(image.buffer) == 40 * 30 * 3

    def test_rest_pose_visible(self, default_space):
        image = _render_config(default_space, rest_configuration(default_space))
        assert _non_white_fraction(image) >= 0.01

    def test_rest_pose_inside_central_region(self, default_space):
        image = _render_config(default_space, rest_configuration(default_space))
        rows, cols = np.nonzero(np.any(image.pixels != 255, axis=2))
        margin_y, margin_x = 0.1 * image.height, 0.1 * image.width
        assert rows.min() >= margin_y and rows.max() < image.height - margin_y
        assert cols.min() >= margin_x and cols.max() < image.width - margin_x

    def test_lit_face_brighter_than_unlit(self):
        behind = LightConfig(position=(0.11, 0.0, 0.35))
        lit = render(_single_triangle(-1.0), DEFAULT_CAMERA, DEFAULT_LIGHT)
        unlit = render(_single_triangle(-1.0), DEFAULT_CAMERA, behind)
        center = (112, 112)
        assert np.all(unlit.pixels[center] == 31)
        assert np.all(lit.pixels[center] > unlit.pixels[center])

    def test_back_facing_triangle_culled(self):
        image = render(_single_triangle(1.0), DEFAULT_CAMERA, DEFAULT_LIGHT)
        assert np.all(image.pixels == 255)

    def test_deterministic(self, default_space):
        q = sample_configuration(default_space, SeedSpec(42, 1))
        appearance = sample_appearance(SeedSpec(42, 1))
        first = _render_config(default_space, q, appearance)
        second = _render_config(default_space, q, appearance)
        assert first.buffer == second.buffer
        assert png_bytes(first) == png_bytes(second)

    def test_random_samples_keep_white_corners(self, default_space):
        for index in range(50):
            seed = SeedSpec(42, index)
            image = _render_config(
                default_space, sample_configuration(default_space, seed), sample_appearance(seed)
            )
            for row, col in ((0, 0), (0, -1), (-1, 0), (-1, -1)):
                assert tuple(image.pixels[row, col]) == (255, 255, 255)
            assert _non_white_fraction(image) >= 0.01

    def test_pose_sensitivity(self, default_space):
        rest = rest_configuration(default_space)
        baseline = _render_config(default_space, rest)
        changed = 0
        for j, spec in enumerate(default_space.joints):
            angles = rest.angles.copy()
            step = 0.3 if angles[j] + 0.3 <= spec.max_angle else -0.3
            angles[j] = np.clip(angles[j] + step, spec.min_angle, spec.max_angle)
            image = _render_config(default_space, JointVector(angles))
            diff = np.abs(image.pixels.astype(int) - baseline.pixels.astype(int)).sum()
            changed += int(diff > 0)
        assert changed >= 0.95 * len(default_space)

    def test_random_pose_sensitivity(self, default_space):
        rng = np.random.default_rng(11)
        changed = 0
        for index in range(50):
            seed = SeedSpec(42, index)
            q = sample_configuration(default_space, seed)
            appearance = sample_appearance(seed)
            j = int(rng.integers(len(default_space)))
            spec = default_space.joints[j]
            angles = q.angles.copy()
            room_up, room_down = spec.max_angle - angles[j], angles[j] - spec.min_angle
            step = 0.3 if room_up >= room_down else -0.3
            angles[j] = np.clip(angles[j] + step, spec.min_angle, spec.max_angle)
            before = _render_config(default_space, q, appearance)
            after = _render_config(default_space, JointVector(angles), appearance)
            changed += int(before.buffer != after.buffer)
        assert changed >= 48


class TestPng:
    def test_single_white_pixel(self, tmp_path):
        path = tmp_path / "white.png"
        written = encode_png(Image.blank(1, 1), path)
        assert written == path.stat().st_size
        decoded = decode_png(path)
        assert (decoded.width, decoded.height) == (1, 1)
        assert tuple(decoded.pixels[0, 0]) == (255, 255, 255)

    def test_round_trip_is_lossless(self, default_space, tmp_path):
        seed = SeedSpec(42, 3)
        image = _render_config(
            default_space, sample_configuration(default_space, seed), sample_appearance(seed)
        )
        path = tmp_path / "hand.png"
        encode_png(image, path)
        assert decode_png(path).buffer == image.buffer

    def test_identical_renders_hash_equal(self, default_space, tmp_path):
        q = sample_configuration(default_space, SeedSpec(42, 9))
        for name in ("a.png", "b.png"):
            encode_png(_render_config(default_space, q), tmp_path / name)
        digests = {
            hashlib.sha256((tmp_path / name).read_bytes()).hexdigest() for name in ("a.png", "b.png")
        }
        assert len(digests) == 1

    def test_truncated_file_raises_oserror(self, default_space, tmp_path):
        path = tmp_path / "cut.png"
        encode_png(_render_config(default_space, rest_configuration(default_space)), path)
        data = path.read_bytes()
        path.write_bytes(data[: len(data) // 2])
        with pytest.raises(OSError):
            decode_png(path)

    def test_buffer_shape_checked(self):
        with pytest.raises(ValueError):
            Image(2, 2, np.zeros((3, 2, 3), dtype=np.uint8))

import textwrap

import pytest

from handsynth.kinematics import load_joint_space
from handsynth.pipeline import build_manifest, generate_dataset
from handsynth.regressor import TrainConfig, train
from handsynth.renderer import CameraConfig

SMALL_CAMERA = CameraConfig(width=48, height=48)
SMALL_SEED = 42
SMALL_COUNT = 12
SMALL_VAL = 4


@pytest.fixture(scope="session")
def default_space():
    return load_joint_space()


@pytest.fixture
def write_joint_def(tmp_path):
    """Write a joint definition file from dedented text."""

    def write(text: str, name: str = "joints.env"):
        path = tmp_path / name
        path.write_text(textwrap.dedent(text).lstrip(), encoding="utf8")
        return path

    return write


@pytest.fixture
def single_joint_space(write_joint_def):
    path = write_joint_def(
        """
        JOINT1_NAME=lh_WRJ2
        JOINT1_PARENT=wrist
        JOINT1_AXIS=0,0,1
        JOINT1_LENGTH=1.0
        JOINT1_MIN=-3.2
        JOINT1_MAX=3.2
        """
    )
    return load_joint_space(path)


@pytest.fixture(scope="session")
def small_dataset(tmp_path_factory, default_space):
    """Twelve 48x48 records; treat as read-only and copy before corrupting."""

    root = tmp_path_factory.mktemp("dataset")
    manifest = build_manifest(
        default_space, SMALL_SEED, SMALL_COUNT, val_count=SMALL_VAL, camera=SMALL_CAMERA
    )
    generate_dataset(default_space, manifest, root)
    return root


@pytest.fixture(scope="session")
def small_checkpoints(tmp_path_factory, small_dataset):
    out = tmp_path_factory.mktemp("checkpoints")
    config = TrainConfig(
        steps=4, batch_size=4, hidden_size=8, checkpoint_every=2, down_w=8, down_h=8
    )
    train(small_dataset, config, out)
    return out

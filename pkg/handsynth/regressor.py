"""Image to joint-angle regressor: a one-hidden-layer MLP trained with MSE.

Images are reduced to an area-averaged grayscale thumbnail. The network centres
and scales those features with train-set statistics it carries with it, maps
them through a tanh hidden layer to one output per joint; the output
passes through tanh and is mapped affinely onto the joint's range, so every
prediction is a valid configuration.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import asdict, dataclass, replace
from pathlib import Path

import numpy as np

from .kinematics import JointVector
from .pipeline import DatasetSplit, load_split
from .renderer import Image

CHECKPOINT_FORMAT_VERSION = 1
CHECKPOINT_GLOB = "checkpoint-*.json"
LUMA = np.array([0.299, 0.587, 0.114])


class NonFiniteError(FloatingPointError):
    """A NaN or infinity appeared inside the network."""


class DivergenceError(RuntimeError):
    """Training produced a non-finite loss or parameters."""

    def __init__(self, step: int, detail: str) -> None:
        super().__init__(f"training diverged at step {step}: {detail}")
        self.step = step


@dataclass(frozen=True)
class TrainConfig:
    steps: int = 4500
    batch_size: int = 32
    learning_rate: float = 0.25
    hidden_size: int = 64
    checkpoint_every: int = 500
    seed: int = 0
    down_w: int = 32
    down_h: int = 32

    def __post_init__(self) -> None:
        if self.steps < 0:
            raise ValueError(f"steps must be non-negative, got {self.steps}")
        for name in ("batch_size", "hidden_size", "checkpoint_every", "down_w", "down_h"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be a positive integer, got {getattr(self, name)}")
        if not (math.isfinite(self.learning_rate) and self.learning_rate > 0):
            raise ValueError(f"learning_rate must be positive, got {self.learning_rate}")
        if self.seed < 0:
            raise ValueError(f"seed must be non-negative, got {self.seed}")

    def checkpoint_steps(self) -> list[int]:
        if self.steps == 0:
            return [0]
        steps = list(range(self.checkpoint_every, self.steps + 1, self.checkpoint_every))
        if not steps or steps[-1] != self.steps:
            steps.append(self.steps)
        return steps


@dataclass(frozen=True)
class ModelParams:
    """Weights of the F -> H -> J network plus the input and output maps.

    Features enter the hidden layer as ``(x - feature_mean) / feature_scale``;
    left unset they pass through unchanged.
    """

    w1: np.ndarray
    b1: np.ndarray
    w2: np.ndarray
    b2: np.ndarray
    mins: np.ndarray
    maxs: np.ndarray
    down_w: int
    down_h: int
    feature_mean: np.ndarray | None = None
    feature_scale: np.ndarray | None = None

    def __post_init__(self) -> None:
        hidden, features = self.w1.shape
        if self.feature_mean is None:
            object.__setattr__(self, "feature_mean", np.zeros(features))
        if self.feature_scale is None:
            object.__setattr__(self, "feature_scale", np.ones(features))
        joints = self.w2.shape[0]
        if features != self.down_w * self.down_h:
            raise ValueError(
                f"w1 expects {features} features, thumbnail is {self.down_w}x{self.down_h}"
            )
        expected = {
            "b1": (hidden,),
            "w2": (joints, hidden),
            "b2": (joints,),
            "mins": (joints,),
            "maxs": (joints,),
            "feature_mean": (features,),
            "feature_scale": (features,),
        }
        for name, shape in expected.items():
            if getattr(self, name).shape != shape:
                raise ValueError(f"{name} has shape {getattr(self, name).shape}, expected {shape}")
        if not np.all(self.feature_scale > 0.0):
            raise ValueError("feature_scale must be positive")

    @property
    def feature_count(self) -> int:
        return self.w1.shape[1]

    @property
    def hidden_size(self) -> int:
        return self.w1.shape[0]

    @property
    def joint_count(self) -> int:
        return self.w2.shape[0]

    @property
    def mid(self) -> np.ndarray:
        return 0.5 * (self.mins + self.maxs)

    @property
    def half(self) -> np.ndarray:
        return 0.5 * (self.maxs - self.mins)

    def is_finite(self) -> bool:
        arrays = (self.w1, self.b1, self.w2, self.b2, self.feature_mean, self.feature_scale)
        return all(np.isfinite(a).all() for a in arrays)

    def standardize(self, features: np.ndarray) -> np.ndarray:
        return (features - self.feature_mean) / self.feature_scale

    def updated(self, grad: Gradient, learning_rate: float) -> ModelParams:
        return replace(
            self,
            w1=self.w1 - learning_rate * grad.w1,
            b1=self.b1 - learning_rate * grad.b1,
            w2=self.w2 - learning_rate * grad.w2,
            b2=self.b2 - learning_rate * grad.b2,
        )


@dataclass(frozen=True)
class Gradient:
    w1: np.ndarray
    b1: np.ndarray
    w2: np.ndarray
    b2: np.ndarray


@dataclass(frozen=True)
class Checkpoint:
    step: int
    params: ModelParams
    train_loss: float
    config: TrainConfig
    image_width: int
    image_height: int
    joint_space_fingerprint: str


# ---------------------------------------------------------------------------
# Features
# ---------------------------------------------------------------------------


def _area_weights(source: int, target: int) -> np.ndarray:
    """(target, source) matrix averaging source cells over each target cell."""

    scale = source / target
    lo = np.arange(target)[:, None] * scale
    hi = lo + scale
    cells = np.arange(source)[None, :]
    overlap = np.clip(np.minimum(hi, cells + 1) - np.maximum(lo, cells), 0.0, None)
    return overlap / scale


def extract_features(image: Image, down_w: int, down_h: int) -> np.ndarray:
    """Area-averaged grayscale thumbnail, flattened row-major, in [0, 1]."""

    if down_w < 1 or down_h < 1:
        raise ValueError(f"feature size must be positive, got {down_w}x{down_h}")
    luma = (image.pixels.astype(np.float64) @ LUMA) / 255.0
    thumb = _area_weights(image.height, down_h) @ luma @ _area_weights(image.width, down_w).T
    return np.clip(thumb, 0.0, 1.0).reshape(-1)


# ---------------------------------------------------------------------------
# Network
# ---------------------------------------------------------------------------


def _check_finite(values: np.ndarray, layer: str) -> None:
    if not np.isfinite(values).all():
        raise NonFiniteError(f"non-finite values in the {layer} layer")


def forward(params: ModelParams, features: np.ndarray) -> np.ndarray:
    """Predicted angles for a (N, F) feature batch."""

    hidden = np.tanh(params.standardize(features) @ params.w1.T + params.b1)
    _check_finite(hidden, "hidden")
    out = params.mid + params.half * np.tanh(hidden @ params.w2.T + params.b2)
    _check_finite(out, "output")
    return out


def mse_loss(pred: np.ndarray, truth: np.ndarray) -> float:
    """Mean over all N x J cells of the squared residual."""

    pred = np.asarray(pred, dtype=np.float64)
    truth = np.asarray(truth, dtype=np.float64)
    if pred.shape != truth.shape:
        raise ValueError(f"prediction shape {pred.shape} != truth shape {truth.shape}")
    if pred.size == 0:
        raise ValueError("mse_loss of an empty batch")
    return float(np.mean((pred - truth) ** 2))


def loss_gradient(
    params: ModelParams, features: np.ndarray, truth: np.ndarray
) -> tuple[float, Gradient]:
    """Batch MSE and its exact gradient with respect to every parameter."""

    inputs = params.standardize(features)
    hidden = np.tanh(inputs @ params.w1.T + params.b1)
    _check_finite(hidden, "hidden")
    squashed = np.tanh(hidden @ params.w2.T + params.b2)
    pred = params.mid + params.half * squashed
    _check_finite(pred, "output")

    loss = mse_loss(pred, truth)
    d_pred = 2.0 * (pred - truth) / pred.size
    d_out = d_pred * params.half * (1.0 - squashed**2)
    d_hidden = (d_out @ params.w2) * (1.0 - hidden**2)
    grad = Gradient(
        w1=d_hidden.T @ inputs,
        b1=d_hidden.sum(axis=0),
        w2=d_out.T @ hidden,
        b2=d_out.sum(axis=0),
    )
    for layer, values in (("hidden", grad.w1), ("output", grad.w2)):
        _check_finite(values, f"{layer} gradient")
    return loss, grad


def feature_statistics(features: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Per-feature mean and scale of a (N, F) training matrix.

    The scale is the feature's standard deviation padded by the mean variance,
    so background pixels that a hand only rarely covers are not blown up.
    """

    features = np.asarray(features, dtype=np.float64)
    if features.ndim != 2 or len(features) == 0:
        raise ValueError(f"feature statistics need a non-empty (N, F) matrix, got {features.shape}")
    variance = features.var(axis=0)
    floor = float(variance.mean()) or 1.0
    return features.mean(axis=0), np.sqrt(variance + floor)


def init_params(
    feature_count: int,
    hidden_size: int,
    mins: np.ndarray,
    maxs: np.ndarray,
    down_w: int,
    down_h: int,
    rng: np.random.Generator,
    feature_mean: np.ndarray | None = None,
    feature_scale: np.ndarray | None = None,
) -> ModelParams:
    """Weights uniform in +-1/sqrt(fan_in), zero biases."""

    mins = np.asarray(mins, dtype=np.float64)
    maxs = np.asarray(maxs, dtype=np.float64)
    joints = len(mins)
    bound1 = 1.0 / math.sqrt(feature_count)
    bound2 = 1.0 / math.sqrt(hidden_size)
    return ModelParams(
        w1=rng.uniform(-bound1, bound1, size=(hidden_size, feature_count)),
        b1=np.zeros(hidden_size),
        w2=rng.uniform(-bound2, bound2, size=(joints, hidden_size)),
        b2=np.zeros(joints),
        mins=mins.copy(),
        maxs=maxs.copy(),
        down_w=down_w,
        down_h=down_h,
        feature_mean=feature_mean,
        feature_scale=feature_scale,
    )


def dataset_loss(params: ModelParams, features: np.ndarray, truth: np.ndarray) -> float:
    return mse_loss(forward(params, features), truth)


def predict_features(params: ModelParams, features: np.ndarray) -> np.ndarray:
    return np.clip(forward(params, np.atleast_2d(features)), params.mins, params.maxs)


def predict(params: ModelParams, image: Image) -> JointVector:
    features = extract_features(image, params.down_w, params.down_h)
    return JointVector(predict_features(params, features)[0])


# ---------------------------------------------------------------------------
# Checkpoints
# ---------------------------------------------------------------------------


def checkpoint_name(step: int) -> str:
    return f"checkpoint-{step:06d}.json"


def save_checkpoint(ckpt: Checkpoint, path: str | Path) -> Path:
    params = ckpt.params
    document = {
        "format_version": CHECKPOINT_FORMAT_VERSION,
        "step": ckpt.step,
        "train_loss": ckpt.train_loss,
        "config": asdict(ckpt.config),
        "image_width": ckpt.image_width,
        "image_height": ckpt.image_height,
        "joint_space_fingerprint": ckpt.joint_space_fingerprint,
        "mins": params.mins.tolist(),
        "maxs": params.maxs.tolist(),
        "shapes": {
            "features": params.feature_count,
            "hidden": params.hidden_size,
            "joints": params.joint_count,
        },
        "down_w": params.down_w,
        "down_h": params.down_h,
        "w1": params.w1.ravel().tolist(),
        "b1": params.b1.tolist(),
        "w2": params.w2.ravel().tolist(),
        "b2": params.b2.tolist(),
        "feature_mean": params.feature_mean.tolist(),
        "feature_scale": params.feature_scale.tolist(),
    }
    path = Path(path)
    path.write_text(json.dumps(document) + "\n", encoding="utf8")
    return path


def _array(document: dict, key: str, shape: tuple[int, ...]) -> np.ndarray:
    values = np.asarray(document[key], dtype=np.float64)
    if values.size != math.prod(shape):
        raise ValueError(f"{key} holds {values.size} values, expected {math.prod(shape)}")
    return values.reshape(shape)


def load_checkpoint(path: str | Path) -> Checkpoint:
    path = Path(path)
    try:
        document = json.loads(path.read_text(encoding="utf8"))
    except json.JSONDecodeError as exc:
        raise ValueError(f"{path}: invalid checkpoint JSON ({exc})") from exc
    try:
        version = document["format_version"]
        if version != CHECKPOINT_FORMAT_VERSION:
            raise ValueError(f"{path}: unsupported checkpoint format_version {version}")
        shapes = document["shapes"]
        features, hidden, joints = shapes["features"], shapes["hidden"], shapes["joints"]
        params = ModelParams(
            w1=_array(document, "w1", (hidden, features)),
            b1=_array(document, "b1", (hidden,)),
            w2=_array(document, "w2", (joints, hidden)),
            b2=_array(document, "b2", (joints,)),
            mins=_array(document, "mins", (joints,)),
            maxs=_array(document, "maxs", (joints,)),
            down_w=int(document["down_w"]),
            down_h=int(document["down_h"]),
            feature_mean=_array(document, "feature_mean", (features,)),
            feature_scale=_array(document, "feature_scale", (features,)),
        )
        ckpt = Checkpoint(
            step=int(document["step"]),
            params=params,
            train_loss=float(document["train_loss"]),
            config=TrainConfig(**document["config"]),
            image_width=int(document["image_width"]),
            image_height=int(document["image_height"]),
            joint_space_fingerprint=str(document["joint_space_fingerprint"]),
        )
    except (KeyError, TypeError) as exc:
        raise ValueError(f"{path}: checkpoint field missing or malformed ({exc})") from exc
    if not params.is_finite():
        raise ValueError(f"{path}: checkpoint holds non-finite weights")
    return ckpt


# ---------------------------------------------------------------------------
# Training
# ---------------------------------------------------------------------------


def load_arrays(split: DatasetSplit, down_w: int, down_h: int) -> tuple[np.ndarray, np.ndarray]:
    """Feature matrix and angle matrix of every record in ``split``."""

    features = np.empty((len(split), down_w * down_h))
    truth = np.empty((len(split), len(split.space)))
    expected = (split.manifest.camera.width, split.manifest.camera.height)
    for row, (index, image, angles) in enumerate(split.records()):
        if (image.width, image.height) != expected:
            raise ValueError(
                f"record {index} is {image.width}x{image.height}, dataset is "
                f"{expected[0]}x{expected[1]}"
            )
        features[row] = extract_features(image, down_w, down_h)
        truth[row] = angles.angles
    return features, truth


class _BatchSampler:
    """Seeded epoch shuffling; batches never straddle an epoch boundary."""

    def __init__(self, count: int, batch_size: int, rng: np.random.Generator) -> None:
        self.count = count
        self.batch_size = min(batch_size, count)
        self.rng = rng
        self.order = rng.permutation(count)
        self.cursor = 0

    def next(self) -> np.ndarray:
        if self.cursor + self.batch_size > self.count:
            self.order = self.rng.permutation(self.count)
            self.cursor = 0
        batch = self.order[self.cursor : self.cursor + self.batch_size]
        self.cursor += self.batch_size
        return batch


def train(dataset: str | Path, config: TrainConfig, out: str | Path) -> list[Checkpoint]:
    """Mini-batch SGD on the train split, writing checkpoints under ``out``."""

    split = load_split(dataset, "train")
    if len(split) == 0:
        raise ValueError(f"{dataset}: train split is empty")
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)

    features, truth = load_arrays(split, config.down_w, config.down_h)
    feature_mean, feature_scale = feature_statistics(features)
    init_rng, shuffle_rng = (
        np.random.default_rng(s) for s in np.random.SeedSequence(config.seed).spawn(2)
    )
    params = init_params(
        features.shape[1],
        config.hidden_size,
        split.space.mins,
        split.space.maxs,
        config.down_w,
        config.down_h,
        init_rng,
        feature_mean=feature_mean,
        feature_scale=feature_scale,
    )
    sampler = _BatchSampler(len(split), config.batch_size, shuffle_rng)
    checkpoint_steps = set(config.checkpoint_steps())
    logging.info(
        "Training samples=%d features=%d hidden=%d joints=%d initial_loss=%.6g",
        len(split),
        features.shape[1],
        config.hidden_size,
        truth.shape[1],
        dataset_loss(params, features, truth),
    )

    checkpoints: list[Checkpoint] = []

    def emit(step: int) -> None:
        ckpt = Checkpoint(
            step=step,
            params=params,
            train_loss=dataset_loss(params, features, truth),
            config=config,
            image_width=split.manifest.camera.width,
            image_height=split.manifest.camera.height,
            joint_space_fingerprint=split.space.fingerprint,
        )
        path = save_checkpoint(ckpt, out / checkpoint_name(step))
        logging.info("Checkpoint step=%d train_loss=%.6g path=%s", step, ckpt.train_loss, path)
        checkpoints.append(ckpt)

    if config.steps == 0:
        emit(0)
        return checkpoints

    for step in range(1, config.steps + 1):
        batch = sampler.next()
        try:
            loss, grad = loss_gradient(params, features[batch], truth[batch])
        except NonFiniteError as exc:
            raise DivergenceError(step, str(exc)) from exc
        if not math.isfinite(loss):
            raise DivergenceError(step, f"batch loss is {loss}")
        params = params.updated(grad, config.learning_rate)
        if not params.is_finite():
            raise DivergenceError(step, "parameters became non-finite")
        logging.debug("Step step=%d batch_loss=%.6g", step, loss)
        if step in checkpoint_steps:
            emit(step)

    return checkpoints

"""From-scratch CNN regressors for viability and cost-of-transport.

Architecture, fixed for every head: three 3x3 stride-1 pad-1 convolutions
with 4, 8, and 8 channels, a 2x2 max-pool between the second and third
(31x11 -> 15x5, floor semantics), two fully connected layers of 128 units,
and a single-output head. ReLU follows every hidden layer; the viability
head applies a sigmoid, the CoT head is linear and clamped to >= 0 at
prediction time only. Training is plain SGD with momentum on mean-squared
error. Everything is float64 numpy so analytic gradients can be checked
against central finite differences.
"""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass, replace
from typing import Iterable, Sequence

import numpy as np

from . import seeding
from .terrain import COLS, ROWS, Heightfield

FLAT_SIZE = 600  # 8 channels x 15 x 5 after the pool


class ShapeMismatchError(ValueError):
    """Input or parameter shapes do not match the architecture."""


class HeadKindMismatchError(ValueError):
    """Model head does not match the dataset or role it is used for."""


class ModelFormatError(ValueError):
    """Model file is malformed."""


class ModelVersionError(ModelFormatError):
    """Model file was written with an unsupported format version."""


class HeadKind(enum.Enum):
    VIABILITY = "viability"  # sigmoid head, output in (0, 1)
    COT = "cot"              # linear head, clamped to >= 0 at prediction


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 0.005
    momentum: float = 0.9
    batch_size: int = 64
    epochs: int = 30
    seed: int = 0

    def __post_init__(self) -> None:
        if self.learning_rate < 0:
            raise ValueError("learning_rate must be >= 0")
        if not 0.0 <= self.momentum < 1.0:
            raise ValueError("momentum must be in [0, 1)")
        if self.batch_size < 1 or self.epochs < 0:
            raise ValueError("batch_size must be >= 1 and epochs >= 0")


@dataclass(frozen=True)
class Prediction:
    value: float
    skill_id: int | None


@dataclass(frozen=True)
class EpochStats:
    epoch: int
    train_mse: float
    test_mse: float


PARAM_ORDER = (
    "conv1_w", "conv1_b",
    "conv2_w", "conv2_b",
    "conv3_w", "conv3_b",
    "fc1_w", "fc1_b",
    "fc2_w", "fc2_b",
    "head_w", "head_b",
)

_SHAPES = {
    "conv1_w": (4, 1, 3, 3), "conv1_b": (4,),
    "conv2_w": (8, 4, 3, 3), "conv2_b": (8,),
    "conv3_w": (8, 8, 3, 3), "conv3_b": (8,),
    "fc1_w": (128, FLAT_SIZE), "fc1_b": (128,),
    "fc2_w": (128, 128), "fc2_b": (128,),
    "head_w": (1, 128), "head_b": (1,),
}


@dataclass(frozen=True, eq=False)
class CnnModel:
    """Weights of one predictor head; also reused as a gradient container."""

    head_kind: HeadKind
    conv1_w: np.ndarray
    conv1_b: np.ndarray
    conv2_w: np.ndarray
    conv2_b: np.ndarray
    conv3_w: np.ndarray
    conv3_b: np.ndarray
    fc1_w: np.ndarray
    fc1_b: np.ndarray
    fc2_w: np.ndarray
    fc2_b: np.ndarray
    head_w: np.ndarray
    head_b: np.ndarray
    skill_id: int | None = None

    def params(self) -> dict[str, np.ndarray]:
        return {name: getattr(self, name) for name in PARAM_ORDER}

    def map_params(self, fn) -> "CnnModel":
        return replace(self, **{name: fn(name, getattr(self, name)) for name in PARAM_ORDER})


def init_model(head_kind: HeadKind, seed: int, skill_id: int | None = None) -> CnnModel:
    """Uniform init in +-sqrt(1/fan_in) per layer; biases zero."""
    rng = seeding.make_rng(seed, seeding.STREAM_INIT)
    arrays: dict[str, np.ndarray] = {}
    for name in PARAM_ORDER:
        shape = _SHAPES[name]
        if name.endswith("_b"):
            arrays[name] = np.zeros(shape)
        else:
            fan_in = int(np.prod(shape[1:]))
            limit = math.sqrt(1.0 / fan_in)
            arrays[name] = rng.uniform(-limit, limit, shape)
    return CnnModel(head_kind=head_kind, skill_id=skill_id, **arrays)


def zeros_like_model(model: CnnModel) -> CnnModel:
    return model.map_params(lambda _, arr: np.zeros_like(arr))


# ---------------------------------------------------------------------------
# layer primitives (generic shapes, so gradients can be checked on small ones)

def conv2d_forward(x: np.ndarray, w: np.ndarray, b: np.ndarray) -> np.ndarray:
    """3x3 stride-1 pad-1 convolution; x (B,C,H,W), w (F,C,3,3) -> (B,F,H,W)."""
    B, C, H, W = x.shape
    F = w.shape[0]
    xp = np.zeros((B, C, H + 2, W + 2))
    xp[:, :, 1:-1, 1:-1] = x
    out = np.zeros((B, F, H * W))
    for i in range(3):
        for j in range(3):
            patch = xp[:, :, i : i + H, j : j + W].reshape(B, C, H * W)
            out += np.matmul(w[:, :, i, j], patch)
    out += b[None, :, None]
    return out.reshape(B, F, H, W)


def conv2d_backward(
    x: np.ndarray, w: np.ndarray, dout: np.ndarray
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    B, C, H, W = x.shape
    F = w.shape[0]
    d2 = dout.reshape(B, F, H * W)
    xp = np.zeros((B, C, H + 2, W + 2))
    xp[:, :, 1:-1, 1:-1] = x
    dxp = np.zeros_like(xp)
    dw = np.zeros_like(w)
    for i in range(3):
        for j in range(3):
            patch = xp[:, :, i : i + H, j : j + W].reshape(B, C, H * W)
            dw[:, :, i, j] = np.einsum("bfk,bck->fc", d2, patch)
            dxp[:, :, i : i + H, j : j + W] += np.matmul(w[:, :, i, j].T, d2).reshape(B, C, H, W)
    db = d2.sum(axis=(0, 2))
    return dxp[:, :, 1:-1, 1:-1], dw, db


def maxpool2_forward(x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """2x2 max pool, stride 2, floor semantics (trailing row/col dropped)."""
    B, C, H, W = x.shape
    He, We = H // 2, W // 2
    xc = x[:, :, : He * 2, : We * 2]
    windows = (
        xc.reshape(B, C, He, 2, We, 2).transpose(0, 1, 2, 4, 3, 5).reshape(B, C, He, We, 4)
    )
    idx = windows.argmax(axis=-1)
    out = np.take_along_axis(windows, idx[..., None], axis=-1)[..., 0]
    return out, idx


def maxpool2_backward(x_shape: Sequence[int], idx: np.ndarray, dout: np.ndarray) -> np.ndarray:
    B, C, H, W = x_shape
    He, We = H // 2, W // 2
    dwindows = np.zeros((B, C, He, We, 4))
    np.put_along_axis(dwindows, idx[..., None], dout[..., None], axis=-1)
    dxc = dwindows.reshape(B, C, He, We, 2, 2).transpose(0, 1, 2, 4, 3, 5).reshape(B, C, He * 2, We * 2)
    dx = np.zeros((B, C, H, W))
    dx[:, :, : He * 2, : We * 2] = dxc
    return dx


def fc_forward(x: np.ndarray, w: np.ndarray, b: np.ndarray) -> np.ndarray:
    return x @ w.T + b


def fc_backward(
    x: np.ndarray, w: np.ndarray, dout: np.ndarray
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    return dout @ w, dout.T @ x, dout.sum(axis=0)


def sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


# ---------------------------------------------------------------------------
# full network

def _check_batch(X: np.ndarray) -> np.ndarray:
    X = np.asarray(X, dtype=float)
    if X.ndim == 2:
        X = X[None]
    if X.ndim != 3 or X.shape[1:] != (ROWS, COLS):
        raise ShapeMismatchError(f"expected (n, {ROWS}, {COLS}) input, got {X.shape}")
    return X


def _forward_cached(model: CnnModel, X: np.ndarray) -> tuple[np.ndarray, dict]:
    x0 = X[:, None, :, :]
    z1 = conv2d_forward(x0, model.conv1_w, model.conv1_b)
    a1 = np.maximum(z1, 0.0)
    z2 = conv2d_forward(a1, model.conv2_w, model.conv2_b)
    a2 = np.maximum(z2, 0.0)
    p, pool_idx = maxpool2_forward(a2)
    z3 = conv2d_forward(p, model.conv3_w, model.conv3_b)
    a3 = np.maximum(z3, 0.0)
    flat = a3.reshape(a3.shape[0], -1)
    z4 = fc_forward(flat, model.fc1_w, model.fc1_b)
    a4 = np.maximum(z4, 0.0)
    z5 = fc_forward(a4, model.fc2_w, model.fc2_b)
    a5 = np.maximum(z5, 0.0)
    raw = fc_forward(a5, model.head_w, model.head_b)[:, 0]
    cache = {
        "x0": x0, "z1": z1, "a1": a1, "z2": z2, "a2": a2,
        "p": p, "pool_idx": pool_idx, "z3": z3, "a3": a3,
        "flat": flat, "z4": z4, "a4": a4, "z5": z5, "a5": a5,
    }
    return raw, cache


def head_output(model: CnnModel, X: np.ndarray) -> np.ndarray:
    """Post-head network output for a batch: sigmoid applied for viability."""
    raw, _ = _forward_cached(model, _check_batch(X))
    if model.head_kind is HeadKind.VIABILITY:
        return sigmoid(raw)
    return raw


def predict_batch(model: CnnModel, X: np.ndarray) -> np.ndarray:
    """Predictions with the CoT head clamped to >= 0."""
    out = head_output(model, X)
    if model.head_kind is HeadKind.COT:
        out = np.maximum(out, 0.0)
    return out


def forward(model: CnnModel, hf: Heightfield) -> Prediction:
    """Deterministic single-sample forward pass on a filled, normalized grid."""
    value = float(predict_batch(model, hf.values[None])[0])
    return Prediction(value=value, skill_id=model.skill_id)


def loss_and_grad(model: CnnModel, X: np.ndarray, y: np.ndarray) -> tuple[float, CnnModel]:
    """Mean-squared-error loss and its exact gradient for a batch."""
    X = _check_batch(X)
    y = np.asarray(y, dtype=float).reshape(-1)
    if y.shape[0] != X.shape[0]:
        raise ShapeMismatchError(f"{X.shape[0]} inputs but {y.shape[0]} labels")
    if X.shape[0] == 0:
        raise ShapeMismatchError("batch must be nonempty")
    B = X.shape[0]
    raw, cache = _forward_cached(model, X)
    if model.head_kind is HeadKind.VIABILITY:
        out = sigmoid(raw)
        err = out - y
        draw = (2.0 / B) * err * out * (1.0 - out)
    else:
        out = raw
        err = out - y
        draw = (2.0 / B) * err
    loss = float(np.mean(err * err))

    d5, dhead_w, dhead_b = fc_backward(cache["a5"], model.head_w, draw[:, None])
    d5 *= cache["z5"] > 0
    d4, dfc2_w, dfc2_b = fc_backward(cache["a4"], model.fc2_w, d5)
    d4 *= cache["z4"] > 0
    dflat, dfc1_w, dfc1_b = fc_backward(cache["flat"], model.fc1_w, d4)
    da3 = dflat.reshape(cache["a3"].shape)
    da3 = da3 * (cache["z3"] > 0)
    dp, dconv3_w, dconv3_b = conv2d_backward(cache["p"], model.conv3_w, da3)
    da2 = maxpool2_backward(cache["a2"].shape, cache["pool_idx"], dp)
    da2 *= cache["z2"] > 0
    da1, dconv2_w, dconv2_b = conv2d_backward(cache["a1"], model.conv2_w, da2)
    da1 *= cache["z1"] > 0
    _, dconv1_w, dconv1_b = conv2d_backward(cache["x0"], model.conv1_w, da1)

    grad = CnnModel(
        head_kind=model.head_kind,
        conv1_w=dconv1_w, conv1_b=dconv1_b,
        conv2_w=dconv2_w, conv2_b=dconv2_b,
        conv3_w=dconv3_w, conv3_b=dconv3_b,
        fc1_w=dfc1_w, fc1_b=dfc1_b,
        fc2_w=dfc2_w, fc2_b=dfc2_b,
        head_w=dhead_w, head_b=dhead_b,
        skill_id=model.skill_id,
    )
    return loss, grad


def mse(model: CnnModel, X: np.ndarray, y: np.ndarray, batch_size: int = 512) -> float:
    """Full-set MSE evaluated in batches (no gradient)."""
    y = np.asarray(y, dtype=float).reshape(-1)
    total = 0.0
    for start in range(0, len(y), batch_size):
        out = head_output(model, X[start : start + batch_size])
        diff = out - y[start : start + batch_size]
        total += float(diff @ diff)
    return total / len(y)


def train_arrays(
    model: CnnModel,
    X: np.ndarray,
    y: np.ndarray,
    X_test: np.ndarray | None,
    y_test: np.ndarray | None,
    cfg: TrainConfig,
) -> tuple[CnnModel, list[EpochStats]]:
    """SGD with momentum over shuffled mini-batches.

    Per step: v <- momentum * v - lr * grad; w <- w + v. Returns the
    trained model and per-epoch train/test MSE (test is NaN when no test
    split is supplied).
    """
    X = _check_batch(X)
    y = np.asarray(y, dtype=float).reshape(-1)
    params = {name: arr.copy() for name, arr in model.params().items()}
    velocity = {name: np.zeros_like(arr) for name, arr in params.items()}
    current = replace(model, **params)
    rng = seeding.make_rng(cfg.seed, seeding.STREAM_SHUFFLE)
    history: list[EpochStats] = []
    for epoch in range(cfg.epochs):
        order = rng.permutation(len(y))
        for start in range(0, len(y), cfg.batch_size):
            batch = order[start : start + cfg.batch_size]
            _, grad = loss_and_grad(current, X[batch], y[batch])
            for name in PARAM_ORDER:
                v = velocity[name]
                v *= cfg.momentum
                v -= cfg.learning_rate * getattr(grad, name)
                params[name] += v
            current = replace(current, **params)
        train_mse = mse(current, X, y)
        test_mse = (
            mse(current, X_test, y_test)
            if X_test is not None and y_test is not None and len(y_test)
            else float("nan")
        )
        history.append(EpochStats(epoch=epoch + 1, train_mse=train_mse, test_mse=test_mse))
    return current, history


def train(model: CnnModel, dataset, cfg: TrainConfig) -> tuple[CnnModel, list[EpochStats]]:
    """Train on a collected dataset, respecting its train/test split.

    ``dataset`` is a ``datagen.Dataset``; its kind must match the model
    head (viability -> sigmoid, cot -> linear).
    """
    if dataset.kind.value != model.head_kind.value:
        raise HeadKindMismatchError(
            f"dataset kind {dataset.kind.value!r} does not match head {model.head_kind.value!r}"
        )
    X = dataset.features()
    y = dataset.labels()
    tr = np.asarray(dataset.train_indices, dtype=int)
    te = np.asarray(dataset.test_indices, dtype=int)
    X_test = X[te] if te.size else None
    y_test = y[te] if te.size else None
    return train_arrays(model, X[tr], y[tr], X_test, y_test, cfg)


# ---------------------------------------------------------------------------
# model files

MODEL_FORMAT_VERSION = 1
_VALUES_PER_LINE = 8


def save_model(model: CnnModel, path) -> None:
    with open(path, "w") as fh:
        fh.write(model_to_text(model))


def load_model(path) -> CnnModel:
    with open(path) as fh:
        return model_from_text(fh.read())


def model_to_text(model: CnnModel) -> str:
    skill = "none" if model.skill_id is None else str(model.skill_id)
    lines = [
        f"# skillselect-cnn format_version={MODEL_FORMAT_VERSION} "
        f"head_kind={model.head_kind.value} skill_id={skill}"
    ]
    for name in PARAM_ORDER:
        arr = getattr(model, name)
        dims = " ".join(str(d) for d in arr.shape)
        lines.append(f"tensor {name} {dims}")
        flat = arr.reshape(-1)
        for start in range(0, flat.size, _VALUES_PER_LINE):
            lines.append(" ".join(repr(float(v)) for v in flat[start : start + _VALUES_PER_LINE]))
    return "\n".join(lines) + "\n"


def model_from_text(text: str) -> CnnModel:
    lines = text.splitlines()
    if not lines or not lines[0].startswith("# skillselect-cnn"):
        raise ModelFormatError("missing model header line")
    header = dict(
        part.split("=", 1) for part in lines[0].removeprefix("# skillselect-cnn").split() if "=" in part
    )
    try:
        version = int(header["format_version"])
    except (KeyError, ValueError):
        raise ModelFormatError("header missing format_version") from None
    if version != MODEL_FORMAT_VERSION:
        raise ModelVersionError(f"expected format_version {MODEL_FORMAT_VERSION}, found {version}")
    try:
        head_kind = HeadKind(header["head_kind"])
    except (KeyError, ValueError):
        raise ModelFormatError(f"bad head_kind in header: {header.get('head_kind')!r}") from None
    skill_raw = header.get("skill_id", "none")
    skill_id = None if skill_raw == "none" else int(skill_raw)

    arrays: dict[str, np.ndarray] = {}
    i = 1
    for name in PARAM_ORDER:
        while i < len(lines) and not lines[i].strip():
            i += 1
        if i >= len(lines) or not lines[i].startswith("tensor "):
            raise ModelFormatError(f"line {i + 1}: expected tensor header for {name}")
        parts = lines[i].split()
        if parts[1] != name:
            raise ModelFormatError(f"line {i + 1}: expected tensor {name}, found {parts[1]}")
        try:
            dims = tuple(int(d) for d in parts[2:])
        except ValueError:
            raise ModelFormatError(f"line {i + 1}: bad tensor dims {parts[2:]}") from None
        if dims != _SHAPES[name]:
            raise ModelFormatError(f"tensor {name}: expected shape {_SHAPES[name]}, found {dims}")
        count = int(np.prod(dims))
        values: list[float] = []
        i += 1
        while len(values) < count:
            if i >= len(lines):
                raise ModelFormatError(
                    f"tensor {name}: expected {count} values, file ended after {len(values)}"
                )
            try:
                values.extend(float(tok) for tok in lines[i].split())
            except ValueError:
                raise ModelFormatError(f"line {i + 1}: non-numeric value in tensor {name}") from None
            i += 1
        if len(values) != count:
            raise ModelFormatError(f"tensor {name}: expected {count} values, found {len(values)}")
        arrays[name] = np.array(values, dtype=float).reshape(dims)
    return CnnModel(head_kind=head_kind, skill_id=skill_id, **arrays)

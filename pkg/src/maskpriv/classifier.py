"""A small convolutional mask / no-mask classifier written directly in numpy.

Architecture (input 3 x 32 x 32, channels first)::

    conv3x3(8, same) -> relu -> maxpool2 -> conv3x3(16, same) -> relu -> maxpool2
    -> flatten -> dense(2) -> softmax

Weights are float32. Training is plain minibatch SGD on softmax cross-entropy
and is bit-reproducible from ``TrainConfig.seed``.
"""

from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, NamedTuple, Optional, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import InvalidDatasetError, InvalidInputError, InvalidParameterError, ModelFormatError
from .imaging import FaceRegion, Image, LabeledSample, MaskLabel, blur_region

INPUT_SIZE = 32
CLASSES = ("no_mask", "mask")
PARAM_ORDER = ("conv1_w", "conv1_b", "conv2_w", "conv2_b", "dense_w", "dense_b")
MODEL_MAGIC = b"MASKPRIV-CNN\n"


def architecture(input_size: int = INPUT_SIZE) -> list[dict]:
    if input_size % 4:
        raise InvalidParameterError("input_size must be divisible by 4")
    flat = 16 * (input_size // 4) ** 2
    return [
        {"type": "conv", "in": 3, "out": 8, "kernel": 3, "padding": "same"},
        {"type": "relu"},
        {"type": "maxpool", "size": 2},
        {"type": "conv", "in": 8, "out": 16, "kernel": 3, "padding": "same"},
        {"type": "relu"},
        {"type": "maxpool", "size": 2},
        {"type": "flatten"},
        {"type": "dense", "in": flat, "out": 2},
        {"type": "softmax"},
    ]


def param_shapes(input_size: int = INPUT_SIZE) -> dict[str, tuple[int, ...]]:
    flat = 16 * (input_size // 4) ** 2
    return {
        "conv1_w": (8, 3, 3, 3),
        "conv1_b": (8,),
        "conv2_w": (16, 8, 3, 3),
        "conv2_b": (16,),
        "dense_w": (flat, 2),
        "dense_b": (2,),
    }


@dataclass(eq=False)
class ClassifierModel:
    params: dict[str, np.ndarray]
    input_size: int = INPUT_SIZE
    classes: tuple[str, ...] = CLASSES

    def __post_init__(self):
        expected = param_shapes(self.input_size)
        if set(self.params) != set(expected):
            raise InvalidParameterError(f"parameter names {sorted(self.params)} do not match")
        for name, shape in expected.items():
            p = self.params[name]
            if p.shape != shape:
                raise InvalidParameterError(f"{name} has shape {p.shape}, expected {shape}")
            if not np.all(np.isfinite(p)):
                raise InvalidParameterError(f"{name} contains non-finite values")

    @property
    def architecture(self) -> list[dict]:
        return architecture(self.input_size)

    def __eq__(self, other):
        if not isinstance(other, ClassifierModel):
            return NotImplemented
        return (
            self.input_size == other.input_size
            and tuple(self.classes) == tuple(other.classes)
            and all(
                self.params[k].dtype == other.params[k].dtype
                and self.params[k].tobytes() == other.params[k].tobytes()
                for k in PARAM_ORDER
            )
        )

    def astype(self, dtype) -> "ClassifierModel":
        return ClassifierModel(
            {k: v.astype(dtype) for k, v in self.params.items()}, self.input_size, self.classes
        )

    def to_bytes(self) -> bytes:
        return save_bytes(self)

    def digest(self) -> str:
        return hashlib.sha256(save_bytes(self)).hexdigest()


def init_params(rng: np.random.Generator, input_size: int = INPUT_SIZE) -> dict[str, np.ndarray]:
    """Glorot-uniform weights, zero biases."""
    params = {}
    for name, shape in param_shapes(input_size).items():
        if name.endswith("_b"):
            params[name] = np.zeros(shape, dtype=np.float32)
            continue
        if len(shape) == 4:
            fan_in, fan_out = shape[1] * 9, shape[0] * 9
        else:
            fan_in, fan_out = shape
        limit = np.sqrt(6.0 / (fan_in + fan_out))
        params[name] = rng.uniform(-limit, limit, size=shape).astype(np.float32)
    return params


# ---------------------------------------------------------------------------
# layers


def conv_forward(x, w, b):
    """3x3 'same' convolution; x is (N, C, H, W), w is (F, C, 3, 3)."""
    xp = np.pad(x, ((0, 0), (0, 0), (1, 1), (1, 1)))
    win = sliding_window_view(xp, (3, 3), axis=(2, 3))  # N, C, H, W, 3, 3
    out = np.einsum("nchwij,fcij->nfhw", win, w, optimize=True) + b[None, :, None, None]
    return out, win


def conv_backward(dout, win, w):
    dw = np.einsum("nfhw,nchwij->fcij", dout, win, optimize=True)
    db = dout.sum(axis=(0, 2, 3))
    dp = np.pad(dout, ((0, 0), (0, 0), (1, 1), (1, 1)))
    dwin = sliding_window_view(dp, (3, 3), axis=(2, 3))
    dx = np.einsum("nfhwij,fcij->nchw", dwin, w[:, :, ::-1, ::-1], optimize=True)
    return dx, dw, db


def pool_forward(x):
    n, c, h, w = x.shape
    blocks = x.reshape(n, c, h // 2, 2, w // 2, 2).transpose(0, 1, 2, 4, 3, 5).reshape(n, c, h // 2, w // 2, 4)
    arg = blocks.argmax(axis=-1)
    out = np.take_along_axis(blocks, arg[..., None], axis=-1)[..., 0]
    return out, arg


def pool_backward(dout, arg, shape):
    n, c, h, w = shape
    grad = np.zeros((n, c, h // 2, w // 2, 4), dtype=dout.dtype)
    np.put_along_axis(grad, arg[..., None], dout[..., None], axis=-1)
    return grad.reshape(n, c, h // 2, w // 2, 2, 2).transpose(0, 1, 2, 4, 3, 5).reshape(shape)


def softmax(logits):
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def forward(params, x):
    """Logits for a channels-first batch, plus the cache needed for backprop."""
    a1, win1 = conv_forward(x, params["conv1_w"], params["conv1_b"])
    r1 = np.maximum(a1, 0)
    p1, arg1 = pool_forward(r1)
    a2, win2 = conv_forward(p1, params["conv2_w"], params["conv2_b"])
    r2 = np.maximum(a2, 0)
    p2, arg2 = pool_forward(r2)
    flat = p2.reshape(len(x), -1)
    logits = flat @ params["dense_w"] + params["dense_b"]
    cache = (win1, a1, arg1, r1.shape, win2, a2, arg2, r2.shape, p2.shape, flat)
    return logits, cache


def loss_and_grads(params, x, y):
    """Mean softmax cross-entropy over the batch and its gradient for every parameter."""
    logits, cache = forward(params, x)
    win1, a1, arg1, r1_shape, win2, a2, arg2, r2_shape, p2_shape, flat = cache
    probs = softmax(logits)
    n = len(x)
    loss = -np.log(probs[np.arange(n), y]).mean()

    dlogits = probs.copy()
    dlogits[np.arange(n), y] -= 1
    dlogits /= n
    grads = {
        "dense_w": flat.T @ dlogits,
        "dense_b": dlogits.sum(axis=0),
    }
    dp2 = (dlogits @ params["dense_w"].T).reshape(p2_shape)
    da2 = pool_backward(dp2, arg2, r2_shape) * (a2 > 0)
    dp1, grads["conv2_w"], grads["conv2_b"] = conv_backward(da2, win2, params["conv2_w"])
    da1 = pool_backward(dp1, arg1, r1_shape) * (a1 > 0)
    _, grads["conv1_w"], grads["conv1_b"] = conv_backward(da1, win1, params["conv1_w"])
    return loss, grads


# ---------------------------------------------------------------------------
# preprocessing


def _bilinear_axis(n_in: int, n_out: int):
    """Source indices and weights for half-pixel-centred bilinear resampling."""
    pos = (np.arange(n_out) + 0.5) * (n_in / n_out) - 0.5
    pos = np.clip(pos, 0, n_in - 1)
    lo = np.floor(pos).astype(np.intp)
    hi = np.minimum(lo + 1, n_in - 1)
    return lo, hi, pos - lo


def resize_bilinear(arr: np.ndarray, size: int) -> np.ndarray:
    """Resize an (h, w, c) array to (size, size, c) in float64."""
    a = arr.astype(np.float64)
    y0, y1, ty = _bilinear_axis(a.shape[0], size)
    x0, x1, tx = _bilinear_axis(a.shape[1], size)
    rows = a[y0] + ty[:, None, None] * (a[y1] - a[y0])
    return rows[:, x0] + tx[None, :, None] * (rows[:, x1] - rows[:, x0])


def preprocess(image: Image, face: FaceRegion, input_size: int = INPUT_SIZE) -> np.ndarray:
    """Crop ``face``, resize to ``input_size`` square, scale to [0, 1]. Returns (S, S, 3) float32."""
    if face.w < 2 or face.h < 2:
        raise InvalidParameterError(f"face region {face} too small to resample")
    crop = face.crop(image)
    return (resize_bilinear(crop, input_size) / 255.0).astype(np.float32)


def prepare(
    samples: Sequence[LabeledSample], blur: Optional[float], input_size: int = INPUT_SIZE
) -> tuple[np.ndarray, np.ndarray]:
    """Blur (optionally) and preprocess samples into an NCHW batch and label vector."""
    xs, ys = [], []
    for s in samples:
        img = s.image if blur is None else blur_region(s.image, s.face, blur)
        xs.append(preprocess(img, s.face, input_size))
        ys.append(int(s.label))
    x = np.stack(xs).transpose(0, 3, 1, 2)
    return np.ascontiguousarray(x), np.asarray(ys, dtype=np.intp)


# ---------------------------------------------------------------------------
# training / inference


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 15
    split: float = 0.75
    learning_rate: float = 0.01
    batch_size: int = 32
    momentum: float = 0.9
    seed: int = 0

    def __post_init__(self):
        if self.epochs < 1:
            raise InvalidParameterError("epochs must be >= 1")
        if not 0.0 < self.split < 1.0:
            raise InvalidParameterError("split must lie strictly between 0 and 1")
        if self.learning_rate <= 0 or self.batch_size < 1:
            raise InvalidParameterError("learning_rate and batch_size must be positive")
        if not 0.0 <= self.momentum < 1.0:
            raise InvalidParameterError("momentum must lie in [0, 1)")


@dataclass(frozen=True)
class Metrics:
    """Confusion counts with ``mask`` as the positive class."""

    tp: int
    tn: int
    fp: int
    fn: int

    @property
    def total(self) -> int:
        return self.tp + self.tn + self.fp + self.fn

    @property
    def accuracy(self) -> float:
        return (self.tp + self.tn) / self.total

    @property
    def true_positive_rate(self) -> float:
        pos = self.tp + self.fn
        return self.tp / pos if pos else float("nan")

    @classmethod
    def from_predictions(cls, y_true, y_pred) -> "Metrics":
        y_true = np.asarray(y_true)
        y_pred = np.asarray(y_pred)
        return cls(
            tp=int(np.sum((y_true == 1) & (y_pred == 1))),
            tn=int(np.sum((y_true == 0) & (y_pred == 0))),
            fp=int(np.sum((y_true == 0) & (y_pred == 1))),
            fn=int(np.sum((y_true == 1) & (y_pred == 0))),
        )


class TrainResult(NamedTuple):
    model: ClassifierModel
    metrics: Metrics
    epoch_losses: list[float]


def split_indices(n: int, split: float, seed: int) -> tuple[np.ndarray, np.ndarray]:
    perm = np.random.default_rng([seed, 1]).permutation(n)
    n_train = min(max(int(round(split * n)), 1), n - 1)
    return perm[:n_train], perm[n_train:]


def fit(x: np.ndarray, y: np.ndarray, config: TrainConfig, input_size: int = INPUT_SIZE):
    """SGD on an already-prepared NCHW batch; returns (model, per-epoch mean losses)."""
    rng = np.random.default_rng([config.seed, 2])
    params = init_params(rng, input_size)
    velocity = {k: np.zeros_like(v) for k, v in params.items()}
    lr = np.float32(config.learning_rate)
    mu = np.float32(config.momentum)
    losses = []
    for _ in range(config.epochs):
        order = rng.permutation(len(x))
        total = 0.0
        for start in range(0, len(x), config.batch_size):
            idx = order[start : start + config.batch_size]
            loss, grads = loss_and_grads(params, x[idx], y[idx])
            total += float(loss) * len(idx)
            for k in PARAM_ORDER:
                velocity[k] = mu * velocity[k] - lr * grads[k].astype(np.float32)
                params[k] = params[k] + velocity[k]
        losses.append(total / len(x))
    return ClassifierModel(params, input_size), losses


def train(
    samples: Sequence[LabeledSample],
    config: TrainConfig = TrainConfig(),
    blur: Optional[float] = None,
    input_size: int = INPUT_SIZE,
) -> TrainResult:
    """Train on a shuffled ``config.split`` share of ``samples``, score on the rest.

    With ``blur`` set, every face is blurred before preprocessing, for the
    training and held-out parts alike.
    """
    labels = np.array([int(s.label) for s in samples])
    counts = np.bincount(labels, minlength=2) if len(labels) else np.zeros(2)
    if counts.min() < 2:
        raise InvalidDatasetError(f"need >= 2 samples per class, got {counts.tolist()}")
    x, y = prepare(samples, blur, input_size)
    train_idx, test_idx = split_indices(len(samples), config.split, config.seed)
    model, losses = fit(x[train_idx], y[train_idx], config, input_size)
    metrics = Metrics.from_predictions(y[test_idx], predict_batch(model, x[test_idx]).argmax(axis=1))
    return TrainResult(model, metrics, losses)


def predict_batch(model: ClassifierModel, x: np.ndarray) -> np.ndarray:
    """Class probabilities for an NCHW batch."""
    s = model.input_size
    if x.ndim != 4 or x.shape[1:] != (3, s, s):
        raise InvalidInputError(f"expected (n, 3, {s}, {s}) batch, got {x.shape}")
    logits, _ = forward(model.params, x.astype(np.float32, copy=False))
    return softmax(logits)


def predict(model: ClassifierModel, tensor: np.ndarray) -> tuple[MaskLabel, float]:
    """Label and winning probability for one (S, S, 3) tensor from :func:`preprocess`.

    Equal logits resolve to ``no_mask``.
    """
    s = model.input_size
    tensor = np.asarray(tensor)
    if tensor.shape != (s, s, 3):
        raise InvalidInputError(f"expected ({s}, {s}, 3) tensor, got {tensor.shape}")
    probs = predict_batch(model, tensor.transpose(2, 0, 1)[None])[0]
    idx = int(np.argmax(probs))
    return MaskLabel(idx), float(probs[idx])


def evaluate(
    model: ClassifierModel, samples: Sequence[LabeledSample], blur: Optional[float] = None
) -> Metrics:
    if not samples:
        raise InvalidParameterError("cannot evaluate on an empty sample list")
    x, y = prepare(samples, blur, model.input_size)
    return Metrics.from_predictions(y, predict_batch(model, x).argmax(axis=1))


# ---------------------------------------------------------------------------
# persistence
#
# layout: MODEL_MAGIC | u32 LE header length | JSON header | float32 LE tensors in PARAM_ORDER


def save_bytes(model: ClassifierModel) -> bytes:
    header = {
        "architecture": model.architecture,
        "input_size": model.input_size,
        "classes": list(model.classes),
        "tensors": [[k, list(model.params[k].shape)] for k in PARAM_ORDER],
    }
    hb = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    body = b"".join(model.params[k].astype("<f4").tobytes() for k in PARAM_ORDER)
    return MODEL_MAGIC + struct.pack("<I", len(hb)) + hb + body


def load_bytes(data: bytes) -> ClassifierModel:
    if not data.startswith(MODEL_MAGIC):
        raise ModelFormatError("not a maskpriv model file (bad magic)")
    pos = len(MODEL_MAGIC)
    if len(data) < pos + 4:
        raise ModelFormatError("truncated model header")
    (hlen,) = struct.unpack_from("<I", data, pos)
    pos += 4
    try:
        header = json.loads(data[pos : pos + hlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ModelFormatError(f"corrupt model header: {exc}") from None
    pos += hlen
    input_size = int(header["input_size"])
    if header["architecture"] != architecture(input_size):
        raise ModelFormatError("unsupported architecture descriptor")
    params = {}
    for name, shape in header["tensors"]:
        count = int(np.prod(shape))
        end = pos + 4 * count
        if end > len(data):
            raise ModelFormatError(f"truncated tensor {name}")
        params[name] = np.frombuffer(data[pos:end], dtype="<f4").astype(np.float32).reshape(shape)
        pos = end
    if pos != len(data):
        raise ModelFormatError("trailing bytes after model tensors")
    return ClassifierModel(params, input_size, tuple(header["classes"]))


def save_model(model: ClassifierModel, path) -> None:
    Path(path).write_bytes(save_bytes(model))


def load_model(path) -> ClassifierModel:
    return load_bytes(Path(path).read_bytes())

"""Small convolutional K-class classifier: the attack target.

Parameters live as plain float64 arrays and are wrapped in graph tensors per
forward call, so inference is pure and attack code can differentiate with
respect to the input image alone. Named layers expose intermediate
activations for feature-space losses.
"""

from __future__ import annotations

import json
import logging
import zlib
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from .autograd import Tensor, avg_pool2d, conv2d, dot, log_softmax
from .dataset import Dataset

log = logging.getLogger(__name__)

ImageLike = Union[Tensor, np.ndarray]

MODEL_MAGIC = b"PDRM"
MODEL_VERSION = 1


class ModelFileError(ValueError):
    """Base class for model-file problems."""


class ModelMagicError(ModelFileError):
    pass


class ModelVersionError(ModelFileError):
    pass


class ModelTruncatedError(ModelFileError):
    pass


class ModelChecksumError(ModelFileError):
    pass


@dataclass
class LayerSpec:
    kind: str                 # conv | relu | avgpool | flatten | dense
    name: str
    in_channels: int = 0      # conv
    out_channels: int = 0     # conv
    kernel: int = 0           # conv
    pad: int = 0              # conv
    pool: int = 0             # avgpool
    in_features: int = 0      # dense
    out_features: int = 0     # dense

    def __post_init__(self):
        if self.kind not in ("conv", "relu", "avgpool", "flatten", "dense"):
            raise ValueError(f"unknown layer kind {self.kind!r}")


@dataclass
class ModelParams:
    layers: List[LayerSpec]
    weights: Dict[str, np.ndarray]   # "<layer>.weight" / "<layer>.bias"
    input_shape: Tuple[int, int, int]
    k: int
    meta: dict = field(default_factory=dict)

    def layer_names(self) -> List[str]:
        return [layer.name for layer in self.layers]


@dataclass
class TrainConfig:
    epochs: int = 20
    batch_size: int = 16
    lr: float = 0.05
    seed: int = 0

    def __post_init__(self):
        if self.epochs < 1 or self.batch_size < 1 or self.lr <= 0:
            raise ValueError("epochs, batch_size and lr must be positive")


DEFAULT_ILA_LAYER = "relu2"


def default_layers(k: int, size: int = 32) -> List[LayerSpec]:
    """conv(3->8) -> relu -> pool2 -> conv(8->16) -> relu -> pool2 -> flatten -> dense(k)."""
    flat = 16 * (size // 4) * (size // 4)
    return [
        LayerSpec("conv", "conv1", in_channels=3, out_channels=8, kernel=3, pad=1),
        LayerSpec("relu", "relu1"),
        LayerSpec("avgpool", "pool1", pool=2),
        LayerSpec("conv", "conv2", in_channels=8, out_channels=16, kernel=3, pad=1),
        LayerSpec("relu", "relu2"),
        LayerSpec("avgpool", "pool2", pool=2),
        LayerSpec("flatten", "flatten"),
        LayerSpec("dense", "dense", in_features=flat, out_features=k),
    ]


def init_params(layers: Sequence[LayerSpec], input_shape: Tuple[int, int, int],
                k: int, seed: int) -> ModelParams:
    rng = np.random.default_rng(seed)
    weights: Dict[str, np.ndarray] = {}
    names = [layer.name for layer in layers]
    if len(set(names)) != len(names):
        raise ValueError("layer names must be unique")
    for layer in layers:
        if layer.kind == "conv":
            fan_in = layer.in_channels * layer.kernel * layer.kernel
            scale = np.sqrt(2.0 / fan_in)
            weights[layer.name + ".weight"] = rng.normal(
                0.0, scale, size=(layer.out_channels, layer.in_channels,
                                  layer.kernel, layer.kernel))
            weights[layer.name + ".bias"] = np.zeros(layer.out_channels)
        elif layer.kind == "dense":
            scale = np.sqrt(2.0 / layer.in_features)
            weights[layer.name + ".weight"] = rng.normal(
                0.0, scale, size=(layer.out_features, layer.in_features))
            weights[layer.name + ".bias"] = np.zeros(layer.out_features)
    return ModelParams(list(layers), weights, tuple(input_shape), k)


def _wrap_weights(model: ModelParams, requires_grad: bool) -> Dict[str, Tensor]:
    return {name: Tensor(arr, requires_grad=requires_grad)
            for name, arr in model.weights.items()}


def _run(model: ModelParams, tensors: Dict[str, Tensor], x: Tensor,
         capture: Optional[str]) -> Tuple[Tensor, Optional[Tensor]]:
    if x.shape != model.input_shape:
        raise ValueError(
            f"forward: input shape {x.shape} does not match model {model.input_shape}")
    out = x
    captured = None
    for layer in model.layers:
        if layer.kind == "conv":
            out = conv2d(out, tensors[layer.name + ".weight"],
                         bias=tensors[layer.name + ".bias"], pad=layer.pad)
        elif layer.kind == "relu":
            out = out.relu()
        elif layer.kind == "avgpool":
            out = avg_pool2d(out, layer.pool)
        elif layer.kind == "flatten":
            out = out.reshape(int(np.prod(out.shape)))
        elif layer.kind == "dense":
            out = tensors[layer.name + ".weight"] @ out + tensors[layer.name + ".bias"]
        if layer.name == capture:
            captured = out
    return out, captured


def _as_tensor(x: ImageLike) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def forward(model: ModelParams, x: ImageLike) -> Tensor:
    """Logits for one image; argmax is the predicted class."""
    logits, _ = _run(model, _wrap_weights(model, False), _as_tensor(x), None)
    return logits


def forward_with_intermediate(model: ModelParams, x: ImageLike,
                              layer: str) -> Tuple[Tensor, Tensor]:
    """Logits plus the activation after the named layer, from one shared pass."""
    if layer not in model.layer_names():
        raise ValueError(
            f"unknown layer {layer!r}; valid names: {', '.join(model.layer_names())}")
    logits, captured = _run(model, _wrap_weights(model, False), _as_tensor(x), layer)
    return logits, captured


def predict(model: ModelParams, x: ImageLike) -> int:
    return int(np.argmax(forward(model, x).data))


def cross_entropy(logits: Tensor, y: int) -> Tensor:
    """Negative log-probability of class y under softmax(logits)."""
    k = logits.shape[0]
    if not 0 <= y < k:
        raise ValueError(f"label {y} out of range for {k} classes")
    onehot = np.zeros(k)
    onehot[y] = 1.0
    return -dot(log_softmax(logits), Tensor(onehot))


def ensemble_loss(models: Sequence[ModelParams], x: ImageLike, y: int) -> Tensor:
    """Mean cross-entropy across source models."""
    if not models:
        raise ValueError("ensemble_loss: need at least one model")
    xt = _as_tensor(x)
    total = cross_entropy(forward(models[0], xt), y)
    for model in models[1:]:
        total = total + cross_entropy(forward(model, xt), y)
    return total / float(len(models))


def accuracy(model: ModelParams, xs: np.ndarray, ys: np.ndarray) -> float:
    hits = sum(predict(model, x) == int(y) for x, y in zip(xs, ys))
    return hits / len(ys)


def batch_loss(model: ModelParams, xs: Sequence[np.ndarray], ys: Sequence[int],
               tensors: Optional[Dict[str, Tensor]] = None) -> Tensor:
    """Mean cross-entropy over a batch.

    Pass a dict of weight tensors to differentiate with respect to the
    parameters; otherwise weights are treated as constants.
    """
    if tensors is None:
        tensors = _wrap_weights(model, False)
    total = None
    for x, y in zip(xs, ys):
        logits, _ = _run(model, tensors, _as_tensor(x), None)
        sample = cross_entropy(logits, int(y))
        total = sample if total is None else total + sample
    return total / float(len(ys))


def train(dataset: Dataset, cfg: Optional[TrainConfig] = None) -> ModelParams:
    """Minibatch gradient descent on cross-entropy; deterministic given seed."""
    cfg = cfg or TrainConfig()
    xs, ys = dataset.x_train, dataset.y_train
    if len(xs) == 0:
        raise ValueError("train: dataset is empty")
    size = xs.shape[-1]
    model = init_params(default_layers(dataset.spec.k, size), xs.shape[1:],
                        dataset.spec.k, cfg.seed)
    rng = np.random.default_rng(cfg.seed + 1)
    for epoch in range(cfg.epochs):
        order = rng.permutation(len(xs))
        for start in range(0, len(xs), cfg.batch_size):
            batch = order[start:start + cfg.batch_size]
            tensors = _wrap_weights(model, True)
            batch_loss(model, xs[batch], ys[batch], tensors).backward()
            for name, tensor in tensors.items():
                model.weights[name] = model.weights[name] - cfg.lr * tensor.grad
        if epoch % 10 == 9 or epoch == cfg.epochs - 1:
            log.info("epoch %d done", epoch + 1)
    model.meta["train_accuracy"] = accuracy(model, xs, ys)
    model.meta["test_accuracy"] = accuracy(model, dataset.x_test, dataset.y_test)
    log.info("final train accuracy %.4f, test accuracy %.4f",
             model.meta["train_accuracy"], model.meta["test_accuracy"])
    return model


def _manifest(model: ModelParams) -> dict:
    return {
        "k": model.k,
        "input_shape": list(model.input_shape),
        "layers": [{k: v for k, v in vars(layer).items()} for layer in model.layers],
        "arrays": [{"name": name, "shape": list(model.weights[name].shape)}
                   for name in sorted(model.weights)],
        "meta": model.meta,
    }


def save_model(model: ModelParams, path: str) -> None:
    """Magic + version + JSON manifest + float64 LE arrays + CRC32 of all of it."""
    manifest = json.dumps(_manifest(model), sort_keys=True).encode("utf-8")
    payload = bytearray()
    payload += len(manifest).to_bytes(4, "little")
    payload += manifest
    for entry in sorted(model.weights):
        payload += np.ascontiguousarray(model.weights[entry], dtype="<f8").tobytes()
    blob = MODEL_MAGIC + MODEL_VERSION.to_bytes(2, "little") + bytes(payload)
    blob += zlib.crc32(blob).to_bytes(4, "little")
    with open(path, "wb") as fh:
        fh.write(blob)


def load_model(path: str) -> ModelParams:
    with open(path, "rb") as fh:
        blob = fh.read()
    if len(blob) < 14:
        raise ModelTruncatedError(f"{path}: file too short to be a model")
    if blob[:4] != MODEL_MAGIC:
        raise ModelMagicError(f"{path}: bad magic bytes {blob[:4]!r}")
    version = int.from_bytes(blob[4:6], "little")
    if version != MODEL_VERSION:
        raise ModelVersionError(
            f"{path}: format version {version}, expected {MODEL_VERSION}")
    manifest_len = int.from_bytes(blob[6:10], "little")
    manifest_end = 10 + manifest_len
    if manifest_end + 4 > len(blob):
        raise ModelTruncatedError(f"{path}: file ends inside the manifest")
    try:
        manifest = json.loads(blob[10:manifest_end].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ModelFileError(f"{path}: manifest unreadable: {exc}") from exc
    array_bytes = sum(int(np.prod(entry["shape"])) * 8 for entry in manifest["arrays"])
    expected = manifest_end + array_bytes + 4
    if len(blob) < expected:
        raise ModelTruncatedError(
            f"{path}: expected {expected} bytes, file has {len(blob)}")
    if len(blob) > expected:
        raise ModelFileError(f"{path}: {len(blob) - expected} trailing bytes")
    # structure is complete, so a bad CRC now means corruption, not truncation
    stored_crc = int.from_bytes(blob[-4:], "little")
    if zlib.crc32(blob[:-4]) != stored_crc:
        raise ModelChecksumError(f"{path}: checksum mismatch")
    offset = manifest_end
    weights: Dict[str, np.ndarray] = {}
    for entry in manifest["arrays"]:
        nbytes = int(np.prod(entry["shape"])) * 8
        chunk = blob[offset:offset + nbytes]
        weights[entry["name"]] = np.frombuffer(chunk, dtype="<f8").reshape(entry["shape"]).copy()
        offset += nbytes
    layers = [LayerSpec(**spec) for spec in manifest["layers"]]
    return ModelParams(layers, weights, tuple(manifest["input_shape"]),
                       manifest["k"], manifest.get("meta", {}))

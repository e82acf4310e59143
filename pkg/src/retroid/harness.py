"""Identification harness: classifier backends, training contract, metrics.

Three backend families sit behind one contract:

* ``nearest-centroid`` - pixel-downsample centroid matcher, the cheap sanity
  baseline (no gradient training).
* ``small-cnn`` - a compact convnet trained from scratch; the default for
  desk-scale experiments.
* ``pretrained-backbone:<name>`` - a torchvision backbone with its final
  classification layer replaced, fine-tuned end to end. Loading ImageNet
  weights requires them to be present in the local torch cache.

Gradient backends train with the adaptive-moment optimizer, cross-entropy
loss and a fixed epoch count; runs are deterministic given (backend, seed,
data order).
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import cv2
import numpy as np

from .data import CropSet, derive_seed
from .errors import ConfigurationError, ValidationError

_LUMA = np.array([0.299, 0.587, 0.114])

NEAREST_CENTROID = "nearest-centroid"
SMALL_CNN = "small-cnn"
PRETRAINED_PREFIX = "pretrained-backbone:"

_NC_SIDE = 16
_CNN_SIDE = 32
_PRETRAINED_SIDE = 224

# The screening zoo: torchvision backbones spanning small to mid-size nets.
PRETRAINED_ZOO = (
    "regnet_y_3_2gf",
    "shufflenet_v2_x2_0",
    "mnasnet0_75",
    "densenet121",
    "googlenet",
    "mnasnet1_3",
    "regnet_y_400mf",
    "densenet201",
    "efficientnet_v2_s",
    "resnet18",
    "shufflenet_v2_x1_0",
    "mobilenet_v3_small",
    "efficientnet_b0",
    "resnext50_32x4d",
    "mobilenet_v3_large",
    "swin_v2_s",
    "squeezenet1_1",
)


@dataclass(frozen=True)
class Hyperparams:
    learning_rate: float = 1e-3
    weight_decay: float = 1e-4
    epochs: int = 100
    batch_size: int = 64
    seed: int = 0
    optimizer: str = "adam"
    loss: str = "cross-entropy"

    def __post_init__(self):
        if self.learning_rate <= 0 or self.weight_decay < 0:
            raise ConfigurationError("learning_rate must be > 0 and weight_decay >= 0")
        if self.epochs < 1 or self.batch_size < 1:
            raise ConfigurationError("epochs and batch_size must be positive")
        if self.optimizer != "adam":
            raise ConfigurationError(f"unsupported optimizer {self.optimizer!r}")
        if self.loss != "cross-entropy":
            raise ConfigurationError(f"unsupported loss {self.loss!r}")

    def to_json(self) -> dict:
        return {
            "learning_rate": self.learning_rate,
            "weight_decay": self.weight_decay,
            "epochs": self.epochs,
            "batch_size": self.batch_size,
            "seed": self.seed,
            "optimizer": self.optimizer,
            "loss": self.loss,
        }

    @classmethod
    def from_json(cls, obj: dict) -> "Hyperparams":
        return cls(**obj)


@dataclass
class Metrics:
    """Accuracy, macro F1 and the confusion matrix over the label set.

    Macro F1 averages per-class F1 over every classifier class, counting a
    class with no true and no predicted samples as 0.
    """

    accuracy: float
    macro_f1: float
    confusion: np.ndarray
    n_samples: int

    def to_json(self) -> dict:
        return {
            "accuracy": self.accuracy,
            "macro_f1": self.macro_f1,
            "confusion": self.confusion.tolist(),
            "n_samples": self.n_samples,
        }


@dataclass
class Classifier:
    backend: str
    labels: list[str]
    input_px: int
    hyperparams: Hyperparams
    norm: tuple[float, float]
    state: dict = field(default_factory=dict)


def _to_gray(image: np.ndarray) -> np.ndarray:
    if image.ndim == 2:
        return image
    if image.ndim == 3 and image.shape[2] == 3:
        return np.clip(np.rint(image.astype(np.float64) @ _LUMA), 0, 255).astype(np.uint8)
    raise ValidationError(f"unsupported image shape {image.shape}")


def _backend_side(backend: str) -> int:
    if backend == NEAREST_CENTROID:
        return _NC_SIDE
    if backend == SMALL_CNN:
        return _CNN_SIDE
    if backend.startswith(PRETRAINED_PREFIX):
        return _PRETRAINED_SIDE
    raise ConfigurationError(f"unknown backend {backend!r}")


def _transform(images: Sequence[np.ndarray], backend: str, input_px: int) -> np.ndarray:
    side = _backend_side(backend)
    out = np.empty((len(images), side, side), dtype=np.float32)
    for i, img in enumerate(images):
        img = np.asarray(img)
        if img.shape[0] != input_px or img.shape[1] != input_px:
            raise ValidationError(
                f"image {i} is {img.shape[1]}x{img.shape[0]}, expected {input_px}x{input_px}"
            )
        gray = _to_gray(img)
        out[i] = cv2.resize(gray, (side, side), interpolation=cv2.INTER_AREA).astype(np.float32)
    return out / 255.0


def _validate_train_set(train_set: CropSet) -> list[str]:
    if len(train_set) == 0:
        raise ValidationError("training set is empty")
    for rec in train_set.records:
        if rec.qc == "discard":
            raise ValidationError(f"crop {rec.crop_id} is QC-discarded")
        if rec.stage != "enhanced":
            raise ValidationError(f"crop {rec.crop_id} has stage {rec.stage!r}, expected enhanced")
    classes = train_set.classes()
    if len(classes) < 2:
        raise ValidationError(f"need at least 2 classes, got {classes}")
    counts = {c: 0 for c in classes}
    for label in train_set.labels:
        counts[label] += 1
    empty = [c for c, n in counts.items() if n == 0]
    if empty:
        raise ValidationError(f"classes without samples: {empty}")
    return classes


def _label_indices(labels: Sequence[str], classes: Sequence[str]) -> np.ndarray:
    index = {c: i for i, c in enumerate(classes)}
    try:
        return np.array([index[l] for l in labels], dtype=np.int64)
    except KeyError as exc:
        raise ValidationError(f"label {exc.args[0]!r} not in classifier label set") from None


def _make_torch_model(backend: str, num_classes: int, seed: int, pretrained_weights: bool):
    import torch
    import torch.nn as nn

    torch.manual_seed(seed)
    if backend == SMALL_CNN:
        return nn.Sequential(
            nn.Conv2d(1, 16, 3, padding=1), nn.ReLU(), nn.MaxPool2d(2),
            nn.Conv2d(16, 32, 3, padding=1), nn.ReLU(), nn.MaxPool2d(2),
            nn.Conv2d(32, 64, 3, padding=1), nn.ReLU(), nn.MaxPool2d(2),
            nn.Flatten(),
            nn.Linear(64 * 4 * 4, 128), nn.ReLU(),
            nn.Linear(128, num_classes),
        )
    name = backend[len(PRETRAINED_PREFIX):]
    from torchvision import models

    if name not in PRETRAINED_ZOO:
        raise ConfigurationError(f"unknown pretrained backbone {name!r}")
    if pretrained_weights:
        try:
            model = models.get_model(name, weights="DEFAULT")
        except Exception as exc:
            raise ConfigurationError(
                f"ImageNet weights for {name!r} are not available locally "
                f"(set pretrained_weights=False to fine-tune from random init): {exc}"
            ) from exc
        _replace_head(model, name, num_classes)
        return model
    return models.get_model(name, weights=None, num_classes=num_classes)


def _replace_head(model, name: str, num_classes: int) -> None:
    import torch.nn as nn

    if name.startswith("squeezenet"):
        model.classifier[1] = nn.Conv2d(512, num_classes, kernel_size=1)
        return
    for attr in ("fc", "head", "classifier"):
        if not hasattr(model, attr):
            continue
        layer = getattr(model, attr)
        if isinstance(layer, nn.Linear):
            setattr(model, attr, nn.Linear(layer.in_features, num_classes))
            return
        if isinstance(layer, nn.Sequential):
            for i in range(len(layer) - 1, -1, -1):
                if isinstance(layer[i], nn.Linear):
                    layer[i] = nn.Linear(layer[i].in_features, num_classes)
                    return
    raise ConfigurationError(f"cannot locate classification head of {name!r}")


def _train_torch(
    backend: str,
    inputs: np.ndarray,
    targets: np.ndarray,
    num_classes: int,
    hp: Hyperparams,
    pretrained_weights: bool,
) -> dict:
    import torch
    import torch.nn as nn

    model = _make_torch_model(backend, num_classes, hp.seed, pretrained_weights)
    if backend == SMALL_CNN:
        x = torch.from_numpy(inputs[:, None, :, :])
    else:
        x = torch.from_numpy(np.repeat(inputs[:, None, :, :], 3, axis=1))
    y = torch.from_numpy(targets)
    optimizer = torch.optim.Adam(
        model.parameters(), lr=hp.learning_rate, weight_decay=hp.weight_decay
    )
    loss_fn = nn.CrossEntropyLoss()
    n = len(targets)
    model.train()
    for epoch in range(hp.epochs):
        order = np.random.Generator(
            np.random.PCG64(derive_seed(hp.seed, "epoch", epoch))
        ).permutation(n)
        for start in range(0, n, hp.batch_size):
            idx = torch.from_numpy(order[start:start + hp.batch_size])
            optimizer.zero_grad()
            loss = loss_fn(model(x[idx]), y[idx])
            loss.backward()
            optimizer.step()
    model.eval()
    # Keep the state dict object intact: rebuilding it would strip the
    # _metadata some torchvision archs need at load time.
    return {"state_dict": model.state_dict()}


def train(
    train_set: CropSet,
    backend: str,
    hp: Hyperparams,
    pretrained_weights: bool = True,
) -> Classifier:
    """Fit a classifier on enhanced, QC-passing crops.

    Deterministic given (backend, hp.seed, data order). Pretrained backbones
    change only through head replacement and fine-tuning.
    """
    _backend_side(backend)
    classes = _validate_train_set(train_set)
    first = np.asarray(train_set.images[0])
    input_px = first.shape[0]
    if first.shape[0] != first.shape[1]:
        raise ValidationError(f"crops must be square, got {first.shape}")
    inputs = _transform(train_set.images, backend, input_px)
    mean = float(inputs.mean())
    std = float(inputs.std())
    if std < 1e-6:
        std = 1.0
    inputs = (inputs - mean) / std
    targets = _label_indices(train_set.labels, classes)

    if backend == NEAREST_CENTROID:
        flat = inputs.reshape(len(inputs), -1).astype(np.float64)
        centroids = np.stack([flat[targets == k].mean(axis=0) for k in range(len(classes))])
        spread = float(np.mean(np.sum((flat - centroids[targets]) ** 2, axis=1)))
        state = {"centroids": centroids, "tau_sq": max(spread, 1e-9)}
    else:
        state = _train_torch(backend, inputs, targets, len(classes), hp, pretrained_weights)

    return Classifier(
        backend=backend,
        labels=list(classes),
        input_px=input_px,
        hyperparams=hp,
        norm=(mean, std),
        state=state,
    )


def _model_from_state(clf: Classifier):
    import torch

    model = _make_torch_model(clf.backend, len(clf.labels), clf.hyperparams.seed, False)
    model.load_state_dict(clf.state["state_dict"])
    model.eval()
    return model


def predict_batch(clf: Classifier, images: Sequence[np.ndarray]) -> np.ndarray:
    """Probability distributions over the classifier's label set, one row per image."""
    if len(images) == 0:
        raise ValidationError("no images to predict")
    inputs = _transform(images, clf.backend, clf.input_px)
    mean, std = clf.norm
    inputs = (inputs - mean) / std
    if clf.backend == NEAREST_CENTROID:
        flat = inputs.reshape(len(inputs), -1).astype(np.float64)
        centroids = clf.state["centroids"]
        d_sq = ((flat[:, None, :] - centroids[None, :, :]) ** 2).sum(axis=2)
        logits = -d_sq / (2.0 * clf.state["tau_sq"])
        logits -= logits.max(axis=1, keepdims=True)
        probs = np.exp(logits)
    else:
        import torch

        model = _model_from_state(clf)
        if clf.backend == SMALL_CNN:
            x = torch.from_numpy(inputs[:, None, :, :])
        else:
            x = torch.from_numpy(np.repeat(inputs[:, None, :, :], 3, axis=1))
        outs = []
        with torch.no_grad():
            for start in range(0, len(images), 256):
                outs.append(model(x[start:start + 256]))
        logits = torch.cat(outs).double().numpy()
        logits -= logits.max(axis=1, keepdims=True)
        probs = np.exp(logits)
    probs /= probs.sum(axis=1, keepdims=True)
    return probs


def predict(clf: Classifier, image: np.ndarray) -> np.ndarray:
    """Probability vector over the label set for a single crop."""
    return predict_batch(clf, [image])[0]


def compute_metrics(truth: np.ndarray, preds: np.ndarray, num_classes: int) -> Metrics:
    """Metrics from class-index arrays; the unit evaluate() is built on."""
    if len(truth) == 0:
        raise ValidationError("cannot compute metrics on zero samples")
    confusion = np.zeros((num_classes, num_classes), dtype=np.int64)
    np.add.at(confusion, (truth, preds), 1)
    total = int(confusion.sum())
    accuracy = float(np.trace(confusion)) / total
    f1s = []
    for c in range(num_classes):
        tp = confusion[c, c]
        fp = confusion[:, c].sum() - tp
        fn = confusion[c, :].sum() - tp
        denom = 2 * tp + fp + fn
        f1s.append(2.0 * tp / denom if denom > 0 else 0.0)
    return Metrics(
        accuracy=accuracy,
        macro_f1=float(np.mean(f1s)),
        confusion=confusion,
        n_samples=total,
    )


def evaluate(clf: Classifier, test_set: CropSet) -> Metrics:
    """Accuracy, macro F1 and confusion counts of a classifier on a test set."""
    if len(test_set) == 0:
        raise ValidationError("test set is empty")
    truth = _label_indices(test_set.labels, clf.labels)
    probs = predict_batch(clf, test_set.images)
    preds = probs.argmax(axis=1)
    return compute_metrics(truth, preds, len(clf.labels))


def save_classifier(clf: Classifier, out_dir: str | Path) -> Path:
    """Persist a classifier as spec.json plus a parameter blob."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    from . import __version__

    spec = {
        "backend": clf.backend,
        "labels": clf.labels,
        "input_px": clf.input_px,
        "hyperparams": clf.hyperparams.to_json(),
        "norm": list(clf.norm),
        "tool_version": __version__,
    }
    (out / "spec.json").write_text(json.dumps(spec, indent=2), encoding="utf-8")
    if clf.backend == NEAREST_CENTROID:
        np.savez(out / "params.npz", centroids=clf.state["centroids"], tau_sq=clf.state["tau_sq"])
    else:
        import torch

        torch.save(clf.state["state_dict"], out / "params.pt")
    return out


def load_classifier(model_dir: str | Path) -> Classifier:
    model_dir = Path(model_dir)
    spec_path = model_dir / "spec.json"
    if not spec_path.exists():
        raise ValidationError(f"no classifier at {model_dir}")
    spec = json.loads(spec_path.read_text(encoding="utf-8"))
    backend = spec["backend"]
    if backend == NEAREST_CENTROID:
        blob = np.load(model_dir / "params.npz")
        state = {"centroids": blob["centroids"], "tau_sq": float(blob["tau_sq"])}
    else:
        import torch

        state = {"state_dict": torch.load(model_dir / "params.pt", weights_only=True)}
    return Classifier(
        backend=backend,
        labels=list(spec["labels"]),
        input_px=int(spec["input_px"]),
        hyperparams=Hyperparams.from_json(spec["hyperparams"]),
        norm=(float(spec["norm"][0]), float(spec["norm"][1])),
        state=state,
    )

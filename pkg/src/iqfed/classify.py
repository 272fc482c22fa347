"""Per-client linear SVM on encoder features and a separability checker.

The multiclass model is one-vs-rest. Each binary machine minimizes

    ||w||^2 / (2 C) + mean_l max(0, 1 - y_l (w . x_l + b))

by full-batch subgradient descent with step ``lr0 / sqrt(epoch)``. An epoch
whose step would raise the objective is rejected, so the recorded objective
trace never increases.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

DEFAULT_C = 1.0
HARD_MARGIN_C = 1e6
DEFAULT_EPOCHS = 200
DEFAULT_LR = 0.1


@dataclass
class SvmModel:
    W: np.ndarray
    b: np.ndarray
    C: float = DEFAULT_C
    epochs: int = DEFAULT_EPOCHS
    objective_trace: Optional[np.ndarray] = field(default=None, repr=False)

    def __post_init__(self):
        self.W = np.atleast_2d(np.asarray(self.W, dtype=np.float64))
        self.b = np.asarray(self.b, dtype=np.float64).reshape(-1)
        if self.W.shape[0] != self.b.size:
            raise ValueError("W has one row per class; b needs the same length")
        if not (np.all(np.isfinite(self.W)) and np.all(np.isfinite(self.b))):
            raise ValueError("SVM parameters must be finite")

    @property
    def num_classes(self) -> int:
        return self.W.shape[0]

    @property
    def dim(self) -> int:
        return self.W.shape[1]

    def scores(self, features) -> np.ndarray:
        x = _features(features)
        if x.shape[1] != self.dim:
            raise ValueError(f"feature dimension {x.shape[1]} does not match the model ({self.dim})")
        return x @ self.W.T + self.b


def _features(features) -> np.ndarray:
    x = np.asarray(features, dtype=np.float64)
    if x.ndim == 1:
        x = x[None]
    if x.ndim != 2:
        raise ValueError(f"features must be a (n, d) array, got shape {x.shape}")
    if not np.all(np.isfinite(x)):
        raise ValueError("features must be finite")
    return x


def binary_objective(w, b, x, y, C) -> float:
    hinge = np.maximum(0.0, 1.0 - y * (x @ w + b))
    return float(w @ w / (2.0 * C) + hinge.mean())


def fit_binary(x: np.ndarray, y: np.ndarray, C: float = DEFAULT_C, epochs: int = DEFAULT_EPOCHS, lr: float = DEFAULT_LR):
    """Train one +-1 machine; returns ``(w, b, objective_trace)``.

    The trace has ``epochs + 1`` entries, starting at the zero model.
    """
    n, d = x.shape
    w = np.zeros(d)
    b = 0.0
    obj = binary_objective(w, b, x, y, C)
    trace = [obj]
    for epoch in range(1, epochs + 1):
        active = y * (x @ w + b) < 1.0
        gw = w / C - (y[active] @ x[active]) / n
        gb = -y[active].sum() / n
        step = lr / np.sqrt(epoch)
        w_new, b_new = w - step * gw, b - step * gb
        obj_new = binary_objective(w_new, b_new, x, y, C)
        if obj_new <= obj:
            w, b, obj = w_new, b_new, obj_new
        trace.append(obj)
    return w, b, np.array(trace)


def fit(
    features,
    labels,
    num_classes: Optional[int] = None,
    C: float = DEFAULT_C,
    epochs: int = DEFAULT_EPOCHS,
    lr: float = DEFAULT_LR,
    standardize: bool = True,
) -> SvmModel:
    """One-vs-rest linear SVM.

    With ``standardize`` the machines are trained on z-scored features and
    the scaling is folded back into ``W`` and ``b``, so the returned model
    acts on raw features.
    """
    x = _features(features)
    labels = np.asarray(labels, dtype=np.int64).reshape(-1)
    if labels.size != x.shape[0]:
        raise ValueError(f"{x.shape[0]} feature rows but {labels.size} labels")
    present = np.unique(labels)
    if present.size < 2:
        raise ValueError("SVM training needs at least two classes")
    if np.any(labels < 0):
        raise ValueError("labels must be non-negative class indices")
    k = int(num_classes if num_classes is not None else labels.max() + 1)

    mean = np.zeros(x.shape[1])
    scale = np.ones(x.shape[1])
    if standardize:
        mean = x.mean(axis=0)
        scale = x.std(axis=0)
        scale[scale == 0] = 1.0
    z = (x - mean) / scale

    W = np.zeros((k, x.shape[1]))
    b = np.full(k, -1.0)
    traces = np.zeros((k, epochs + 1))
    for cls in range(k):
        if cls not in present:
            # never seen in training: a constant "not this class" machine
            continue
        y = np.where(labels == cls, 1.0, -1.0)
        w, bias, trace = fit_binary(z, y, C, epochs, lr)
        W[cls] = w / scale
        b[cls] = bias - (w / scale) @ mean
        traces[cls] = trace
    return SvmModel(W, b, C, epochs, traces)


def predict(model: SvmModel, features) -> np.ndarray:
    """Class indices; ``argmax`` returns the first maximum, so ties go to the lowest index."""
    return np.argmax(model.scores(features), axis=1)


@dataclass
class Evaluation:
    accuracy: float
    confusion: np.ndarray
    normalized: np.ndarray


def confusion_matrix(truth, pred, num_classes: int) -> np.ndarray:
    cm = np.zeros((num_classes, num_classes), dtype=np.int64)
    np.add.at(cm, (np.asarray(truth, dtype=np.int64), np.asarray(pred, dtype=np.int64)), 1)
    return cm


def normalize_rows(cm: np.ndarray) -> np.ndarray:
    rows = cm.sum(axis=1, keepdims=True).astype(np.float64)
    return np.divide(cm, rows, out=np.zeros(cm.shape), where=rows > 0)


def evaluate(model: SvmModel, features, labels) -> Evaluation:
    labels = np.asarray(labels, dtype=np.int64).reshape(-1)
    if labels.size == 0:
        raise ValueError("cannot evaluate on an empty test set")
    pred = predict(model, features)
    cm = confusion_matrix(labels, pred, model.num_classes)
    return Evaluation(float(np.mean(pred == labels)), cm, normalize_rows(cm))


@dataclass
class SeparabilityCertificate:
    normal: np.ndarray
    bias: float
    margin: float
    radius: float
    separable: bool

    def verify(self, features, labels, tol: float = 1e-9) -> bool:
        x = _features(features)
        y = np.asarray(labels, dtype=np.float64)
        return bool(np.all(y * (x @ self.normal + self.bias) >= self.margin - tol))


def check_separability(features, labels, mu: float, rho: float, epochs: int = DEFAULT_EPOCHS, lr: float = DEFAULT_LR) -> SeparabilityCertificate:
    """Search for a unit normal achieving functional margin ``mu`` on +-1 labels.

    A hinge machine with ``C = 1e6`` gives the direction; once normalized the
    bias is re-centred between the two classes' extreme projections, which
    can only raise the minimum margin. ``margin`` is the achieved minimum of
    ``y (normal . x + bias)`` and may be negative.
    """
    x = _features(features)
    y = np.asarray(labels, dtype=np.float64).reshape(-1)
    if y.size != x.shape[0]:
        raise ValueError("features and labels differ in length")
    if not np.all(np.isin(y, (-1.0, 1.0))):
        raise ValueError("separability is defined for +1/-1 labels")
    radius = float(np.max(np.linalg.norm(x, axis=1)))
    w, b, _ = fit_binary(x, y, HARD_MARGIN_C, epochs, lr)
    norm = np.linalg.norm(w)
    if norm == 0:
        w = np.zeros(x.shape[1])
        w[0] = 1.0
    else:
        w = w / norm
    proj = x @ w
    if np.any(y > 0) and np.any(y < 0):
        b = -0.5 * (proj[y > 0].min() + proj[y < 0].max())
    else:
        b = b / norm if norm else 0.0
    margin = float(np.min(y * (proj + b)))
    return SeparabilityCertificate(w, float(b), margin, radius, bool(margin >= mu and radius <= rho))

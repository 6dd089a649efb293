"""Downstream tasks on a frozen encoder: linear-SVM classification, retrieval,
upsampling from the dense local reconstruction, and attention summaries."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from .config import ModelConfig
from .diffcore import ModelParams
from .errors import CheckpointError, InvalidInput, ShapeError
from .geometry import PointCloud, build_pyramid, chamfer_distance, farthest_point_sample
from .model import forward, make_batch

__all__ = [
    "FeatureTable",
    "extract_features",
    "LinearSVM",
    "train_linear_svm",
    "RetrievalResult",
    "retrieval_map",
    "average_precision",
    "upsample",
    "dense_pool",
    "attention_summary",
    "received_attention",
    "random_ball",
]


@dataclass
class FeatureTable:
    ids: list
    labels: list
    features: np.ndarray  # (rows, D_global)

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=np.float64)
        if self.features.ndim != 2 or len(self.ids) != len(self.features) or len(self.labels) != len(self.ids):
            raise ShapeError("ids, labels and feature rows must align")
        if len(set(self.ids)) != len(self.ids):
            raise InvalidInput("feature table ids must be unique")

    def __len__(self):
        return len(self.ids)

    def write_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["id", "label"] + [f"f{k + 1}" for k in range(self.features.shape[1])])
            for i, lab, row in zip(self.ids, self.labels, self.features):
                w.writerow([i, lab] + [repr(float(v)) for v in row])

    @classmethod
    def read_csv(cls, path):
        with open(path, newline="") as fh:
            rows = list(csv.reader(fh))
        body = rows[1:]
        return cls([r[0] for r in body], [r[1] for r in body],
                   np.array([[float(v) for v in r[2:]] for r in body]).reshape(len(body), -1))


def _chunks(seq, size):
    for i in range(0, len(seq), size):
        yield seq[i:i + size]


def extract_features(clouds, params: ModelParams, config: ModelConfig, labels=None,
                     seed=0, batch_size=16) -> FeatureTable:
    """One global feature per cloud from the frozen encoder."""
    clouds = list(clouds)
    for c in clouds:
        n = len(c.points if isinstance(c, PointCloud) else c)
        if n != config.n_points:
            raise CheckpointError(f"cloud has {n} points but the checkpoint expects {config.n_points}")
    frozen = params.frozen()
    rows = []
    for chunk in _chunks(clouds, batch_size):
        batch = make_batch(chunk, config, seed)
        out = forward(frozen, batch, config)
        rows.append(out.encoder.global_feature.data)
    feats = np.concatenate(rows, axis=0) if rows else np.zeros((0, config.global_dim))
    ids = [getattr(c, "id", "") or f"cloud_{i:05d}" for i, c in enumerate(clouds)]
    if len(set(ids)) != len(ids):
        ids = [f"{i}#{k}" for k, i in enumerate(ids)]
    labels = list(labels) if labels is not None else [""] * len(clouds)
    return FeatureTable(ids, labels, feats)


@dataclass
class LinearSVM:
    """One-vs-rest linear classifiers over standardized features."""

    classes: list
    weights: np.ndarray  # (D, n_classes)
    bias: np.ndarray  # (n_classes,)
    mean: np.ndarray
    scale: np.ndarray

    def decision_function(self, x):
        z = (np.asarray(x, dtype=np.float64) - self.mean) / self.scale
        return z @ self.weights + self.bias

    def predict(self, x):
        # argmax returns the first maximum: ties go to the lower class index
        return [self.classes[k] for k in np.argmax(self.decision_function(x), axis=1)]

    def accuracy(self, x, y):
        pred = self.predict(x)
        return float(np.mean([p == t for p, t in zip(pred, y)]))

    @property
    def n_classifiers(self):
        return len(self.classes)


def train_linear_svm(table: FeatureTable, reg=1e-3, epochs=200, lr=0.1, seed=0) -> LinearSVM:
    """Hinge loss + L2 penalty per class, fitted by seeded SGD with a decaying step."""
    classes = sorted(set(table.labels))
    if len(classes) < 2:
        raise InvalidInput("train_linear_svm needs at least two classes")
    x = table.features
    mean = x.mean(axis=0)
    scale = x.std(axis=0)
    scale = np.where(scale > 0, scale, 1.0)
    z = (x - mean) / scale
    y = np.array([[1.0 if lab == c else -1.0 for c in classes] for lab in table.labels])
    n, d = z.shape
    w = np.zeros((d, len(classes)))
    b = np.zeros(len(classes))
    rng = np.random.default_rng(seed)
    step = 0
    for _ in range(epochs):
        for i in rng.permutation(n):
            eta = lr / (1.0 + lr * reg * step)
            step += 1
            active = y[i] * (z[i] @ w + b) < 1.0
            w *= 1.0 - eta * reg
            w[:, active] += eta * np.outer(z[i], y[i, active])
            b[active] += eta * y[i, active]
    return LinearSVM(classes, w, b, mean, scale)


@dataclass
class RetrievalResult:
    rankings: dict
    mAP: float
    average_precisions: dict
    recall: np.ndarray = field(default_factory=lambda: np.zeros(0))
    precision: np.ndarray = field(default_factory=lambda: np.zeros(0))

    def write_pr_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["recall", "precision"])
            for r, p in zip(self.recall, self.precision):
                w.writerow([repr(float(r)), repr(float(p))])


def average_precision(relevant):
    """AP of a ranked boolean relevance list; None when nothing is relevant."""
    rel = np.asarray(relevant, dtype=bool)
    if not rel.any():
        return None
    hits = np.cumsum(rel)
    ranks = np.arange(1, len(rel) + 1)
    return float((hits[rel] / ranks[rel]).mean())


def retrieval_map(table: FeatureTable) -> RetrievalResult:
    """Query every row against the others by Euclidean distance."""
    n = len(table)
    if n < 2:
        raise InvalidInput("retrieval needs at least two rows")
    x = table.features
    labels = np.asarray(table.labels, dtype=object)
    diff = x[:, None, :] - x[None, :, :]
    dist = np.sqrt((diff * diff).sum(axis=-1))
    rankings, aps, curves = {}, {}, []
    for q in range(n):
        others = np.delete(np.arange(n), q)
        order = others[np.argsort(dist[q, others], kind="stable")]
        rankings[table.ids[q]] = [table.ids[k] for k in order]
        rel = labels[order] == labels[q]
        ap = average_precision(rel)
        if ap is None:
            continue
        aps[table.ids[q]] = ap
        hits = np.cumsum(rel)
        curves.append((hits / rel.sum(), hits / np.arange(1, len(rel) + 1)))
    mean_ap = float(np.mean(list(aps.values()))) if aps else 0.0
    if curves:
        recall = np.mean([c[0] for c in curves], axis=0)
        precision = np.mean([c[1] for c in curves], axis=0)
    else:
        recall = precision = np.zeros(0)
    return RetrievalResult(rankings, mean_ap, aps, recall, precision)


def dense_pool(cloud, params: ModelParams, config: ModelConfig, seed=0):
    """All M * sum(K_t) reconstructed area points of one cloud."""
    pts = cloud.points if isinstance(cloud, PointCloud) else np.asarray(cloud, dtype=np.float64)
    pyr = build_pyramid(pts, config.n_regions, config.scales, seed)
    batch = make_batch([(pts, pyr)], config)
    out = forward(params.frozen(), batch, config)
    return out.decoder.dense_points()[0]


def upsample(cloud, target_n, params: ModelParams, config: ModelConfig, seed=0) -> PointCloud:
    """Encode/decode the cloud, pool every reconstructed area, then FPS down to ``target_n``."""
    if target_n > config.dense_size:
        raise InvalidInput(f"target {target_n} exceeds the dense pool of {config.dense_size} points")
    if target_n < 1:
        raise InvalidInput("target_n must be positive")
    pool = dense_pool(cloud, params, config, seed)
    keep = farthest_point_sample(pool, target_n, seed)
    return PointCloud(pool[keep], getattr(cloud, "id", ""))


def random_ball(n, seed=0):
    """Uniform samples from the unit ball."""
    rng = np.random.default_rng(seed)
    v = rng.normal(size=(n, 3))
    v /= np.linalg.norm(v, axis=1, keepdims=True)
    return v * rng.random(n)[:, None] ** (1.0 / 3.0)


def attention_summary(attention_map):
    """Column sums of a square attention map."""
    a = np.asarray(attention_map, dtype=np.float64)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ShapeError(f"attention map must be square, got shape {a.shape}")
    return a.sum(axis=0)


def mean_chamfer(pairs):
    return float(np.mean([chamfer_distance(a, b) for a, b in pairs]))


def received_attention(attention_map):
    """Row sums of a square attention map: how much attention each location receives."""
    a = np.asarray(attention_map, dtype=np.float64)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ShapeError(f"attention map must be square, got shape {a.shape}")
    return a.sum(axis=1)

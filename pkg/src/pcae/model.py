"""Parameter construction and the full encode/decode pass."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .config import ModelConfig
from .decoder import DecoderOutput, decode
from .diffcore import ModelParams
from .encoder import EncoderOutput, encode_arrays
from .errors import InvalidInput
from .geometry import PointCloud, RegionPyramid, build_pyramid

__all__ = ["init_params", "Batch", "make_batch", "forward", "ModelOutput", "param_shapes"]


def param_shapes(config: ModelConfig):
    """Ordered (name, shape, scheme, value) for every learnable array."""
    D, Dg, C, H = config.feat_dim, config.global_dim, config.c_dim, config.hidden_dim
    specs = []

    def attn(level, width, enabled):
        if enabled:
            for w in ("W_f", "W_g", "W_h"):
                specs.append((f"enc.{level}.attn.{w}", (width, C), "xavier_uniform", 0.0))
        return width + C if enabled else width

    def stack(prefix, width, widths):
        for k, out in enumerate(widths):
            specs.append((f"{prefix}.{k}.W", (width, out), "xavier_uniform", 0.0))
            specs.append((f"{prefix}.{k}.b", (out,), "zeros", 0.0))
            width = out
        return width

    w = attn("point", 3, config.point_attention)
    stack("enc.point.mlp", w, config.point_mlp + (D,))
    w = attn("scale", D, config.scale_attention)
    stack("enc.scale.mlp", w, (D,))
    w = attn("region", D, config.region_attention)
    stack("enc.region.mlp", w, (Dg,))

    stack("dec.fuse.mlp", Dg + D, (D,))
    specs.append(("dec.lstm.W_x", (D, 4 * H), "xavier_uniform", 0.0))
    specs.append(("dec.lstm.W_h", (H, 4 * H), "xavier_uniform", 0.0))
    specs.append(("dec.lstm.b", (4 * H,), "lstm_bias", 1.0))
    specs.append(("dec.W_theta", (H, D), "xavier_uniform", 0.0))
    for t, k in enumerate(config.scales):
        specs.append((f"dec.area.{t}.W", (D, 3 * k), "xavier_uniform", 0.0))
        specs.append((f"dec.area.{t}.b", (3 * k,), "zeros", 0.0))
    dense = 3 * config.dense_size
    specs.append(("dec.global.W", (dense, 3 * config.n_points), "xavier_uniform", 0.0))
    specs.append(("dec.global.b", (3 * config.n_points,), "zeros", 0.0))
    return specs


def init_params(config: ModelConfig, seed: int = 0) -> ModelParams:
    """Glorot-uniform weights, zero biases, LSTM forget-gate bias 1."""
    rng = np.random.default_rng(seed)
    params = ModelParams()
    for name, shape, scheme, value in param_shapes(config):
        params.add(name, shape, scheme, rng, seed, value)
    return params


@dataclass
class Batch:
    points: np.ndarray  # (B, N, 3)
    groups: list  # per scale: (B, M, K_t)
    centroids: np.ndarray  # (B, M, 3)

    def __len__(self):
        return self.points.shape[0]

    def areas(self, t):
        """Ground-truth coordinates of scale t, (B, M, K_t, 3)."""
        b = np.arange(len(self))[:, None, None]
        return self.points[b, self.groups[t]]


def make_batch(items, config: ModelConfig, seed: int = 0) -> Batch:
    """Stack clouds (with optional precomputed pyramids) into a batch.

    ``items`` holds PointClouds, arrays, or (cloud, pyramid) pairs.
    """
    pts, pyrs = [], []
    for item in items:
        pyr = None
        if isinstance(item, tuple):
            item, pyr = item
        arr = item.points if isinstance(item, PointCloud) else np.asarray(item, dtype=np.float64)
        if arr.shape != (config.n_points, 3):
            raise InvalidInput(f"cloud has shape {arr.shape}, model expects ({config.n_points}, 3)")
        if pyr is None:
            pyr = build_pyramid(arr, config.n_regions, config.scales, seed)
        if tuple(pyr.scales) != config.scales or pyr.n_regions != config.n_regions:
            raise InvalidInput("region pyramid does not match the model configuration")
        pts.append(arr)
        pyrs.append(pyr)
    if not pts:
        raise InvalidInput("empty batch")
    points = np.stack(pts)
    groups = [np.stack([p.groups[t] for p in pyrs]) for t in range(config.n_scales)]
    centroids = np.stack([a[p.centroid_indices] for a, p in zip(pts, pyrs)])
    return Batch(points, groups, centroids)


@dataclass
class ModelOutput:
    encoder: EncoderOutput
    decoder: DecoderOutput


def forward(params, batch: Batch, config: ModelConfig, keep_attention=False) -> ModelOutput:
    """``params`` maps names to FeatureMaps (``ModelParams.leaves()`` or ``.frozen()``)."""
    enc = encode_arrays(batch.points, batch.groups, batch.centroids, params, config, keep_attention)
    dec = decode(enc.global_feature, enc.region_features, batch.centroids, params, config)
    return ModelOutput(enc, dec)

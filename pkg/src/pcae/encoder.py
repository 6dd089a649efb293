"""Hierarchical encoder: self-attention at point, scale and region level.

Each level runs the attention block on a ``D1 x D2`` map, then a shared
per-row MLP and a max-pool over rows. Arrays may carry any number of leading
batch axes.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import diffcore as dc
from .diffcore import FeatureMap
from .errors import ShapeError

__all__ = [
    "AttentionBlockConfig",
    "EncoderOutput",
    "self_attention_block",
    "mlp",
    "aggregate",
    "gather_groups",
    "encode",
    "encode_arrays",
    "LEVELS",
]

LEVELS = ("point", "scale", "region")


@dataclass(frozen=True)
class AttentionBlockConfig:
    c_dim: int
    enabled: bool = True

    def __post_init__(self):
        if self.c_dim < 1:
            raise ShapeError(f"c_dim must be >= 1, got {self.c_dim}")


@dataclass
class EncoderOutput:
    scale_features: FeatureMap  # (..., M, T, D)
    region_features: FeatureMap  # (..., M, D)
    global_feature: FeatureMap  # (..., D_global)
    attention_maps: dict = field(default_factory=dict)


def self_attention_block(x, params, config: AttentionBlockConfig, return_attention=False):
    """Map a ``D1 x D2`` feature map to ``D1 x (D2 + C)``.

    ``scores[i, j] = f(x_i) . g(x_j)`` is normalized over ``i``, so column j of
    the attention map is the distribution used to build ``r_j``; the output
    row is ``x_j`` concatenated with ``r_j``. A disabled block returns ``x``.
    """
    x = dc.constant(x)
    if not config.enabled:
        return (x, None) if return_attention else x
    w_f, w_g, w_h = (dc.constant(params[k]) for k in ("W_f", "W_g", "W_h"))
    for w in (w_f, w_g, w_h):
        if w.shape != (x.shape[-1], config.c_dim):
            raise ShapeError(f"attention weight {w.shape} != ({x.shape[-1]}, {config.c_dim})")
    f = dc.affine(x, w_f)
    g = dc.affine(x, w_g)
    h = dc.affine(x, w_h)
    beta = dc.softmax_columns(f @ g.T)
    r = beta.T @ h
    out = dc.concat([x, r], axis=-1)
    return (out, beta.data) if return_attention else out


def mlp(x, layers):
    """Shared per-row MLP with ReLU after every layer; ``layers`` is [(W, b), ...]."""
    for w, b in layers:
        x = dc.relu(dc.affine(x, w, b))
    return x


def aggregate(x, layers):
    """Per-row MLP followed by a column-wise max over rows."""
    x = dc.constant(x)
    if x.ndim < 2 or x.shape[-2] == 0:
        raise ShapeError(f"aggregate needs a non-empty row set, got shape {x.shape}")
    return dc.maxpool_rows(mlp(x, layers))


def mlp_layers(params, prefix):
    layers, k = [], 0
    while f"{prefix}.{k}.W" in params:
        layers.append((params[f"{prefix}.{k}.W"], params[f"{prefix}.{k}.b"]))
        k += 1
    return layers


def attention_params(params, level):
    key = f"enc.{level}.attn"
    if f"{key}.W_f" not in params:
        return None
    return {w: params[f"{key}.{w}"] for w in ("W_f", "W_g", "W_h")}


def gather_groups(points, groups):
    """Coordinates of one scale's groups: (..., N, 3) with (..., M, K) -> (..., M, K, 3)."""
    points = np.asarray(points)
    groups = np.asarray(groups)
    if points.ndim == 2:
        return points[groups]
    batch = np.arange(points.shape[0]).reshape((-1,) + (1,) * (groups.ndim - 1))
    return points[batch, groups]


def encode(cloud, pyramid, params, config, keep_attention=False) -> EncoderOutput:
    """Encode one cloud given its region pyramid.

    ``params`` is a ModelParams (evaluated frozen) or a name -> FeatureMap mapping.
    """
    if isinstance(params, dc.ModelParams):
        params = params.frozen()
    pts = np.asarray(getattr(cloud, "points", cloud), dtype=np.float64)
    groups = list(pyramid.groups)
    if tuple(pyramid.scales) != tuple(config.scales):
        raise ShapeError(f"pyramid scales {pyramid.scales} != model scales {config.scales}")
    centroids = pts[pyramid.centroid_indices]
    return encode_arrays(pts, groups, centroids, params, config, keep_attention)


def encode_arrays(points, groups, centroids, params, config, keep_attention=False) -> EncoderOutput:
    """Run the three attention levels on pre-grouped coordinates.

    ``points`` is (..., N, 3); ``groups`` is a list over scales of (..., M, K_t)
    index arrays; ``centroids`` is (..., M, 3).
    """
    maps = {}

    def block(x, level, enabled):
        cfg = AttentionBlockConfig(config.c_dim, enabled)
        out, beta = self_attention_block(x, attention_params(params, level), cfg, True)
        if keep_attention and beta is not None:
            maps.setdefault(level, []).append(beta)
        return out

    point_layers = mlp_layers(params, "enc.point.mlp")
    per_scale = []
    for grp in groups:
        coords = gather_groups(points, grp)
        if config.relative_coords:
            coords = coords - np.asarray(centroids)[..., None, :]
        x = block(coords, "point", config.point_attention)
        feat = aggregate(x, point_layers)  # (..., M, D)
        per_scale.append(dc.reshape(feat, feat.shape[:-1] + (1, feat.shape[-1])))
    scale_features = dc.concat(per_scale, axis=-2)  # (..., M, T, D)

    x = block(scale_features, "scale", config.scale_attention)
    region_features = aggregate(x, mlp_layers(params, "enc.scale.mlp"))  # (..., M, D)

    x = block(region_features, "region", config.region_attention)
    global_feature = aggregate(x, mlp_layers(params, "enc.region.mlp"))  # (..., D_global)
    return EncoderOutput(scale_features, region_features, global_feature, maps)

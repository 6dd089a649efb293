"""Local-to-global decoder: interpolation, skip fusion, recurrent scale
generation, per-scale point reconstruction and the global FC reconstruction.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import diffcore as dc
from .diffcore import FeatureMap
from .encoder import mlp, mlp_layers
from .errors import InvalidInput, ShapeError

__all__ = [
    "InterpolationConfig",
    "DecoderOutput",
    "interpolate_regions",
    "fuse_skip",
    "rnn_decode_region",
    "reconstruct_area",
    "reconstruct_global",
    "decode",
]


@dataclass(frozen=True)
class InterpolationConfig:
    c: float = 1e-10
    epsilon: float = 1e-12

    def __post_init__(self):
        if not (self.c > 0 and self.epsilon > 0):
            raise InvalidInput("interpolation constants must be positive")


@dataclass
class DecoderOutput:
    region_features: FeatureMap  # (..., M, D)
    area_features: FeatureMap  # (..., M, T, D)
    reconstructed_areas: list  # per scale t: (..., M, K_t, 3)
    reconstructed_cloud: FeatureMap  # (..., N, 3)

    def dense_points(self):
        """All reconstructed area points pooled into one (..., M * sum(K), 3) array."""
        parts = [a.data.reshape(a.shape[:-3] + (-1, 3)) for a in self.reconstructed_areas]
        return np.concatenate(parts, axis=-2)


def interpolate_regions(global_feature, centroids, config=InterpolationConfig()):
    """Scale the global feature per region by ``c / max(|p_i|^2, eps)``.

    The reference point is the origin, which is the centroid of a normalized cloud.
    """
    g = dc.constant(global_feature)
    p = np.asarray(centroids, dtype=np.float64)
    d2 = (p * p).sum(axis=-1)
    scale = config.c / np.maximum(d2, config.epsilon)  # (..., M)
    g_rows = dc.reshape(g, g.shape[:-1] + (1, g.shape[-1]))
    return dc.mul(g_rows, scale[..., None])


def fuse_skip(interp, encoder_regions, layers):
    interp, encoder_regions = dc.constant(interp), dc.constant(encoder_regions)
    if interp.shape[:-1] != encoder_regions.shape[:-1]:
        raise ShapeError(f"row mismatch: {interp.shape} vs {encoder_regions.shape}")
    return mlp(dc.concat([interp, encoder_regions], axis=-1), layers)


def rnn_decode_region(region_feature, params, n_steps):
    """Feed ``n_steps`` copies of the region feature through the LSTM and
    project every hidden state with ``W_theta``. Returns (..., T, D)."""
    if n_steps < 1:
        raise InvalidInput("n_steps must be >= 1")
    x = dc.constant(region_feature)
    cell = {k: params[f"dec.lstm.{k}"] for k in ("W_x", "W_h", "b")}
    w_theta = dc.constant(params["dec.W_theta"])
    hidden = cell["W_h"].shape[0]
    if x.shape[-1] != cell["W_x"].shape[0]:
        raise ShapeError(f"region feature width {x.shape[-1]} != LSTM input {cell['W_x'].shape[0]}")
    zeros = np.zeros(x.shape[:-1] + (hidden,))
    h, c = dc.constant(zeros), dc.constant(zeros)
    steps = []
    for _ in range(n_steps):
        h, c = dc.lstm_step((h, c), x, cell)
        a = dc.affine(h, w_theta)
        steps.append(dc.reshape(a, a.shape[:-1] + (1, a.shape[-1])))
    return dc.concat(steps, axis=-2)


def reconstruct_area(area_feature, t, params, scales):
    """Affine map from an area feature to ``K_t`` points (weights shared across regions)."""
    if not 0 <= t < len(scales):
        raise InvalidInput(f"scale index {t} outside [0, {len(scales)})")
    a = dc.constant(area_feature)
    out = dc.affine(a, params[f"dec.area.{t}.W"], params[f"dec.area.{t}.b"])
    return dc.reshape(out, out.shape[:-1] + (scales[t], 3))


def reconstruct_global(areas, params, n_points):
    """Concatenate areas region-major, scale-minor and map them to ``n_points`` points.

    ``areas[t]`` is (..., M, K_t, 3); the flat input is ordered
    region 0 [scale 0 points, scale 1 points, ...], region 1 [...], ...
    """
    if not areas or any(a is None for a in areas):
        raise InvalidInput("reconstruct_global needs every scale's areas")
    flat = [dc.reshape(a, a.shape[:-2] + (a.shape[-2] * 3,)) for a in areas]  # (..., M, 3K_t)
    per_region = dc.concat(flat, axis=-1)  # (..., M, 3 sum K)
    lead = per_region.shape[:-2]
    joined = dc.reshape(per_region, lead + (per_region.shape[-2] * per_region.shape[-1],))
    w = params["dec.global.W"]
    if joined.shape[-1] != w.shape[0]:
        raise InvalidInput(f"dense concatenation has {joined.shape[-1]} values, FC expects {w.shape[0]}")
    out = dc.affine(joined, w, params["dec.global.b"])
    return dc.reshape(out, lead + (n_points, 3))


def decode(global_feature, encoder_regions, centroids, params, config) -> DecoderOutput:
    interp = interpolate_regions(global_feature, centroids,
                                 InterpolationConfig(config.interp_c, config.interp_eps))
    regions = fuse_skip(interp, encoder_regions, mlp_layers(params, "dec.fuse.mlp"))
    area_feats = rnn_decode_region(regions, params, config.n_scales)  # (..., M, T, D)
    areas = [reconstruct_area(area_feats[..., t, :], t, params, config.scales)
             for t in range(config.n_scales)]
    cloud = reconstruct_global(areas, params, config.n_points)
    return DecoderOutput(regions, area_feats, areas, cloud)

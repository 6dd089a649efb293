"""Joint local/global Chamfer loss, Adam and the mini-batch training loop."""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import diffcore as dc
from .config import ModelConfig, TrainConfig
from .diffcore import ModelParams
from .errors import InvalidInput, NumericalAbort
from .geometry import PointCloud, build_pyramid
from .model import Batch, forward, init_params, make_batch
from .storage import save_checkpoint

log = logging.getLogger(__name__)

__all__ = [
    "chamfer",
    "local_loss",
    "LossBreakdown",
    "total_loss",
    "Adam",
    "EpochRecord",
    "TrainResult",
    "train",
    "write_history_csv",
]


def chamfer(a, b):
    """Batched Chamfer distance on graph nodes: (..., P, 3), (..., Q, 3) -> (...)."""
    a, b = dc.constant(a), dc.constant(b)
    if a.shape[-2] == 0 or b.shape[-2] == 0:
        raise InvalidInput("chamfer needs non-empty point sets")
    aa = dc.reshape(a, a.shape[:-1] + (1, 3))
    bb = dc.reshape(b, b.shape[:-2] + (1,) + b.shape[-2:])
    dist = dc.norm(aa - bb, axis=-1)  # (..., P, Q)
    fwd = dc.reduce_min(dist, axis=-1).mean(axis=-1)
    bwd = dc.reduce_min(dist, axis=-2).mean(axis=-1)
    return fwd + bwd


def local_loss(true_areas, recon_areas):
    """Sum over scales of the region-averaged Chamfer distance.

    Both arguments are lists over scales of (..., M, K_t, 3). Returns (...).
    """
    if len(true_areas) != len(recon_areas) or not true_areas:
        raise InvalidInput("area lists must be non-empty and of equal length")
    total = None
    for a, r in zip(true_areas, recon_areas):
        a, r = dc.constant(a), dc.constant(r)
        if a.shape[:-2] != r.shape[:-2]:
            raise InvalidInput(f"misaligned areas: {a.shape} vs {r.shape}")
        term = chamfer(a, r).mean(axis=-1)
        total = term if total is None else total + term
    return total


@dataclass
class LossBreakdown:
    local: float
    global_: float
    total: float
    gamma: float
    local_weight: float = 1.0
    graph: dc.FeatureMap | None = field(default=None, repr=False, compare=False)


def total_loss(batch: Batch, decoded, gamma=1.0, use_local=True, use_global=True) -> LossBreakdown:
    """``local_weight * L_local + gamma * L_global``, averaged over the batch.

    A disabled term contributes with weight 0 but is still reported.
    """
    true_areas = [batch.areas(t) for t in range(len(batch.groups))]
    loc = local_loss(true_areas, decoded.reconstructed_areas).mean()
    glob = chamfer(batch.points, decoded.reconstructed_cloud).mean()
    lw = 1.0 if use_local else 0.0
    g = float(gamma) if use_global else 0.0
    graph = None
    if lw:
        graph = loc
    if g:
        graph = glob * g if graph is None else graph + glob * g
    total = float(lw * loc.data + g * glob.data)
    return LossBreakdown(float(loc.data), float(glob.data), total, g, lw, graph)


class Adam:
    """Adam with bias correction; updates ModelParams arrays in place."""

    def __init__(self, beta1=0.9, beta2=0.999, eps=1e-8):
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.m, self.v = {}, {}
        self.t = 0

    def step(self, params: ModelParams, grads, lr):
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        c1 = 1.0 - b1**self.t
        c2 = 1.0 - b2**self.t
        for name, g in grads.items():
            if name not in self.m:
                self.m[name] = np.zeros_like(g)
                self.v[name] = np.zeros_like(g)
            m, v = self.m[name], self.v[name]
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * g * g
            params.arrays[name] -= lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


@dataclass
class EpochRecord:
    epoch: int
    local: float
    global_: float
    total: float
    lr: float


@dataclass
class TrainResult:
    params: ModelParams
    history: list
    checkpoints: list = field(default_factory=list)


def _clouds(dataset):
    out = []
    for item in dataset:
        arr = item.points if isinstance(item, PointCloud) else np.asarray(item, dtype=np.float64)
        out.append(arr)
    return out


def train(dataset, model_config: ModelConfig, config: TrainConfig, params: ModelParams | None = None,
          checkpoint_dir=None, progress=None) -> TrainResult:
    """Mini-batch Adam on the joint loss.

    ``dataset`` is a sequence of normalized clouds (PointCloud or (N, 3) arrays).
    Everything random (init, centroid sampling, batch order) derives from
    ``config.seed``.
    """
    clouds = _clouds(dataset)
    if not clouds:
        raise InvalidInput("training set is empty")
    if params is None:
        params = init_params(model_config, config.seed)
    pyramids = [build_pyramid(c, model_config.n_regions, model_config.scales, config.seed)
                for c in clouds]
    order_rng = np.random.default_rng([config.seed, 1])
    opt = Adam(config.adam_beta1, config.adam_beta2, config.adam_eps)
    history, written = [], []
    ckdir = Path(checkpoint_dir) if checkpoint_dir else None
    if ckdir:
        ckdir.mkdir(parents=True, exist_ok=True)

    for epoch in range(config.epochs):
        lr = config.lr_at(epoch)
        order = order_rng.permutation(len(clouds))
        sums = np.zeros(3)
        for bi, start in enumerate(range(0, len(order), config.batch_size)):
            idx = order[start:start + config.batch_size]
            batch = make_batch([(clouds[i], pyramids[i]) for i in idx], model_config)
            leaves = params.leaves()
            out = forward(leaves, batch, model_config)
            loss = total_loss(batch, out.decoder, config.gamma,
                              config.use_local_loss, config.use_global_loss)
            if not np.isfinite(loss.total):
                raise NumericalAbort(
                    f"non-finite loss {loss.total} at epoch {epoch + 1}, batch {bi} "
                    f"(sample indices {idx.tolist()})")
            grads = dc.backward(loss.graph, leaves)
            opt.step(params, grads, lr)
            sums += len(idx) * np.array([loss.local, loss.global_, loss.total])
        mean = sums / len(clouds)
        rec = EpochRecord(epoch + 1, float(mean[0]), float(mean[1]), float(mean[2]), lr)
        history.append(rec)
        log.debug("epoch %d total %.6f lr %.3g", rec.epoch, rec.total, lr)
        if progress:
            progress(rec)
        if ckdir and config.save_every and (epoch + 1) % config.save_every == 0:
            path = ckdir / f"ckpt_epoch{epoch + 1:04d}.bin"
            save_checkpoint(path, params, model_config, {"epoch": epoch + 1})
            written.append(path)
    return TrainResult(params, history, written)


def write_history_csv(path, history):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["epoch", "local", "global", "total", "lr"])
        for r in history:
            w.writerow([r.epoch, repr(r.local), repr(r.global_), repr(r.total), repr(r.lr)])

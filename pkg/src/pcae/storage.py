"""Binary containers: model checkpoints and ingested datasets.

Both formats start with an 8-byte magic and a little-endian uint32 version.

Checkpoint::

    b"PCAECKPT" | u32 version | u64 header_len | JSON header | f64 LE payload

The JSON header holds the model config and, per parameter, its name, shape,
init record and element offset into the payload (row-major).

Dataset::

    b"PCAEDSET" | u32 version | u32 count | u32 points_per_cloud
    | count * points * 3 f64 LE | u64 table_len | JSON label table
"""

from __future__ import annotations

import dataclasses
import json
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .config import ModelConfig
from .diffcore import InitRecord, ModelParams
from .errors import CheckpointError, InvalidInput

CKPT_MAGIC = b"PCAECKPT"
CKPT_VERSION = 1
DATA_MAGIC = b"PCAEDSET"
DATA_VERSION = 1


def _config_to_json(cfg):
    return {k: list(v) if isinstance(v, tuple) else v for k, v in dataclasses.asdict(cfg).items()}


def save_checkpoint(path, params: ModelParams, config: ModelConfig, extra=None):
    entries, offset = [], 0
    for name, arr in params.arrays.items():
        rec = params.inits.get(name, InitRecord("unknown", -1))
        entries.append({"name": name, "shape": list(arr.shape), "offset": offset,
                        "init": dataclasses.asdict(rec)})
        offset += arr.size
    header = json.dumps({"model": _config_to_json(config), "params": entries,
                         "extra": extra or {}}, sort_keys=True).encode()
    payload = b"".join(np.ascontiguousarray(a, dtype="<f8").tobytes() for a in params.arrays.values())
    with open(path, "wb") as fh:
        fh.write(CKPT_MAGIC + struct.pack("<IQ", CKPT_VERSION, len(header)))
        fh.write(header)
        fh.write(payload)


def load_checkpoint(path):
    """Return (params, model_config, extra)."""
    raw = Path(path).read_bytes()
    if raw[:8] != CKPT_MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint file")
    version, hlen = struct.unpack_from("<IQ", raw, 8)
    if version != CKPT_VERSION:
        raise CheckpointError(f"{path}: unsupported checkpoint version {version}")
    start = 8 + struct.calcsize("<IQ")
    header = json.loads(raw[start:start + hlen])
    body = np.frombuffer(raw, dtype="<f8", offset=start + hlen)
    params = ModelParams()
    for e in header["params"]:
        n = int(np.prod(e["shape"], dtype=np.int64))
        if e["offset"] + n > body.size:
            raise CheckpointError(f"{path}: truncated payload for {e['name']}")
        params.arrays[e["name"]] = body[e["offset"]:e["offset"] + n].reshape(e["shape"]).astype(np.float64)
        params.inits[e["name"]] = InitRecord(**e["init"])
    try:
        config = ModelConfig(**header["model"])
    except (TypeError, InvalidInput) as exc:
        raise CheckpointError(f"{path}: bad model config ({exc})") from exc
    return params, config, header.get("extra", {})


@dataclass
class Dataset:
    points: np.ndarray  # (count, N, 3)
    ids: list
    labels: list
    splits: list

    def __len__(self):
        return len(self.ids)

    def subset(self, split):
        keep = [i for i, s in enumerate(self.splits) if s == split]
        return Dataset(self.points[keep], [self.ids[i] for i in keep],
                       [self.labels[i] for i in keep], [self.splits[i] for i in keep])

    @property
    def n_points(self):
        return self.points.shape[1]


def save_dataset(path, ds: Dataset):
    pts = np.ascontiguousarray(ds.points, dtype="<f8")
    count, n = pts.shape[:2]
    table = json.dumps({"ids": ds.ids, "labels": ds.labels, "splits": ds.splits}).encode()
    with open(path, "wb") as fh:
        fh.write(DATA_MAGIC + struct.pack("<III", DATA_VERSION, count, n))
        fh.write(pts.tobytes())
        fh.write(struct.pack("<Q", len(table)))
        fh.write(table)


def load_dataset(path) -> Dataset:
    raw = Path(path).read_bytes()
    if raw[:8] != DATA_MAGIC:
        raise InvalidInput(f"{path}: not a dataset file")
    version, count, n = struct.unpack_from("<III", raw, 8)
    if version != DATA_VERSION:
        raise InvalidInput(f"{path}: unsupported dataset version {version}")
    off = 8 + 12
    size = count * n * 3
    pts = np.frombuffer(raw, dtype="<f8", count=size, offset=off).reshape(count, n, 3).astype(np.float64)
    off += size * 8
    (tlen,) = struct.unpack_from("<Q", raw, off)
    table = json.loads(raw[off + 8:off + 8 + tlen])
    return Dataset(pts, table["ids"], table["labels"], table["splits"])

"""Model and training configuration, plus the key = value config file format."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from pathlib import Path

from .errors import InvalidInput

__all__ = ["ModelConfig", "TrainConfig", "PRESETS", "TRAIN_PRESETS", "load_config", "dump_config", "apply_overrides"]


@dataclass(frozen=True)
class ModelConfig:
    n_points: int = 256
    n_regions: int = 32
    scales: tuple = (4, 8, 16, 32)
    feat_dim: int = 64
    global_dim: int = 256
    c_dim: int = 0  # 0 -> n_regions // 8
    hidden_dim: int = 0  # 0 -> feat_dim
    point_mlp: tuple = (64, 128)  # hidden widths before the final feat_dim layer
    point_attention: bool = True
    scale_attention: bool = True
    region_attention: bool = True
    relative_coords: bool = False
    interp_c: float = 1e-10
    interp_eps: float = 1e-12

    def __post_init__(self):
        object.__setattr__(self, "scales", tuple(int(k) for k in self.scales))
        object.__setattr__(self, "point_mlp", tuple(int(k) for k in self.point_mlp))
        if not self.c_dim:
            object.__setattr__(self, "c_dim", max(1, self.n_regions // 8))
        if not self.hidden_dim:
            object.__setattr__(self, "hidden_dim", self.feat_dim)
        ks = self.scales
        if not ks or any(b <= a for a, b in zip(ks, ks[1:])) or ks[0] < 1:
            raise InvalidInput(f"scales must be positive and strictly increasing, got {ks}")
        if ks[-1] > self.n_points or self.n_regions > self.n_points or self.n_regions < 1:
            raise InvalidInput("n_regions and every scale must not exceed n_points")
        if self.c_dim < 1 or self.feat_dim < 1 or self.global_dim < 1:
            raise InvalidInput("feature widths must be positive")
        if not (self.interp_c > 0 and self.interp_eps > 0):
            raise InvalidInput("interp_c and interp_eps must be positive")

    @property
    def n_scales(self):
        return len(self.scales)

    @property
    def dense_size(self):
        """Number of points in the pooled multi-scale reconstruction."""
        return self.n_regions * sum(self.scales)

    def with_attention(self, code):
        """Attention switches by ablation name: PL, AL, RL, NSA or ASA."""
        flags = {
            "PL": (True, False, False),
            "AL": (False, True, False),
            "RL": (False, False, True),
            "NSA": (False, False, False),
            "ASA": (True, True, True),
        }[code.upper()]
        return dataclasses.replace(
            self, point_attention=flags[0], scale_attention=flags[1], region_attention=flags[2]
        )


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 1e-4
    batch_size: int = 8
    lr_decay_factor: float = 0.3
    lr_decay_every_epochs: int = 20
    epochs: int = 100
    seed: int = 0
    gamma: float = 1.0
    use_local_loss: bool = True
    use_global_loss: bool = True
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    save_every: int = 0  # epochs between checkpoints; 0 -> only the final one

    def __post_init__(self):
        if not self.learning_rate >= 0:
            raise InvalidInput("learning_rate must be non-negative")
        if not 0 < self.lr_decay_factor <= 1:
            raise InvalidInput("lr_decay_factor must lie in (0, 1]")
        if self.batch_size < 1 or self.epochs < 0 or self.lr_decay_every_epochs < 1:
            raise InvalidInput("batch_size and lr_decay_every_epochs must be >= 1, epochs >= 0")
        if self.gamma < 0:
            raise InvalidInput("gamma must be non-negative")
        if not (self.use_local_loss or self.use_global_loss):
            raise InvalidInput("at least one of the local/global losses must be enabled")

    def lr_at(self, epoch):
        """Learning rate for a 0-based epoch index."""
        return self.learning_rate * self.lr_decay_factor ** (epoch // self.lr_decay_every_epochs)

    def with_losses(self, code):
        """Loss switches by ablation name: Local, Global or Local+Global."""
        local, glob = {"local": (True, False), "global": (False, True),
                       "local+global": (True, True)}[code.lower()]
        return dataclasses.replace(self, use_local_loss=local, use_global_loss=glob)


PRESETS = {
    "full": ModelConfig(n_points=1024, n_regions=256, scales=(16, 32, 64, 128),
                         feat_dim=256, global_dim=1024),
    "desk": ModelConfig(),
    "toy": ModelConfig(n_points=64, n_regions=8, scales=(4, 8), feat_dim=16,
                       global_dim=32, point_mlp=(16, 32)),
    # toy geometry with wider features, small enough to memorise a few clouds
    "overfit": ModelConfig(n_points=64, n_regions=8, scales=(4, 8), feat_dim=64,
                           global_dim=128, point_mlp=(64, 128)),
}

# The full schedule assumes hundreds of steps per epoch; the desk schedule
# suits corpora of a few hundred clouds where an epoch is ~20 steps.
TRAIN_PRESETS = {
    "full": TrainConfig(),
    "desk": TrainConfig(learning_rate=1e-3, lr_decay_every_epochs=50),
    "overfit": TrainConfig(learning_rate=3e-3, lr_decay_every_epochs=100, epochs=300),
}


def _coerce(value: str, current):
    if isinstance(current, bool):
        v = value.strip().lower()
        if v in ("1", "true", "yes", "on"):
            return True
        if v in ("0", "false", "no", "off"):
            return False
        raise InvalidInput(f"not a boolean: {value!r}")
    if isinstance(current, tuple):
        parts = value.replace("[", "").replace("]", "").replace(",", " ").split()
        return tuple(int(p) for p in parts)
    if isinstance(current, int):
        return int(value)
    if isinstance(current, float):
        return float(value)
    return value


def apply_overrides(model: ModelConfig, train: TrainConfig, pairs):
    """Apply ``key=value`` pairs; keys may be prefixed ``model.`` or ``train.``."""
    m_kw, t_kw = {}, {}
    m_fields = {f.name for f in dataclasses.fields(ModelConfig)}
    t_fields = {f.name for f in dataclasses.fields(TrainConfig)}
    for key, value in pairs:
        key = key.strip()
        scope = None
        if "." in key:
            scope, key = key.split(".", 1)
        if key == "preset" and scope in (None, "model"):
            if value.strip() not in PRESETS:
                raise InvalidInput(f"unknown preset {value!r}; choose from {sorted(PRESETS)}")
            model = PRESETS[value.strip()]
            continue
        if key == "preset" and scope == "train":
            if value.strip() not in TRAIN_PRESETS:
                raise InvalidInput(f"unknown train preset {value!r}; choose from {sorted(TRAIN_PRESETS)}")
            train = TRAIN_PRESETS[value.strip()]
            continue
        if scope in (None, "model") and key in m_fields:
            m_kw[key] = _coerce(value, getattr(model, key))
        elif scope in (None, "train") and key in t_fields:
            t_kw[key] = _coerce(value, getattr(train, key))
        else:
            raise InvalidInput(f"unknown config key {key!r}")
    try:
        return dataclasses.replace(model, **m_kw), dataclasses.replace(train, **t_kw)
    except (TypeError, ValueError) as exc:
        raise InvalidInput(str(exc)) from exc


def parse_pairs(text):
    pairs = []
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise InvalidInput(f"line {lineno}: expected key = value, got {line!r}")
        k, v = line.split("=", 1)
        pairs.append((k.strip(), v.strip()))
    return pairs


def load_config(path=None, overrides=(), model=None, train=None):
    model = model or PRESETS["desk"]
    train = train or TrainConfig()
    pairs = parse_pairs(Path(path).read_text()) if path else []
    return apply_overrides(model, train, list(pairs) + list(overrides))


def _fmt(v):
    if isinstance(v, tuple):
        return ", ".join(str(x) for x in v)
    if isinstance(v, bool):
        return "true" if v else "false"
    return repr(v) if isinstance(v, float) else str(v)


def dump_config(model: ModelConfig, train: TrainConfig | None = None) -> str:
    lines = [f"model.{f.name} = {_fmt(getattr(model, f.name))}" for f in dataclasses.fields(model)]
    if train is not None:
        lines += [f"train.{f.name} = {_fmt(getattr(train, f.name))}" for f in dataclasses.fields(train)]
    return "\n".join(lines) + "\n"

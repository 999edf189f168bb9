"""Run configuration shared by the model, trainer and CLI.

The plain-text config format is one ``key=value`` per line; ``#`` starts a
comment. Keys are the ``TrainConfig`` field names.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass, fields

from .errors import ConfigError


@dataclass(frozen=True)
class TrainConfig:
    # optimisation
    lr: float = 5e-5
    weight_decay: float = 1e-4
    batch_size: int = 64
    max_epochs: int = 200
    patience: int = 20
    dropout: float = 0.05
    lambda_con: float = 1.0
    seed: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    # ablation switches
    use_la: bool = True
    use_ban: bool = True
    use_cl: bool = True
    # architecture
    d_drug: int = 768
    d_protein: int = 1280
    latent_dim: int = 1024
    glimpses: int = 8
    rank: int = 256
    mlp_hidden: int = 512
    ffn_mult: int = 4
    softmax_axis: str = "rows"
    scale_init: float = 1.0 / 0.07
    # protocol
    folds: int = 5
    fold: int = 0
    split_ratios: str = "7:1:2"
    score_mode: str = "cosine"

    def __post_init__(self):
        positive = ("lr", "batch_size", "max_epochs", "patience", "d_drug", "d_protein",
                    "latent_dim", "glimpses", "rank", "mlp_hidden", "ffn_mult", "scale_init", "folds")
        for name in positive:
            if getattr(self, name) <= 0:
                raise ConfigError(f"{name} must be positive")
        for name in ("weight_decay", "lambda_con", "eps"):
            if getattr(self, name) < 0:
                raise ConfigError(f"{name} must be non-negative")
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigError("dropout must lie in [0, 1)")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1):
            raise ConfigError("betas must lie in [0, 1)")
        if self.patience >= self.max_epochs:
            raise ConfigError("patience must be smaller than max_epochs")
        if self.softmax_axis not in ("rows", "flat"):
            raise ConfigError("softmax_axis must be 'rows' or 'flat'")
        if self.score_mode not in ("cosine", "ban"):
            raise ConfigError("score_mode must be 'cosine' or 'ban'")
        if not 0 <= self.fold < self.folds:
            raise ConfigError("fold must lie in [0, folds)")
        self.ratios()

    @property
    def effective_lambda(self) -> float:
        return self.lambda_con if self.use_cl else 0.0

    def ratios(self) -> tuple[float, float, float]:
        try:
            parts = tuple(float(x) for x in self.split_ratios.split(":"))
        except ValueError:
            raise ConfigError(f"bad split_ratios {self.split_ratios!r}") from None
        if len(parts) != 3 or min(parts) <= 0:
            raise ConfigError("split_ratios needs three positive parts, e.g. 7:1:2")
        return parts

    def replace(self, **changes) -> "TrainConfig":
        return dataclasses.replace(self, **changes)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def digest(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]

    @classmethod
    def from_mapping(cls, mapping: dict, base: "TrainConfig | None" = None) -> "TrainConfig":
        base = base or cls()
        types = {f.name: f.type for f in fields(cls)}
        changes = {}
        for key, raw in mapping.items():
            name = key.replace("-", "_")
            if name not in types:
                raise ConfigError(f"unknown config key {key!r}")
            changes[name] = _coerce(name, types[name], raw)
        return dataclasses.replace(base, **changes)


def _coerce(name, typ, raw):
    if not isinstance(raw, str):
        return raw
    text = raw.strip()
    try:
        if typ in ("bool", bool):
            low = text.lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(text)
        if typ in ("int", int):
            return int(text)
        if typ in ("float", float):
            return float(text)
    except ValueError:
        raise ConfigError(f"bad value {raw!r} for {name}") from None
    return text


def parse_config_text(text: str) -> dict:
    out = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected key=value")
        key, value = line.split("=", 1)
        out[key.strip()] = value.strip()
    return out


def load_config(path, base: TrainConfig | None = None) -> TrainConfig:
    with open(path) as fh:
        return TrainConfig.from_mapping(parse_config_text(fh.read()), base)


def dump_config(cfg: TrainConfig) -> str:
    return "".join(f"{k}={v}\n" for k, v in cfg.to_dict().items())

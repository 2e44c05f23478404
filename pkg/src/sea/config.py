from __future__ import annotations

import hashlib
import json
import sys
from dataclasses import asdict, dataclass, fields
from pathlib import Path

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

ALIGN_LOSSES = ("solosim", "infonce")
DIS_LOSSES = ("club", "neg_l2")


@dataclass
class TrainConfig:
    d: int = 64
    gcn_layers: int = 2
    ii_layers: int = 2
    knn_k: int = 10
    lr: float = 1e-4
    club_lr: float = 1e-3
    club_inner_steps: int = 1
    alpha: float = 0.1
    beta: float = 0.01
    tau: float = 0.2
    batch_size: int = 2048
    max_epochs: int = 1000
    patience: int = 20
    seed: int = 0
    align_loss: str = "solosim"
    dis_loss: str = "club"
    include_layer0: bool = False
    shared_user_init: bool = False

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        if self.d % 2:
            raise ValueError(f"embedding dim d must be even, got {self.d}")
        for name in ("lr", "club_lr", "tau"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if self.alpha < 0 or self.beta < 0:
            raise ValueError("alpha and beta must be non-negative")
        if self.align_loss not in ALIGN_LOSSES:
            raise ValueError(f"align_loss must be one of {ALIGN_LOSSES}")
        if self.dis_loss not in DIS_LOSSES:
            raise ValueError(f"dis_loss must be one of {DIS_LOSSES}")
        if self.gcn_layers < 1:
            raise ValueError("gcn_layers must be >= 1")

    def to_dict(self) -> dict:
        return asdict(self)

    def digest(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()

    def replace(self, **kw) -> "TrainConfig":
        return TrainConfig(**{**self.to_dict(), **kw})

    def override(self, assignments: list[str]) -> "TrainConfig":
        """Apply ``key=value`` strings, coercing to the field's type."""
        kinds = {f.name: f.type for f in fields(self)}
        kw = {}
        for item in assignments:
            key, sep, raw = item.partition("=")
            key = key.strip()
            if not sep or key not in kinds:
                raise ValueError(f"bad override {item!r}")
            kw[key] = coerce(kinds[key], raw.strip())
        return self.replace(**kw)


def coerce(kind, raw: str):
    kind = kind if isinstance(kind, str) else kind.__name__
    if kind == "bool":
        if raw.lower() in ("true", "1", "yes"):
            return True
        if raw.lower() in ("false", "0", "no"):
            return False
        raise ValueError(f"not a boolean: {raw!r}")
    if kind == "int":
        return int(raw)
    if kind == "float":
        return float(raw)
    return raw.strip("\"'")


def load_config(path: str | Path) -> TrainConfig:
    """Read a flat ``key = value`` TOML file into a TrainConfig."""
    with Path(path).open("rb") as fh:
        raw = tomllib.load(fh)
    known = {f.name for f in fields(TrainConfig)}
    unknown = set(raw) - known
    if unknown:
        raise ValueError(f"unknown config keys: {sorted(unknown)}")
    kinds = {f.name: f.type for f in fields(TrainConfig)}
    kw = {}
    for key, val in raw.items():
        kind = kinds[key] if isinstance(kinds[key], str) else kinds[key].__name__
        kw[key] = float(val) if kind == "float" and isinstance(val, int) else val
    return TrainConfig(**kw)


def dump_config(cfg: TrainConfig, path: str | Path) -> None:
    lines = []
    for key, val in cfg.to_dict().items():
        if isinstance(val, bool):
            lines.append(f"{key} = {'true' if val else 'false'}")
        elif isinstance(val, str):
            lines.append(f'{key} = "{val}"')
        else:
            lines.append(f"{key} = {val!r}")
    Path(path).write_text("\n".join(lines) + "\n")

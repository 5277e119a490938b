"""Training configuration and the ``key = value`` config file format."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, fields
from pathlib import Path


@dataclass
class TrainConfig:
    # Reference full-scale settings: lr 1e-4, 200 epochs, batch 32, 128x128 crops.
    # Defaults below are desk scale.
    lr: float = 5e-3
    epochs: int = 20
    steps_per_epoch: int = 10
    batch_size: int = 16
    K: int = 2
    lam: float = 0.05
    c_base: int = 4
    d_state: int = 8
    seed: int = 0
    crop: int = 32
    T: int = 10
    n_train: int = 32
    noise_sigma: float = 0.0
    data: str = ""        # directory of sequences; empty -> generate phantoms in memory
    out: str = "run"      # output directory for checkpoint and logs
    scan_method: str = "loop"

    def __post_init__(self):
        if self.lr < 0:
            raise ValueError("lr must be >= 0")
        if self.K < 0:
            raise ValueError("K must be >= 0")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.lam < 0:
            raise ValueError("lam must be >= 0")
        if self.epochs < 0 or self.steps_per_epoch < 1:
            raise ValueError("epochs must be >= 0 and steps_per_epoch >= 1")

    @property
    def steps(self) -> int:
        return self.epochs * self.steps_per_epoch

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        return cls(**d)


_BOOL = {"true": True, "false": False, "1": True, "0": False, "yes": True, "no": False}


def _coerce(name: str, typ, raw: str):
    typ = typ if isinstance(typ, type) else {"float": float, "int": int, "str": str, "bool": bool}[typ]
    try:
        if typ is bool:
            return _BOOL[raw.lower()]
        if typ is int:
            return int(raw)
        if typ is float:
            return float(raw)
        return raw
    except (KeyError, ValueError):
        raise ValueError(f"bad value for {name}: {raw!r}") from None


def parse_config(text: str) -> TrainConfig:
    types = {f.name: f.type for f in fields(TrainConfig)}
    values = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"line {lineno}: expected 'key = value'")
        key, raw = (s.strip() for s in line.split("=", 1))
        if key not in types:
            raise ValueError(f"line {lineno}: unknown key {key!r}")
        values[key] = _coerce(key, types[key], raw)
    return TrainConfig(**values)


def load_config(path) -> TrainConfig:
    return parse_config(Path(path).read_text(encoding="utf-8"))


def dump_config(cfg: TrainConfig) -> str:
    return "".join(f"{k} = {v}\n" for k, v in cfg.to_dict().items())

"""MCMC checkpoint container.

Layout: ``b"MCMC" | u8 version=1`` followed by entries of
``u16 name length (LE) | UTF-8 name | MCMT tensor blob`` until end of file.
Entries: ``param/<name>``, ``adam_m/<name>``, ``adam_v/<name>``,
``meta/step`` and ``meta/config`` (the config as JSON, one byte per float).
"""

from __future__ import annotations

import io
import json
import os
import struct
import tempfile
from pathlib import Path

import numpy as np
import torch

from ..data import FormatError, encode_tensor, read_tensor
from ..model import MCM
from .config import TrainConfig
from .optim import AdamState

MAGIC = b"MCMC"
VERSION = 1


def _entry(name: str, tensor) -> bytes:
    raw = name.encode("utf-8")
    if len(raw) > 0xFFFF:
        raise FormatError(f"entry name too long: {name[:40]}...")
    return struct.pack("<H", len(raw)) + raw + encode_tensor(tensor)


def build_model(cfg: TrainConfig) -> MCM:
    return MCM(K=cfg.K, c_base=cfg.c_base, d_state=cfg.d_state, scan_method=cfg.scan_method)


def save_checkpoint(path, model: MCM, state: AdamState | None, cfg: TrainConfig) -> None:
    """Write atomically: a temporary file in the same directory is renamed over ``path``."""
    path = Path(path)
    chunks = [MAGIC, struct.pack("<B", VERSION)]
    names = [n for n, _ in model.named_parameters()]
    for name, p in model.named_parameters():
        chunks.append(_entry(f"param/{name}", p.detach().float()))
    if state is not None:
        for name, m, v in zip(names, state.m, state.v):
            chunks.append(_entry(f"adam_m/{name}", m.float()))
            chunks.append(_entry(f"adam_v/{name}", v.float()))
        chunks.append(_entry("meta/step", np.array([state.step], dtype=np.float32)))
    blob = json.dumps(cfg.to_dict(), sort_keys=True).encode("utf-8")
    chunks.append(_entry("meta/config", np.frombuffer(blob, dtype=np.uint8).astype(np.float32)))

    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name, suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(b"".join(chunks))
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def read_entries(path) -> dict[str, np.ndarray]:
    data = Path(path).read_bytes()
    if data[:4] != MAGIC:
        raise FormatError("bad magic")
    if len(data) < 5 or data[4] != VERSION:
        raise FormatError("unsupported checkpoint version")
    buf = io.BytesIO(data[5:])
    entries = {}
    while True:
        head = buf.read(2)
        if not head:
            break
        if len(head) < 2:
            raise FormatError("truncated entry header")
        (n,) = struct.unpack("<H", head)
        name = buf.read(n)
        if len(name) < n:
            raise FormatError("truncated entry name")
        entries[name.decode("utf-8")] = read_tensor(buf)
    return entries


def load_checkpoint(path) -> tuple[MCM, AdamState | None, TrainConfig]:
    entries = read_entries(path)
    if "meta/config" not in entries:
        raise FormatError("checkpoint has no config")
    cfg_bytes = entries["meta/config"].astype(np.uint8).tobytes()
    cfg = TrainConfig.from_dict(json.loads(cfg_bytes.decode("utf-8")))
    model = build_model(cfg)
    params = dict(model.named_parameters())
    with torch.no_grad():
        for name, p in params.items():
            key = f"param/{name}"
            if key not in entries:
                raise FormatError(f"missing parameter {name}")
            value = torch.from_numpy(entries[key].copy())
            if value.shape != p.shape:
                raise FormatError(f"shape mismatch for {name}: {tuple(value.shape)} vs {tuple(p.shape)}")
            p.copy_(value)
    state = None
    if "meta/step" in entries:
        state = AdamState(
            [torch.from_numpy(entries[f"adam_m/{n}"].copy()) for n in params],
            [torch.from_numpy(entries[f"adam_v/{n}"].copy()) for n in params],
            int(entries["meta/step"][0]),
        )
    return model, state, cfg

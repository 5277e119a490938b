"""The full motion tracking network: encoder, progressive upsampling, fusion head."""

from __future__ import annotations

import torch
import torch.nn as nn

from .decoder import DFH, PUP
from .encoder import HierarchicalEncoder, WindowSpec, pair_images


class MCM(nn.Module):
    """Maps a paired window ``[B, N_f, 2, H, W]`` (or unbatched) to ``[B, 2, H, W]``."""

    def __init__(self, K: int = 2, c_base: int = 16, d_state: int = 8,
                 depth: int = 1, scan_method: str = "loop"):
        super().__init__()
        self.K = K
        self.n_frames = 2 * K + 1
        self.encoder = HierarchicalEncoder(c_base, d_state, depth, scan_method=scan_method)
        self.pup = PUP(c_base)
        self.dfh = DFH(c_base, self.n_frames)

    def forward(self, f0: torch.Tensor) -> torch.Tensor:
        return self.dfh(self.pup(self.encoder(f0)))


def predict_motion(seq: torch.Tensor, spec: WindowSpec, model: MCM) -> torch.Tensor:
    """Motion field ``[2, H, W]`` from frame 0 to frame ``spec.t`` of ``seq [T, H, W]``."""
    if spec.K != model.K:
        raise ValueError(f"window K={spec.K} does not match model K={model.K}")
    f0 = pair_images(seq, spec)
    param = next(model.parameters())
    return model(f0.to(param.dtype))


def predict_sequence(seq: torch.Tensor, model: MCM, frames=None, batch_size: int = 16) -> torch.Tensor:
    """Motion fields for every requested frame, ``[len(frames), 2, H, W]``."""
    T = seq.shape[0]
    frames = list(range(T)) if frames is None else list(frames)
    param = next(model.parameters())
    out = []
    with torch.no_grad():
        for i in range(0, len(frames), batch_size):
            chunk = frames[i:i + batch_size]
            f0 = torch.stack([pair_images(seq, WindowSpec(t, model.K, T)) for t in chunk])
            out.append(model(f0.to(param.dtype)))
    return torch.cat(out)

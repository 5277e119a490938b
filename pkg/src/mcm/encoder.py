"""Hierarchical bi-directional Mamba encoder.

Feature maps are ``[N_f, C, H, W]`` or batched ``[B, N_f, C, H, W]``; the
frame axis is carried through every layer untouched except inside BiSM.
"""

from __future__ import annotations

from dataclasses import dataclass

import torch
import torch.nn as nn

from .ssm_core import BiSM

N_LEVELS = 4
PATCH = 4
# total downsampling of the deepest level
MIN_DIVISOR = PATCH * 2 ** (N_LEVELS - 1)


@dataclass(frozen=True)
class WindowSpec:
    t: int
    K: int
    T: int

    def __post_init__(self):
        if self.T < 1:
            raise ValueError("empty sequence")
        if not 0 <= self.t <= self.T - 1:
            raise ValueError(f"target frame t={self.t} out of range [0, {self.T - 1}]")
        if self.K < 0:
            raise ValueError("K must be >= 0")

    @property
    def n_frames(self) -> int:
        return 2 * self.K + 1

    def indices(self) -> list[int]:
        """Window frame indices, clamped to the nearest available frame."""
        return [min(max(i, 0), self.T - 1) for i in range(self.t - self.K, self.t + self.K + 1)]


def pair_images(seq: torch.Tensor, spec: WindowSpec) -> torch.Tensor:
    """Stack the reference frame with every window frame: ``[T, H, W] -> [N_f, 2, H, W]``."""
    if seq.dim() != 3 or seq.shape[0] == 0:
        raise ValueError("empty sequence")
    if seq.shape[0] != spec.T:
        raise ValueError(f"sequence has {seq.shape[0]} frames, window expects T={spec.T}")
    window = seq[spec.indices()]
    ref = seq[0].expand_as(window)
    return torch.stack([ref, window], dim=1)


def _fold(x: torch.Tensor):
    """Merge batch and frame axes so 2D layers can run on ``[B*N_f, C, H, W]``."""
    if x.dim() == 4:
        return x, None
    B, L = x.shape[:2]
    return x.reshape(B * L, *x.shape[2:]), (B, L)


def _unfold(x: torch.Tensor, lead):
    if lead is None:
        return x
    return x.reshape(*lead, *x.shape[1:])


class PatchEmbed(nn.Module):
    """Linear projection of non-overlapping 4x4 patches (a stride-4 convolution)."""

    def __init__(self, in_ch: int = 2, dim: int = 16):
        super().__init__()
        self.proj = nn.Conv2d(in_ch, dim, kernel_size=PATCH, stride=PATCH)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        H, W = x.shape[-2:]
        if H % MIN_DIVISOR or W % MIN_DIVISOR:
            raise ValueError(f"shape not divisible: {H}x{W} must be multiples of {MIN_DIVISOR}")
        x, lead = _fold(x)
        return _unfold(self.proj(x), lead)


class PatchMerge(nn.Module):
    """Halve resolution, double channels.

    Each 2x2 neighbourhood is flattened row-major, i.e. the projection input
    is ``[x(0,0), x(0,1), x(1,0), x(1,1)]`` with ``C`` channels per corner.
    """

    def __init__(self, dim: int):
        super().__init__()
        self.dim = dim
        self.reduction = nn.Linear(4 * dim, 2 * dim, bias=False)

    @staticmethod
    def gather(x: torch.Tensor) -> torch.Tensor:
        """``[..., C, H, W] -> [..., H/2, W/2, 4C]`` in row-major corner order."""
        H, W = x.shape[-2:]
        if H % 2 or W % 2:
            raise ValueError(f"patch merge needs even dims, got {H}x{W}")
        x = x.movedim(-3, -1)                        # [..., H, W, C]
        corners = [x[..., i::2, j::2, :] for i in (0, 1) for j in (0, 1)]
        return torch.cat(corners, dim=-1)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        if x.shape[-3] != self.dim:
            raise ValueError("channel mismatch")
        return self.reduction(self.gather(x)).movedim(-1, -3)


class BMB(nn.Module):
    """Bi-directional Mamba block: two pre-norm residual sub-layers."""

    def __init__(self, dim: int, d_state: int = 8, mlp_ratio: int = 2, scan_method: str = "loop"):
        super().__init__()
        self.dim = dim
        self.norm1 = nn.LayerNorm(dim)
        self.bism = BiSM(dim, d_state, method=scan_method)
        self.norm2 = nn.LayerNorm(dim)
        self.mlp = nn.Sequential(
            nn.Linear(dim, mlp_ratio * dim),
            nn.GELU(),
            nn.Linear(mlp_ratio * dim, dim),
        )

    def _ln(self, norm: nn.LayerNorm, x: torch.Tensor) -> torch.Tensor:
        # per-token normalisation over channels
        return norm(x.movedim(-3, -1)).movedim(-1, -3)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        if x.shape[-3] != self.dim:
            raise ValueError("channel mismatch")
        x = self.bism(self._ln(self.norm1, x)) + x
        y = self.mlp(self._ln(self.norm2, x).movedim(-3, -1)).movedim(-1, -3)
        return y + x


class HierarchicalEncoder(nn.Module):
    """patch_embed -> BMB, then three rounds of patch_merge -> BMB."""

    def __init__(self, c_base: int = 16, d_state: int = 8, depth: int = 1,
                 mlp_ratio: int = 2, scan_method: str = "loop"):
        super().__init__()
        self.c_base = c_base
        self.embed = PatchEmbed(2, c_base)
        self.merges = nn.ModuleList()
        self.stages = nn.ModuleList()
        for i in range(N_LEVELS):
            dim = c_base * 2 ** i
            if i > 0:
                self.merges.append(PatchMerge(dim // 2))
            self.stages.append(nn.Sequential(*[
                BMB(dim, d_state, mlp_ratio, scan_method) for _ in range(depth)]))

    @property
    def channels(self) -> list[int]:
        return [self.c_base * 2 ** i for i in range(N_LEVELS)]

    def forward(self, f0: torch.Tensor) -> list[torch.Tensor]:
        if f0.shape[-3] != 2:
            raise ValueError(f"paired input needs 2 channels, got {f0.shape[-3]}")
        feats = []
        x = self.embed(f0)
        for i, stage in enumerate(self.stages):
            if i > 0:
                x = self.merges[i - 1](x)
            x = stage(x)
            feats.append(x)
        return feats


def encode(f0: torch.Tensor, encoder: HierarchicalEncoder) -> list[torch.Tensor]:
    return encoder(f0)

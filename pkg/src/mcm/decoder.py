"""Motion decoder: progressive upsampling pathway and dual-path fusion head."""

from __future__ import annotations

import torch
import torch.nn as nn
import torch.nn.functional as F

from .encoder import N_LEVELS, PATCH, _fold, _unfold


def upsample(x: torch.Tensor, factor: int) -> torch.Tensor:
    """Bilinear upsampling of ``[..., C, H, W]``."""
    x, lead = _fold(x)
    x = F.interpolate(x, scale_factor=factor, mode="bilinear", align_corners=False)
    return _unfold(x, lead)


class PUP(nn.Module):
    """Fuses F_4 .. F_1 coarse-to-fine and returns a full-resolution motion feature.

    At each scale: bilinear x2, concatenate the next finer map, 3x3 conv, GELU.
    A final bilinear x4 brings level 1 back to image resolution.
    """

    def __init__(self, c_base: int = 16):
        super().__init__()
        self.c_base = c_base
        chans = [c_base * 2 ** i for i in range(N_LEVELS)]
        self.fuse = nn.ModuleList()
        for i in range(N_LEVELS - 1, 0, -1):
            self.fuse.append(nn.Conv2d(chans[i] + chans[i - 1], chans[i - 1], 3, padding=1))

    def forward(self, feats: list[torch.Tensor]) -> torch.Tensor:
        if len(feats) != N_LEVELS:
            raise ValueError(f"expected {N_LEVELS} feature maps, got {len(feats)}")
        for i in range(1, N_LEVELS):
            fine, coarse = feats[i - 1], feats[i]
            if (coarse.shape[-2] * 2, coarse.shape[-1] * 2) != tuple(fine.shape[-2:]) \
                    or coarse.shape[:-3] != fine.shape[:-3]:
                raise ValueError(f"shape mismatch between levels {i} and {i + 1}: "
                                 f"{tuple(fine.shape)} vs {tuple(coarse.shape)}")
        x = feats[-1]
        for conv, skip in zip(self.fuse, reversed(feats[:-1])):
            x = torch.cat([upsample(x, 2), skip], dim=-3)
            x, lead = _fold(x)
            x = _unfold(F.gelu(conv(x)), lead)
        return upsample(x, PATCH)


def frame_schedule(n_frames: int, n_layers: int = 2) -> list[int]:
    """Frame-axis kernel sizes of the 3D stack (valid convolution, no frame padding)."""
    ks, n = [], n_frames
    for _ in range(n_layers):
        k = min(3, n)
        ks.append(k)
        n = n - k + 1
    return ks


def frame_conv3d(x: torch.Tensor, conv: nn.Conv3d) -> torch.Tensor:
    """``conv(x)`` for a conv that is valid along frames and 3x3-padded in space.

    Every output frame sees ``k`` consecutive input frames, so the 3D kernel
    is applied as one 2D convolution over the frame-stacked channels; the CPU
    3D convolution kernel is several times slower for the same result.
    """
    B, C, L, H, W = x.shape
    k = conv.weight.shape[2]
    n_out = L - k + 1
    windows = torch.stack([x[:, :, f:f + k] for f in range(n_out)], dim=1)
    windows = windows.reshape(B * n_out, C * k, H, W)        # channel index = c * k + j
    weight = conv.weight.reshape(conv.weight.shape[0], C * k, *conv.weight.shape[3:])
    y = F.conv2d(windows, weight, conv.bias, padding=conv.padding[1:])
    return y.reshape(B, n_out, -1, H, W).transpose(1, 2)


class DFH(nn.Module):
    """Dual-path fusion head.

    Two independent 3D conv stacks read the motion feature in frame order and
    in reversed frame order; their outputs are averaged, any leftover frame
    axis is mean-reduced, and two 2D convs map ``C -> C/2 -> 2``.
    """

    def __init__(self, c_base: int = 16, n_frames: int = 5, n_layers: int = 2):
        super().__init__()
        self.n_frames = n_frames
        self.kernels = frame_schedule(n_frames, n_layers)
        self.fwd = self._stack(c_base)
        self.bwd = self._stack(c_base)
        hidden = max(c_base // 2, 1)
        self.conv2d = nn.Conv2d(c_base, hidden, 3, padding=1)
        self.flow = nn.Conv2d(hidden, 2, 3, padding=1)
        self.reset_flow()

    def _stack(self, c: int) -> nn.ModuleList:
        return nn.ModuleList(nn.Conv3d(c, c, (k, 3, 3), padding=(0, 1, 1)) for k in self.kernels)

    def reset_flow(self, std: float = 1e-5) -> None:
        # near-identity initial deformation
        nn.init.normal_(self.flow.weight, std=std)
        nn.init.zeros_(self.flow.bias)

    @staticmethod
    def _path(stack: nn.ModuleList, x: torch.Tensor) -> torch.Tensor:
        for conv in stack:
            x = F.gelu(frame_conv3d(x, conv))
        return x

    def frame_dims(self) -> list[int]:
        dims = [self.n_frames]
        for k in self.kernels:
            dims.append(dims[-1] - k + 1)
        return dims

    def forward(self, fm: torch.Tensor) -> torch.Tensor:
        squeeze = fm.dim() == 4
        if squeeze:
            fm = fm.unsqueeze(0)
        if fm.shape[1] != self.n_frames:
            raise ValueError(f"unsupported window length {fm.shape[1]} (head built for {self.n_frames})")
        x = fm.transpose(1, 2)                            # [B, C, N_f, H, W]
        fwd = self._path(self.fwd, x)
        bwd = self._path(self.bwd, torch.flip(x, dims=(2,)))
        mean = 0.5 * (fwd + bwd)
        mean = mean.mean(dim=2)                           # no-op when frame dim is 1
        phi = self.flow(F.gelu(self.conv2d(mean)))
        return phi[0] if squeeze else phi

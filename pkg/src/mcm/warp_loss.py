"""Differentiable pull-warping and the registration objective.

Displacements are in pixels; channel 0 moves along x (columns), channel 1
along y (rows).  ``warp(img, u)(p) = img(p + u(p))`` with bilinear
interpolation and clamp-to-edge sampling.
"""

from __future__ import annotations

from dataclasses import dataclass

import torch


@dataclass(frozen=True)
class LossConfig:
    lam: float = 0.05

    def __post_init__(self):
        if self.lam < 0:
            raise ValueError("lambda must be >= 0")


def _as_batch(img: torch.Tensor, phi: torch.Tensor):
    """Normalise to ``img [B, C, H, W]`` and ``phi [B, 2, H, W]``."""
    if phi.dim() == 3:
        phi = phi.unsqueeze(0)
    if phi.dim() != 4 or phi.shape[1] != 2:
        raise ValueError(f"motion field must be [2, H, W] or [B, 2, H, W], got {tuple(phi.shape)}")
    B, _, H, W = phi.shape
    if img.dim() == 2:
        img = img[None, None]
    elif img.dim() == 3:
        img = img.unsqueeze(1)
    if img.dim() != 4 or tuple(img.shape[-2:]) != (H, W) or img.shape[0] not in (1, B):
        raise ValueError(f"shape mismatch: image {tuple(img.shape)} vs field {tuple(phi.shape)}")
    return img.expand(B, *img.shape[1:]), phi


def _bilinear(img: torch.Tensor, x: torch.Tensor, y: torch.Tensor) -> torch.Tensor:
    """Sample ``img [B, C, H, W]`` at pixel coordinates ``x, y [B, H, W]``, clamped to the edge."""
    B, C, H, W = img.shape
    x = x.clamp(0, W - 1)
    y = y.clamp(0, H - 1)
    # left/top corner index; the far edge uses the last cell with weight 1
    x0 = x.detach().floor().clamp(max=max(W - 2, 0))
    y0 = y.detach().floor().clamp(max=max(H - 2, 0))
    wx = (x - x0).unsqueeze(1)
    wy = (y - y0).unsqueeze(1)
    x0, y0 = x0.long(), y0.long()
    x1 = (x0 + 1).clamp(max=W - 1)
    y1 = (y0 + 1).clamp(max=H - 1)
    flat = img.reshape(B, C, H * W)

    def at(yi, xi):
        idx = (yi * W + xi).reshape(B, 1, H * W).expand(B, C, H * W)
        return flat.gather(2, idx).reshape(B, C, H, W)

    top = at(y0, x0) * (1 - wx) + at(y0, x1) * wx
    bottom = at(y1, x0) * (1 - wx) + at(y1, x1) * wx
    return top * (1 - wy) + bottom * wy


def warp(img: torch.Tensor, phi: torch.Tensor) -> torch.Tensor:
    """Bilinearly sample ``img`` at ``p + phi(p)``.

    ``img`` is ``[H, W]``, ``[B, H, W]`` or ``[B, C, H, W]``; ``phi`` is
    ``[2, H, W]`` or ``[B, 2, H, W]``.  The output keeps the image layout
    (an ``[H, W]`` image with an unbatched field returns ``[H, W]``).
    """
    in_dim = img.dim()
    unbatched = phi.dim() == 3
    imgb, phib = _as_batch(img, phi)
    H, W = phib.shape[-2:]
    ys = torch.arange(H, dtype=phib.dtype, device=phib.device)
    xs = torch.arange(W, dtype=phib.dtype, device=phib.device)
    gy, gx = torch.meshgrid(ys, xs, indexing="ij")
    out = _bilinear(imgb.to(phib.dtype), gx + phib[:, 0], gy + phib[:, 1])
    if in_dim == 2 and unbatched:
        return out[0, 0]
    if in_dim == 3:
        return out[:, 0]
    return out


def sim_loss(target: torch.Tensor, warped: torch.Tensor) -> torch.Tensor:
    """Mean squared intensity error over all pixels (and batch)."""
    if target.shape != warped.shape:
        raise ValueError(f"shape mismatch: {tuple(target.shape)} vs {tuple(warped.shape)}")
    return ((target - warped) ** 2).mean()


def smooth_loss(phi: torch.Tensor) -> torch.Tensor:
    """Squared forward-difference gradient of the field.

    Each (channel, axis) term is averaged over its valid differences and the
    four terms are summed, so a unit-slope component contributes exactly 1.
    """
    if phi.dim() not in (3, 4) or phi.shape[-3] != 2:
        raise ValueError(f"motion field must be [2, H, W] or [B, 2, H, W], got {tuple(phi.shape)}")
    total = phi.new_zeros(())
    if phi.shape[-1] > 1:
        dx = phi[..., :, 1:] - phi[..., :, :-1]
        total = total + (dx ** 2).mean(dim=(-2, -1)).sum(-1).mean()
    if phi.shape[-2] > 1:
        dy = phi[..., 1:, :] - phi[..., :-1, :]
        total = total + (dy ** 2).mean(dim=(-2, -1)).sum(-1).mean()
    return total


def total_loss(target: torch.Tensor, reference: torch.Tensor, phi: torch.Tensor,
               cfg: LossConfig = LossConfig()) -> torch.Tensor:
    """Similarity of the warped reference to the target plus weighted smoothness."""
    warped = warp(reference, phi)
    if warped.shape != target.shape:
        warped = warped.reshape(target.shape)
    return sim_loss(target, warped) + cfg.lam * smooth_loss(phi)

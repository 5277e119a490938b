"""Evaluation metrics for motion fields and warped segmentations.

All functions accept numpy arrays or torch tensors and return python floats
or numpy arrays.  Motion fields are ``[2, H, W]`` pixel displacements.
"""

from __future__ import annotations

import numpy as np
import torch

from .warp_loss import warp


def _np(x) -> np.ndarray:
    if isinstance(x, torch.Tensor):
        return x.detach().cpu().numpy()
    return np.asarray(x)


def _field(phi) -> np.ndarray:
    phi = _np(phi).astype(np.float64)
    if phi.ndim != 3 or phi.shape[0] != 2:
        raise ValueError(f"motion field must be [2, H, W], got {phi.shape}")
    return phi


def dice(a, b, label: int = 1) -> float:
    """Overlap 2|A∩B| / (|A| + |B|) of one class; 1.0 when both are empty."""
    a, b = _np(a), _np(b)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    A, B = a == label, b == label
    denom = A.sum() + B.sum()
    if denom == 0:
        return 1.0
    return float(2.0 * np.logical_and(A, B).sum() / denom)


def jacobian_det(phi) -> np.ndarray:
    """Determinant of ``I + grad u`` at interior pixels, central differences.

    Returns an ``(H-2, W-2)`` map.
    """
    u = _field(phi)
    if u.shape[1] < 3 or u.shape[2] < 3:
        raise ValueError(f"field too small for central differences: {u.shape[1:]}")
    dx = (u[:, 1:-1, 2:] - u[:, 1:-1, :-2]) / 2.0   # d/dx of (u_x, u_y)
    dy = (u[:, 2:, 1:-1] - u[:, :-2, 1:-1]) / 2.0   # d/dy
    return (1.0 + dx[0]) * (1.0 + dy[1]) - dy[0] * dx[1]


def jacobian_metrics(phi) -> tuple[float, float]:
    """Percentage of folded interior pixels (det <= 0) and mean |det - 1|."""
    det = jacobian_det(phi)
    neg_pct = 100.0 * float((det <= 0).sum()) / det.size
    return neg_pct, float(np.abs(det - 1.0).mean())


def warp_labels(mask, phi) -> np.ndarray:
    """Warp an integer label map by bilinear warping of its one-hot channels.

    Per pixel the label with the largest warped weight wins; ties go to the
    lowest label id.
    """
    m = _np(mask)
    u = _field(phi)
    if m.shape != u.shape[1:]:
        raise ValueError(f"shape mismatch: mask {m.shape} vs field {u.shape[1:]}")
    labels = np.unique(m)
    onehot = torch.from_numpy(np.stack([(m == k) for k in labels]).astype(np.float64))
    warped = warp(onehot.unsqueeze(0), torch.from_numpy(u).unsqueeze(0))[0].numpy()
    # argmax returns the first maximum; labels are sorted ascending
    return labels[np.argmax(warped, axis=0)].astype(m.dtype)


def endpoint_error(phi, gt, mask=None) -> float:
    """Mean Euclidean distance between two fields, optionally over ``mask > 0``."""
    u, g = _field(phi), _field(gt)
    if u.shape != g.shape:
        raise ValueError(f"shape mismatch: {u.shape} vs {g.shape}")
    err = np.sqrt(((u - g) ** 2).sum(axis=0))
    if mask is None:
        return float(err.mean())
    m = _np(mask)
    if m.shape != err.shape:
        raise ValueError(f"shape mismatch: mask {m.shape} vs field {err.shape}")
    sel = m > 0
    if not sel.any():
        raise ValueError("empty mask")
    return float(err[sel].mean())


def temporal_consistency(fields) -> tuple[np.ndarray, float]:
    """Per-frame mean displacement magnitude and a second-difference roughness index.

    ``fields`` is ``[T, 2, H, W]`` (or a sequence of ``[2, H, W]``).  The index
    is the mean over interior frames and pixels of
    ``|phi_{t+1} - 2 phi_t + phi_{t-1}|``; lower means smoother in time.
    """
    if isinstance(fields, (list, tuple)):
        f = np.stack([_field(x) for x in fields])
    else:
        f = _np(fields).astype(np.float64)
    if f.ndim != 4 or f.shape[1] != 2:
        raise ValueError(f"expected [T, 2, H, W], got {f.shape}")
    if f.shape[0] < 3:
        raise ValueError(f"temporal consistency needs T >= 3, got {f.shape[0]}")
    curve = np.sqrt((f ** 2).sum(axis=1)).mean(axis=(1, 2))
    second = f[2:] - 2.0 * f[1:-1] + f[:-2]
    tc = float(np.sqrt((second ** 2).sum(axis=1)).mean())
    return curve, tc

"""Tensor file I/O, preprocessing and the synthetic cardiac phantom.

MCMT layout (little-endian)::

    b"MCMT" | u8 version=1 | u8 dtype=1 (float32) | u8 ndim | u8 reserved=0
    | ndim x u32 dims | row-major float32 payload
"""

from __future__ import annotations

import io
import math
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch

MAGIC = b"MCMT"
VERSION = 1
DTYPE_F32 = 1


class FormatError(ValueError):
    pass


def encode_tensor(tensor) -> bytes:
    arr = tensor.detach().cpu().numpy() if isinstance(tensor, torch.Tensor) else np.asarray(tensor)
    if arr.dtype != np.float32:
        raise FormatError(f"only float32 tensors are supported, got {arr.dtype}")
    if arr.ndim > 255:
        raise FormatError("too many dimensions")
    header = MAGIC + struct.pack("<BBBB", VERSION, DTYPE_F32, arr.ndim, 0)
    header += struct.pack(f"<{arr.ndim}I", *arr.shape)
    return header + np.ascontiguousarray(arr).astype("<f4", copy=False).tobytes()


def read_tensor(stream) -> np.ndarray:
    """Read one MCMT blob from a binary stream, leaving the stream after the payload."""
    head = stream.read(8)
    if len(head) < 8:
        raise FormatError("truncated header")
    if head[:4] != MAGIC:
        raise FormatError("bad magic")
    version, dtype, ndim, _ = struct.unpack("<BBBB", head[4:])
    if version != VERSION:
        raise FormatError(f"unsupported version {version}")
    if dtype != DTYPE_F32:
        raise FormatError(f"unsupported dtype code {dtype}")
    raw_dims = stream.read(4 * ndim)
    if len(raw_dims) < 4 * ndim:
        raise FormatError("truncated header")
    dims = struct.unpack(f"<{ndim}I", raw_dims)
    nbytes = 4 * math.prod(dims)
    payload = stream.read(nbytes)
    if len(payload) != nbytes:
        raise FormatError("truncated payload")
    return np.frombuffer(payload, dtype="<f4").astype(np.float32).reshape(dims)


def save_tensor(path, tensor) -> None:
    Path(path).write_bytes(encode_tensor(tensor))


def load_tensor(path) -> torch.Tensor:
    data = Path(path).read_bytes()
    buf = io.BytesIO(data)
    arr = read_tensor(buf)
    if buf.tell() != len(data):
        raise FormatError("trailing bytes after payload")
    return torch.from_numpy(arr.copy())


def preprocess(raw, crop: int = 128) -> torch.Tensor:
    """Center-crop ``[T, H', W']`` frames to ``crop x crop`` and min-max normalise to [0, 1]."""
    x = torch.as_tensor(raw, dtype=torch.float32)
    if x.dim() != 3:
        raise ValueError(f"expected [T, H, W], got {tuple(x.shape)}")
    H, W = x.shape[-2:]
    if H < crop or W < crop:
        raise ValueError(f"frame {H}x{W} smaller than crop {crop}")
    top, left = (H - crop) // 2, (W - crop) // 2
    x = x[:, top:top + crop, left:left + crop]
    lo, hi = x.min(), x.max()
    if hi == lo:
        return torch.zeros_like(x)
    return ((x - lo) / (hi - lo)).clamp(0.0, 1.0)


# --------------------------------------------------------------------------
# synthetic phantom

@dataclass(frozen=True)
class PhantomSpec:
    T: int = 10
    H: int = 32
    W: int = 32
    center: tuple[float, float] = (15.5, 15.5)   # (x, y) in pixels
    r1: float = 6.0
    r2: float = 11.0
    amplitude: float = 0.2
    seed: int = 0
    noise_sigma: float = 0.0
    edge: float = 1.5
    intensities: tuple[float, float, float] = (0.9, 0.35, 0.05)  # blood, myocardium, background

    def validate(self) -> None:
        if self.T < 1 or self.H < 1 or self.W < 1:
            raise ValueError("phantom dims must be >= 1")
        if not 0 < self.r1 < self.r2:
            raise ValueError("radii must satisfy 0 < r1 < r2")
        if self.r2 >= min(self.H, self.W) / 2:
            raise ValueError("r2 must be smaller than half the image size")
        if not 0 <= self.amplitude < 0.5:
            raise ValueError("amplitude must lie in [0, 0.5)")
        if self.amplitude * self.r2 >= self.r1:
            raise ValueError("amplitude * r2 must be < r1 (no self-folding)")
        if self.noise_sigma < 0:
            raise ValueError("noise_sigma must be >= 0")


def radial_window(r: np.ndarray, r2: float) -> np.ndarray:
    """Weight ``w(r)`` of the radial displacement.

    ``w = 1`` for ``r <= r2``; on ``(r2, 1.5 r2)`` it is ``(r2 / r) * S`` with
    ``S`` a cubic smoothstep from 1 to 0, so the displacement magnitude
    ``r * w(r)`` never exceeds its value at ``r2``; ``w = 0`` beyond.
    """
    r = np.asarray(r, dtype=np.float64)
    z = np.clip((r - r2) / (0.5 * r2), 0.0, 1.0)
    taper = 1.0 - z * z * (3.0 - 2.0 * z)
    return np.where(r <= r2, 1.0, r2 / np.maximum(r, 1e-12) * taper)


def cycle_phase(t, T: int) -> np.ndarray:
    """Contraction profile ``sin(pi t / (T-1))``; zero for a single-frame cycle."""
    if T < 2:
        return np.zeros_like(np.asarray(t, dtype=np.float64))
    return np.sin(np.pi * np.asarray(t, dtype=np.float64) / (T - 1))


def gt_displacement(spec: PhantomSpec, t: int) -> np.ndarray:
    """Analytic displacement from frame 0 to frame ``t`` as ``[2, H, W]``."""
    ys, xs = np.mgrid[0:spec.H, 0:spec.W].astype(np.float64)
    dx, dy = xs - spec.center[0], ys - spec.center[1]
    r = np.hypot(dx, dy)
    scale = -spec.amplitude * cycle_phase(t, spec.T) * radial_window(r, spec.r2)
    return np.stack([scale * dx, scale * dy])


def _profile(spec: PhantomSpec, r: np.ndarray) -> np.ndarray:
    blood, myo, bg = spec.intensities

    def step(edge_r):
        return 1.0 / (1.0 + np.exp(-(edge_r - r) / spec.edge))

    return bg + (myo - bg) * step(spec.r2) + (blood - myo) * step(spec.r1)


def synth_phantom(spec: PhantomSpec):
    """Generate ``(frames [T, H, W], gt [T, 2, H, W], masks [T, H, W])``.

    Frame ``t`` is the analytic frame-0 image evaluated at ``p + u_t(p)``,
    so pulling frame 0 through the ground truth reproduces frame ``t``.
    Masks label the myocardial annulus with 1.
    """
    spec.validate()
    ys, xs = np.mgrid[0:spec.H, 0:spec.W].astype(np.float64)
    frames, gts, masks = [], [], []
    for t in range(spec.T):
        u = gt_displacement(spec, t)
        px = xs + u[0] - spec.center[0]
        py = ys + u[1] - spec.center[1]
        r = np.hypot(px, py)
        frames.append(_profile(spec, r))
        masks.append(((r >= spec.r1) & (r <= spec.r2)).astype(np.int64))
        gts.append(u)
    frames = np.stack(frames)
    if spec.noise_sigma > 0:
        rng = np.random.default_rng(spec.seed)
        frames = frames + rng.normal(0.0, spec.noise_sigma, size=frames.shape)
    frames = np.clip(frames, 0.0, 1.0)
    return (torch.from_numpy(frames.astype(np.float32)),
            torch.from_numpy(np.stack(gts).astype(np.float32)),
            torch.from_numpy(np.stack(masks)))


def random_phantom_spec(seed: int, T: int = 10, size: int = 32,
                        noise_sigma: float = 0.0) -> PhantomSpec:
    """Draw a phantom with jittered centre, radii and amplitude.

    Geometry scales with ``size``; the draw is fully determined by ``seed``.
    """
    rng = np.random.default_rng(seed)
    s = size / 32.0
    r1 = rng.uniform(5.0, 7.0) * s
    r2 = rng.uniform(10.0, 12.0) * s
    amp = rng.uniform(0.15, min(0.3, 0.95 * r1 / r2))
    c = (size - 1) / 2.0 + rng.uniform(-1.5, 1.5, size=2) * s
    return PhantomSpec(T=T, H=size, W=size, center=(float(c[0]), float(c[1])),
                       r1=float(r1), r2=float(r2), amplitude=float(amp), seed=seed,
                       noise_sigma=noise_sigma)

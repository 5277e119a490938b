import struct

import numpy as np
import pytest
import torch

from mcm.data import (FormatError, PhantomSpec, gt_displacement, load_tensor, preprocess,
                      radial_window, random_phantom_spec, save_tensor, synth_phantom)
from mcm.metrics import jacobian_metrics
from mcm.warp_loss import warp


def test_roundtrip_bit_exact(tmp_path):
    x = torch.randn(5, 2, 8, 8)
    save_tensor(tmp_path / "x.mcmt", x)
    y = load_tensor(tmp_path / "x.mcmt")
    assert y.dtype == torch.float32
    assert x.numpy().tobytes() == y.numpy().tobytes()


def test_byte_layout(tmp_path):
    save_tensor(tmp_path / "x.mcmt", torch.tensor([[1.5, -2.0, 0.25]]))
    raw = (tmp_path / "x.mcmt").read_bytes()
    assert raw[:8] == bytes([0x4D, 0x43, 0x4D, 0x54, 1, 1, 2, 0])
    assert struct.unpack("<2I", raw[8:16]) == (1, 3)
    assert struct.unpack("<3f", raw[16:]) == (1.5, -2.0, 0.25)


def test_bad_magic(tmp_path):
    p = tmp_path / "x.mcmt"
    save_tensor(p, torch.zeros(3))
    p.write_bytes(b"XXXX" + p.read_bytes()[4:])
    with pytest.raises(FormatError, match="bad magic"):
        load_tensor(p)


def test_truncated_payload(tmp_path):
    p = tmp_path / "x.mcmt"
    save_tensor(p, torch.zeros(4, 4))
    p.write_bytes(p.read_bytes()[:-4])
    with pytest.raises(FormatError, match="truncated payload"):
        load_tensor(p)


def test_bad_version_and_dtype(tmp_path):
    p = tmp_path / "x.mcmt"
    save_tensor(p, torch.zeros(2))
    raw = bytearray(p.read_bytes())
    raw[4] = 2
    p.write_bytes(bytes(raw))
    with pytest.raises(FormatError, match="version"):
        load_tensor(p)
    raw[4], raw[5] = 1, 7
    p.write_bytes(bytes(raw))
    with pytest.raises(FormatError, match="dtype"):
        load_tensor(p)
    with pytest.raises(FormatError):
        save_tensor(p, torch.zeros(2, dtype=torch.float64))


def test_preprocess_constant_and_range():
    assert torch.equal(preprocess(torch.full((2, 130, 130), 7.0)), torch.zeros(2, 128, 128))
    raw = torch.rand(3, 140, 150) * 255
    out = preprocess(raw)
    assert out.min() == 0 and out.max() == 1


def test_preprocess_crop_offset():
    raw = torch.zeros(1, 130, 130)
    raw[0, 1, 1] = 1.0          # first retained pixel
    raw[0, 128, 128] = 0.5      # last retained pixel
    raw[0, 0, 0] = 9.0          # cropped away
    out = preprocess(raw)
    assert out[0, 0, 0] == 1.0 and out[0, 127, 127] == 0.5
    with pytest.raises(ValueError):
        preprocess(torch.zeros(1, 100, 200))


def test_phantom_endpoints():
    spec = PhantomSpec(T=9)
    frames, gt, masks = synth_phantom(spec)
    assert frames.shape == (9, 32, 32) and gt.shape == (9, 2, 32, 32) and masks.shape == (9, 32, 32)
    assert torch.equal(gt[0], torch.zeros(2, 32, 32))
    assert gt[-1].abs().max() < 1e-6
    assert torch.equal(masks[0], masks[0]) and masks[0].sum() > 0
    assert frames.min() >= 0 and frames.max() <= 1


def test_phantom_peak_displacement():
    spec = PhantomSpec(T=11, H=64, W=64, center=(31.5, 31.5), r1=8.0, r2=20.0, amplitude=0.1)
    u = gt_displacement(spec, 5)
    grid_max = np.hypot(*u).max()
    # analytic: max over r of a * r * w(r) is attained at r = r2
    r = np.linspace(0, 40, 40001)
    analytic = 0.1 * (r * radial_window(r, 20.0)).max()
    assert analytic == pytest.approx(2.0, abs=1e-9)
    assert grid_max <= analytic + 1e-12
    assert grid_max > 1.9


def test_phantom_determinism():
    spec = PhantomSpec(noise_sigma=0.05, seed=11)
    a, b = synth_phantom(spec), synth_phantom(spec)
    assert all(torch.equal(x, y) for x, y in zip(a, b))


def test_phantom_pull_consistency():
    spec = random_phantom_spec(5, T=10, size=32)
    frames, gt, _ = synth_phantom(spec)
    for t in range(10):
        mse = ((warp(frames[0].double(), gt[t].double()) - frames[t].double()) ** 2).mean()
        assert mse < 1e-3


def test_phantom_gt_jacobian_no_folding():
    spec = PhantomSpec(T=11, H=64, W=64, center=(31.5, 31.5), r1=8.0, r2=20.0, amplitude=0.1)
    neg, _ = jacobian_metrics(gt_displacement(spec, 5))
    assert neg == 0.0


@pytest.mark.parametrize("kw", [dict(r1=12.0, r2=11.0), dict(r2=17.0), dict(amplitude=0.6),
                                dict(amplitude=0.49, r1=2.0, r2=11.0)])
def test_phantom_invalid(kw):
    with pytest.raises(ValueError):
        synth_phantom(PhantomSpec(**kw))

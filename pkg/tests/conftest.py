import sys

import numpy as np
import pytest
import torch


def fd_check(fn, tensors, eps=1e-5, max_elems=40, n_dirs=2, seed=0):
    """Compare reverse-mode gradients of scalar ``fn()`` with central differences.

    For each tensor: up to ``max_elems`` individual entries (all of them when
    the tensor is small) plus ``n_dirs`` random directions over the whole
    tensor.  Returns the worst relative error seen.
    """
    rng = np.random.default_rng(seed)
    for t in tensors:
        t.grad = None
    out = fn()
    grads = torch.autograd.grad(out, tensors, allow_unused=True)
    worst = 0.0
    for t, g in zip(tensors, grads):
        g = torch.zeros_like(t) if g is None else g.contiguous()
        flat = t.data.view(-1)
        n = flat.numel()
        idx = range(n) if n <= max_elems else rng.choice(n, size=max_elems, replace=False)
        an, num = [], []
        with torch.no_grad():
            for i in idx:
                old = flat[i].item()
                flat[i] = old + eps
                hi = fn().item()
                flat[i] = old - eps
                lo = fn().item()
                flat[i] = old
                an.append(g.view(-1)[i].item())
                num.append((hi - lo) / (2 * eps))
            an, num = np.array(an), np.array(num)
            scale = max(np.abs(an).max(), np.abs(num).max(), 1e-8)
            worst = max(worst, float(np.abs(an - num).max() / scale))
            for _ in range(n_dirs):
                v = torch.from_numpy(rng.standard_normal(t.shape)).to(t.dtype)
                base = t.data.clone()
                t.data.add_(eps * v)
                hi = fn().item()
                t.data.copy_(base - eps * v)
                lo = fn().item()
                t.data.copy_(base)
                d_num = (hi - lo) / (2 * eps)
                d_an = float((g * v).sum())
                worst = max(worst, abs(d_an - d_num) / max(abs(d_an), abs(d_num), 1e-8))
    return worst


def weighted_sum(out, seed=123):
    """Fixed random projection turning a tensor output into a scalar."""
    gen = torch.Generator().manual_seed(seed)
    w = torch.randn(out.shape, generator=gen, dtype=out.dtype)
    return (out * w).sum()


@pytest.fixture
def double():
    old = torch.get_default_dtype()
    torch.set_default_dtype(torch.float64)
    yield
    torch.set_default_dtype(old)


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    lines = sorted(getattr(mod, "SUMMARY", []), key=lambda s: int(s.split()[2].rstrip(":")))
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)

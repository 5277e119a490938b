"""Selective state-space scans over short temporal token sequences.

Recurrence per channel ``d`` and state ``n``::

    delta_k = softplus(dt_proj(x_k))
    h_k     = exp(delta_k * A) * h_{k-1} + delta_k * B(x_k) * x_k
    y_k     = <C(x_k), h_k> + d_skip * x_k

with ``A = -exp(a_log)`` diagonal and ``h_0 = 0``.  Token sequences are
``[..., L, D]`` tensors; every leading dimension is an independent sequence.
"""

from __future__ import annotations

import math

import torch
import torch.nn as nn
import torch.nn.functional as F


class SsmParams(nn.Module):
    """Learned parameters of one selective SSM acting on ``d_model`` channels."""

    def __init__(self, d_model: int, d_state: int = 8,
                 dt_min: float = 0.01, dt_max: float = 0.1):
        super().__init__()
        if d_model < 1 or d_state < 1:
            raise ValueError("d_model and d_state must be >= 1")
        self.d_model = d_model
        self.d_state = d_state

        # A spans -1 .. -d_state on every channel
        a = torch.arange(1, d_state + 1, dtype=torch.get_default_dtype()).repeat(d_model, 1)
        self.a_log = nn.Parameter(torch.log(a))
        self.b_proj = nn.Linear(d_model, d_state)
        self.c_proj = nn.Linear(d_model, d_state)
        self.dt_proj = nn.Linear(d_model, d_model)
        self.d_skip = nn.Parameter(torch.ones(d_model))
        self.reset_parameters(dt_min, dt_max)

    def reset_parameters(self, dt_min: float = 0.01, dt_max: float = 0.1) -> None:
        with torch.no_grad():
            for lin in (self.b_proj, self.c_proj, self.dt_proj):
                nn.init.normal_(lin.weight, std=0.02)
                nn.init.zeros_(lin.bias)
            # initial step sizes log-uniform in [dt_min, dt_max]; bias = softplus^-1(dt)
            dt = torch.exp(torch.rand(self.d_model) * (math.log(dt_max) - math.log(dt_min))
                           + math.log(dt_min))
            self.dt_proj.bias.copy_(dt + torch.log(-torch.expm1(-dt)))

    @property
    def A(self) -> torch.Tensor:
        return -torch.exp(self.a_log)


def _check_finite(x: torch.Tensor) -> None:
    if not torch.isfinite(x).all():
        raise ValueError("non-finite input")


def discretize(params: SsmParams, token: torch.Tensor):
    """Zero-order-hold state factor and Euler input term for ``token [..., D]``.

    Returns ``(a_bar [..., D, N], b_bar [..., D, N], c [..., N])``.
    """
    _check_finite(token)
    if token.shape[-1] != params.d_model:
        raise ValueError("channel mismatch")
    delta = F.softplus(params.dt_proj(token))               # [..., D]
    a_bar = torch.exp(delta.unsqueeze(-1) * params.A)      # [..., D, N]
    b_bar = delta.unsqueeze(-1) * params.b_proj(token).unsqueeze(-2)
    c = params.c_proj(token)
    return a_bar, b_bar, c


def _validate(seq: torch.Tensor, params: SsmParams) -> None:
    if seq.dim() < 2 or seq.shape[-2] == 0:
        raise ValueError("empty sequence")
    if seq.shape[-1] != params.d_model:
        raise ValueError("channel mismatch")


def _scan_loop(seq, a_bar, b_bar, c, d_skip):
    # reference path: explicit sequential state update
    u = b_bar * seq.unsqueeze(-1)                           # [..., L, D, N]
    h = torch.zeros_like(u[..., 0, :, :])
    hs = []
    for k in range(seq.shape[-2]):
        h = torch.addcmul(u[..., k, :, :], a_bar[..., k, :, :], h)
        hs.append(h)
    return (torch.stack(hs, dim=-3) * c.unsqueeze(-2)).sum(-1) + d_skip * seq


def _scan_parallel(seq, params, b_bar, c):
    # h_k = sum_{j<=k} exp(S_k - S_j) b_bar_j x_j  with  S = cumsum(delta * A)
    delta = F.softplus(params.dt_proj(seq))
    log_a = delta.unsqueeze(-1) * params.A                  # [..., L, D, N]
    s = torch.cumsum(log_a, dim=-3)
    L = seq.shape[-2]
    diff = s.unsqueeze(-3) - s.unsqueeze(-4)                # [..., k, j, D, N] = S_k - S_j
    causal = torch.ones(L, L, dtype=torch.bool, device=seq.device).tril()
    diff = diff.masked_fill(~causal[:, :, None, None], float("-inf"))
    u = b_bar * seq.unsqueeze(-1)                           # [..., L, D, N]
    h = (torch.exp(diff) * u.unsqueeze(-4)).sum(-3)         # [..., L, D, N]
    return (h * c.unsqueeze(-2)).sum(-1) + params.d_skip * seq


def scan_forward(seq: torch.Tensor, params: SsmParams, method: str = "loop") -> torch.Tensor:
    """Run the SSM over ``seq [..., L, D]`` in index order 0..L-1.

    ``method="loop"`` is the deterministic reference path; ``"parallel"``
    evaluates the closed-form weighted sum of all causal contributions at once
    and agrees with the loop to round-off.
    """
    _validate(seq, params)
    a_bar, b_bar, c = discretize(params, seq)
    if method == "loop":
        return _scan_loop(seq, a_bar, b_bar, c, params.d_skip)
    if method == "parallel":
        return _scan_parallel(seq, params, b_bar, c)
    raise ValueError(f"unknown scan method {method!r}")


def scan_backward(seq: torch.Tensor, params: SsmParams, method: str = "loop") -> torch.Tensor:
    """Scan in reverse index order; output is returned in the original order."""
    _validate(seq, params)
    out = scan_forward(torch.flip(seq, dims=(-2,)), params, method=method)
    return torch.flip(out, dims=(-2,))


def bism(f: torch.Tensor, fwd: SsmParams, bwd: SsmParams, method: str = "loop") -> torch.Tensor:
    """Bi-directional temporal scan at every spatial position.

    ``f`` is ``[N_f, D, H, W]`` or batched ``[B, N_f, D, H, W]``.  Each of the
    ``H*W`` positions contributes one independent length-``N_f`` sequence.
    """
    squeeze = f.dim() == 4
    if squeeze:
        f = f.unsqueeze(0)
    if f.dim() != 5:
        raise ValueError(f"expected [N_f, D, H, W] or [B, N_f, D, H, W], got {tuple(f.shape)}")
    B, L, D, H, W = f.shape
    if D != fwd.d_model or D != bwd.d_model:
        raise ValueError("channel mismatch")
    tokens = f.permute(0, 3, 4, 1, 2).reshape(B * H * W, L, D)
    if method == "loop":
        # both directions share one sequential loop over a stacked batch
        rev = torch.flip(tokens, dims=(-2,))
        a_f, b_f, c_f = discretize(fwd, tokens)
        a_b, b_b, c_b = discretize(bwd, rev)
        d_skip = torch.stack([fwd.d_skip, bwd.d_skip])[:, None, None, :]
        both = _scan_loop(torch.stack([tokens, rev]), torch.stack([a_f, a_b]),
                          torch.stack([b_f, b_b]), torch.stack([c_f, c_b]), d_skip)
        out = both[0] + torch.flip(both[1], dims=(-2,))
    else:
        out = scan_forward(tokens, fwd, method) + scan_backward(tokens, bwd, method)
    out = out.reshape(B, H, W, L, D).permute(0, 3, 4, 1, 2)
    return out[0] if squeeze else out


class BiSM(nn.Module):
    """Module wrapper holding independent forward and backward parameter sets."""

    def __init__(self, d_model: int, d_state: int = 8, method: str = "loop"):
        super().__init__()
        self.fwd = SsmParams(d_model, d_state)
        self.bwd = SsmParams(d_model, d_state)
        self.method = method

    def forward(self, f: torch.Tensor) -> torch.Tensor:
        return bism(f, self.fwd, self.bwd, self.method)

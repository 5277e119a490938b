"""Host-memory and CPU-latency profiling for several window lengths.

Peak memory is the resident-set high-water mark (VmHWM) of a fresh interpreter that
builds the model and runs one training step (forward + backward); each
window length runs in its own child process so the marks do not mix.
Latency is the mean wall time of a no-grad forward pass over at least
100 calls after warm-up, measured with a monotonic clock.
"""

from __future__ import annotations

import json
import resource
import subprocess
import sys
import time

import torch

from ..model import MCM
from ..warp_loss import total_loss
from .config import TrainConfig


def _inputs(n_frames: int, size: int, batch: int, seed: int = 0):
    gen = torch.Generator().manual_seed(seed)
    f0 = torch.rand(batch, n_frames, 2, size, size, generator=gen)
    return f0


def _model(cfg: TrainConfig, K: int) -> MCM:
    torch.manual_seed(cfg.seed)
    return MCM(K=K, c_base=cfg.c_base, d_state=cfg.d_state, scan_method=cfg.scan_method)


def peak_memory_child(cfg: TrainConfig, K: int) -> int:
    """Runs inside the child: one training step, then report ``ru_maxrss`` in bytes."""
    model = _model(cfg, K)
    f0 = _inputs(2 * K + 1, cfg.crop, cfg.batch_size)
    phi = model(f0)
    loss = total_loss(f0[:, K, 1], f0[:, K, 0], phi)
    loss.backward()
    return _peak_rss_bytes()


def _peak_rss_bytes() -> int:
    # VmHWM belongs to this address space; ru_maxrss survives exec and can
    # report the (larger) parent that spawned us.
    try:
        with open("/proc/self/status", encoding="ascii") as fh:
            for line in fh:
                if line.startswith("VmHWM:"):
                    return int(line.split()[1]) * 1024
    except OSError:
        pass
    # ru_maxrss is in kilobytes on Linux
    return resource.getrusage(resource.RUSAGE_SELF).ru_maxrss * 1024


def peak_memory(cfg: TrainConfig, K: int) -> int:
    code = ("import json,sys; from mcm.pipeline.profiling import peak_memory_child;"
            "from mcm.pipeline.config import TrainConfig;"
            "cfg=TrainConfig.from_dict(json.loads(sys.argv[1]));"
            "print(peak_memory_child(cfg,int(sys.argv[2])))")
    out = subprocess.run([sys.executable, "-c", code, json.dumps(cfg.to_dict()), str(K)],
                         check=True, capture_output=True, text=True)
    return int(out.stdout.strip().splitlines()[-1])


@torch.no_grad()
def latency_ms(cfg: TrainConfig, K: int, calls: int = 100, warmup: int = 10) -> float:
    return latencies_ms(cfg, [K], calls=calls, warmup=warmup)[0]


@torch.no_grad()
def latencies_ms(cfg: TrainConfig, Ks, calls: int = 100, warmup: int = 10,
                 rounds: int = 10) -> list[float]:
    """Mean forward latency per ``K``.

    Calls are timed in interleaved rounds so that slow drift of a shared
    machine affects every window length alike.
    """
    models = [_model(cfg, K).eval() for K in Ks]
    inputs = [_inputs(2 * K + 1, cfg.crop, 1) for K in Ks]
    for m, f0 in zip(models, inputs):
        for _ in range(warmup):
            m(f0)
    per_round = -(-calls // rounds)
    totals = [0.0] * len(Ks)
    for _ in range(rounds):
        for i, (m, f0) in enumerate(zip(models, inputs)):
            start = time.perf_counter()
            for _ in range(per_round):
                m(f0)
            totals[i] += time.perf_counter() - start
    return [t / (per_round * rounds) * 1e3 for t in totals]


def profile(cfg: TrainConfig, window_lengths=(1, 3, 5), calls: int = 100) -> list[dict]:
    """One row per window length ``N_f`` with peak memory (bytes) and latency (ms)."""
    for n_f in window_lengths:
        if n_f % 2 != 1:
            raise ValueError(f"window length must be odd, got {n_f}")
    Ks = [(n_f - 1) // 2 for n_f in window_lengths]
    lat = latencies_ms(cfg, Ks, calls=max(calls, 100))
    return [{"n_f": n_f, "peak_rss_bytes": peak_memory(cfg, K), "latency_ms": ms}
            for n_f, K, ms in zip(window_lengths, Ks, lat)]

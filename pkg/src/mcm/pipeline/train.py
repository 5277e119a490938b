"""Training loop, datasets and evaluation records."""

from __future__ import annotations

import logging
import math
from pathlib import Path

import numpy as np
import torch

from .. import metrics
from ..data import load_tensor, random_phantom_spec, synth_phantom
from ..encoder import WindowSpec, pair_images
from ..model import MCM, predict_sequence
from ..warp_loss import LossConfig, sim_loss, smooth_loss, warp
from .checkpoint import build_model
from .config import TrainConfig
from .optim import AdamState, adam_step

log = logging.getLogger(__name__)


# --------------------------------------------------------------------------
# datasets: lists of dicts with keys seq_id, frames [T,H,W], gt [T,2,H,W] | None,
# masks [T,H,W] | None

def phantom_dataset(n: int, seed: int = 0, T: int = 10, size: int = 32,
                    noise_sigma: float = 0.0) -> list[dict]:
    out = []
    for i in range(n):
        spec = random_phantom_spec(seed + i, T=T, size=size, noise_sigma=noise_sigma)
        frames, gt, masks = synth_phantom(spec)
        out.append({"seq_id": f"phantom_{seed + i}", "frames": frames, "gt": gt, "masks": masks})
    return out


def _center_crop(x: torch.Tensor, crop: int) -> torch.Tensor:
    H, W = x.shape[-2:]
    if H < crop or W < crop:
        raise ValueError(f"frame {H}x{W} smaller than crop {crop}")
    top, left = (H - crop) // 2, (W - crop) // 2
    return x[..., top:top + crop, left:left + crop]


def load_dataset(root, crop: int | None = None) -> list[dict]:
    """Load every ``seq.mcmt`` under ``root`` with its optional ``gt.mcmt``/``masks.mcmt``.

    Frames, fields and masks are center-cropped together when ``crop`` is set.
    """
    root = Path(root)
    paths = sorted(root.rglob("seq.mcmt"))
    if not paths:
        raise FileNotFoundError(f"no seq.mcmt under {root}")
    out = []
    for p in paths:
        item = {"seq_id": str(p.parent.relative_to(root)) if p.parent != root else root.name,
                "frames": load_tensor(p), "gt": None, "masks": None}
        for key in ("gt", "masks"):
            q = p.parent / f"{key}.mcmt"
            if q.exists():
                item[key] = load_tensor(q)
        if item["masks"] is not None:
            item["masks"] = item["masks"].round().long()
        if crop:
            for key in ("frames", "gt", "masks"):
                if item[key] is not None:
                    item[key] = _center_crop(item[key], crop)
        out.append(item)
    return out


def _batch(dataset, picks, K: int):
    f0, targets, refs = [], [], []
    for i, t in picks:
        frames = dataset[i]["frames"]
        f0.append(pair_images(frames, WindowSpec(t, K, frames.shape[0])))
        targets.append(frames[t])
        refs.append(frames[0])
    return torch.stack(f0), torch.stack(targets), torch.stack(refs)


def batch_loss(model: MCM, f0, targets, refs, lam: float):
    phi = model(f0)
    sim = sim_loss(targets, warp(refs, phi))
    smooth = smooth_loss(phi)
    return sim + LossConfig(lam).lam * smooth, sim, smooth


@torch.no_grad()
def dataset_loss(model: MCM, dataset, lam: float = 0.05) -> dict:
    """Mean loss terms over every (sequence, frame) pair of ``dataset``."""
    sims, smooths = [], []
    for i, item in enumerate(dataset):
        T = item["frames"].shape[0]
        f0, targets, refs = _batch(dataset, [(i, t) for t in range(T)], model.K)
        _, sim, smooth = batch_loss(model, f0, targets, refs, lam)
        sims.append(float(sim))
        smooths.append(float(smooth))
    sim, smooth = float(np.mean(sims)), float(np.mean(smooths))
    return {"sim": sim, "smooth": smooth, "loss": sim + lam * smooth}


def train(cfg: TrainConfig, dataset: list[dict] | None = None, model: MCM | None = None,
          state: AdamState | None = None):
    """Optimise the network on uniformly sampled (sequence, frame) targets.

    Returns ``(model, adam_state, records)`` with one loss record per epoch.
    """
    if dataset is None:
        dataset = phantom_dataset(cfg.n_train, seed=cfg.seed * 1000, T=cfg.T, size=cfg.crop,
                                  noise_sigma=cfg.noise_sigma)
    if not dataset:
        raise ValueError("empty dataset")
    torch.manual_seed(cfg.seed)
    if model is None:
        model = build_model(cfg)
    params = list(model.parameters())
    if state is None:
        state = AdamState.zeros_like(params)
    gen = torch.Generator().manual_seed(cfg.seed)
    records = []
    for epoch in range(cfg.epochs):
        acc = np.zeros(3)
        for _ in range(cfg.steps_per_epoch):
            seq_idx = torch.randint(len(dataset), (cfg.batch_size,), generator=gen).tolist()
            picks = []
            for i in seq_idx:
                T = dataset[i]["frames"].shape[0]
                picks.append((i, int(torch.randint(T, (1,), generator=gen))))
            f0, targets, refs = _batch(dataset, picks, cfg.K)
            try:
                loss, sim, smooth = batch_loss(model, f0, targets, refs, cfg.lam)
            except ValueError as exc:
                # activations overflowed inside the network after earlier updates
                if state.step == 0 or "non-finite" not in str(exc):
                    raise
                raise FloatingPointError(
                    f"diverged: non-finite activations at step {state.step + 1} (lr={cfg.lr})") from exc
            if not torch.isfinite(loss):
                raise FloatingPointError(
                    f"diverged: non-finite loss at step {state.step + 1} "
                    f"(sim={float(sim)}, smooth={float(smooth)}, lr={cfg.lr})")
            grads = torch.autograd.grad(loss, params)
            adam_step(params, grads, state, cfg.lr)
            if not all(torch.isfinite(p).all() for p in params):
                raise FloatingPointError(
                    f"diverged: non-finite parameters after step {state.step} (lr={cfg.lr})")
            acc += [loss.item(), sim.item(), smooth.item()]
        acc /= cfg.steps_per_epoch
        rec = {"epoch": epoch + 1, "step": state.step, "loss": acc[0], "sim": acc[1], "smooth": acc[2]}
        records.append(rec)
        log.info("epoch %d step %d loss %.6f sim %.6f smooth %.6f", *rec.values())
    return model, state, records


def evaluate(model: MCM, dataset: list[dict], frames=None, extra: dict | None = None) -> list[dict]:
    """One record per (sequence, requested frame).

    Motion is estimated for every frame of the cycle so the temporal
    consistency index is always computed over the full sequence.
    """
    model.eval()
    records = []
    for item in dataset:
        seq = item["frames"]
        T = seq.shape[0]
        fields = predict_sequence(seq, model).double()
        tc = metrics.temporal_consistency(fields)[1] if T >= 3 else math.nan
        wanted = range(T) if frames is None else [t for t in frames if 0 <= t < T]
        for t in wanted:
            phi = fields[t]
            neg, jm1 = metrics.jacobian_metrics(phi)
            rec = {"seq_id": item["seq_id"], "t": t, "dice": None, "neg_jac_pct": neg,
                   "mean_abs_jm1": jm1, "epe": None, "tc_index": tc,
                   "mean_disp": float(phi.norm(dim=0).mean())}
            if item.get("masks") is not None:
                warped = metrics.warp_labels(item["masks"][0], phi)
                rec["dice"] = metrics.dice(warped, item["masks"][t])
            else:
                rec["dice_missing"] = True
            if item.get("gt") is not None:
                rec["epe"] = metrics.endpoint_error(phi, item["gt"][t])
            if extra:
                rec.update(extra)
            records.append(rec)
    return records

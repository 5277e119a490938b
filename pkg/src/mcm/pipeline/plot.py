"""CSV and SVG figures from evaluation records and loss logs."""

from __future__ import annotations

import csv
import json
from collections import defaultdict
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402


def read_records(path) -> list[dict]:
    with open(path, encoding="utf-8") as fh:
        return [json.loads(line) for line in fh if line.strip()]


def read_loss_log(path) -> list[dict]:
    with open(path, newline="", encoding="utf-8") as fh:
        return [{k: float(v) for k, v in row.items()} for row in csv.DictReader(fh)]


def write_loss_log(path, records: list[dict]) -> None:
    if not records:
        Path(path).write_text("epoch,step,loss,sim,smooth\n", encoding="utf-8")
        return
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.DictWriter(fh, fieldnames=list(records[0]))
        w.writeheader()
        w.writerows(records)


def _label(path, recs):
    r = recs[0] if recs else {}
    if "K" in r:
        return f"N_f={2 * int(r['K']) + 1}"
    return Path(path).stem


def temporal_curves(record_files, out_dir) -> Path:
    """Mean displacement magnitude per frame, averaged over sequences, one line per run."""
    out_dir = Path(out_dir)
    rows, fig = [], plt.figure(figsize=(5, 3.5))
    for path in record_files:
        recs = read_records(path)
        by_t = defaultdict(list)
        for r in recs:
            by_t[r["t"]].append(r["mean_disp"])
        ts = sorted(by_t)
        curve = [float(np.mean(by_t[t])) for t in ts]
        label = _label(path, recs)
        tc = float(np.mean([r["tc_index"] for r in recs]))
        plt.plot(ts, curve, marker="o", ms=3, label=f"{label} (tc={tc:.4f})")
        rows += [{"run": label, "t": t, "mean_disp": c} for t, c in zip(ts, curve)]
    plt.xlabel("frame t")
    plt.ylabel("mean |phi_t| (px)")
    plt.legend(fontsize=8)
    plt.tight_layout()
    fig.savefig(out_dir / "temporal_consistency.svg")
    plt.close(fig)
    _write_csv(out_dir / "temporal_consistency.csv", rows)
    return out_dir / "temporal_consistency.svg"


def lambda_sweep(record_files, out_dir) -> Path | None:
    """Dice and folding percentage against the smoothness weight of each run."""
    out_dir = Path(out_dir)
    rows = []
    for path in record_files:
        recs = read_records(path)
        if not recs or "lam" not in recs[0]:
            continue
        dice = [r["dice"] for r in recs if r.get("dice") is not None]
        rows.append({"lam": recs[0]["lam"],
                     "dice": float(np.mean(dice)) if dice else float("nan"),
                     "neg_jac_pct": float(np.mean([r["neg_jac_pct"] for r in recs])),
                     "mean_abs_jm1": float(np.mean([r["mean_abs_jm1"] for r in recs]))})
    if len(rows) < 2:
        return None
    rows.sort(key=lambda r: r["lam"])
    fig, ax = plt.subplots(figsize=(5, 3.5))
    lams = [r["lam"] for r in rows]
    ax.plot(lams, [r["dice"] for r in rows], marker="o", label="Dice")
    ax.set_xlabel("lambda")
    ax.set_ylabel("Dice")
    ax2 = ax.twinx()
    ax2.plot(lams, [r["neg_jac_pct"] for r in rows], marker="s", color="tab:red", label="|J|<0 %")
    ax2.set_ylabel("|J|<0 %")
    fig.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(out_dir / "lambda_sweep.svg")
    plt.close(fig)
    _write_csv(out_dir / "lambda_sweep.csv", rows)
    return out_dir / "lambda_sweep.svg"


def loss_curves(loss_files, out_dir) -> Path:
    out_dir = Path(out_dir)
    rows, fig = [], plt.figure(figsize=(5, 3.5))
    for path in loss_files:
        recs = read_loss_log(path)
        steps = [r["step"] for r in recs]
        plt.plot(steps, [r["sim"] for r in recs], label=f"{Path(path).parent.name or Path(path).stem} sim")
        rows += [{"run": str(path), **r} for r in recs]
    plt.xlabel("optimizer step")
    plt.ylabel("similarity loss")
    plt.yscale("log")
    plt.legend(fontsize=8)
    plt.tight_layout()
    fig.savefig(out_dir / "loss.svg")
    plt.close(fig)
    _write_csv(out_dir / "loss.csv", rows)
    return out_dir / "loss.svg"


def _write_csv(path, rows):
    if not rows:
        return
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.DictWriter(fh, fieldnames=list(rows[0]))
        w.writeheader()
        w.writerows(rows)

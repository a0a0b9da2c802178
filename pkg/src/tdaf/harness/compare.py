"""Controlled comparison: attention model vs. single-flow baseline vs. the
multi-scale concatenation ablation, over several seeds on the same data."""
from __future__ import annotations

import csv
import logging
from pathlib import Path

import numpy as np

from .attention import attention_localization_score
from .config import RunConfig, assert_comparable
from .plots import plot_comparison, plot_training_curves
from .train import load_data, train

log = logging.getLogger(__name__)

TABLE_HEADER = ("model", "seed", "test_acc", "best_test_acc", "localization")


def variants(base: RunConfig) -> dict[str, RunConfig]:
    tdaf = base.replace(flows_mode="attention")
    baseline = base.replace(flows_mode="attention", flows_count=1)
    concat = base.replace(flows_mode="multiscale_concat")
    for other in (baseline, concat):
        assert_comparable(tdaf, other)
    return {"tdaf": tdaf, "baseline": baseline, "concat": concat}


def run_comparison(base: RunConfig, seeds: list[int], out_dir: str | Path) -> dict:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    data = load_data(base)
    rows, curves = [], {}
    for name, cfg in variants(base).items():
        for seed in seeds:
            run_cfg = cfg.replace(train_seed=seed)
            run_dir = out / f"{name}_seed{seed}"
            log.info("training %s seed %d", name, seed)
            res = train(run_cfg, run_dir, data=data)
            loc = ""
            if name == "tdaf":
                loc = attention_localization_score(res.model, data[1], run_cfg)
            rows.append(
                dict(model=name, seed=seed, test_acc=res.history[-1]["test_acc"], best_test_acc=res.best_test_acc, localization=loc)
            )
            curves[f"{name} s{seed}"] = res.metrics_path
    return write_table(rows, out, curves)


def write_table(rows: list[dict], out: Path, curves: dict | None = None) -> dict:
    with open(out / "comparison.csv", "w", newline="") as f:
        w = csv.DictWriter(f, TABLE_HEADER)
        w.writeheader()
        for r in rows:
            w.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in r.items()})
    med = {m: float(np.median([r["test_acc"] for r in rows if r["model"] == m])) for m in dict.fromkeys(r["model"] for r in rows)}
    summary = {f"median_{m}": v for m, v in med.items()}
    if "tdaf" in med and "baseline" in med:
        summary["gap_vs_baseline"] = med["tdaf"] - med["baseline"]
    if "tdaf" in med and "concat" in med:
        summary["gap_vs_concat"] = med["tdaf"] - med["concat"]
    locs = [r["localization"] for r in rows if r["model"] == "tdaf" and r["localization"] != ""]
    if locs:
        summary["median_localization"] = float(np.median(locs))
    lines = ["| model | seeds | median test acc (%) |", "|---|---|---|"]
    for m, v in med.items():
        lines.append(f"| {m} | {sum(r['model'] == m for r in rows)} | {100 * v:.2f} |")
    for k in ("gap_vs_baseline", "gap_vs_concat"):
        if k in summary:
            lines.append(f"| {k.replace('_', ' ')} | | {100 * summary[k]:+.2f} |")
    (out / "comparison.md").write_text("\n".join(lines) + "\n")
    plot_comparison(rows, out / "comparison.png")
    if curves:
        plot_training_curves(curves, out / "curves.png")
    return summary

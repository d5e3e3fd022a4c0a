"""Plot and summary-table emission from metrics CSV files."""

from __future__ import annotations

import csv
import json
from collections import defaultdict
from pathlib import Path

import matplotlib
matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np

from .errors import ConfigurationError, DatasetError


def _load_rows(csv_paths):
    rows = []
    for path in csv_paths:
        with open(path) as fh:
            for row in csv.DictReader(fh):
                rows.append({
                    "step": int(row["step"]),
                    "metric": row["metric"],
                    "value": float(row["value"]),
                    "seed": int(row["seed"]),
                    "variant": row["variant"],
                })
    return rows


def _check_hashes(csv_paths) -> None:
    hashes = set()
    for path in csv_paths:
        manifest = None
        for cand in sorted(Path(path).parent.glob("manifest_seed*.json")):
            manifest = json.loads(cand.read_text())
            break
        if manifest is not None:
            hashes.add(manifest["config_hash"])
    if len(hashes) > 1:
        raise ConfigurationError(
            f"refusing to mix runs with different config hashes: {hashes}")


def _curves(rows, metric):
    """variant -> (steps, mean, std) aggregated across seeds."""
    by_variant = defaultdict(lambda: defaultdict(dict))
    for row in rows:
        if row["metric"] == metric:
            by_variant[row["variant"]][row["step"]][row["seed"]] = row["value"]
    out = {}
    for variant, per_step in by_variant.items():
        steps = sorted(per_step)
        mean = np.array([np.mean(list(per_step[s].values())) for s in steps])
        std = np.array([np.std(list(per_step[s].values())) for s in steps])
        out[variant] = (np.array(steps), mean, std)
    return out


def summary_table(rows) -> str:
    """Deterministic text table, variants sorted by final mean success."""
    finals = defaultdict(dict)
    for row in rows:
        if row["metric"] == "final_success":
            finals[row["variant"]][row["seed"]] = row["value"]
    if not finals:
        raise DatasetError("no final_success rows found")
    entries = []
    for variant, per_seed in finals.items():
        vals = [per_seed[s] for s in sorted(per_seed)]
        entries.append((variant, float(np.mean(vals)), float(np.std(vals)),
                        len(vals)))
    entries.sort(key=lambda e: (-e[1], e[0]))
    lines = [f"{'variant':<16} {'mean_success':>12} {'std':>8} {'seeds':>6}"]
    for variant, mean, std, n in entries:
        lines.append(f"{variant:<16} {mean:>12.4f} {std:>8.4f} {n:>6d}")
    return "\n".join(lines) + "\n"


def emit_plots(runs_root, out_dir) -> list[Path]:
    """Write curve images and a summary table from all CSVs under a root."""
    runs_root = Path(runs_root)
    csv_paths = sorted(runs_root.rglob("metrics_*.csv"))
    if not csv_paths:
        raise DatasetError(f"no metrics CSVs under {runs_root}")
    _check_hashes(csv_paths)
    rows = _load_rows(csv_paths)
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written = []

    order = None
    try:
        table = summary_table(rows)
        path = out_dir / "summary_table.txt"
        path.write_text(table)
        written.append(path)
        order = [line.split()[0] for line in table.splitlines()[1:]]
    except DatasetError:
        pass

    curve_specs = [
        ("eval_success", "evaluation success rate", "success_curve.png"),
        ("eval_return", "evaluation return", "return_curve.png"),
        ("l_ft", "latent action finetuning loss", "loss_ft.png"),
        ("l_bc", "behavior cloning loss", "loss_bc.png"),
        ("l_lf", "feature pretraining loss", "loss_lf.png"),
        ("l_la", "latent action pretraining loss", "loss_la.png"),
        ("perplexity", "codebook perplexity", "perplexity.png"),
    ]
    for metric, label, fname in curve_specs:
        curves = _curves(rows, metric)
        if not curves:
            continue
        fig, ax = plt.subplots(figsize=(6, 4))
        variants = [v for v in (order or sorted(curves)) if v in curves]
        for variant in variants:
            steps, mean, std = curves[variant]
            ax.plot(steps, mean, label=variant)
            ax.fill_between(steps, mean - std, mean + std, alpha=0.25)
        ax.set_xlabel("environment steps")
        ax.set_ylabel(label)
        ax.legend()
        fig.tight_layout()
        path = out_dir / fname
        fig.savefig(path, dpi=110)
        plt.close(fig)
        written.append(path)
    return written

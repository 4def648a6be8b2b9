"""Aggregate evaluation reports into CSV/JSON tables and optional plots.

The summary CSV schema is fixed: columns (Dataset, Framework, Many, Medium,
Few, Std, All), one row per framework, with ``mean±std`` cells when several
seeds contribute. Per-seed and per-class detail goes to JSON; the per-run
balancedness Std values are kept there so both aggregations of Std (per run,
and mean±std over runs) are available.
"""

from __future__ import annotations

import csv
import io
import json
from pathlib import Path

import numpy as np

from .util import atomic_write_text

CSV_COLUMNS = ("Dataset", "Framework", "Many", "Medium", "Few", "Std", "All")


def _fmt(values):
    vals = [v for v in values if v is not None]
    if not vals:
        return "n/a"
    if len(vals) == 1:
        return f"{vals[0]:.2f}"
    return f"{np.mean(vals):.2f}±{np.std(vals):.2f}"


def summarize(entries):
    """Aggregate (framework, seed, EvalReport) rows by framework."""
    by_fw = {}
    for framework, seed, report in entries:
        by_fw.setdefault(framework, []).append((seed, report))
    rows = []
    for framework in sorted(by_fw):
        seeds_reports = by_fw[framework]
        cells = {}
        for col, key in (("Many", "many"), ("Medium", "medium"), ("Few", "few")):
            cells[col] = _fmt([r.group_acc.get(key) for _, r in seeds_reports])
        cells["Std"] = _fmt([r.std_groups for _, r in seeds_reports])
        cells["All"] = _fmt([r.all_acc for _, r in seeds_reports])
        rows.append((framework, cells))
    return rows


def emit_report(entries, out_dir, dataset="dataset", protocol="linear",
                plots=False, sparsity=None):
    """Write summary CSV + detail JSON (+ plots) for one protocol.

    ``entries`` is an iterable of (framework, seed, EvalReport). Returns the
    list of files written.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    entries = list(entries)
    if not entries:
        raise ValueError("emit_report needs at least one report")

    written = []
    buf = io.StringIO()
    w = csv.writer(buf)
    w.writerow(CSV_COLUMNS)
    for framework, cells in summarize(entries):
        w.writerow([dataset, framework, cells["Many"], cells["Medium"],
                    cells["Few"], cells["Std"], cells["All"]])
    csv_path = out_dir / f"summary_{protocol}.csv"
    atomic_write_text(csv_path, buf.getvalue())
    written.append(csv_path)

    detail = {
        "dataset": dataset,
        "protocol": protocol,
        "runs": [
            {"framework": fw, "seed": seed, **report.to_dict()}
            for fw, seed, report in entries
        ],
    }
    json_path = out_dir / f"detail_{protocol}.json"
    atomic_write_text(json_path, json.dumps(detail, sort_keys=True, indent=1))
    written.append(json_path)

    if plots:
        written.append(_plot_groups(entries, out_dir, dataset, protocol))
        if sparsity is not None:
            written.append(_plot_sparsity(sparsity, out_dir))
    return written


def _plot_groups(entries, out_dir, dataset, protocol):
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    rows = summarize(entries)
    groups = ("many", "medium", "few")
    frameworks = [fw for fw, _ in rows]
    by_fw = {}
    for fw, seed, rep in entries:
        by_fw.setdefault(fw, []).append(rep)
    fig, ax = plt.subplots(figsize=(6, 4))
    width = 0.8 / max(len(frameworks), 1)
    xs = np.arange(len(groups))
    for i, fw in enumerate(frameworks):
        vals = [np.mean([r.group_acc.get(g) or 0.0 for r in by_fw[fw]])
                for g in groups]
        ax.bar(xs + i * width, vals, width=width, label=fw)
    ax.set_xticks(xs + width * (len(frameworks) - 1) / 2)
    ax.set_xticklabels([g.capitalize() for g in groups])
    ax.set_ylabel("accuracy (%)")
    ax.set_title(f"{dataset}: {protocol} accuracy by class-size group")
    ax.legend()
    path = Path(out_dir) / f"groups_{protocol}.png"
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def _plot_sparsity(sparsity, out_dir):
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    names = [n for n, _ in sparsity.per_layer]
    fracs = [f for _, f in sparsity.per_layer]
    fig, ax = plt.subplots(figsize=(max(6, len(names) * 0.5), 4))
    ax.bar(range(len(names)), fracs)
    ax.axhline(sparsity.overall, color="k", ls="--", lw=1,
               label=f"overall {sparsity.overall:.2f}")
    ax.set_xticks(range(len(names)))
    ax.set_xticklabels(names, rotation=60, ha="right", fontsize=7)
    ax.set_ylabel("zero fraction")
    ax.set_title("per-layer sparsity (feed-forward order)")
    ax.legend()
    path = Path(out_dir) / "sparsity_layers.png"
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path

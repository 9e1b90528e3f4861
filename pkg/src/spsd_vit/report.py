"""Result collection and presentation.

Walks a runs directory for ``result.json`` files and renders accuracy
and calibration tables (text + CSV) plus blockwise-accuracy curves and
attention-heatmap grids (PNG).  Corrupt result files are skipped with a
warning; finding none at all is an error.
"""

import csv
import json
import sys
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np

from .errors import IngestError
from .protocol.runner import aggregate
from .protocol.trainer import RunResult

METHOD_ORDER = ("erm", "sd", "spsd")
METHOD_LABELS = {"erm": "ERM", "sd": "SD", "spsd": "SPSD"}


def collect_results(root, warn=None):
    """All parseable RunResults under ``root``, with their run directories."""
    root = Path(root)
    found = []
    for path in sorted(root.rglob("result.json")):
        try:
            payload = json.loads(path.read_text())
            found.extend(
                (RunResult.from_json_dict(d), path.parent) for d in payload["results"]
            )
        except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
            message = f"warning: skipping unreadable {path}: {exc}"
            (warn or (lambda m: print(m, file=sys.stderr)))(message)
    if not found:
        raise IngestError(f"no readable result.json files under {root}")
    return found


def _method_sort(results):
    present = {r.method for r, _ in results}
    return [m for m in METHOD_ORDER if m in present] + sorted(present - set(METHOD_ORDER))


def _group(results):
    """-> {method: [RunResult...]}, and the sorted target list."""
    by_method = {}
    targets = set()
    for r, _ in results:
        by_method.setdefault(r.method, []).append(r)
        targets.add(r.target_domain)
    return by_method, sorted(targets)


def _format_table(title, header, rows):
    widths = [max(len(str(h)), *(len(str(row[i])) for row in rows)) if rows else len(str(h))
              for i, h in enumerate(header)]
    lines = [title]
    lines.append("  ".join(str(h).ljust(w) for h, w in zip(header, widths)))
    lines.append("  ".join("-" * w for w in widths))
    for row in rows:
        lines.append("  ".join(str(c).ljust(w) for c, w in zip(row, widths)))
    return "\n".join(lines) + "\n"


def _table_rows(results, value, scale):
    by_method, targets = _group(results)
    rows = []
    for method in _method_sort(results):
        agg = aggregate(by_method[method], value=value)
        cells = [METHOD_LABELS.get(method, method)]
        for t in targets:
            entry = agg.per_target.get(t)
            if entry is None:
                cells.append("-")
            else:
                cells.append(f"{entry.mean * scale:.1f}±{entry.std * scale:.1f}")
        cells.append(f"{agg.overall_mean * scale:.1f}")
        rows.append(cells)
    return targets, rows


def accuracy_table(results):
    targets, rows = _table_rows(results, lambda r: r.target_accuracy, 100.0)
    header = ["method"] + [f"target {t}" for t in targets] + ["avg"]
    return _format_table("Target accuracy (%)", header, rows)


def calibration_table(results):
    parts = []
    for title, value in [
        ("Target ECE (1e-2)", lambda r: r.ece),
        ("Target SCE (1e-2)", lambda r: r.sce),
    ]:
        targets, rows = _table_rows(results, value, 100.0)
        header = ["method"] + [f"target {t}" for t in targets] + ["avg"]
        parts.append(_format_table(title, header, rows))
    return "\n".join(parts)


def _write_aggregate_csv(path, results):
    by_method, targets = _group(results)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["method", "target", "accuracy_mean", "accuracy_std",
                         "ece_mean", "sce_mean", "num_runs"])
        for method in _method_sort(results):
            acc = aggregate(by_method[method])
            ece_agg = aggregate(by_method[method], value=lambda r: r.ece)
            sce_agg = aggregate(by_method[method], value=lambda r: r.sce)
            for t in targets:
                if t not in acc.per_target:
                    continue
                writer.writerow([
                    method, t,
                    f"{acc.per_target[t].mean:.6f}", f"{acc.per_target[t].std:.6f}",
                    f"{ece_agg.per_target[t].mean:.6f}",
                    f"{sce_agg.per_target[t].mean:.6f}",
                    acc.per_target[t].count,
                ])


def _blockwise_figure(results, out_path):
    by_method, targets = _group(results)
    fig, axes = plt.subplots(
        1, len(targets), figsize=(4 * len(targets), 3.2), squeeze=False
    )
    for ax, t in zip(axes[0], targets):
        for method in _method_sort(results):
            runs = [r for r in by_method[method] if r.target_domain == t]
            if not runs:
                continue
            blocks = sorted(runs[0].per_block)
            curve = [np.mean([r.per_block[j] for r in runs]) * 100 for j in blocks]
            ax.plot(blocks, curve, marker="o", label=METHOD_LABELS.get(method, method))
        ax.set_title(f"target {t}")
        ax.set_xlabel("block")
        ax.set_ylabel("accuracy (%)")
        ax.grid(alpha=0.3)
        ax.legend()
    fig.tight_layout()
    fig.savefig(out_path, dpi=120)
    plt.close(fig)


def _heatmap_figure(results, out_path):
    """Image/heatmap pairs for the first run of each method that saved any."""
    picked = []
    seen = set()
    for r, run_dir in results:
        if r.method in seen:
            continue
        npz = run_dir / "heatmaps.npz"
        if npz.is_file():
            picked.append((r.method, npz))
            seen.add(r.method)
    if not picked:
        return False
    with np.load(picked[0][1]) as first:
        image_keys = [k for k in first.files if k.endswith("/images")]
        n_cols = int(first[image_keys[0]].shape[0]) if image_keys else 0
    if not n_cols:
        return False
    fig, axes = plt.subplots(
        2 * len(picked), n_cols, figsize=(2.0 * n_cols, 4.2 * len(picked)),
        squeeze=False,
    )
    for row, (method, npz_path) in enumerate(picked):
        with np.load(npz_path) as data:
            key = sorted(k for k in data.files if k.endswith("/images"))[0]
            base = key[: -len("/images")]
            images = data[key]
            maps = data[base + "/maps"]
        for col in range(n_cols):
            ax_img = axes[2 * row][col]
            ax_map = axes[2 * row + 1][col]
            ax_img.imshow(np.clip(images[col], 0, 1))
            ax_map.imshow(maps[col], cmap="inferno", vmin=0.0, vmax=1.0)
            for ax in (ax_img, ax_map):
                ax.set_xticks([])
                ax.set_yticks([])
            if col == 0:
                ax_img.set_ylabel(METHOD_LABELS.get(method, method))
                ax_map.set_ylabel("attention")
    fig.tight_layout()
    fig.savefig(out_path, dpi=120)
    plt.close(fig)
    return True


def write_report(runs_root, out_dir, log=print):
    """Render every table and figure; returns the list of files written."""
    results = collect_results(runs_root)
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written = []

    text = accuracy_table(results) + "\n" + calibration_table(results)
    (out_dir / "tables.txt").write_text(text)
    written.append(out_dir / "tables.txt")
    if log:
        log(text)

    _write_aggregate_csv(out_dir / "aggregate.csv", results)
    written.append(out_dir / "aggregate.csv")

    _blockwise_figure(results, out_dir / "blockwise_accuracy.png")
    written.append(out_dir / "blockwise_accuracy.png")

    if _heatmap_figure(results, out_dir / "attention_heatmaps.png"):
        written.append(out_dir / "attention_heatmaps.png")
    return written

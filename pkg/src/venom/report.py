"""Render the report figures from the delimited outputs.

Reads whatever artifacts exist in the output directory (report.csv,
embeddings.tsv + manifest.csv, noise_shift.csv) and writes, next to each
CSV, a matching PNG figure plus the plot-data CSVs that feed it. The
computational pipeline never renders; only this path touches matplotlib.
"""

import csv
from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt

from . import evalbench
from .lake import EmbeddingStore


def _render_loss_bars(report_path: Path, out_dir: Path) -> list:
    rows = evalbench.read_report(report_path)
    if not rows:
        return []
    plot_csv = out_dir / "plot_loss_bars.csv"
    evalbench.emit_plot_data("loss-bars", {"rows": rows}, plot_csv)

    arms = [row.arm for row in rows]
    x = range(len(arms))
    width = 0.35
    fig, (ax_err, ax_speed) = plt.subplots(1, 2, figsize=(10, 4))
    ax_err.bar([i - width / 2 for i in x], [row.rmse for row in rows], width, label="RMSE")
    ax_err.bar([i + width / 2 for i in x], [row.mae for row in rows], width, label="MAE")
    ax_err.set_xticks(list(x), arms, rotation=20)
    ax_err.set_ylabel("error")
    ax_err.set_title(f"{rows[0].experiment} (k={rows[0].k}, reps={rows[0].reps})")
    ax_err.legend()
    ax_speed.bar([i - width / 2 for i in x], [row.speedup for row in rows], width,
                 label="speedup")
    ax_speed.bar([i + width / 2 for i in x], [row.amortized_speedup for row in rows], width,
                 label="amortized")
    ax_speed.set_xticks(list(x), arms, rotation=20)
    ax_speed.set_ylabel("ratio")
    ax_speed.legend()
    fig.tight_layout()
    figure_path = out_dir / "loss_bars.png"
    fig.savefig(figure_path, dpi=150)
    plt.close(fig)
    return [plot_csv, figure_path]


def _manifest_groups(out_dir: Path) -> dict:
    """Group label per dataset id: the column count, the property the
    dimension-distinguishability plots care about."""
    manifest = out_dir / "manifest.csv"
    groups = {}
    if manifest.exists():
        with open(manifest, newline="", encoding="utf-8") as fh:
            for row in csv.DictReader(fh):
                groups[row["id"]] = f"c{row['cols']}"
    return groups


def _render_representation(store_path: Path, out_dir: Path) -> list:
    store = EmbeddingStore.load(store_path)
    embeddings = [store.get(i) for i in store.ids()]
    if len(embeddings) < 3 or store.k <= 2:
        return []
    groups = _manifest_groups(out_dir)
    plot_csv = out_dir / "plot_representation.csv"
    evalbench.emit_plot_data(
        "representation",
        {"embeddings": embeddings, "groups": groups, "dims": 2},
        plot_csv,
    )

    by_group: dict[str, list] = {}
    with open(plot_csv, newline="", encoding="utf-8") as fh:
        for row in csv.DictReader(fh):
            by_group.setdefault(row["group"], []).append(
                (float(row["pc1"]), float(row["pc2"]))
            )
    fig, ax = plt.subplots(figsize=(6, 5))
    for label in sorted(by_group):
        points = by_group[label]
        ax.scatter([p[0] for p in points], [p[1] for p in points],
                   label=label or "lake", s=24)
    ax.set_xlabel("pc1")
    ax.set_ylabel("pc2")
    ax.set_title("dataset embeddings (PCA)")
    if len(by_group) > 1:
        ax.legend(fontsize=8)
    fig.tight_layout()
    figure_path = out_dir / "representation.png"
    fig.savefig(figure_path, dpi=150)
    plt.close(fig)
    return [plot_csv, figure_path]


def _render_noise_shift(noise_csv: Path, out_dir: Path) -> list:
    levels, shifts = [], []
    with open(noise_csv, newline="", encoding="utf-8") as fh:
        for row in csv.DictReader(fh):
            levels.append(float(row["noise_level"]))
            shifts.append(float(row["euclidean_displacement"]))
    if not levels:
        return []
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.plot(levels, shifts, marker="o")
    ax.set_xlabel("noise fraction")
    ax.set_ylabel("embedding displacement")
    ax.set_title("embedding shift vs noise")
    fig.tight_layout()
    figure_path = out_dir / "noise_shift.png"
    fig.savefig(figure_path, dpi=150)
    plt.close(fig)
    return [figure_path]


def render_all(out_dir) -> list:
    """Render every figure the output directory has data for."""
    out_dir = Path(out_dir)
    written = []
    report_path = out_dir / "report.csv"
    if report_path.exists():
        written.extend(_render_loss_bars(report_path, out_dir))
    store_path = out_dir / "embeddings.tsv"
    if store_path.exists():
        written.extend(_render_representation(store_path, out_dir))
    noise_csv = out_dir / "noise_shift.csv"
    if noise_csv.exists():
        written.extend(_render_noise_shift(noise_csv, out_dir))
    return [str(p) for p in written]

"""Matplotlib rendering of training and analysis outputs to image files."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

_DPI = 150


def plot_loss_curves(records: list[dict], path: str | Path) -> Path:
    """Per-epoch loss components from training report rows."""
    path = Path(path)
    epochs = [r["epoch"] for r in records]
    fig, ax = plt.subplots(figsize=(7, 4.2))
    for key, style in (("total", "-"), ("kl", "--"), ("rec", "--"), ("cos", ":"), ("cls", "--")):
        ax.plot(epochs, [r[key] for r in records], style, label=key, linewidth=1.4)
    ax.set_xlabel("epoch")
    ax.set_ylabel("loss")
    ax.grid(alpha=0.3)
    ax.legend(ncol=5, fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=_DPI)
    plt.close(fig)
    return path


def plot_stage_difference(
    diff: np.ndarray, title: str, path: str | Path
) -> Path:
    """Heatmap of per-edge change between two stage means."""
    path = Path(path)
    vmax = float(np.abs(diff).max()) or 1.0
    fig, ax = plt.subplots(figsize=(5.4, 4.6))
    im = ax.imshow(diff, cmap="RdBu_r", vmin=-vmax, vmax=vmax)
    ax.set_title(title, fontsize=10)
    ax.set_xlabel("ROI")
    ax.set_ylabel("ROI")
    fig.colorbar(im, ax=ax, shrink=0.85, label="delta")
    fig.tight_layout()
    fig.savefig(path, dpi=_DPI)
    plt.close(fig)
    return path


def plot_top_connections(pair: dict, path: str | Path) -> Path:
    """Horizontal bars of the strongest increased and decreased connections."""
    path = Path(path)
    fig, axes = plt.subplots(1, 2, figsize=(9.5, 3.8))
    for ax, direction, color in (
        (axes[0], "increased", "#b2182b"),
        (axes[1], "decreased", "#2166ac"),
    ):
        entries = pair[direction]
        labels = [f"{e['a']} - {e['b']}" for e in entries]
        values = [e["delta"] for e in entries]
        y = np.arange(len(entries))
        ax.barh(y, values, color=color)
        ax.set_yticks(y)
        ax.set_yticklabels(labels, fontsize=8)
        ax.invert_yaxis()
        ax.set_title(f"{direction} ({pair['from']} to {pair['to']})", fontsize=10)
        ax.set_xlabel("delta")
        ax.grid(axis="x", alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=_DPI)
    plt.close(fig)
    return path


def render_analysis_figures(
    report: dict, diffs: dict[tuple[str, str], np.ndarray], out_dir: str | Path, stem: str
) -> list[Path]:
    """Write one heatmap and one bar chart per stage pair next to the report."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written = []
    for pair in report["stage_pairs"]:
        key = (pair["from"], pair["to"])
        tag = f"{pair['from'].lower()}_{pair['to'].lower()}"
        written.append(
            plot_stage_difference(
                diffs[key],
                f"{pair['from']} to {pair['to']} ({report['source']})",
                out_dir / f"{stem}_{tag}_diff.png",
            )
        )
        written.append(plot_top_connections(pair, out_dir / f"{stem}_{tag}_top.png"))
    return written

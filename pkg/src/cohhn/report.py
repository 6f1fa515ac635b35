"""Figures and delimited tables written next to evaluation reports."""

from __future__ import annotations

from pathlib import Path
from typing import Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

from .metrics import EvalReport  # noqa: E402

GOLDEN = (5 ** 0.5 - 1) / 2
STYLE = {
    "font.size": 9,
    "axes.labelsize": 9,
    "legend.fontsize": 8,
    "xtick.labelsize": 8,
    "ytick.labelsize": 8,
    "axes.spines.top": False,
    "axes.spines.right": False,
}


def _figure(width: float = 5.0):
    fig, ax = plt.subplots(figsize=(width, width * GOLDEN))
    ax.grid(axis="y", alpha=0.3)
    return fig, ax


def plot_price_levels(report: EvalReport, path: str | Path) -> Path:
    """Grouped bars of Prec@k and MRR@k per label price level."""
    k = report.level_k
    levels = sorted(report.per_level)
    with plt.rc_context(STYLE):
        fig, ax = _figure()
        x = range(len(levels))
        ax.bar([i - 0.2 for i in x], [report.per_level[lv][f"Prec@{k}"] for lv in levels],
               width=0.4, label=f"Prec@{k}")
        ax.bar([i + 0.2 for i in x], [report.per_level[lv][f"MRR@{k}"] for lv in levels],
               width=0.4, label=f"MRR@{k}")
        ax.set_xticks(list(x))
        ax.set_xticklabels([str(lv) for lv in levels])
        ax.set_xlabel("price level of target item")
        ax.set_ylabel("%")
        ax.set_title(report.model)
        ax.legend(frameon=False)
        fig.tight_layout()
        fig.savefig(path, dpi=120)
        plt.close(fig)
    return Path(path)


def sweep_rows(param: str, values: Sequence, reports: Sequence[EvalReport]) -> list[dict]:
    rows = []
    for value, rep in zip(values, reports):
        rows.append({param: value, **rep.overall})
    return rows


def write_sweep_csv(param: str, values: Sequence, reports: Sequence[EvalReport],
                    path: str | Path) -> Path:
    rows = sweep_rows(param, values, reports)
    cols = [param] + list(reports[0].overall)
    lines = [",".join(cols)] + [",".join(str(r[c]) for c in cols) for r in rows]
    Path(path).write_text("\n".join(lines) + "\n")
    return Path(path)


def plot_sweep(param: str, values: Sequence, reports: Sequence[EvalReport],
               path: str | Path) -> Path:
    """One line per metric against the swept hyper-parameter."""
    with plt.rc_context(STYLE):
        fig, ax = _figure()
        positions = list(range(len(values)))
        for metric in reports[0].overall:
            ax.plot(positions, [r.overall[metric] for r in reports], marker="o", label=metric)
        ax.set_xticks(positions)
        ax.set_xticklabels([str(v) for v in values])
        ax.set_xlabel(param)
        ax.set_ylabel("%")
        ax.legend(frameon=False, ncol=2)
        fig.tight_layout()
        fig.savefig(path, dpi=120)
        plt.close(fig)
    return Path(path)

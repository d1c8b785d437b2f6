"""Plot-ready tables from experiment results, and PNG renderings of them."""

from __future__ import annotations

import math
from pathlib import Path

import numpy as np

from .errors import InputError
from .experiment import BIAS_COLUMNS, bias_table, rows_to_csv, summarize

FIGURES = ("runtime", "sd", "median", "bias")

TABLE_COLUMNS = {
    "runtime": ["domain", "G", "method", "cov", "median_runtime_ms", "median_ec_ms", "median_total_ms"],
    "sd": ["domain", "G", "method", "cov", "sd_threshold", "n_ok"],
    "median": ["domain", "G", "method", "cov", "median_threshold", "empirical_threshold",
               "continuous_threshold", "bracketed"],
    "bias": BIAS_COLUMNS,
}


def plot_table(rows, figure: str) -> list:
    """Reduce long-format result rows to the table behind one figure."""
    if figure not in FIGURES:
        raise InputError(f"unknown figure {figure!r}; choose from {', '.join(FIGURES)}")
    summary = summarize(rows)
    if figure == "bias":
        return bias_table(summary)
    if figure == "median":
        for s in summary:
            lo, hi, m = s["empirical_threshold"], s["continuous_threshold"], s["median_threshold"]
            s["bracketed"] = "" if math.isnan(lo) or math.isnan(hi) else str(lo <= m <= hi).lower()
    return summary


def table_csv(table, figure: str) -> str:
    return rows_to_csv(table, TABLE_COLUMNS[figure])


_YLABEL = {
    "runtime": "median runtime (ms)",
    "sd": "sd of threshold",
    "median": "median threshold",
}


def render(table, figure: str, path) -> Path:
    """Draw one figure to ``path`` (PNG); one panel per domain, one line per covariance option."""
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    path = Path(path)
    if figure == "bias":
        fig, ax = plt.subplots(figsize=(6, 3.5))
        labels = [f"{r['domain']}/{r['cov']}" for r in table]
        vals = [r.get("extrapolation_bias", math.nan) for r in table]
        at_max = [r.get("bias_at_max_G", math.nan) for r in table]
        x = np.arange(len(labels))
        ax.bar(x - 0.2, vals, 0.4, label="extrapolated")
        ax.bar(x + 0.2, at_max, 0.4, label="largest G")
        ax.axhline(0, color="k", lw=0.8)
        ax.set_xticks(x, labels, rotation=30, ha="right")
        ax.set_ylabel("threshold bias")
        ax.legend()
    else:
        domains = list(dict.fromkeys(r["domain"] for r in table))
        fig, axes = plt.subplots(1, len(domains), figsize=(4 * len(domains), 3.5), squeeze=False)
        for ax, dom in zip(axes[0], domains):
            sub = [r for r in table if r["domain"] == dom]
            for cov in dict.fromkeys(r["cov"] for r in sub):
                pts = sorted((r["G"], r) for r in sub if r["cov"] == cov)
                G = [p[0] for p in pts]
                key = {"runtime": "median_total_ms", "sd": "sd_threshold",
                       "median": "median_threshold"}[figure]
                ax.plot(G, [p[1][key] for p in pts], marker="o", label=cov.upper())
            if figure == "median":
                pts = sorted({(r["G"], r["empirical_threshold"]) for r in sub})
                if not all(math.isnan(v) for _, v in pts):
                    ax.plot([p[0] for p in pts], [p[1] for p in pts], "k:", marker="x", label="empirical")
                ax.axhline(sub[0]["continuous_threshold"], color="k", lw=0.8, ls="--", label="continuous")
            if figure == "runtime":
                ax.set_yscale("log")
            ax.set_xscale("log")
            ax.set_title(dom)
            ax.set_xlabel("grid size G")
            ax.set_ylabel(_YLABEL[figure])
            ax.legend(fontsize="small")
    fig.tight_layout()
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(path, dpi=100)
    plt.close(fig)
    return path

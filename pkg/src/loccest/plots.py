"""Figure rendering for the CLI report paths.

Each report command can write a PNG sibling next to its delimited
output.  Rendering is file-only (Agg backend); nothing here opens
windows.
"""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402  (backend must be set first)

from .asymptotics import CmComparison, CoefficientSeries  # noqa: E402
from .estimator import FidelityReport  # noqa: E402


def plot_coefficient_series(series: CoefficientSeries,
                            comparison: CmComparison | None,
                            path: str | Path) -> Path:
    """c_N = N(1-F) against N with the extrapolated and bound coefficients."""
    fig, ax = plt.subplots(figsize=(6.0, 4.0))
    n = series.copy_counts
    c = series.coefficients
    errs = [e.stderr for e in series.entries]
    if all(err is not None for err in errs):
        ax.errorbar(n, c, yerr=errs, fmt="o-", capsize=3, label="$c_N$")
    else:
        ax.plot(n, c, "o-", label="$c_N$")
    if comparison is not None:
        ax.axhline(comparison.c_extrapolated, color="C1", linestyle="-",
                   linewidth=1.0,
                   label=f"extrapolated {comparison.c_extrapolated:.4f}")
        ax.axhline(comparison.cm_coefficient, color="C3", linestyle="--",
                   linewidth=1.0,
                   label=f"collective bound {comparison.cm_coefficient:.4f}")
    ax.set_xscale("log")
    ax.set_xlabel("copies $N$")
    ax.set_ylabel("$N(1-F)$")
    ax.set_title(f"fidelity deficit coefficient, scheme {series.scheme}")
    ax.legend(loc="best", fontsize=9)
    ax.grid(alpha=0.3)
    path = Path(path)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
    return path


def plot_fidelity_table(rows: list[tuple[int, float]],
                        path: str | Path) -> Path:
    """Optimized fidelity against copy count."""
    fig, ax = plt.subplots(figsize=(6.0, 4.0))
    ns = [n for n, _ in rows]
    fs = [f for _, f in rows]
    ax.plot(ns, fs, "o-", label="optimized LOCC")
    ax.plot(ns, [(n + 1.0) / (n + 2.0) for n in ns], "s--", color="C3",
            label="collective bound $(N+1)/(N+2)$")
    ax.set_xlabel("copies $N$")
    ax.set_ylabel("average fidelity $F$")
    ax.set_title("optimized average fidelity")
    ax.legend(loc="lower right", fontsize=9)
    ax.grid(alpha=0.3)
    path = Path(path)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
    return path


def plot_branch_report(report: FidelityReport, path: str | Path,
                       max_branches: int = 64) -> Path:
    """Per-branch probability and branch-vector norm diagnostics."""
    records = report.per_branch[:max_branches]
    fig, ax = plt.subplots(figsize=(7.0, 4.0))
    idx = range(len(records))
    ax.bar(idx, [r.probability for r in records], width=0.8, alpha=0.6,
           label="branch probability $p(x)$")
    ax.bar(idx, [r.v_norm for r in records], width=0.5, alpha=0.9,
           label="branch vector norm $|V(x)|$")
    if len(records) <= 16:
        ax.set_xticks(list(idx))
        ax.set_xticklabels([r.branch for r in records], rotation=45,
                           fontsize=7)
    ax.set_xlabel("outcome branch")
    ax.set_title(f"F = {report.F:.9f} ({report.method}, N = {report.N})")
    ax.legend(loc="best", fontsize=9)
    ax.grid(alpha=0.3, axis="y")
    path = Path(path)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
    return path

"""Figure rendering for the report path.

PNGs are conveniences rendered next to the delimited outputs; the CSVs stay
the canonical, byte-reproducible record.  Rendering never touches a display
server.
"""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402


def render_trace_figure(trace, out_path, title: str = "training objective"):
    """Objective curves of a single run: samples, EMA, deterministic value."""
    fig, ax = plt.subplots(figsize=(7, 4.5))
    it = trace.iters
    if any(s is not None for s in trace.stochastic_obj):
        ax.plot(it, trace.stochastic_obj, color="#9ecae1", lw=0.6, label="stochastic sample")
        ax.plot(it, trace.ema_obj, color="#17becf", lw=1.6, label="EMA")
        ax.plot(it, trace.deterministic_obj, color="#d62728", lw=1.2, label="deterministic")
    else:
        ax.plot(it, trace.deterministic_obj, color="#d62728", lw=1.4, label="objective")
    ax.set_yscale("log")
    ax.set_xlabel("iteration")
    ax.set_ylabel("objective")
    ax.set_title(title)
    ax.legend(loc="upper right", fontsize=8)
    fig.tight_layout()
    fig.savefig(out_path, dpi=130)
    plt.close(fig)
    return Path(out_path)


def render_equivalence_figure(results, out_path):
    """Grid of cells: smoothed stochastic objective over its deterministic twin."""
    thetas = sorted({t for t, _ in results})
    ds = sorted({d for _, d in results})
    fig, axes = plt.subplots(len(ds), len(thetas),
                             figsize=(4.2 * len(thetas), 3.2 * len(ds)),
                             squeeze=False)
    for i, d in enumerate(ds):
        for j, theta in enumerate(thetas):
            ax = axes[i][j]
            cell = results[(theta, d)]
            stoch = cell["stochastic"]
            det = cell["deterministic"]
            ax.plot(stoch.iters, stoch.stochastic_obj, color="#9ecae1", lw=0.4,
                    label="stochastic sample")
            ax.plot(stoch.iters, stoch.ema_obj, color="#17becf", lw=1.4, label="EMA")
            ax.plot(det.iters, det.deterministic_obj, color="#d62728", lw=1.1,
                    label="deterministic run")
            ax.set_yscale("log")
            ax.set_title(f"theta={theta:g}, d={d}", fontsize=9)
            if i == len(ds) - 1:
                ax.set_xlabel("iteration")
            if j == 0:
                ax.set_ylabel("objective")
            if i == 0 and j == 0:
                ax.legend(fontsize=7)
    fig.tight_layout()
    fig.savefig(out_path, dpi=130)
    plt.close(fig)
    return Path(out_path)


def render_spectrum_figure(reports, out_path):
    """Per-width semilog spectra of the three regularization routes."""
    ds = sorted({r.d for r in reports})
    colors = {"fixed": "#000000", "adaptive": "#7f7f7f", "closed_form": "#2ca02c"}
    fig, axes = plt.subplots(1, len(ds), figsize=(4.2 * len(ds), 3.6), squeeze=False)
    for j, d in enumerate(ds):
        ax = axes[0][j]
        for r in reports:
            if r.d != d:
                continue
            idx = range(1, len(r.singulars) + 1)
            floor = max(r.singulars.max(), 1e-300) * 1e-17
            ax.semilogy(idx, r.singulars + floor, marker="o", ms=3, lw=1,
                        color=colors.get(r.method, None), label=r.method)
        ax.set_title(f"d={d}", fontsize=10)
        ax.set_xlabel("singular value index")
        if j == 0:
            ax.set_ylabel("singular value")
            ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(out_path, dpi=130)
    plt.close(fig)
    return Path(out_path)

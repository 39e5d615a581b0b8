"""Figure rendering for run and validation outputs.

Everything draws through the Agg backend straight to files; nothing here is
needed by the inference path, which stays CSV/JSON only.
"""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from .metrics import aggregate_runs

plt.rcParams.update({
    "figure.dpi": 120,
    "axes.grid": True,
    "grid.alpha": 0.3,
    "font.size": 9,
})

_METHOD_COLORS = {"pmpnbp": "tab:blue", "pf": "tab:orange"}


def convergence_figure(rows, parts, path):
    """Per-part median ADD vs iteration with a bootstrap confidence band.

    ``rows`` are results tuples (run_id, iteration, part_id, add_m, method).
    """
    methods = sorted({r[4] for r in rows})
    cols = len(parts)
    fig, axes = plt.subplots(1, cols, figsize=(3.2 * cols, 3.0), sharey=True, squeeze=False)
    for ax, part in zip(axes[0], parts):
        for method in methods:
            traces = {}
            for run_id, iteration, part_id, add_m, m in rows:
                if part_id != part or m != method:
                    continue
                traces.setdefault(run_id, []).append((iteration, add_m))
            if not traces:
                continue
            series = [np.array([v for _, v in sorted(t)]) for t in traces.values()]
            agg = aggregate_runs(series)
            iters = np.arange(len(agg["median"]))
            color = _METHOD_COLORS.get(method)
            ax.plot(iters, agg["median"], label=method, color=color)
            ax.fill_between(iters, agg["ci_lo"], agg["ci_hi"], alpha=0.25, color=color)
        ax.set_title(part)
        ax.set_xlabel("iteration")
    axes[0][0].set_ylabel("ADD (m)")
    axes[0][0].legend()
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)


def marginals_figure(result, particle_coords, path):
    """Grid marginals against particle-belief histograms, one panel per node.

    ``particle_coords`` maps node id to arrays of chain coordinates from the
    particle beliefs (one array per run; pooled for display).
    """
    nodes = list(result.nodes)
    fig, axes = plt.subplots(1, len(nodes), figsize=(3.2 * len(nodes), 3.0), squeeze=False)
    for ax, node in zip(axes[0], nodes):
        centers = result.centers[node]
        width = centers[1] - centers[0]
        ax.plot(centers, result.marginals[node] / width, color="tab:green", label="grid")
        coords = np.concatenate([np.asarray(c) for c in particle_coords[node]])
        ax.hist(coords, bins=40, density=True, alpha=0.4, color="tab:blue", label="particles")
        ax.axvline(result.means[node], color="tab:green", ls="--", lw=0.8)
        ax.set_title(node)
        ax.set_xlabel("chain coordinate (m)")
    axes[0][0].set_ylabel("density")
    axes[0][0].legend()
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)

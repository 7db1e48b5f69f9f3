"""Report figures: net-value curves, mixture weights and training curves."""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

STYLE = {
    "font.size": 9,
    "axes.labelsize": 9,
    "axes.titlesize": 10,
    "legend.fontsize": 8,
    "xtick.labelsize": 8,
    "ytick.labelsize": 8,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "lines.linewidth": 1.2,
}
# PNG metadata left empty so identical data gives identical bytes
_SAVE_KW = {"dpi": 120, "metadata": {"Software": None}}


def figsize(scale: float = 1.0, ratio: float = (np.sqrt(5.0) - 1.0) / 2.0):
    width = 6.4 * scale
    return width, width * ratio


def _save(fig, path):
    fig.tight_layout()
    fig.savefig(path, **_SAVE_KW)
    plt.close(fig)


def plot_net_values(curves: dict, path, title: str = "Net value on the test range") -> None:
    """``curves`` maps strategy name to a net-value array; each is rebased to 1."""
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=figsize())
        for name, v in curves.items():
            v = np.asarray(v, dtype=float)
            ax.plot(np.arange(len(v)), v / v[0], label=name)
        ax.set_xlabel("minute")
        ax.set_ylabel("net value / initial")
        ax.set_title(title)
        ax.legend(loc="best", frameon=False)
        _save(fig, path)


def plot_weights(weights, path, labels=None, prices=None) -> None:
    """Stacked mixture weights over time, optionally with the price on a twin axis."""
    w = np.asarray(weights, dtype=float)
    labels = labels or [f"w{i + 1}" for i in range(w.shape[1])]
    x = np.arange(len(w))
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=figsize())
        ax.stackplot(x, w.T, labels=labels, alpha=0.85)
        ax.set_ylim(0, 1)
        ax.set_xlabel("minute")
        ax.set_ylabel("weight")
        if prices is not None:
            ax2 = ax.twinx()
            ax2.plot(x, np.asarray(prices)[:len(x)], color="black", linewidth=0.8)
            ax2.set_ylabel("close")
        ax.legend(loc="upper left", ncol=3, frameon=False)
        _save(fig, path)


def plot_training_curves(curves: dict, path) -> None:
    """``curves`` maps agent label to rows ``(epoch, val_return, loss)``."""
    with plt.rc_context(STYLE):
        fig, (a1, a2) = plt.subplots(1, 2, figsize=figsize(1.3, 0.4))
        for name, rows in curves.items():
            rows = np.asarray(rows, dtype=float)
            if rows.size == 0:
                continue
            a1.plot(rows[:, 0], rows[:, 1], marker="o", markersize=3, label=name)
            a2.plot(rows[:, 0], rows[:, 2], marker="o", markersize=3, label=name)
        a1.set_xlabel("epoch")
        a1.set_ylabel("validation return")
        a2.set_xlabel("epoch")
        a2.set_ylabel("mean loss")
        a1.legend(loc="best", frameon=False)
        _save(fig, path)


def plot_metrics(table: dict, path, metric: str = "TR") -> None:
    """Bar chart of one metric across strategies; absent values are skipped."""
    names = [k for k, v in table.items() if v.get(metric) is not None]
    vals = [table[k][metric] for k in names]
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=figsize())
        ax.bar(names, vals, color="0.45")
        ax.axhline(0.0, color="black", linewidth=0.6)
        ax.set_ylabel(metric)
        ax.tick_params(axis="x", rotation=30)
        _save(fig, path)

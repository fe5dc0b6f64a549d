"""Report figures written next to the delimited outputs of the pipeline stages."""

from __future__ import annotations

import os
import tempfile
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from xlsent.sentiment import LABELS  # noqa: E402

STYLE = {
    "font.size": 9,
    "axes.titlesize": 10,
    "axes.labelsize": 9,
    "legend.fontsize": 8,
    "xtick.labelsize": 8,
    "ytick.labelsize": 8,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "figure.dpi": 100,
    "savefig.bbox": "tight",
}


def _save(fig, path):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix="." + path.stem, suffix=".png")
    os.close(fd)
    try:
        fig.savefig(tmp, format="png", metadata={"Software": None})
        os.replace(tmp, path)
    finally:
        plt.close(fig)
        if os.path.exists(tmp):
            os.unlink(tmp)
    return path


def plot_loss_traces(traces: dict, path, ylabel="mean loss", title=None):
    """One line per named trace, x axis in epochs."""
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(4.5, 3))
        for name, trace in traces.items():
            if len(trace):
                ax.plot(np.arange(1, len(trace) + 1), trace, marker="o", ms=3, label=name)
        ax.set_xlabel("epoch")
        ax.set_ylabel(ylabel)
        if title:
            ax.set_title(title)
        if any(len(t) for t in traces.values()):
            ax.legend(frameon=False)
        return _save(fig, path)


def plot_refine_traces(traces: dict, path):
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(4.5, 3))
        for name, sizes in traces.items():
            if len(sizes):
                ax.plot(np.arange(1, len(sizes) + 1), sizes, marker="s", ms=3, label=name)
        ax.set_xlabel("refinement iteration")
        ax.set_ylabel("induced dictionary size")
        if any(len(t) for t in traces.values()):
            ax.legend(frameon=False)
        return _save(fig, path)


def plot_p_at_k(metrics: dict, path):
    """Grouped bars of P@k per language pair; `metrics` maps name -> {k: value}."""
    names = list(metrics)
    ks = sorted({int(k) for m in metrics.values() for k in m})
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(max(3.5, 1.2 * len(names) + 1), 3))
        width = 0.8 / max(len(ks), 1)
        x = np.arange(len(names))
        for j, k in enumerate(ks):
            vals = [metrics[n].get(k, metrics[n].get(str(k), 0.0)) for n in names]
            ax.bar(x + (j - (len(ks) - 1) / 2) * width, vals, width, label=f"P@{k}")
        ax.set_xticks(x)
        ax.set_xticklabels(names)
        ax.set_ylim(0, 1)
        ax.set_ylabel("precision")
        ax.legend(frameon=False, ncol=len(ks), loc="lower center", bbox_to_anchor=(0.5, 1.0))
        return _save(fig, path)


def plot_confusions(reports: dict, path):
    """Grid of 2x2 confusion matrices (rows gold, columns predicted)."""
    n = max(len(reports), 1)
    with plt.rc_context(STYLE):
        fig, axes = plt.subplots(1, n, figsize=(2.2 * n, 2.4), squeeze=False)
        for ax, (lang, rep) in zip(axes[0], reports.items()):
            conf = np.array(rep.confusion)
            ax.imshow(conf, cmap="Blues", vmin=0, vmax=max(conf.max(), 1))
            for i in range(2):
                for j in range(2):
                    ax.text(j, i, str(conf[i, j]), ha="center", va="center",
                            color="white" if conf[i, j] > conf.max() / 2 else "black")
            ax.set_xticks([0, 1])
            ax.set_xticklabels(LABELS)
            ax.set_yticks([0, 1])
            ax.set_yticklabels(LABELS)
            ax.set_title(lang)
            ax.set_xlabel("predicted")
        axes[0][0].set_ylabel("gold")
        return _save(fig, path)


def plot_accuracy(reports: dict, path, chance=0.5):
    names = list(reports)
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(max(3.5, 0.8 * len(names) + 1), 3))
        ax.bar(names, [reports[n].accuracy for n in names], color="0.4")
        ax.axhline(chance, ls="--", lw=0.8, color="0.2")
        ax.set_ylim(0, 1)
        ax.set_ylabel("accuracy")
        return _save(fig, path)

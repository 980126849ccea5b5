"""Figure rendering for report commands. File output only, no display."""
from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

# Fixed metadata keeps repeat renders byte-comparable.
_META = {"Software": "laqkd"}
_DPI = 150


def save_sweep_figure(angles, probabilities, path) -> None:
    """Guess probability against measurement angle, optimum marked."""
    angles = np.asarray(angles, dtype=float)
    probabilities = np.asarray(probabilities, dtype=float)
    best = int(np.argmax(probabilities))
    fig, ax = plt.subplots(figsize=(6.4, 4.0))
    ax.plot(angles, probabilities, lw=1.2, color="tab:blue")
    ax.axvline(angles[best], color="tab:red", ls="--", lw=0.9)
    ax.annotate(f"max {probabilities[best]:.4f} at {angles[best]:.4f} rad",
                xy=(angles[best], probabilities[best]),
                xytext=(0.4, 0.2), textcoords="axes fraction",
                arrowprops={"arrowstyle": "->", "lw": 0.8})
    ax.set_xlabel("measurement angle (rad)")
    ax.set_ylabel("value guess probability")
    ax.set_title("Intercept accuracy sweep")
    ax.grid(True, lw=0.3, alpha=0.5)
    fig.tight_layout()
    fig.savefig(path, dpi=_DPI, metadata=_META)
    plt.close(fig)


def save_metrics_figure(reports, path) -> None:
    """Grouped bars: qubit efficiency and basis recycling per protocol."""
    labels = [r.protocol for r in reports]
    qe = [r.qe for r in reports]
    recycle = [r.recycling["basis"] for r in reports]
    x = np.arange(len(labels))
    width = 0.38
    fig, ax = plt.subplots(figsize=(6.4, 4.0))
    ax.bar(x - width / 2, qe, width, label="qubit efficiency", color="tab:blue")
    ax.bar(x + width / 2, recycle, width, label="basis key reuse", color="tab:orange")
    ax.set_xticks(x)
    ax.set_xticklabels(labels)
    ax.set_ylim(0.0, 1.05)
    ax.set_ylabel("fraction")
    ax.set_title("Protocol resource metrics")
    ax.legend(loc="lower right")
    ax.grid(True, axis="y", lw=0.3, alpha=0.5)
    fig.tight_layout()
    fig.savefig(path, dpi=_DPI, metadata=_META)
    plt.close(fig)


def save_attack_figure(values: dict, path, title: str = "Attack report") -> None:
    """Horizontal bars for the scalar fields of an attack report."""
    items = [(k, float(v)) for k, v in values.items()
             if isinstance(v, (int, float)) and not isinstance(v, bool)]
    names = [k for k, _ in items]
    vals = [v for _, v in items]
    fig, ax = plt.subplots(figsize=(6.4, 0.6 * max(len(items), 3) + 1.2))
    y = np.arange(len(items))
    ax.barh(y, vals, color="tab:blue")
    ax.set_yticks(y)
    ax.set_yticklabels(names)
    ax.invert_yaxis()
    for yi, v in zip(y, vals):
        ax.annotate(f"{v:.4g}", xy=(v, yi), xytext=(3, 0),
                    textcoords="offset points", va="center", fontsize=8)
    ax.set_xlabel("value")
    ax.set_title(title)
    fig.tight_layout()
    fig.savefig(path, dpi=_DPI, metadata=_META)
    plt.close(fig)


def save_abort_figure(aggregate: dict, path) -> None:
    """Abort/complete split for a batch of runs."""
    aborts = aggregate["aborts"]
    completed = aggregate["completed"]
    fig, ax = plt.subplots(figsize=(5.0, 4.0))
    ax.bar(["completed", "aborted"], [completed, aborts],
           color=["tab:green", "tab:red"])
    ax.set_ylabel("runs")
    ax.set_title(f"Session outcomes over {aggregate['trials']} trials")
    for i, v in enumerate([completed, aborts]):
        ax.annotate(str(v), xy=(i, v), xytext=(0, 3),
                    textcoords="offset points", ha="center")
    fig.tight_layout()
    fig.savefig(path, dpi=_DPI, metadata=_META)
    plt.close(fig)

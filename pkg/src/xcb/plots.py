"""Figure rendering for the report paths. Figures are written as SVG next
to the delimited outputs; the SVG backend is salted so repeated runs
produce stable bytes."""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402

plt.rcParams["svg.hashsalt"] = "xcb"

_SAVE_KW = {"format": "svg", "metadata": {"Date": None}}

_LOSS_KEYS = ["l_asr", "l_bias", "l_ce_2nd", "l_total"]
_RATE_KEYS = ["mer", "bmer", "bcer", "bwer"]


def plot_loss_curves(epoch_rows: list[dict], path) -> None:
    """Per-component training loss against epoch."""
    fig, ax = plt.subplots(figsize=(6, 4))
    epochs = [row["epoch"] for row in epoch_rows]
    for key in _LOSS_KEYS:
        ax.plot(epochs, [row[key] for row in epoch_rows], marker="o", label=key)
    ax.set_xlabel("epoch")
    ax.set_ylabel("mean loss")
    ax.legend()
    ax.grid(True, alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, **_SAVE_KW)
    plt.close(fig)


def plot_eval_metrics(report: dict, path) -> None:
    """Bar chart of the error rates from one evaluation report."""
    fig, ax = plt.subplots(figsize=(6, 4))
    keys = [k for k in _RATE_KEYS if report.get(k) is not None]
    ax.bar(keys, [report[k] for k in keys], color="#4878d0")
    ax.set_ylabel("error rate")
    ax.grid(True, axis="y", alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, **_SAVE_KW)
    plt.close(fig)


def plot_ablation(rows: list[dict], path) -> None:
    """Grouped bars comparing systems on the headline rates (median rows)."""
    systems = [row["system"] for row in rows]
    fig, ax = plt.subplots(figsize=(7, 4))
    width = 0.8 / len(_RATE_KEYS)
    for k, key in enumerate(_RATE_KEYS):
        xs = [i + k * width for i in range(len(systems))]
        ys = [row[key] if row[key] is not None else 0.0 for row in rows]
        ax.bar(xs, ys, width=width, label=key)
    ax.set_xticks([i + 1.5 * width for i in range(len(systems))])
    ax.set_xticklabels(systems)
    ax.set_ylabel("error rate (median over seeds)")
    ax.legend()
    ax.grid(True, axis="y", alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, **_SAVE_KW)
    plt.close(fig)

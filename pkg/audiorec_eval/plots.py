"""Figures of a run: training curves per trained pair and the grouped HitRate comparison."""
import logging
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import seaborn as sns  # noqa: E402

from .mappings import map_metric_labels, map_model_labels  # noqa: E402

logger = logging.getLogger(__name__)


def plot_history(history, title, path):
    """Train loss and validation metric over epochs, two stacked panels."""
    fig, (ax_loss, ax_val) = plt.subplots(2, 1, figsize=(10, 7), sharex=True)
    ax_loss.plot(history["epoch"], history["train_loss"], marker=".")
    ax_loss.set_ylabel("train loss")
    ax_loss.grid()
    ax_val.plot(history["epoch"], history["val_metric"], marker=".", color="tab:orange")
    ax_val.set_ylabel("validation NDCG")
    ax_val.set_xlabel("epoch")
    ax_val.grid()
    ax_loss.set_title(title)
    plt.tight_layout()
    plt.savefig(path, dpi=150)
    plt.close(fig)
    logger.info("history plot saved under: %s", path)
    return Path(path)


def plot_comparison(comparison, path, metric="hitrate", k=50):
    """Bar chart of ``metric`` per variant, one hue per model, from a ``comparison_frame``."""
    data = comparison.assign(model=comparison["model"].map(lambda m: map_model_labels.get(m, m)))
    fig, ax = plt.subplots(figsize=(10, 7))
    sns.barplot(data=data, x="variant", y=metric, hue="model", ax=ax,
                order=list(dict.fromkeys(data["variant"])))
    ax.set_ylabel(map_metric_labels[metric].format(k=k))
    ax.set_xlabel("embeddings")
    ax.grid(axis="y")
    fig.autofmt_xdate()
    plt.tight_layout()
    plt.savefig(path, dpi=150)
    plt.close(fig)
    logger.info("comparison plot saved under: %s", path)
    return Path(path)

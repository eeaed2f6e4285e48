"""Comparison table of a run: one section per model, one row per embedding variant."""
import logging
from pathlib import Path

import numpy as np
import pandas as pd

from .constants import RANDOM_VARIANT, ModelKind
from .diagnostics import DataError
from .mappings import map_metric_labels, map_model_labels

logger = logging.getLogger(__name__)

REPORT_METRICS = ("hitrate", "recall", "ndcg")
REPORT_ORDERS = ("reference", "group")
REPORTS_DIR = "reports"


def collect_summaries(run_dir):
    """All ``*.summary.csv`` files of a run (or of a reports directory) as one frame."""
    run_dir = Path(run_dir)
    directory = run_dir / REPORTS_DIR if (run_dir / REPORTS_DIR).is_dir() else run_dir
    paths = sorted(directory.glob("*.summary.csv"))
    if not paths:
        raise DataError(f"no metric reports found in {directory}")
    frame = pd.concat([pd.read_csv(p, dtype={"variant": str}) for p in paths], ignore_index=True)
    dupes = frame.duplicated(["model", "variant"])
    if dupes.any():
        row = frame.loc[dupes].iloc[0]
        raise DataError(f"two reports for {row['model']}/{row['variant']} in {directory}")
    return frame


def _model_rank(model):
    return ModelKind.all.index(model) if model in ModelKind.all else len(ModelKind.all)


def order_rows(summaries, order="reference"):
    """Sort summary rows into report order.

    ``group``: ascending HitRate inside each model section. ``reference``: every variant keeps the
    position it has in the first model section that contains it, variants that first appear in a
    later section come first; so rows line up across sections.
    """
    if order not in REPORT_ORDERS:
        raise ValueError(f"order must be one of {REPORT_ORDERS}, got {order!r}")
    frame = summaries.copy()
    frame["_model_rank"] = frame["model"].map(_model_rank)
    if order == "group":
        frame["_key1"], frame["_key2"] = 0, frame["hitrate"]
    else:
        first = frame.sort_values("_model_rank", kind="mergesort").drop_duplicates("variant")
        first_rank = dict(zip(first["variant"], first["_model_rank"]))
        first_hit = dict(zip(first["variant"], first["hitrate"]))
        frame["_key1"] = -frame["variant"].map(first_rank)
        frame["_key2"] = frame["variant"].map(first_hit)
    frame = frame.sort_values(["_model_rank", "model", "_key1", "_key2", "variant"], kind="mergesort")
    return frame.drop(columns=["_model_rank", "_key1", "_key2"]).reset_index(drop=True)


def mark_best(frame, metrics=REPORT_METRICS):
    """Adds ``best_<metric>`` flags: the maximum inside each model section (ties all flagged)."""
    frame = frame.copy()
    for metric in metrics:
        best = frame.groupby("model")[metric].transform("max")
        frame[f"best_{metric}"] = np.isclose(frame[metric], best, rtol=0, atol=1e-12)
    return frame


def comparison_frame(summaries, order="reference", metrics=REPORT_METRICS, alpha=0.05):
    frame = mark_best(order_rows(summaries, order), metrics)
    p_col = f"p_vs_{RANDOM_VARIANT}"
    if p_col not in frame.columns:
        frame[p_col] = np.nan
    frame["significant_vs_random"] = frame[p_col] < alpha
    columns = ["model", "variant"] + list(metrics) + [f"best_{m}" for m in metrics] + [p_col,
                                                                                       "significant_vs_random"]
    return frame[columns]


def format_table(frame, k, metrics=REPORT_METRICS, alpha=0.05):
    """Plain-text rendering: best values starred, ``+`` marks a significant difference to Random."""
    headers = ["Embeddings"] + [map_metric_labels[m].format(k=k) for m in metrics]
    rows = []
    for _, row in frame.iterrows():
        label = row["variant"] + ("+" if row["significant_vs_random"] else "")
        cells = [f"{row[m]:.3f}" + ("*" if row[f"best_{m}"] else "") for m in metrics]
        rows.append((row["model"], [label] + cells))
    widths = [max([len(h)] + [len(r[1][i]) for r in rows]) + 2 for i, h in enumerate(headers)]
    total = sum(widths)

    def line(cells):
        return "".join(c.ljust(w) for c, w in zip(cells, widths)).rstrip()

    out = [line(headers)]
    current = None
    for model, cells in rows:
        if model != current:
            current = model
            out.append(f" {map_model_labels.get(model, model)} ".center(total, "-").rstrip())
        out.append(line(cells))
    out.append("")
    out.append("* best value in the model section")
    if frame["significant_vs_random"].any():
        out.append(f"+ differs from {RANDOM_VARIANT} (paired bootstrap over users, p < {alpha})")
    return "\n".join(out) + "\n"


def render_report(run_dir, order="reference", metrics=REPORT_METRICS, alpha=0.05, write=True):
    """Render the comparison table of a run directory.

    Writes ``report.txt`` and ``comparison.csv`` into ``run_dir`` unless ``write`` is False.

    :return: (text, comparison frame)
    """
    run_dir = Path(run_dir)
    summaries = collect_summaries(run_dir)
    k_values = summaries["k"].unique()
    if len(k_values) != 1:
        raise DataError(f"reports mix different K values: {sorted(k_values)}")
    frame = comparison_frame(summaries, order, metrics, alpha)
    text = format_table(frame, int(k_values[0]), metrics, alpha)
    if write:
        (run_dir / "report.txt").write_text(text)
        frame.to_csv(run_dir / "comparison.csv", index=False, float_format="%.10g")
        logger.info("wrote report for %d rows to %s", len(frame), run_dir)
    return text, frame

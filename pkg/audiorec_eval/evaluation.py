"""Top-K ranking metrics, per-user aggregation and paired significance tests."""
import logging
import re
from pathlib import Path

import attr
import numpy as np
import pandas as pd
from scipy import stats
from tqdm import tqdm

from .constants import METRICS
from .diagnostics import DataError

logger = logging.getLogger(__name__)

SIGNIFICANCE_TEST = "paired bootstrap over users (two-sided)"


@attr.s(frozen=True)
class MetricValues:
    hitrate = attr.ib()
    recall = attr.ib()
    ndcg = attr.ib()
    mrr = attr.ib()
    precision = attr.ib()

    def as_tuple(self):
        return attr.astuple(self)


def _discounts(k):
    return 1.0 / np.log2(np.arange(2, k + 2, dtype=np.float64))


def metrics_at_k(ranking, relevant, k):
    """HitRate, Recall, NDCG, MRR and Precision of one ranking against a binary relevance set.

    ``ranking`` is a sequence of item indices (best first) or a ``Ranking``; only its first ``k``
    entries count. Precision divides by ``k`` even when the ranking is shorter.
    """
    items = getattr(ranking, "items", ranking)
    top = np.asarray(items, dtype=np.int64)[:k]
    relevant = np.unique(np.asarray(list(relevant), dtype=np.int64))
    if relevant.size == 0:
        raise DataError("empty relevant set")
    if np.unique(top).size != top.size:
        raise DataError("ranking contains duplicate items")
    discounts = _discounts(k)
    hit_pos = np.flatnonzero(np.isin(top, relevant))
    n_hits = hit_pos.size
    dcg = discounts[hit_pos].sum()
    idcg = discounts[:min(relevant.size, k)].sum()
    return MetricValues(
        hitrate=1.0 if n_hits else 0.0,
        recall=n_hits / relevant.size,
        ndcg=float(dcg / idcg),
        mrr=1.0 / (hit_pos[0] + 1) if n_hits else 0.0,
        precision=n_hits / k,
    )


def aggregate(per_user):
    """User-uniform arithmetic means of every metric column."""
    if len(per_user) == 0:
        raise DataError("cannot aggregate an empty metric table")
    return per_user[list(METRICS)].mean(axis=0)


def _safe_name(text):
    return re.sub(r"[^A-Za-z0-9_.-]+", "_", str(text))


@attr.s(eq=False, repr=False)
class MetricReport:
    """Per-user metric values of one (model, variant) pair on one partition."""

    model = attr.ib()
    variant = attr.ib()
    k = attr.ib()
    per_user = attr.ib()
    test = attr.ib(default=SIGNIFICANCE_TEST)
    pvalues = attr.ib(factory=dict)

    @property
    def means(self):
        return aggregate(self.per_user)

    @property
    def stem(self):
        return f"{_safe_name(self.model)}__{_safe_name(self.variant)}"

    def summary_frame(self):
        row = {"model": self.model, "variant": self.variant, "k": self.k, "n_users": len(self.per_user)}
        row.update(self.means.to_dict())
        row["test"] = self.test
        for other, p in sorted(self.pvalues.items()):
            row[f"p_vs_{other}"] = p
        return pd.DataFrame([row])

    def save(self, directory, user_map=None):
        """Write ``<model>__<variant>.per_user.csv`` and ``.summary.csv``; returns both paths."""
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        per_user = self.per_user.copy()
        if user_map is not None:
            per_user.insert(1, "user_id", user_map.externals(per_user["user"].to_numpy()))
        per_user_path = directory / f"{self.stem}.per_user.csv"
        summary_path = directory / f"{self.stem}.summary.csv"
        per_user.to_csv(per_user_path, index=False, float_format="%.10g")
        self.summary_frame().to_csv(summary_path, index=False, float_format="%.10g")
        return per_user_path, summary_path

    @classmethod
    def load(cls, summary_path):
        summary_path = Path(summary_path)
        summary = pd.read_csv(summary_path).iloc[0]
        per_user_path = summary_path.with_name(summary_path.name.replace(".summary.csv", ".per_user.csv"))
        per_user = pd.read_csv(per_user_path, dtype={"user_id": str})
        pvalues = {c[len("p_vs_"):]: float(summary[c]) for c in summary.index
                   if c.startswith("p_vs_") and pd.notna(summary[c])}
        return cls(model=summary["model"], variant=str(summary["variant"]), k=int(summary["k"]),
                   per_user=per_user, test=summary.get("test", SIGNIFICANCE_TEST), pvalues=pvalues)

    def __repr__(self):
        means = ", ".join(f"{m}={v:.4f}" for m, v in self.means.items())
        return "<MetricReport(%s/%s @%d, %d users: %s)>" % (
            self.model, self.variant, self.k, len(self.per_user), means)


def evaluate_rankings(rankings, relevance, k, model=None, variant=None):
    """Score ``rankings`` against per-user relevance sets; users without a ranking score zero."""
    rows = []
    for user in sorted(relevance):
        ranking = rankings[user] if user in rankings else ()
        values = metrics_at_k(ranking, relevance[user], k)
        rows.append((user,) + values.as_tuple())
    per_user = pd.DataFrame(rows, columns=["user"] + list(METRICS))
    return MetricReport(model=model, variant=variant, k=k, per_user=per_user)


def bootstrap_significance(a, b, n_resamples=10000, seed=0, progress=False):
    """Two-sided paired bootstrap p-value for mean(a - b) over users.

    The p-value is twice the share of resampled mean differences lying on the far side of zero from
    the observed difference (capped at 1); no observed difference gives 1.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape or a.ndim != 1:
        raise DataError(f"paired samples must be aligned 1-D vectors, got {a.shape} and {b.shape}")
    n = a.size
    if n < 2:
        raise DataError(f"bootstrap needs at least 2 users, got {n}")
    diff = a - b
    observed = diff.mean()
    if observed == 0:
        return 1.0
    rng = np.random.default_rng(seed)
    chunk = max(1, 2_000_000 // n)
    crossing = 0
    for start in tqdm(range(0, n_resamples, chunk), desc="bootstrap", disable=not progress):
        size = min(chunk, n_resamples - start)
        means = diff[rng.integers(0, n, size=(size, n))].mean(axis=1)
        crossing += int((means <= 0).sum() if observed > 0 else (means >= 0).sum())
    return min(1.0, 2.0 * crossing / n_resamples)


def paired_ttest(a, b):
    """Paired t-test p-value (scipy); degenerate zero-variance differences give 1 or 0."""
    diff = np.asarray(a, dtype=np.float64) - np.asarray(b, dtype=np.float64)
    if np.allclose(diff, diff[0]):
        return 1.0 if diff[0] == 0 else 0.0
    return float(stats.ttest_rel(a, b).pvalue)


def _aligned(report_a, report_b, metric):
    merged = report_a.per_user[["user", metric]].merge(
        report_b.per_user[["user", metric]], on="user", suffixes=("_a", "_b"), validate="one_to_one")
    if len(merged) != len(report_a.per_user) or len(merged) != len(report_b.per_user):
        raise DataError(f"reports {report_a.variant} and {report_b.variant} cover different users")
    return merged[f"{metric}_a"].to_numpy(), merged[f"{metric}_b"].to_numpy()


def compare_reports(report_a, report_b, metric="hitrate", n_resamples=10000, seed=0):
    """Bootstrap p-value of ``metric`` between two reports over their common users."""
    a, b = _aligned(report_a, report_b, metric)
    return bootstrap_significance(a, b, n_resamples=n_resamples, seed=seed)


def significance_matrix(reports, metric="hitrate", n_resamples=10000, seed=0, method="bootstrap"):
    """Symmetric matrix of pairwise p-values between the variants of one model group.

    ``method`` is "bootstrap" (paired bootstrap) or "ttest" (paired t-test).
    """
    if method not in ("bootstrap", "ttest"):
        raise ValueError(f"unknown significance method {method!r}")
    labels = [r.variant for r in reports]
    matrix = pd.DataFrame(np.ones((len(reports), len(reports))), index=labels, columns=labels)
    for i, report_a in enumerate(reports):
        for j in range(i + 1, len(reports)):
            if method == "ttest":
                p = paired_ttest(*_aligned(report_a, reports[j], metric))
            else:
                p = compare_reports(report_a, reports[j], metric, n_resamples, seed)
            matrix.iloc[i, j] = matrix.iloc[j, i] = p
    matrix.index.name = "variant"
    return matrix

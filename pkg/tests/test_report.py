import numpy as np
import pandas as pd
import pytest
from pytest import fixture

from audiorec_eval.diagnostics import DataError
from audiorec_eval.report import collect_summaries, comparison_frame, order_rows, render_report

VARIANTS = ["MusicFM", "MFCC", "Music2Vec", "MERT", "EncodecMAE", "Jukebox", "MusiCNN"]

PUBLISHED = {
    "knn": [(0.009, 0.000, 0.000), (0.028, 0.001, 0.001), (0.033, 0.002, 0.001), (0.049, 0.003, 0.002),
            (0.054, 0.003, 0.002), (0.057, 0.003, 0.002), (0.089, 0.005, 0.004)],
    "shallow": [(0.021, 0.001, 0.001), (0.108, 0.007, 0.005), (0.226, 0.018, 0.013), (0.291, 0.029, 0.021),
                (0.291, 0.030, 0.021), (0.296, 0.031, 0.021), (0.272, 0.029, 0.020), (0.329, 0.037, 0.025)],
    "seqrec": [(0.348, 0.049, 0.038), (0.261, 0.021, 0.016), (0.231, 0.019, 0.014), (0.281, 0.025, 0.020),
               (0.360, 0.051, 0.038), (0.349, 0.050, 0.038), (0.219, 0.015, 0.012), (0.385, 0.058, 0.044)],
}


def _published_rows():
    rows = []
    for model, values in PUBLISHED.items():
        variants = VARIANTS if model == "knn" else ["Random"] + VARIANTS
        for variant, (hitrate, recall, ndcg) in zip(variants, values):
            rows.append({"model": model, "variant": variant, "k": 50, "n_users": 1000, "hitrate": hitrate,
                         "recall": recall, "ndcg": ndcg, "mrr": 0.0, "precision": 0.0})
    return pd.DataFrame(rows)


@fixture
def published_run(tmp_path):
    reports = tmp_path / "reports"
    reports.mkdir()
    for _, row in _published_rows().iterrows():
        row.to_frame().T.to_csv(reports / f"{row['model']}__{row['variant']}.summary.csv", index=False)
    return tmp_path


def test_reference_order_reproduces_table(published_run):
    _, frame = render_report(published_run, write=False)
    assert frame.loc[frame["model"] == "knn", "variant"].tolist() == VARIANTS
    for model in ("shallow", "seqrec"):
        assert frame.loc[frame["model"] == model, "variant"].tolist() == ["Random"] + VARIANTS
    assert frame["model"].drop_duplicates().tolist() == ["knn", "shallow", "seqrec"]


def test_group_order_ascending(published_run):
    _, frame = render_report(published_run, order="group", write=False)
    shallow = frame[frame["model"] == "shallow"]
    assert shallow["hitrate"].is_monotonic_increasing
    assert shallow["variant"].tolist() == ["Random", "MusicFM", "MFCC", "Jukebox", "MERT", "Music2Vec",
                                           "EncodecMAE", "MusiCNN"]


def test_musicnn_best_everywhere(published_run):
    text, frame = render_report(published_run)
    for metric in ("hitrate", "recall", "ndcg"):
        best = frame.loc[frame[f"best_{metric}"], ["model", "variant"]]
        assert best.values.tolist() == [["knn", "MusiCNN"], ["shallow", "MusiCNN"], ["seqrec", "MusiCNN"]]
    line = [ln for ln in text.splitlines() if ln.startswith("MusiCNN") and "0.385" in ln]
    assert len(line) == 1
    assert line[0].split() == ["MusiCNN", "0.385*", "0.058*", "0.044*"]
    assert "BERT4Rec" in text and "Shallow Net" in text and "KNN" in text
    assert (published_run / "report.txt").read_text() == text
    assert len(pd.read_csv(published_run / "comparison.csv")) == 23


def test_ties_all_flagged():
    rows = _published_rows()
    rows.loc[(rows["model"] == "seqrec") & (rows["variant"] == "MERT"), "ndcg"] = 0.044
    frame = comparison_frame(rows)
    seqrec = frame[frame["model"] == "seqrec"]
    assert seqrec.loc[seqrec["best_ndcg"], "variant"].tolist() == ["MERT", "MusiCNN"]
    assert frame.loc[frame["model"] == "knn", "best_ndcg"].sum() == 1


def test_order_ignores_input_order():
    rows = _published_rows()
    shuffled = rows.sample(frac=1.0, random_state=3).reset_index(drop=True)
    assert order_rows(shuffled).equals(order_rows(rows))
    assert order_rows(shuffled, "group").equals(order_rows(rows, "group"))
    with pytest.raises(ValueError):
        order_rows(rows, "alphabetical")


def test_significance_marker():
    rows = _published_rows()
    rows["p_vs_Random"] = np.nan
    rows.loc[(rows["model"] == "shallow") & (rows["variant"] == "MusiCNN"), "p_vs_Random"] = 0.001
    rows.loc[(rows["model"] == "shallow") & (rows["variant"] == "MFCC"), "p_vs_Random"] = 0.2
    frame = comparison_frame(rows)
    flagged = frame.loc[frame["significant_vs_random"], ["model", "variant"]].values.tolist()
    assert flagged == [["shallow", "MusiCNN"]]


def test_single_report(tmp_path):
    _published_rows().iloc[[0]].to_csv(tmp_path / "knn__MusicFM.summary.csv", index=False)
    text, frame = render_report(tmp_path)
    assert len(frame) == 1
    assert frame["best_hitrate"].all()
    assert "MusicFM" in text


def test_empty_run(tmp_path):
    with pytest.raises(DataError, match="no metric reports"):
        render_report(tmp_path)


def test_mixed_k(tmp_path):
    rows = _published_rows().iloc[:2].copy()
    rows["k"] = [50, 10]
    for i, (_, row) in enumerate(rows.iterrows()):
        row.to_frame().T.to_csv(tmp_path / f"r{i}.summary.csv", index=False)
    with pytest.raises(DataError, match="K values"):
        render_report(tmp_path)


def test_duplicate_reports(tmp_path):
    row = _published_rows().iloc[[0]]
    row.to_csv(tmp_path / "a.summary.csv", index=False)
    row.to_csv(tmp_path / "b.summary.csv", index=False)
    with pytest.raises(DataError, match="two reports"):
        collect_summaries(tmp_path)

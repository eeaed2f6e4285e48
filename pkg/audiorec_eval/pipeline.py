"""Full comparison sweep: split once, then train / rank / evaluate every (model, variant) pair."""
import json
import logging
import platform
import warnings
from pathlib import Path

import attr
import numpy as np
import pandas as pd
import scipy
import sqlalchemy

from . import __version__
from .constants import RANDOM_VARIANT, InitMode, ModelKind, Partition
from .dataAccessLayer import DataAccessLayer
from .diagnostics import DataError, DataWarning
from .evaluation import compare_reports, evaluate_rankings, significance_matrix
from .ingest import load_embedding_source, load_interaction_source
from .knn import build_user_profiles, item_matrix, recommend_knn
from .plots import plot_comparison, plot_history
from .records import PairResult, Significance
from .report import REPORTS_DIR, render_report
from .seqrec import build_sequences, init_seqrec, recommend_seqrec, train_seqrec
from .shallow import init_shallow, recommend_shallow, train_shallow
from .split import prior_events, sanitize_and_partition, save_split, split_report, temporal_split

logger = logging.getLogger(__name__)

MANIFEST_NAME = "manifest.json"


@attr.s(eq=False)
class RunResult:
    run_dir = attr.ib()
    reports = attr.ib()
    failures = attr.ib()
    manifest = attr.ib()

    @property
    def exit_code(self):
        if not self.reports:
            return 1
        return 2 if self.failures else 0


@attr.s(eq=False)
class PairOutcome:
    rankings = attr.ib()
    params = attr.ib(default=None)
    history = attr.ib(default=None)


def _stem(model, variant):
    return f"{model}__{variant}"


def _load_tables(config):
    tables, failures = {}, {}
    for name in sorted(config.embeddings):
        try:
            tables[name] = load_embedding_source(config.embeddings[name], backend=config.backends.get(name))
        except (OSError, ValueError) as err:
            logger.error("embedding variant %s failed to load: %s", name, err)
            failures[name] = f"{type(err).__name__}: {err}"
    return tables, failures


def _pairs(config, variants):
    pairs = []
    for model in config.models:
        names = list(variants)
        if model != ModelKind.KNN and config.include_random:
            names = [RANDOM_VARIANT] + names
        pairs.extend((model, name) for name in names)
    return pairs


def _run_pair(model, variant, split, table, config, users, dataset_cache, progress=False):
    mode = InitMode.RandomUnfrozen if variant == RANDOM_VARIANT else InitMode.PretrainedFrozen
    if model == ModelKind.KNN:
        items = item_matrix(split, table)
        profiles = build_user_profiles(split, items)
        return PairOutcome(recommend_knn(profiles, items, split.seen, config.k, users=users, progress=progress))
    if model == ModelKind.Shallow:
        cfg = attr.evolve(config.shallow, progress=progress or config.shallow.progress)
        params = init_shallow(split, table, mode=mode, seed=cfg.seed, margin=cfg.margin, dtype=cfg.dtype,
                              dim=cfg.random_dim if mode == InitMode.RandomUnfrozen else None)
        params, history = train_shallow(params, split, cfg)
        return PairOutcome(recommend_shallow(params, split.seen, config.k, users=users, progress=progress),
                           params, history)
    if model == ModelKind.SeqRec:
        cfg = attr.evolve(config.seqrec, progress=progress or config.seqrec.progress)
        if "dataset" not in dataset_cache:
            dataset_cache["dataset"] = build_sequences(split, cfg.max_len)
        dataset = dataset_cache["dataset"]
        params = init_seqrec(split, cfg, table, mode=mode)
        params, history = train_seqrec(params, dataset, cfg, validation=split.relevance(Partition.Validation),
                                       seen=split.seen)
        return PairOutcome(recommend_seqrec(params, dataset, split.seen, config.k, users=users, progress=progress),
                           params, history)
    raise DataError(f"unknown model {model!r}")


def _versions():
    return {"audiorec_eval": __version__, "python": platform.python_version(), "numpy": np.__version__,
            "pandas": pd.__version__, "scipy": scipy.__version__, "sqlalchemy": sqlalchemy.__version__}


def _add_significance(reports, config, run_dir):
    """p-values against Random on every report, plus one pairwise matrix per model group.

    Skipped with a ``DataWarning`` when fewer than 2 test users are scored.
    """
    matrices = {}
    n_users = min(len(r.per_user) for r in reports.values())
    if n_users < 2:
        msg = f"significance tests need at least 2 test users, got {n_users}; p-values skipped"
        logger.warning(msg)
        warnings.warn(msg, DataWarning)
        return matrices
    for model in ModelKind.all:
        group = [r for (m, _), r in sorted(reports.items()) if m == model]
        baseline = reports.get((model, RANDOM_VARIANT))
        if baseline is not None:
            for report in group:
                if report is not baseline:
                    report.pvalues[RANDOM_VARIANT] = compare_reports(
                        report, baseline, config.significance_metric, config.bootstrap_resamples,
                        config.bootstrap_seed)
        if len(group) >= 2:
            matrix = significance_matrix(group, config.significance_metric, config.bootstrap_resamples,
                                         config.bootstrap_seed)
            directory = run_dir / "significance"
            directory.mkdir(exist_ok=True)
            matrix.to_csv(directory / f"{model}.{config.significance_metric}.csv", float_format="%.10g")
            matrices[model] = matrix
    return matrices


def _store_results(config, run_dir, split, reports, failures, matrices):
    url = config.results_db or f"sqlite:///{(run_dir / 'results.sqlite').as_posix()}"
    dal = DataAccessLayer(url)
    try:
        run = dal.add_run(runName=run_dir.name, configHash=config.config_hash(), seed=config.split.user_half_split_seed,
                          k=config.k, nUsers=split.n_users, nItems=split.n_items,
                          nTestUsers=len(split.users(Partition.Test)), outputDir=str(run_dir),
                          status="running")
        rows = []
        for (model, variant), report in sorted(reports.items()):
            row = {"run_id": run.id, "model": model, "variant": variant, "status": "ok",
                   "nUsers": len(report.per_user), "pValueRandom": report.pvalues.get(RANDOM_VARIANT)}
            row.update(report.means.to_dict())
            rows.append(row)
        for failure in failures:
            rows.append({"run_id": run.id, "model": failure["model"], "variant": failure["variant"],
                         "status": "failed", "error": failure["error"]})
        dal.insert_df(pd.DataFrame(rows), PairResult)
        sig_rows = []
        for model, matrix in matrices.items():
            labels = list(matrix.index)
            for i, a in enumerate(labels):
                for b in labels[i + 1:]:
                    sig_rows.append({"run_id": run.id, "model": model, "variantA": a, "variantB": b,
                                     "metric": config.significance_metric, "pValue": float(matrix.loc[a, b])})
        if sig_rows:
            dal.insert_df(pd.DataFrame(sig_rows), Significance)
        dal.set_run_status(run.id, "partial" if failures else "ok")
    finally:
        dal.close()
    return url


def _artifacts(run_dir):
    return sorted(p.relative_to(run_dir).as_posix() for p in run_dir.rglob("*")
                  if p.is_file() and p.name != MANIFEST_NAME)


def run_pipeline(config, out_dir=None, seed=None, progress=False):
    """Run every configured (model, variant) pair and write the run directory.

    A failing pair is logged and recorded in the manifest and the results database; the remaining
    pairs still run. Layout of the run directory::

        split/          train/validation/test events and split_meta.json
        rankings/       <model>__<variant>.tsv
        checkpoints/    <model>__<variant>.parc (trained models only)
        histories/      <model>__<variant>.csv (+ .png)
        reports/        <model>__<variant>.per_user.csv / .summary.csv
        significance/   <model>.<metric>.csv
        report.txt, comparison.csv, comparison.png, results.sqlite, manifest.json
    """
    if seed is not None:
        config = config.with_seed(seed)
    config.validate()
    run_dir = Path(out_dir or config.output_dir)
    run_dir.mkdir(parents=True, exist_ok=True)
    logger.info("run %s (config hash %s)", run_dir, config.config_hash()[:12])

    log = load_interaction_source(config.interactions, config.interactions_format)
    tables, load_failures = _load_tables(config)
    if config.embeddings and not tables:
        raise DataError("no embedding variant could be loaded")
    train, holdout = temporal_split(log, config.split)
    split = sanitize_and_partition(train, holdout, config.split.user_half_split_seed,
                                   embeddings=list(tables.values()) or None,
                                   prior=prior_events(log, config.split))
    save_split(split, run_dir / "split", config.split)
    test_relevance = split.relevance(Partition.Test)
    users = sorted(test_relevance)

    for sub in ("rankings", "checkpoints", "histories", REPORTS_DIR):
        (run_dir / sub).mkdir(exist_ok=True)
    reports, failures, dataset_cache = {}, [], {}
    for model, variant in _pairs(config, list(tables) + list(load_failures)):
        stem = _stem(model, variant)
        if variant in load_failures:
            failures.append({"model": model, "variant": variant, "error": load_failures[variant]})
            continue
        logger.info("running %s / %s", model, variant)
        try:
            outcome = _run_pair(model, variant, split, tables.get(variant), config, users, dataset_cache,
                                progress=progress)
            outcome.rankings.save(run_dir / "rankings" / f"{stem}.tsv", split.user_map, split.item_map)
            if outcome.params is not None:
                outcome.params.save(run_dir / "checkpoints" / f"{stem}.parc")
            if outcome.history is not None:
                outcome.history.to_csv(run_dir / "histories" / f"{stem}.csv", index=False, float_format="%.10g")
                if config.plots and len(outcome.history):
                    plot_history(outcome.history, f"{model} / {variant}", run_dir / "histories" / f"{stem}.png")
            reports[(model, variant)] = evaluate_rankings(outcome.rankings, test_relevance, config.k, model, variant)
        except Exception as err:  # one broken pair must not end the sweep
            logger.exception("%s / %s failed", model, variant)
            failures.append({"model": model, "variant": variant, "error": f"{type(err).__name__}: {err}"})

    matrices = _add_significance(reports, config, run_dir) if reports else {}
    for report in reports.values():
        report.save(run_dir / REPORTS_DIR, split.user_map)
    if reports:
        _, comparison = render_report(run_dir)
        if config.plots:
            plot_comparison(comparison, run_dir / "comparison.png", k=config.k)
    db_url = _store_results(config, run_dir, split, reports, failures, matrices)

    manifest = {
        "config": config.to_dict(),
        "config_hash": config.config_hash(),
        "seeds": {"split": config.split.user_half_split_seed, "shallow": config.shallow.seed,
                  "seqrec": config.seqrec.seed, "bootstrap": config.bootstrap_seed},
        "versions": _versions(),
        "split": split_report(split).to_dict(orient="index"),
        "n_dropped_items": split.n_dropped_items,
        "pairs": [{"model": m, "variant": v, "status": "ok" if (m, v) in reports else "failed"}
                  for m, v in _pairs(config, list(tables) + list(load_failures))],
        "failures": failures,
        "results_db": db_url,
        "artifacts": _artifacts(run_dir),
    }
    manifest_path = run_dir / MANIFEST_NAME
    manifest_path.write_text(json.dumps(manifest, indent=2, sort_keys=True, default=str))
    if failures:
        logger.warning("%d of %d pairs failed", len(failures), len(failures) + len(reports))
    return RunResult(run_dir=run_dir, reports=reports, failures=failures, manifest=manifest_path)

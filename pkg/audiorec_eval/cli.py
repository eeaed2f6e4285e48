"""Command line entry point: ``python -m audiorec_eval <command>``.

Exit codes: 0 success, 2 some (model, variant) pairs failed, 1 fatal error.
"""
import argparse
import logging
import sys
from pathlib import Path

from .config import load_config
from .constants import METRICS, ModelKind
from .diagnostics import AudiorecError
from .evaluation import MetricReport, significance_matrix
from .ingest import load_embedding_source, load_interaction_source, pool_chunk_archive, write_embeddings
from .pipeline import run_pipeline
from .report import REPORT_ORDERS, REPORTS_DIR, render_report
from .split import prior_events, sanitize_and_partition, save_split, split_report, temporal_split

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_FATAL = 1
EXIT_PARTIAL = 2


def parse_args(argv=None):
    parser = argparse.ArgumentParser(
        prog="audiorec_eval",
        description="Offline evaluation of pretrained audio embeddings for music recommendation",
    )
    parser.add_argument("-v", "--verbose", action="store_true", help="Debug logging")
    commands = parser.add_subparsers(dest="command", required=True)

    split = commands.add_parser("split", help="Run the temporal split only and write the partitions")
    split.add_argument("--config", required=True, help="Path to the JSON run config")
    split.add_argument("--out", help="Output directory (default: <output_dir>/split)")
    split.add_argument("--seed", type=int, help="Override every seed in the config")

    pool = commands.add_parser("pool", help="Average per-chunk embeddings into one table")
    pool.add_argument("--chunks", required=True, help=".npz archive or directory of .npy files")
    pool.add_argument("--out", required=True, help="Output embedding file (.pare or .csv)")
    pool.add_argument("--backend", help="Backend model name, checks the embedding dim")

    run = commands.add_parser("run", help="Split, train, rank, evaluate and report every pair")
    run.add_argument("--config", required=True, help="Path to the JSON run config")
    run.add_argument("--out", help="Run directory (default: output_dir of the config)")
    run.add_argument("--seed", type=int, help="Override every seed in the config")
    run.add_argument("--progress", action="store_true", help="Show progress bars")

    report = commands.add_parser("report", help="Render the comparison table of a run directory")
    report.add_argument("run_dir", help="Run directory")
    report.add_argument("--order", choices=REPORT_ORDERS, default="reference",
                        help="Row order inside model sections (default: reference)")

    significance = commands.add_parser("significance", help="Pairwise p-values between the variants of a run")
    significance.add_argument("run_dir", help="Run directory")
    significance.add_argument("--metric", choices=METRICS, default="hitrate", help="Per-user metric to compare")
    significance.add_argument("--method", choices=("bootstrap", "ttest"), default="bootstrap")
    significance.add_argument("--resamples", type=int, default=10000, help="Bootstrap resamples")
    significance.add_argument("--seed", type=int, default=0, help="Bootstrap seed")
    return parser.parse_args(argv)


def _cmd_split(args):
    config = load_config(args.config)
    if args.seed is not None:
        config = config.with_seed(args.seed)
    log = load_interaction_source(config.interactions, config.interactions_format)
    train, holdout = temporal_split(log, config.split)
    tables = [load_embedding_source(config.embeddings[name], backend=config.backends.get(name))
              for name in sorted(config.embeddings)]
    split = sanitize_and_partition(train, holdout, config.split.user_half_split_seed, embeddings=tables or None,
                                   prior=prior_events(log, config.split))
    out = Path(args.out) if args.out else Path(config.output_dir) / "split"
    save_split(split, out, config.split)
    print(split_report(split).to_string())
    return EXIT_OK


def _cmd_pool(args):
    table = pool_chunk_archive(args.chunks, backend=args.backend)
    write_embeddings(table, args.out)
    print(f"pooled {len(table)} items of dim {table.dim} into {args.out}")
    return EXIT_OK


def _cmd_run(args):
    config = load_config(args.config)
    result = run_pipeline(config, out_dir=args.out, seed=args.seed, progress=args.progress)
    report_path = result.run_dir / "report.txt"
    if report_path.exists():
        print(report_path.read_text())
    for failure in result.failures:
        print(f"FAILED {failure['model']} / {failure['variant']}: {failure['error']}", file=sys.stderr)
    return result.exit_code


def _cmd_report(args):
    text, _ = render_report(args.run_dir, order=args.order)
    print(text)
    return EXIT_OK


def _cmd_significance(args):
    run_dir = Path(args.run_dir)
    directory = run_dir / REPORTS_DIR if (run_dir / REPORTS_DIR).is_dir() else run_dir
    reports = [MetricReport.load(p) for p in sorted(directory.glob("*.summary.csv"))]
    if not reports:
        raise AudiorecError(f"no metric reports found in {directory}")
    out = run_dir / "significance"
    out.mkdir(exist_ok=True)
    for model in ModelKind.all:
        group = [r for r in reports if r.model == model]
        if len(group) < 2:
            continue
        matrix = significance_matrix(group, args.metric, args.resamples, args.seed, method=args.method)
        matrix.to_csv(out / f"{model}.{args.metric}.{args.method}.csv", float_format="%.10g")
        print(f"{model} ({args.metric}, {args.method})")
        print(matrix.round(4).to_string())
        print()
    return EXIT_OK


COMMANDS = {
    "split": _cmd_split,
    "pool": _cmd_pool,
    "run": _cmd_run,
    "report": _cmd_report,
    "significance": _cmd_significance,
}


def main(argv=None):
    args = parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(asctime)s [%(levelname)s] %(name)s: %(message)s",
    )
    try:
        return COMMANDS[args.command](args)
    except (AudiorecError, OSError) as err:
        logger.error("%s failed: %s", args.command, err)
        return EXIT_FATAL

"""This script runs the full comparison sweep for a config (default: attic/run_config.example.json).

    python scripts/run_pipeline.py [path/to/config.json] [seed]
"""
import logging
import sys

from attic import paths
from audiorec_eval.config import load_config
from audiorec_eval.pipeline import run_pipeline

logging.basicConfig(level=logging.INFO, format="%(asctime)s [%(levelname)s] %(name)s: %(message)s")

path_config = sys.argv[1] if len(sys.argv) > 1 else paths.path_example_config
seed = int(sys.argv[2]) if len(sys.argv) > 2 else None

result = run_pipeline(load_config(path_config), seed=seed, progress=True)
print((result.run_dir / "report.txt").read_text())
if result.failures:
    print(f"{len(result.failures)} pairs failed, see {result.manifest}")
sys.exit(result.exit_code)

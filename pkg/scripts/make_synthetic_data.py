"""This script writes the planted-genre synthetic dataset to data/synthetic/.

The files match attic/run_config.example.json, so afterwards a full sweep runs with

    python scripts/run_pipeline.py
"""
import logging

from attic import paths
from audiorec_eval.ingest import save_interactions, write_embeddings
from audiorec_eval.synthetic import make_planted_dataset

logging.basicConfig(level=logging.INFO)

path_out = paths.path_data / "synthetic"
path_out.mkdir(parents=True, exist_ok=True)

data = make_planted_dataset(n_genres=20, n_items=2000, n_users=500, seed=0)
save_interactions(data.log.events, path_out / "interactions.tsv")
write_embeddings(data.informative, path_out / "informative.pare")
write_embeddings(data.random, path_out / "noise.pare")
print(f"Synthetic data saved under: {path_out}")

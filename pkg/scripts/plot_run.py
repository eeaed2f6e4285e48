"""This script collects the results of all runs under runs/ from their results databases and plots
the HitRate of every (model, variant) pair per run into plots/.

    python scripts/plot_run.py
"""
import matplotlib.pyplot as plt
import pandas as pd
import seaborn as sns

from attic import paths
from audiorec_eval.dataAccessLayer import DataAccessLayer
from audiorec_eval.mappings import map_model_labels

frames = []
for db in sorted(paths.path_runs.glob("*/results.sqlite")):
    dal = DataAccessLayer(f"sqlite:///{db.as_posix()}")
    frames.append(dal.results())
    dal.close()
if not frames:
    raise SystemExit(f"no results.sqlite found under {paths.path_runs}")

results = pd.concat(frames, ignore_index=True)
results = results[results["status"] == "ok"]
results["model"] = results["model"].map(map_model_labels)
print(results[["runName", "model", "variant", "hitrate", "recall", "ndcg"]].to_string(index=False))

paths.path_plots.mkdir(exist_ok=True)
fig, ax = plt.subplots(figsize=(10, 7))
sns.stripplot(data=results, x="variant", y="hitrate", hue="model", dodge=True, ax=ax)
ax.grid()
ax.set_ylabel("HitRate")
ax.set_title("HitRate per run")
plt.tight_layout()
plt.savefig(paths.path_plots / "hitrate_per_run.png")
plt.close()
print(f"Plot saved under: {paths.path_plots / 'hitrate_per_run.png'}")

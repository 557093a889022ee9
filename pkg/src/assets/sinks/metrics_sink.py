import json
import os

import pandas as pd
from dagster import asset

from src.config import TRAIN_LOG


@asset
def run_summary(fused_training):
    """Saves the final metrics plus the last value of every logged curve to summary.json."""
    curves = pd.read_csv(os.path.join(fused_training.run_dir, TRAIN_LOG))
    last = curves.groupby(["split", "metric"])["value"].last()
    summary = {
        "metrics": fused_training.metrics,
        "last": {f"{split}_{metric}": float(v) for (split, metric), v in last.items()},
    }
    output_path = os.path.join(fused_training.run_dir, "summary.json")
    with open(output_path, "w") as f:
        json.dump(summary, f, indent=2, sort_keys=True)

    return output_path

import os

from dagster import asset

from src.assets.resources import ExperimentResource
from src.data.synthetic import corpus_digest, generate, write_corpus
from src.experiments import DATA_DIR


@asset
def synthetic_corpus(context, experiment: ExperimentResource):
    """Generates the train/valid/test splits of the configured synthetic task."""
    config = experiment.experiment_config()
    splits = generate(config.task)
    write_corpus(splits, config.task, os.path.join(config.output_dir, DATA_DIR))

    # Add preview to UI
    context.add_output_metadata({
        "task": config.task.task,
        "digest": corpus_digest(splits),
        "preview": [f"{s} -> {t}" for s, t in zip(splits["train"].src[:3], splits["train"].tgt[:3])],
        **{f"{name}_size": len(c) for name, c in splits.items()},
    })
    return splits

from dagster import asset

from src.assets.resources import ExperimentResource
from src.experiments import train_run


@asset
def fused_training(context, experiment: ExperimentResource, synthetic_corpus, context_provider):
    """Two-stage training, then decoding of the configured split."""
    config = experiment.experiment_config()
    result = train_run(config, config.output_dir, splits=synthetic_corpus, provider=context_provider)
    context.add_output_metadata({k: v for k, v in result.metrics.items() if isinstance(v, (int, float, str))})
    return result

import os

from dagster import asset

from src.assets.resources import ExperimentResource
from src.config import PROVIDER_FILE
from src.experiments import build_context_provider
from src.model.wiring import resolve_wiring
from src.provider.store import save_provider


@asset
def context_provider(context, experiment: ExperimentResource, synthetic_corpus):
    """Builds and freezes the context provider; None for variants that take no provider input."""
    config = experiment.experiment_config()
    if not resolve_wiring(config.model.variant).uses_provider:
        context.log.info(f"Variant '{config.model.variant}' has no provider input, skipping")
        return None
    provider = build_context_provider(config, synthetic_corpus)
    os.makedirs(config.output_dir, exist_ok=True)
    path = save_provider(provider, os.path.join(config.output_dir, PROVIDER_FILE))
    context.add_output_metadata({"kind": provider.kind, "width": provider.width, "path": path})
    return provider

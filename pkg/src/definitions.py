from dagster import Definitions, load_assets_from_modules

from src.assets.resources import ExperimentResource
from src.assets.sources import synthetic_corpus
from src.assets.transforms import context_provider, fused_training
from src.assets.sinks import metrics_sink

# Load all assets from the modules
all_assets = load_assets_from_modules([synthetic_corpus, context_provider, fused_training, metrics_sink])

defs = Definitions(
    assets=all_assets,
    resources={"experiment": ExperimentResource()},
)

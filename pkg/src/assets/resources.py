from typing import List, Optional

from dagster import ConfigurableResource

from src.config import ExperimentConfig, apply_overrides, load_config


class ExperimentResource(ConfigurableResource):
    """Experiment settings shared by every asset of the pipeline."""
    config_path: Optional[str] = None
    out_dir: str = "runs/dagster"
    overrides: List[str] = []

    def experiment_config(self) -> ExperimentConfig:
        base = load_config(self.config_path) if self.config_path else ExperimentConfig()
        return apply_overrides(base, [*self.overrides, f"output_dir={self.out_dir}"])

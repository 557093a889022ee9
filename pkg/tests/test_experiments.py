import json
import os

import pandas as pd
import pytest

from src.config import apply_overrides
from src import experiments
from src.errors import ConfigError, TrainingError
from src.experiments import ablate, ablation_config, bench_inference, dropnet_sweep, gen_data, load_run, train_run


def read_metrics(run_dir):
    with open(os.path.join(run_dir, "metrics.json")) as f:
        return json.load(f)


class TestTrainRun:
    def test_same_seed_reproduces_the_run(self, tiny_config, tmp_path):
        first = train_run(tiny_config, str(tmp_path / "a"))
        second = train_run(tiny_config, str(tmp_path / "b"))
        assert open(tmp_path / "a" / "test.hyp").read() == open(tmp_path / "b" / "test.hyp").read()
        strip = lambda m: {k: v for k, v in m.items() if k != "seconds"}
        assert strip(first.metrics) == strip(second.metrics)
        assert open(tmp_path / "a" / "stage2.ckpt", "rb").read() == open(tmp_path / "b" / "stage2.ckpt", "rb").read()

    def test_baseline_run_has_no_provider(self, tiny_config, tmp_path):
        config = apply_overrides(tiny_config, ["model.variant=no_provider_baseline"])
        result = train_run(config, str(tmp_path))
        assert result.metrics["provider_kind"] is None
        assert not os.path.exists(tmp_path / "provider.ckpt")
        run = load_run(str(tmp_path))
        assert run.provider is None and not run.model.training

    def test_resume_after_interruption(self, tiny_config, tmp_path):
        unbroken = train_run(tiny_config, str(tmp_path / "unbroken"))
        partial = str(tmp_path / "partial")
        train_run(tiny_config, partial, stages="1")
        resumed = train_run(tiny_config, partial, resume=os.path.join(partial, "stage1.ckpt"))
        assert resumed.metrics["test_bleu"] == unbroken.metrics["test_bleu"]
        log = pd.read_csv(os.path.join(partial, "train_log.csv"))
        assert list(log[log["split"] == "train"]["step"]) == list(range(1, 9))

    def test_corpus_from_another_task_rejected(self, tiny_config, tmp_path):
        gen_data(tiny_config, str(tmp_path / "data"))
        other = apply_overrides(tiny_config, ["task.seed=9"])
        with pytest.raises(ConfigError, match="different task"):
            train_run(other, str(tmp_path / "run"), data_dir=str(tmp_path / "data"))


class TestAblation:
    def test_rows_map_to_configs(self, tiny_config):
        assert ablation_config(tiny_config, "stacked_decoder").model.variant == "stacked_decoder"
        assert ablation_config(tiny_config, "random_init").train.init == "random"
        assert ablation_config(tiny_config, "random_provider").provider.kind == "random_frozen"
        assert ablation_config(tiny_config, "nmt_encoder_provider").provider.kind == "nmt_encoder"
        with pytest.raises(ConfigError):
            ablation_config(tiny_config, "everything")

    def test_ablation_table(self, tiny_config, tmp_path):
        rows = ["full", "no_provider_baseline", "random_provider", "nmt_encoder_provider"]
        frame = ablate(tiny_config, str(tmp_path), rows=rows, workers=2)
        assert list(frame["row"]) == rows
        assert (frame["status"] == "ok").all()
        assert os.path.exists(tmp_path / "ablation.csv")
        nmt = read_metrics(str(tmp_path / "nmt_encoder_provider"))
        assert nmt["provider_kind"] == "nmt_encoder"


class TestDropnetSweep:
    def test_merged_curves(self, tiny_config, tmp_path):
        result = dropnet_sweep(tiny_config, str(tmp_path), values=(0.0, 1.0))
        assert result.failed == []
        frame = result.curves
        assert list(frame.columns) == ["p_net", "step", "metric", "value"]
        assert set(frame["p_net"]) == {0.0, 1.0}
        assert set(frame["metric"]) == {"train_loss", "valid_loss", "valid_bleu"}
        on_disk = pd.read_csv(tmp_path / "dropnet_sweep.csv")
        assert len(on_disk) == len(frame)

    def test_failed_rates_are_reported(self, tiny_config, tmp_path, monkeypatch):
        real_train_run = experiments.train_run

        def flaky_train_run(cfg, *args, **kwargs):
            if cfg.model.p_net == 1.0:
                raise TrainingError("loss diverged")
            return real_train_run(cfg, *args, **kwargs)

        monkeypatch.setattr(experiments, "train_run", flaky_train_run)
        result = dropnet_sweep(tiny_config, str(tmp_path), values=(0.0, 1.0))
        assert result.failed == [1.0]
        assert set(result.curves["p_net"]) == {0.0}


class TestBench:
    def test_fake_clock(self, tiny_config, tmp_path):
        train_run(tiny_config, str(tmp_path))
        ticks = iter(range(1000))
        report = bench_inference(str(tmp_path), str(tmp_path / "timing.csv"), sentences=2, repetitions=3, warmup=0, clock=lambda: float(next(ticks)))
        assert report.baseline_seconds == report.fused_seconds == 1.0
        assert report.increase_ratio == 0.0

    def test_baseline_run_cannot_be_benchmarked(self, tiny_config, tmp_path):
        train_run(apply_overrides(tiny_config, ["model.variant=no_provider_baseline"]), str(tmp_path))
        with pytest.raises(ConfigError, match="no provider"):
            bench_inference(str(tmp_path), str(tmp_path / "timing.csv"))

"""Experiment orchestration: configs, variants, metrics files, plots."""

import csv
import json

import numpy as np
import pytest

from videobc.envs import EnvConfig
from videobc.errors import ConfigurationError, DatasetError
from videobc.features import FeaturePretrainConfig
from videobc.harness import (ExperimentConfig, MetricsStore, apply_overrides,
                             config_hash, config_snapshot,
                             default_experiment_config, parse_config_file,
                             run_experiment, run_multitask,
                             run_random_baseline, run_video_sweep)
from videobc.latentact import LatentActionConfig
from videobc.online import OnlineConfig
from videobc.plots import emit_plots, summary_table


def tiny_config(**kw):
    cfg = ExperimentConfig(
        env=EnvConfig.for_env("gridpix"),
        features=FeaturePretrainConfig(update_count=30, feature_dim=16,
                                       channels=8, batch_size=16),
        latentact=LatentActionConfig(update_count=30, batch_size=32,
                                     latent_dim=16, groups=2, entries=4,
                                     embed_dim=4),
        online=OnlineConfig(total_steps=200, collect_per_cycle=100,
                            finetune_updates=2, bc_updates=2,
                            warm_start_cap=10, batch_size=32,
                            bc_batch_size=32),
        seeds=(1,),
        video_budget=200,
        labeled_budget=150,
        final_eval_episodes=3,
    )
    return ExperimentConfig(**{**vars(cfg), **kw}) if kw else cfg


class TestConfig:
    def test_default_families_differ(self):
        grid = default_experiment_config("gridpix")
        point = default_experiment_config("pointpix")
        assert grid.features.task == "contrastive_recon"
        assert point.features.temporal_negatives
        assert not grid.features.temporal_negatives
        assert grid.online.beta != point.online.beta

    def test_invalid_variant_rejected(self):
        with pytest.raises(ConfigurationError):
            tiny_config(variant="bogus")

    def test_overrides_coerce_types(self):
        cfg = apply_overrides(tiny_config(), {
            "online.beta": "2.5",
            "online.total_steps": "400",
            "online.warm_start": "false",
            "seeds": "4,5",
            "variant": "wo_la",
        })
        assert cfg.online.beta == 2.5
        assert cfg.online.total_steps == 400
        assert cfg.online.warm_start is False
        assert cfg.seeds == (4, 5)
        assert cfg.variant == "wo_la"

    def test_unknown_key_rejected(self):
        with pytest.raises(ConfigurationError):
            apply_overrides(tiny_config(), {"online.bogus": "1"})
        with pytest.raises(ConfigurationError):
            apply_overrides(tiny_config(), {"nosuchgroup.x": "1"})

    def test_parse_config_file(self, tmp_path):
        path = tmp_path / "exp.cfg"
        path.write_text("# comment\nonline.beta = 15  # inline\n\n"
                        "video_budget = 500\n")
        assert parse_config_file(path) == {"online.beta": "15",
                                           "video_budget": "500"}

    def test_parse_rejects_bad_lines(self, tmp_path):
        path = tmp_path / "bad.cfg"
        path.write_text("not a key value line\n")
        with pytest.raises(ConfigurationError):
            parse_config_file(path)
        with pytest.raises(ConfigurationError):
            parse_config_file(tmp_path / "missing.cfg")

    def test_snapshot_round_trips_through_overrides(self):
        cfg = tiny_config()
        parsed = {}
        for line in config_snapshot(cfg).splitlines():
            key, value = line.split(" = ", 1)
            if key in ("env.env_id",):
                continue
            parsed[key] = value
        rebuilt = apply_overrides(tiny_config(), parsed)
        assert config_snapshot(rebuilt) == config_snapshot(cfg)

    def test_hash_ignores_variant_and_output_dir(self):
        cfg = tiny_config()
        assert config_hash(cfg) == config_hash(
            tiny_config(variant="wo_ft", output_dir="elsewhere"))
        changed = apply_overrides(cfg, {"online.beta": "99"})
        assert config_hash(cfg) != config_hash(changed)


class TestMetricsStore:
    def test_header_and_rows(self, tmp_path):
        store = MetricsStore(tmp_path, "full", 3)
        store.append(0, "l_ft", 1.5)
        store.append(100, "eval_success", 0.25)
        with open(store.path) as fh:
            rows = list(csv.DictReader(fh))
        assert rows[0] == {"step": "0", "metric": "l_ft", "value": "1.5",
                           "seed": "3", "variant": "full"}
        assert rows[1]["metric"] == "eval_success"


@pytest.mark.slow
class TestRuns:
    def test_full_run_artifacts(self, tmp_path):
        cfg = tiny_config(output_dir=str(tmp_path))
        run_dir = run_experiment(cfg)
        assert (run_dir / "config.txt").exists()
        assert (run_dir / "checkpoint_seed1.bcvw").exists()
        manifest = json.loads((run_dir / "manifest_seed1.json").read_text())
        assert manifest["status"] == "ok"
        assert manifest["config_hash"] == config_hash(cfg)
        summary = json.loads((run_dir / "summary.json").read_text())
        assert 0.0 <= summary["mean_success"] <= 1.0
        with open(run_dir / "metrics_full_seed1.csv") as fh:
            reader = csv.DictReader(fh)
            assert reader.fieldnames == ["step", "metric", "value", "seed",
                                         "variant"]
            metrics = {row["metric"] for row in reader}
        assert {"l_lf", "l_la", "l_ft", "l_bc", "final_success",
                "final_return"} <= metrics

    @pytest.mark.parametrize("variant", ["wo_lf", "wo_la", "wo_ft",
                                         "offline_labeled"])
    def test_variant_runs(self, tmp_path, variant):
        cfg = tiny_config(output_dir=str(tmp_path), variant=variant)
        run_dir = run_experiment(cfg)
        summary = json.loads((run_dir / "summary.json").read_text())
        assert "mean_success" in summary
        csv_path = run_dir / f"metrics_{variant}_seed1.csv"
        with open(csv_path) as fh:
            metrics = {row["metric"] for row in csv.DictReader(fh)}
        if variant == "wo_lf":
            assert "l_lf" not in metrics
        if variant == "wo_la":
            assert "l_la" not in metrics

    def test_video_sweep_summary(self, tmp_path):
        cfg = tiny_config(output_dir=str(tmp_path))
        out = run_video_sweep(cfg, [100, 200])
        assert set(out) == {100, 200}
        sweep = json.loads((tmp_path / "sweep_summary.json").read_text())
        assert set(sweep) == {"100", "200"}

    def test_plots_from_run(self, tmp_path):
        cfg = tiny_config(output_dir=str(tmp_path / "runs"),
                          online=OnlineConfig(
                              total_steps=200, collect_per_cycle=100,
                              finetune_updates=2, bc_updates=2,
                              warm_start_cap=10, batch_size=32,
                              bc_batch_size=32, eval_every_cycles=1,
                              eval_episodes=2))
        run_experiment(cfg)
        written = emit_plots(tmp_path / "runs", tmp_path / "plots")
        names = {p.name for p in written}
        assert "summary_table.txt" in names
        assert "success_curve.png" in names
        table = (tmp_path / "plots" / "summary_table.txt").read_text()
        assert table.splitlines()[0].split()[0] == "variant"
        # emission is deterministic
        again = emit_plots(tmp_path / "runs", tmp_path / "plots2")
        assert (tmp_path / "plots2" / "summary_table.txt").read_text() == table


class TestGuards:
    def test_multitask_rejects_mismatched_tasks(self):
        grid = EnvConfig.for_env("gridpix")
        point = EnvConfig.for_env("pointpix")
        with pytest.raises(ConfigurationError):
            run_multitask([grid, point], grid, tiny_config())

    def test_random_baseline_below_threshold(self, tmp_path):
        cfg = tiny_config(output_dir=str(tmp_path), final_eval_episodes=100)
        stats = run_random_baseline(cfg)
        assert stats["success_rate"] < 0.3
        assert (tmp_path / "gridpix_random" / "summary.json").exists()

    def test_plots_refuse_mixed_hashes(self, tmp_path):
        for name, h in (("a", "1" * 16), ("b", "2" * 16)):
            d = tmp_path / name
            d.mkdir()
            (d / "metrics_full_seed1.csv").write_text(
                "step,metric,value,seed,variant\n"
                "0,final_success,0.5,1,full\n")
            (d / "manifest_seed1.json").write_text(
                json.dumps({"config_hash": h}))
        with pytest.raises(ConfigurationError):
            emit_plots(tmp_path, tmp_path / "plots")

    def test_summary_table_requires_final_rows(self):
        with pytest.raises(DatasetError):
            summary_table([{"step": 0, "metric": "l_ft", "value": 1.0,
                            "seed": 1, "variant": "full"}])

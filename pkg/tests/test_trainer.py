import json
import os
import shutil
import unittest
from dataclasses import replace
from pathlib import Path

import numpy as np
import pandas as pd
import pytest
import torch

from lane_affordance.config import load_config
from lane_affordance.errors import ContractError
from lane_affordance.evaluation import build_eval_set
from lane_affordance.network import NetworkConfig, build_model, load_checkpoint
from lane_affordance.render import RenderSpec, render_eval_instance, sla_mass_inside_drivable
from lane_affordance.scene_synth import build_eval_sample, build_layouts, desk_corpus
from lane_affordance.trainer import (
    DirectionalLaneTrainer,
    SampleFeeder,
    TrainConfig,
    lr_schedule,
    make_training_example,
)

CONFIG_DIR = Path(__file__).resolve().parents[1] / "configs"


def _desk_layouts():
    return build_layouts(desk_corpus()["train"], grid_side=64, seed=0)


class LearningRateScheduleTest(unittest.TestCase):
    def test_steps_down_every_hundred_epochs(self) -> None:
        self.assertEqual(6e-6, lr_schedule(6e-6, 0))
        self.assertEqual(6e-6, lr_schedule(6e-6, 99))
        self.assertAlmostEqual(5.4e-6, lr_schedule(6e-6, 100), places=15)
        self.assertAlmostEqual(4.86e-6, lr_schedule(6e-6, 250), places=15)

    def test_rejects_negative_epoch(self) -> None:
        with self.assertRaises(ContractError):
            lr_schedule(1e-4, -1)


class TrainConfigTest(unittest.TestCase):
    def test_desk_defaults(self) -> None:
        config = TrainConfig.desk()
        self.assertEqual("desk", config.grid_scale)
        self.assertEqual(0.0, config.dropout_p)
        self.assertEqual(0.2, config.marking_dropout_p)
        self.assertEqual(100.0, config.loss_config().alpha_sla)

    def test_rejects_invalid_values(self) -> None:
        for overrides in ({"eta": 0.0}, {"epochs": -1}, {"grid_scale": "huge"}, {"prefetch": 1}):
            with self.assertRaises(ContractError, msg=str(overrides)):
                TrainConfig(**overrides)


class SampleFeederTest(unittest.TestCase):
    def test_yields_samples_in_epoch_order(self) -> None:
        config = TrainConfig.desk(epochs=2, samples_per_epoch=3, workers=2)
        feeder = SampleFeeder(_desk_layouts(), config)
        self.assertEqual(6, len(feeder))
        keys = [(example.epoch, example.index) for example in feeder]
        self.assertEqual(list(feeder.keys()), keys)

    def test_examples_are_reproducible(self) -> None:
        layouts = _desk_layouts()
        config = TrainConfig.desk()
        first = make_training_example(layouts, config, epoch=3, index=1)
        second = make_training_example(layouts, config, epoch=3, index=1)
        self.assertEqual(first.layout_index, second.layout_index)
        np.testing.assert_array_equal(first.context.stack(), second.context.stack())
        np.testing.assert_array_equal(first.label.stack(), second.label.stack())
        self.assertGreater(first.label.n_masked, 0)


@pytest.fixture(scope="module")
def desk_setup():
    layouts = _desk_layouts()
    eval_sets = {"train": build_eval_set(layouts[:1], names=["only"], instances=1, seed=0)}
    return layouts, eval_sets


def test_zero_epochs_saves_initial_weights(tmp_path, desk_setup) -> None:
    layouts, eval_sets = desk_setup
    trainer = DirectionalLaneTrainer(NetworkConfig.desk(), TrainConfig.desk(epochs=0))
    result = trainer.train(layouts, eval_sets, tmp_path)

    assert result.records == []
    assert result.last_checkpoint.exists()
    loaded, manifest = load_checkpoint(result.last_checkpoint)
    assert manifest["epoch"] == 0
    reference = build_model(replace(NetworkConfig.desk(), dropout_p=0.0), seed=0)
    for a, b in zip(reference.state_dict().values(), loaded.state_dict().values()):
        assert torch.equal(a, b)


def test_short_run_writes_logs_and_metrics(tmp_path, desk_setup) -> None:
    layouts, eval_sets = desk_setup
    config = TrainConfig.desk(epochs=1, samples_per_epoch=2, eval_every=1, workers=1)
    messages = []
    trainer = DirectionalLaneTrainer(NetworkConfig.desk(), config, log_callback=messages.append)
    result = trainer.train(layouts, eval_sets, tmp_path)

    assert len(result.records) == 2
    assert all(np.isfinite(record.l_total) for record in result.records)
    lines = (tmp_path / "train_log.jsonl").read_text(encoding="utf-8").splitlines()
    assert [json.loads(line)["sample"] for line in lines] == [0, 1]

    metrics = pd.read_csv(tmp_path / "eval_metrics.csv")
    assert sorted(metrics["epoch"].unique().tolist()) == [0, 1]
    assert set(metrics["layout_name"]) == {"only", "all"}
    assert result.best_checkpoint.exists()
    assert "train" in result.final_reports
    assert any("✅" in message for message in messages)


def test_resume_continues_from_last_checkpoint(tmp_path, desk_setup) -> None:
    layouts, eval_sets = desk_setup
    config = TrainConfig.desk(epochs=1, samples_per_epoch=1, eval_every=1, workers=1)
    DirectionalLaneTrainer(NetworkConfig.desk(), config).train(layouts, eval_sets, tmp_path)

    resumed = DirectionalLaneTrainer(NetworkConfig.desk(), replace(config, epochs=2))
    result = resumed.train(layouts, eval_sets, tmp_path, resume_from=tmp_path / "last.pt")

    assert [(record.epoch, record.sample) for record in result.records] == [(1, 0)]
    lines = (tmp_path / "train_log.jsonl").read_text(encoding="utf-8").splitlines()
    assert len(lines) == 2
    _, manifest = load_checkpoint(tmp_path / "last.pt")
    assert manifest["epoch"] == 2


def _log_keys(path):
    lines = path.read_text(encoding="utf-8").splitlines()
    return [(record["epoch"], record["sample"], record["layout_kind"], record["lr"]) for record in map(json.loads, lines)]


def test_resumed_run_matches_uninterrupted_run(tmp_path, desk_setup) -> None:
    layouts, eval_sets = desk_setup
    config = TrainConfig.desk(epochs=2, samples_per_epoch=2, eval_every=1, workers=1, lr_decay=0.5, lr_step_epochs=1)
    DirectionalLaneTrainer(NetworkConfig.desk(), config).train(layouts, eval_sets, tmp_path / "straight")

    split_dir = tmp_path / "split"
    DirectionalLaneTrainer(NetworkConfig.desk(), replace(config, epochs=1)).train(layouts, eval_sets, split_dir)
    DirectionalLaneTrainer(NetworkConfig.desk(), config).train(
        layouts, eval_sets, split_dir, resume_from=split_dir / "last.pt"
    )

    expected = _log_keys(tmp_path / "straight" / "train_log.jsonl")
    assert [(epoch, sample) for epoch, sample, _, _ in expected] == [(0, 0), (0, 1), (1, 0), (1, 1)]
    assert _log_keys(split_dir / "train_log.jsonl") == expected


def test_logged_learning_rate_follows_schedule(tmp_path, desk_setup) -> None:
    layouts, eval_sets = desk_setup
    config = TrainConfig.desk(epochs=3, samples_per_epoch=2, eval_every=3, workers=1, lr_decay=0.5, lr_step_epochs=1)
    result = DirectionalLaneTrainer(NetworkConfig.desk(), config).train(layouts, eval_sets, tmp_path)

    logged = [json.loads(line) for line in (tmp_path / "train_log.jsonl").read_text(encoding="utf-8").splitlines()]
    assert len(logged) == 6
    for record in logged:
        assert record["lr"] == lr_schedule(config.eta, record["epoch"], config.lr_decay, config.lr_step_epochs)
    assert [record.lr for record in result.records] == [record["lr"] for record in logged]
    assert logged[-1]["lr"] == pytest.approx(config.eta / 4)


def test_resuming_older_checkpoint_drops_later_log_records(tmp_path, desk_setup) -> None:
    layouts, eval_sets = desk_setup
    config = TrainConfig.desk(epochs=1, samples_per_epoch=1, eval_every=1, workers=1)
    DirectionalLaneTrainer(NetworkConfig.desk(), config).train(layouts, eval_sets, tmp_path)
    for suffix in (".pt", ".json", ".state.pt"):
        shutil.copyfile(tmp_path / f"last{suffix}", tmp_path / f"epoch1{suffix}")

    longer = replace(config, epochs=3)
    DirectionalLaneTrainer(NetworkConfig.desk(), longer).train(layouts, eval_sets, tmp_path, resume_from=tmp_path / "last.pt")
    assert len((tmp_path / "train_log.jsonl").read_text(encoding="utf-8").splitlines()) == 3

    DirectionalLaneTrainer(NetworkConfig.desk(), replace(config, epochs=2)).train(
        layouts, eval_sets, tmp_path, resume_from=tmp_path / "epoch1.pt"
    )
    lines = (tmp_path / "train_log.jsonl").read_text(encoding="utf-8").splitlines()
    assert [(json.loads(line)["epoch"], json.loads(line)["sample"]) for line in lines] == [(0, 0), (1, 0)]
    metrics = pd.read_csv(tmp_path / "eval_metrics.csv")
    assert sorted(metrics["epoch"].unique().tolist()) == [0, 1, 2]


def test_rejects_layouts_of_another_grid(tmp_path) -> None:
    layouts = build_layouts(desk_corpus()["train"][:1], grid_side=128, seed=0)
    eval_sets = {"train": build_eval_set(layouts, instances=0)}
    trainer = DirectionalLaneTrainer(NetworkConfig.desk(), TrainConfig.desk(epochs=0))
    with pytest.raises(ContractError):
        trainer.train(layouts, eval_sets, tmp_path)


SEEDS = (0, 1, 2)


def _desk_eval_sets(corpus, train_layouts, test_layouts):
    return {
        "train": build_eval_set(train_layouts, [r.name for r in corpus["train"]], instances=10, seed=0),
        "test": build_eval_set(test_layouts, [r.name for r in corpus["test"]], instances=10, seed=0),
    }


def _train_desk(config, out_dir):
    corpus = desk_corpus()
    train_layouts = build_layouts(corpus["train"], grid_side=64, seed=0)
    test_layouts = build_layouts(corpus["test"], grid_side=64, seed=0)
    eval_sets = _desk_eval_sets(corpus, train_layouts, test_layouts)
    config = replace(config, workers=max(1, (os.cpu_count() or 2) // 2))
    result = DirectionalLaneTrainer(NetworkConfig.desk(), config).train(train_layouts, eval_sets, out_dir)
    return result, test_layouts


@pytest.mark.slow
def test_desk_training_halves_both_metrics_and_stays_on_the_road(tmp_path) -> None:
    passing = []
    for seed in SEEDS:
        result, test_layouts = _train_desk(TrainConfig.desk(seed=seed), tmp_path / f"seed{seed}")
        initial, final = result.initial_reports["train"], result.final_reports["train"]
        halved = final.aggregate_sla <= 0.5 * initial.aggregate_sla and final.aggregate_da <= 0.5 * initial.aggregate_da

        t_layout = next(layout for layout in test_layouts if layout.kind == "t_intersection")
        context = build_eval_sample(t_layout, name="held_out_t").context
        _, raw = render_eval_instance(result.model, context, RenderSpec(), tmp_path / f"seed{seed}" / "t.png")
        on_road = sla_mass_inside_drivable(raw, context) >= 0.9

        assert (tmp_path / f"seed{seed}" / "t.png").exists()
        passing.append(halved and on_road)
    assert sum(passing) >= 2, passing


def _sweep_overrides(exp_id):
    overrides = load_config(CONFIG_DIR / "sweep.cfg").experiments[exp_id]
    return {key: value for key, value in overrides.items() if key != "eta"}


@pytest.mark.slow
def test_desk_sweep_trends(tmp_path) -> None:
    alpha_wins = 0
    dropout_wins = 0
    for seed in SEEDS:
        scores = {}
        for exp_id in ("1", "3", "6", "7"):
            config = replace(TrainConfig.desk(seed=seed), **_sweep_overrides(exp_id))
            result, _ = _train_desk(config, tmp_path / f"exp{exp_id}_seed{seed}")
            scores[exp_id] = result.final_reports
        alpha_wins += scores["1"]["train"].aggregate_sla < scores["3"]["train"].aggregate_sla
        dropout_wins += scores["6"]["test"].aggregate_da < scores["7"]["test"].aggregate_da
    assert alpha_wins >= 2
    assert dropout_wins >= 2

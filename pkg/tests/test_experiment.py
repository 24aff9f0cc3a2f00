import numpy as np
import pytest

from sslmatch.config import TrainConfig
from sslmatch.errors import ConfigError, TrainingDiverged
from sslmatch.evaluation import evaluate_split
from sslmatch.experiment import (SweepGrid, ema_ablation, enumerate_grid,
                                 epochs_for_budget, fixmatch_primary_grid, load_run,
                                 mixmatch_primary_grid, run_training, runs_root,
                                 secondary_grid, sweep, transfer_grid)
from sslmatch.backbones import Backbone


class TestEpochsForBudget:
    @pytest.mark.parametrize("n_b,n_l,b,expect", [
        (15000, 200, 16, 1250),
        (12000, 40, 16, 6000),
        (24000, 800, 16, 480),
    ])
    def test_hand_computed_cases(self, n_b, n_l, b, expect):
        assert epochs_for_budget(n_b, n_l, b) == expect

    def test_rounds_half_away_from_zero(self):
        # 5 batches over 2 per epoch = 2.5 -> 3, not banker's 2.
        assert epochs_for_budget(5, 32, 16) == 3
        assert epochs_for_budget(3, 32, 16) == 2  # 1.5 -> 2
        assert epochs_for_budget(4, 32, 16) == 2  # exact

    def test_zero_batches_per_epoch_rejected(self):
        with pytest.raises(ConfigError, match="smaller batch size or more labels"):
            epochs_for_budget(1000, 8, 16)

    def test_nonincreasing_in_n_l(self):
        values = [epochs_for_budget(12000, n_l, 16) for n_l in range(16, 1600, 16)]
        assert all(b <= a for a, b in zip(values, values[1:]))

    def test_budget_slack_bound(self):
        # Consumed batches stay within half an epoch of the requested budget.
        for n_b in (12000, 15000, 24000, 30000):
            for n_l in (40, 64, 200, 400, 800):
                per_epoch = n_l // 16
                epochs = epochs_for_budget(n_b, n_l, 16)
                assert abs(epochs * per_epoch - n_b) <= per_epoch / 2

    def test_bad_arguments(self):
        with pytest.raises(ConfigError):
            epochs_for_budget(100, 32, 0)
        with pytest.raises(ConfigError):
            epochs_for_budget(-1, 32, 16)


class TestGrids:
    def test_mixmatch_primary_size(self):
        grid = mixmatch_primary_grid()
        assert grid.size == 320
        assert len(enumerate_grid(grid)) == 320

    def test_fixmatch_primary_size(self):
        grid = fixmatch_primary_grid()
        assert grid.size == 8
        assert len(enumerate_grid(grid)) == 8

    def test_transfer_grid_size(self):
        assert transfer_grid().size == 8

    def test_secondary_grid_four_runs_per_subset_size(self):
        for method in ("mixmatch", "fixmatch"):
            grid = secondary_grid(method)
            points = enumerate_grid(grid)
            assert len(points) == 4
            assert {p["ema_decay"] for p in points} == {0.0, 0.999}
            # Epochs hand control back to the batch-budget formula.
            assert all(p["epochs"] is None for p in points)

    def test_secondary_budgets_differ_by_method(self):
        assert secondary_grid("mixmatch").axes["n_batches"] == [12000, 15000]
        assert secondary_grid("fixmatch").axes["n_batches"] == [24000, 30000]
        with pytest.raises(ConfigError):
            secondary_grid("transfer")

    def test_singleton_axis(self):
        grid = SweepGrid(axes={"learning_rate": [0.01]})
        assert enumerate_grid(grid) == [{"learning_rate": 0.01}]

    def test_enumeration_is_deterministic(self):
        grid = mixmatch_primary_grid()
        assert enumerate_grid(grid) == enumerate_grid(mixmatch_primary_grid())

    def test_grid_validation(self):
        with pytest.raises(ConfigError):
            SweepGrid(axes={})
        with pytest.raises(ConfigError):
            SweepGrid(axes={"learning_rate": []})
        with pytest.raises(ConfigError):
            SweepGrid(axes={"learning_rate": [0.1]}, stage="tertiary")


class TestRunsRoot:
    def test_explicit_wins(self, tmp_path, monkeypatch):
        monkeypatch.setenv("SSLMATCH_RUNS_DIR", str(tmp_path / "env"))
        assert runs_root(tmp_path / "explicit") == tmp_path / "explicit"

    def test_env_fallback(self, tmp_path, monkeypatch):
        monkeypatch.setenv("SSLMATCH_RUNS_DIR", str(tmp_path / "env"))
        assert runs_root() == tmp_path / "env"

    def test_default(self, monkeypatch):
        monkeypatch.delenv("SSLMATCH_RUNS_DIR", raising=False)
        assert str(runs_root()) == "runs"


def ssl_cfg(method="mixmatch", **overrides):
    base = dict(method=method, n_l=8, batch_size=4, epochs=2, seed=3,
                learning_rate=1e-3, image_side=32)
    base.update(overrides)
    mm = {"mixmatch.k": 2, "mixmatch.rampup_steps": 2}
    fm = {"fixmatch.mu": 2}
    cfg = TrainConfig()
    flat = {**mm, **fm, **base}
    return cfg.with_overrides(flat)


class TestRunTraining:
    def test_history_and_selection_contract(self, micro_splits):
        cfg = ssl_cfg("mixmatch", epochs=3)
        result = run_training(cfg, micro_splits)
        assert len(result.history) == 3
        val_losses = [rec.val_loss for rec in result.history]
        best_idx = int(np.argmin(val_losses))
        assert result.best_epoch == best_idx + 1
        assert result.best_val_loss == pytest.approx(min(val_losses))
        # Earliest epoch wins ties: no earlier epoch attains the best loss.
        assert all(v > result.best_val_loss for v in val_losses[:best_idx])
        assert result.checkpoint.epoch == result.best_epoch

    def test_test_accuracy_uses_selected_checkpoint(self, micro_splits):
        cfg = ssl_cfg("fixmatch", epochs=2)
        result = run_training(cfg, micro_splits)
        model = Backbone(cfg.arch, num_classes=micro_splits.num_classes,
                         in_channels=1, input_side=cfg.image_side, seed=cfg.seed)
        _, acc = evaluate_split(model, micro_splits.test,
                                params=result.checkpoint.eval_vector())
        assert result.test_acc == pytest.approx(acc, abs=1e-12)

    def test_rerun_is_bit_identical(self, micro_splits):
        cfg = ssl_cfg("mixmatch")
        a = run_training(cfg, micro_splits)
        b = run_training(cfg, micro_splits)
        np.testing.assert_array_equal(a.checkpoint.params.values,
                                      b.checkpoint.params.values)
        assert [r.val_loss for r in a.history] == [r.val_loss for r in b.history]
        assert a.test_acc == b.test_acc

    def test_ema_checkpoint_stores_teacher(self, micro_splits):
        cfg = ssl_cfg("mixmatch", ema_decay=0.999)
        result = run_training(cfg, micro_splits)
        ckpt = result.checkpoint
        assert ckpt.ema_params is not None
        assert not np.array_equal(ckpt.ema_params.values, ckpt.params.values)
        np.testing.assert_array_equal(ckpt.eval_vector().values, ckpt.ema_params.values)

    def test_ema_disabled_keeps_student_only(self, micro_splits):
        result = run_training(ssl_cfg("mixmatch", ema_decay=0.0), micro_splits)
        assert result.checkpoint.ema_params is None

    def test_results_store_layout(self, micro_splits, tmp_path):
        cfg = ssl_cfg("fixmatch")
        result = run_training(cfg, micro_splits, runs_dir=tmp_path, sweep_name="unit")
        run_dir = tmp_path / "unit" / cfg.resolved_hash()
        assert result.run_dir == run_dir
        for name in ("config.resolved", "metrics.csv", "checkpoint.bin", "status"):
            assert (run_dir / name).exists()
        assert (run_dir / "status").read_text().strip() == "complete"

    def test_store_roundtrip(self, micro_splits, tmp_path):
        cfg = ssl_cfg("mixmatch")
        result = run_training(cfg, micro_splits, runs_dir=tmp_path, sweep_name="unit")
        loaded = load_run(result.run_dir)
        assert loaded.best_val_loss == pytest.approx(result.best_val_loss, rel=1e-9)
        assert loaded.test_acc == pytest.approx(result.test_acc, rel=1e-9)
        assert loaded.best_epoch == result.best_epoch
        assert len(loaded.history) == len(result.history)
        np.testing.assert_array_equal(loaded.checkpoint.params.values,
                                      result.checkpoint.params.values)
        assert loaded.config.resolved_hash() == cfg.resolved_hash()

    def test_completed_run_refused_then_reused(self, micro_splits, tmp_path):
        cfg = ssl_cfg("mixmatch")
        first = run_training(cfg, micro_splits, runs_dir=tmp_path, sweep_name="unit")
        with pytest.raises(ConfigError, match="already completed"):
            run_training(cfg, micro_splits, runs_dir=tmp_path, sweep_name="unit")
        reused = run_training(cfg, micro_splits, runs_dir=tmp_path, sweep_name="unit",
                              existing="reuse")
        assert reused.test_acc == pytest.approx(first.test_acc, rel=1e-9)

    def test_all_labels_mode_uses_whole_train_set(self, micro_splits):
        cfg = ssl_cfg("mixmatch", n_l=None, epochs=1)
        result = run_training(cfg, micro_splits)
        # 96 labeled images / batch size 4 = 24 steps in the single epoch.
        assert result.history[-1].step == len(micro_splits.train_labeled) // 4

    def test_supervised_baseline_runs(self, micro_splits):
        cfg = TrainConfig().with_overrides({
            "method": "supervised", "n_l": 8, "seed": 1,
            "transfer.epochs": 2, "transfer.batch_size": 4,
            "transfer.patience": None, "transfer.learning_rate": 1e-3,
        })
        result = run_training(cfg, micro_splits)
        assert len(result.history) == 2
        assert result.test_acc is not None
        assert result.checkpoint.ema_params is None

    def test_divergence_raises_with_diagnostic_record(self, micro_splits, tmp_path):
        cfg = ssl_cfg("mixmatch", optimizer="sgd_momentum", learning_rate=1e30,
                      epochs=1)
        with pytest.raises(TrainingDiverged) as excinfo:
            run_training(cfg, micro_splits, runs_dir=tmp_path, sweep_name="unit")
        assert excinfo.value.record is not None
        assert not np.isfinite(excinfo.value.record.train_total)
        status = (tmp_path / "unit" / cfg.resolved_hash() / "status").read_text()
        assert status.startswith("failed:")

    def test_epochs_resolved_from_batch_budget(self, micro_splits):
        # n_l=8, B=4 -> 2 batches per epoch; n_batches=6 -> 3 epochs.
        cfg = ssl_cfg("mixmatch", epochs=None, n_batches=6)
        result = run_training(cfg, micro_splits)
        assert len(result.history) == 3

    def test_missing_epoch_specification_rejected(self, micro_splits):
        cfg = ssl_cfg("mixmatch", epochs=None, n_batches=None)
        with pytest.raises(ConfigError, match="epochs or n_batches"):
            run_training(cfg, micro_splits)


class TestSweep:
    def test_failures_recorded_and_ranking_stable(self, micro_splits, tmp_path):
        base = ssl_cfg("mixmatch", epochs=1)
        grid = SweepGrid(axes={"learning_rate": [1e-3, -1.0, 5e-4]},
                         stage="secondary")
        result = sweep("secondary", base, grid, micro_splits, runs_dir=tmp_path,
                       n_l_values=[8])
        assert len(result.rows) == 3
        statuses = [row.status for row in result.rows]
        assert statuses[0] == "complete"
        assert statuses[1].startswith("failed:")
        assert statuses[2] == "complete"
        ranked = result.ranked()
        # Failed rows sink to the bottom with infinite loss.
        assert ranked[-1].status.startswith("failed:")
        assert ranked[0].best_val_loss <= ranked[1].best_val_loss

    def test_rerun_reuses_store_and_matches(self, micro_splits, tmp_path):
        base = ssl_cfg("fixmatch", epochs=1)
        grid = SweepGrid(axes={"fixmatch.lambda_u": [1.0, 5.0]}, stage="secondary")
        first = sweep("secondary", base, grid, micro_splits, runs_dir=tmp_path,
                      n_l_values=[8])
        second = sweep("secondary", base, grid, micro_splits, runs_dir=tmp_path,
                       n_l_values=[8])
        assert [r.run_hash for r in first.ranked()] == [r.run_hash for r in second.ranked()]
        assert [r.best_val_loss for r in first.ranked()] == pytest.approx(
            [r.best_val_loss for r in second.ranked()])

    def test_stage_must_match_grid(self, micro_splits):
        base = ssl_cfg("mixmatch")
        with pytest.raises(ConfigError, match="stage"):
            sweep("secondary", base, SweepGrid(axes={"epochs": [1]}), micro_splits,
                  n_l_values=[8])

    def test_secondary_requires_n_l_values(self, micro_splits):
        base = ssl_cfg("mixmatch")
        grid = SweepGrid(axes={"epochs": [1]}, stage="secondary")
        with pytest.raises(ConfigError, match="n_l"):
            sweep("secondary", base, grid, micro_splits)

    def test_max_configs_truncates_deterministically(self, micro_splits, tmp_path):
        base = ssl_cfg("mixmatch", epochs=1)
        grid = SweepGrid(axes={"learning_rate": [1e-3, 5e-4, 1e-4]},
                         stage="secondary")
        result = sweep("secondary", base, grid, micro_splits, runs_dir=tmp_path,
                       n_l_values=[8], max_configs=2)
        assert len(result.rows) == 2
        assert [row.overrides["learning_rate"] for row in result.rows] == [1e-3, 5e-4]

    def test_secondary_iterates_subset_sizes(self, micro_splits, tmp_path):
        base = ssl_cfg("mixmatch", epochs=1)
        grid = SweepGrid(axes={"ema_decay": [0.0, 0.999]}, stage="secondary")
        result = sweep("secondary", base, grid, micro_splits, runs_dir=tmp_path,
                       n_l_values=[8, 16])
        assert len(result.rows) == 4
        assert [row.n_l for row in result.rows] == [8, 8, 16, 16]


class TestEmaAblation:
    def test_report_shape(self, micro_splits, tmp_path):
        base = ssl_cfg("mixmatch", epochs=1).with_overrides({
            "transfer.epochs": 1, "transfer.batch_size": 4,
            "transfer.patience": None,
        })
        report = ema_ablation(base, micro_splits, n_l_values=[8],
                              methods=["mixmatch", "transfer"], runs_dir=tmp_path)
        assert ("mixmatch", 8, 0.0) in report.cells
        assert ("mixmatch", 8, 0.999) in report.cells
        assert ("transfer", 8, 0.0) in report.cells
        # The baseline has no teacher: no beta > 0 cell exists for it.
        assert ("transfer", 8, 0.999) not in report.cells
        for key, value in report.cells.items():
            assert 0.0 <= value <= 1.0
            assert report.provenance[key]

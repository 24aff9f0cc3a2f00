import numpy as np
import pytest

from sslmatch.backbones import Backbone
from sslmatch.checkpoint import load_checkpoint
from sslmatch.config import TransferConfig
from sslmatch.data import DatasetSplits, LabeledExample
from sslmatch.errors import ConfigError
from sslmatch.evaluation import evaluate_split
from sslmatch.transfer import (EarlyStopper, apply_regime, load_pretrained,
                               make_pretrained_fixture, stopped_epoch,
                               train_supervised)


class TestEarlyStopper:
    def test_constant_losses_stop_after_patience(self):
        # A flat validation curve improves once (the first epoch) and then
        # never again; with patience 25 the run executes 26 epochs.
        assert stopped_epoch([1.0] * 100, patience=25) == 26

    def test_strictly_improving_never_stops(self):
        losses = [1.0 / (i + 1) for i in range(40)]
        assert stopped_epoch(losses, patience=5) == 40

    def test_ties_do_not_reset_counter(self):
        # Improvement at epoch 1, exact ties afterwards: ties are not
        # improvements, so the counter keeps growing.
        assert stopped_epoch([0.5, 0.5, 0.5, 0.5], patience=2) == 3

    def test_late_improvement_resets(self):
        assert stopped_epoch([1.0, 1.1, 1.2, 0.9, 1.3, 1.3], patience=3) == 6

    def test_none_patience_disables(self):
        assert stopped_epoch([1.0] * 30, patience=None) == 30

    def test_best_index_is_earliest_minimum(self):
        stopper = EarlyStopper(patience=None)
        for loss in [0.9, 0.4, 0.7, 0.4, 0.5]:
            stopper.update(loss)
        assert stopper.best_index == 1
        assert stopper.best_loss == 0.4

    def test_update_reports_improvement(self):
        stopper = EarlyStopper(patience=2)
        assert stopper.update(1.0) is True
        assert stopper.update(1.0) is False
        assert stopper.update(0.5) is True

    def test_bad_patience(self):
        with pytest.raises(ConfigError):
            EarlyStopper(patience=0)


class TestApplyRegime:
    def test_feature_extraction_freezes_non_head(self):
        model = Backbone("tiny-cnn", num_classes=2, seed=0)
        apply_regime(model, "feature_extraction")
        for name, _ in model.module.named_parameters():
            assert model.trainable[name] is name.startswith("head.")

    def test_fine_tuning_unfreezes(self):
        model = Backbone("tiny-cnn", num_classes=2, seed=0)
        apply_regime(model, "feature_extraction")
        apply_regime(model, "fine_tuning")
        for name, _ in model.module.named_parameters():
            assert model.trainable[name] is True

    def test_unknown_regime(self):
        with pytest.raises(ConfigError, match="regime"):
            apply_regime(Backbone("tiny-cnn", num_classes=2), "linear_probe")


class TestLoadPretrained:
    def test_backbone_restored_head_kept_on_class_mismatch(self, tmp_path):
        path = tmp_path / "pre.bin"
        make_pretrained_fixture(path, num_classes=4, image_side=8, steps=3)
        model = Backbone("tiny-cnn", num_classes=2, input_side=8, seed=11)
        fresh = model.param_vector()
        load_pretrained(model, path)
        after = model.param_vector()
        source = load_checkpoint(path).params
        for name in after.layout:
            if name.startswith("head."):
                # 2-class head cannot take the 4-class checkpoint head.
                np.testing.assert_array_equal(after.segment(name), fresh.segment(name))
            else:
                np.testing.assert_array_equal(after.segment(name), source.segment(name))

    def test_head_copied_when_classes_agree(self, tmp_path):
        path = tmp_path / "pre.bin"
        make_pretrained_fixture(path, num_classes=4, image_side=8, steps=3)
        model = Backbone("tiny-cnn", num_classes=4, input_side=8, seed=11)
        load_pretrained(model, path)
        source = load_checkpoint(path).params
        np.testing.assert_array_equal(model.param_vector().values, source.values)

    def test_architecture_mismatch_rejected(self, tmp_path):
        path = tmp_path / "pre.bin"
        make_pretrained_fixture(path, architecture_id="tiny-cnn", num_classes=4,
                                image_side=8, steps=2)
        model = Backbone("linear", num_classes=4, input_side=8)
        with pytest.raises(ConfigError, match="tiny-cnn"):
            load_pretrained(model, path)

    def test_fixture_is_deterministic(self, tmp_path):
        a = make_pretrained_fixture(tmp_path / "a.bin", num_classes=4,
                                    image_side=8, steps=4, seed=7)
        b = make_pretrained_fixture(tmp_path / "b.bin", num_classes=4,
                                    image_side=8, steps=4, seed=7)
        np.testing.assert_array_equal(a.params.values, b.params.values)


def tiny_labeled_splits(num_classes=2, per_class=8, side=8, seed=0):
    rng = np.random.default_rng(seed)
    def pool(n_per):
        out = []
        for c in range(num_classes):
            for _ in range(n_per):
                base = np.full((1, side, side), 0.25 + 0.5 * c, dtype=np.float32)
                noise = rng.normal(0.0, 0.05, size=base.shape).astype(np.float32)
                out.append(LabeledExample(np.clip(base + noise, 0.0, 1.0), c))
        return out
    return DatasetSplits(pool(per_class), [], pool(3), pool(3),
                         [f"c{i}" for i in range(num_classes)])


class TestTrainSupervised:
    def test_selects_best_epoch_by_validation_loss(self):
        splits = tiny_labeled_splits()
        model = Backbone("tiny-cnn", num_classes=2, input_side=8, seed=1)
        cfg = TransferConfig(regime="fine_tuning", learning_rate=5e-3,
                             weight_decay=0.0, epochs=6, batch_size=4, patience=None)
        result = train_supervised(model, splits, cfg, seed=0)
        assert len(result.history) == 6
        val_losses = [rec.val_loss for rec in result.history]
        best = int(np.argmin(val_losses)) + 1
        assert result.best_epoch == best
        assert result.best_val_loss == pytest.approx(min(val_losses))
        # The snapshot reproduces the recorded best validation loss.
        model.load_param_vector(result.best_params)
        loss, acc = evaluate_split(model, splits.validation)
        assert loss == pytest.approx(result.best_val_loss, abs=1e-9)
        assert acc == pytest.approx(result.best_val_acc, abs=1e-12)

    def test_feature_extraction_leaves_backbone_untouched(self):
        splits = tiny_labeled_splits()
        model = Backbone("tiny-cnn", num_classes=2, input_side=8, seed=2)
        apply_regime(model, "feature_extraction")
        before = model.param_vector()
        cfg = TransferConfig(regime="feature_extraction", learning_rate=1e-2,
                             weight_decay=0.0, epochs=3, batch_size=4, patience=None)
        result = train_supervised(model, splits, cfg, seed=0)
        after = model.param_vector()
        for name in after.layout:
            if name.startswith("head."):
                continue
            drift = np.linalg.norm(after.segment(name) - before.segment(name))
            assert drift == 0.0
        for name in result.best_params.layout:
            if not name.startswith("head."):
                np.testing.assert_array_equal(result.best_params.segment(name),
                                              before.segment(name))

    def test_early_stopping_truncates_history(self):
        splits = tiny_labeled_splits()
        model = Backbone("tiny-cnn", num_classes=2, input_side=8, seed=3)
        # Zero learning rate: the validation loss never changes after the
        # first epoch's improvement, so patience 2 stops at epoch 3.
        cfg = TransferConfig(regime="fine_tuning", learning_rate=0.0,
                             weight_decay=0.0, epochs=50, batch_size=4, patience=2)
        result = train_supervised(model, splits, cfg, seed=0)
        assert len(result.history) == 3
        assert result.best_epoch == 1

    def test_deterministic(self):
        splits = tiny_labeled_splits()
        cfg = TransferConfig(regime="fine_tuning", learning_rate=5e-3,
                             weight_decay=0.0, epochs=3, batch_size=4, patience=None)
        r1 = train_supervised(Backbone("tiny-cnn", 2, input_side=8, seed=4),
                              splits, cfg, seed=9)
        r2 = train_supervised(Backbone("tiny-cnn", 2, input_side=8, seed=4),
                              splits, cfg, seed=9)
        np.testing.assert_array_equal(r1.best_params.values, r2.best_params.values)
        assert [rec.val_loss for rec in r1.history] == [rec.val_loss for rec in r2.history]

    def test_missing_splits_rejected(self):
        splits = tiny_labeled_splits()
        cfg = TransferConfig(regime="fine_tuning", learning_rate=1e-3,
                             weight_decay=0.0, epochs=1, batch_size=4, patience=None)
        empty_train = DatasetSplits([], [], splits.validation, [], ["a", "b"])
        with pytest.raises(ConfigError):
            train_supervised(Backbone("tiny-cnn", 2, input_side=8), empty_train, cfg, 0)
        empty_val = DatasetSplits(splits.train_labeled, [], [], [], ["a", "b"])
        with pytest.raises(ConfigError):
            train_supervised(Backbone("tiny-cnn", 2, input_side=8), empty_val, cfg, 0)


class TestEvaluateSplit:
    def test_accuracy_and_loss_on_known_model(self):
        # Zeroed 2-class model: uniform predictions, CE = ln 2 everywhere,
        # accuracy = fraction labeled as class 0 (argmax tie-break).
        model = Backbone("tiny-cnn", num_classes=2, input_side=8, seed=0)
        model.zero_params()
        examples = [LabeledExample(np.zeros((1, 8, 8), dtype=np.float32), c)
                    for c in (0, 0, 1, 1)]
        loss, acc = evaluate_split(model, examples)
        assert loss == pytest.approx(np.log(2.0), abs=1e-6)
        assert acc == 0.5

    def test_param_override_restores_current_weights(self):
        model = Backbone("tiny-cnn", num_classes=2, input_side=8, seed=1)
        current = model.param_vector()
        other = current.copy()
        other.values[:] = 0.0
        examples = [LabeledExample(np.zeros((1, 8, 8), dtype=np.float32), 0)]
        loss, _ = evaluate_split(model, examples, params=other)
        assert loss == pytest.approx(np.log(2.0), abs=1e-6)
        np.testing.assert_array_equal(model.param_vector().values, current.values)

    def test_empty_split_rejected(self):
        model = Backbone("tiny-cnn", num_classes=2)
        with pytest.raises(ValueError):
            evaluate_split(model, [])

"""Cross-validation harness, early stopping, and metric oracles."""

import numpy as np
import pytest

from sickfuse.errors import ConfigError
from sickfuse.labeling import Window
from sickfuse.model import ModelConfig, build_model
from sickfuse.trainer import (ArrayDataset, TrainConfig, build_dataset,
                              classification_targets, evaluate_classification,
                              evaluate_regression, kfold_split, mean_over_folds,
                              run_cv, train)

from oracles import confusion_oracle, pearson_oracle, r2_oracle, rmse_oracle


class TestKfold:
    def test_ten_singletons(self):
        folds = kfold_split(10, 10, seed=0)
        assert all(len(f) == 1 for f in folds)
        assert sorted(np.concatenate(folds).tolist()) == list(range(10))

    def test_1755_into_10_balanced(self):
        folds = kfold_split(1755, 10, seed=1)
        sizes = sorted(len(f) for f in folds)
        assert sizes == [175] * 5 + [176] * 5

    def test_deterministic_per_seed(self):
        a = kfold_split(1000, 10, seed=5)
        b = kfold_split(1000, 10, seed=5)
        c = kfold_split(1000, 10, seed=6)
        assert all(np.array_equal(x, y) for x, y in zip(a, b))
        assert any(not np.array_equal(x, y) for x, y in zip(a, c))

    def test_disjoint_and_covering(self):
        folds = kfold_split(103, 7, seed=2)
        joined = np.concatenate(folds)
        assert len(joined) == 103
        assert len(np.unique(joined)) == 103

    def test_too_few_samples_rejected(self):
        with pytest.raises(ConfigError):
            kfold_split(5, 10, seed=0)


def toy_windows(n, seed=0, signal=2.0):
    """Separable toy set: eye features shift with the score."""
    rng = np.random.default_rng(seed)
    windows = []
    for i in range(n):
        fms = float(rng.integers(0, 9))
        eye = rng.normal(size=(220, 9)) * 0.3
        eye[:, 0:2] += signal * fms / 8.0
        head = rng.normal(size=(220, 4)) * 0.3
        head[:, 0] += signal * fms / 8.0
        pid = f"P{i % 4:02d}"
        windows.append(Window(f"{pid}|BeachCity|{30 * (i + 1)}", pid,
                              "BeachCity", 30.0 * (i + 1), fms, eye, head))
    return windows


def toy_model_config(task="classification", timestep=8):
    return ModelConfig(modalities=("eye", "head"), task=task, timestep=timestep,
                       td_filters=4, lstm_hidden=6, branch_dense=8,
                       fusion_dense=16)


class TestTrainLoop:
    def test_early_stop_at_patience_and_restore(self):
        cfg = toy_model_config()
        model = build_model(cfg, seed=0)
        windows = toy_windows(24)
        data = build_dataset(windows, cfg)
        _, targets = classification_targets(
            data.fms, __import__("sickfuse.labeling", fromlist=["x"])
            .compute_fms_quantiles(data.fms))
        tcfg = TrainConfig(epochs=60, batch_size=8, patience=20, seed=3)
        snapshots = {}

        def stub_val(model_, epoch):
            # improving through epoch 5, flat afterwards
            if epoch == 5:
                snapshots["best"] = model_.parameter_arrays()
            return 10.0 - epoch if epoch <= 5 else 5.0

        history = train(model, data, targets, tcfg, val_loss_fn=stub_val)
        assert history.best_epoch == 5
        assert history.stop_epoch == 25
        for name, arr in snapshots["best"].items():
            assert np.array_equal(model.parameter_arrays()[name], arr), name

    def test_improving_validation_never_stops_early(self):
        cfg = toy_model_config()
        model = build_model(cfg, seed=1)
        data = build_dataset(toy_windows(16), cfg)
        targets = data.fms.reshape(-1, 1)
        cfg2 = ModelConfig(**{**cfg.__dict__, "task": "regression"})
        model = build_model(cfg2, seed=1)
        tcfg = TrainConfig(epochs=8, batch_size=8, patience=3, seed=3)
        history = train(model, data, targets, tcfg,
                        val_loss_fn=lambda m, e: 100.0 - e)
        assert history.stop_epoch == 8
        assert history.best_epoch == 8

    def test_training_loss_decreases_on_separable_set(self):
        cfg = toy_model_config(task="regression")
        model = build_model(cfg, seed=2)
        windows = toy_windows(32, signal=3.0)
        data = build_dataset(windows, cfg)
        tcfg = TrainConfig(epochs=10, batch_size=8, patience=10, seed=4, lr=3e-3)
        history = train(model, data, targets=data.fms.reshape(-1, 1), config=tcfg)
        first = np.mean(history.train_loss[:3])
        last = np.mean(history.train_loss[-3:])
        assert last < first


class TestMetrics:
    def test_perfect_classification(self):
        m = evaluate_classification([0, 1, 2, 3], [0, 1, 2, 3])
        assert m["accuracy"] == 1.0
        for name in ("None", "Low", "Medium", "High"):
            assert m[f"precision_{name}"] == 1.0
            assert m[f"recall_{name}"] == 1.0

    def test_hand_counted_confusion(self):
        # labels N,N,L,H preds N,L,L,H
        labels = [0, 0, 1, 3]
        preds = [0, 1, 1, 3]
        m = evaluate_classification(preds, labels)
        assert m["accuracy"] == 0.75
        assert m["precision_None"] == 1.0
        assert m["recall_None"] == 0.5
        assert m["precision_Low"] == 0.5
        assert m["recall_Low"] == 1.0

    def test_degenerate_single_class_labels(self):
        m = evaluate_classification([0, 0, 0], [0, 0, 0])
        assert m["accuracy"] == 1.0
        assert m["recall_Low"] is None  # no Low instances
        assert m["precision_Low"] is None  # never predicted

    def test_matches_bruteforce_oracle_on_random_vectors(self):
        rng = np.random.default_rng(0)
        for _ in range(25):
            n = int(rng.integers(1, 100))
            labels = rng.integers(0, 4, n)
            preds = rng.integers(0, 4, n)
            ours = evaluate_classification(preds, labels)
            acc, precision, recall = confusion_oracle(preds, labels, 4)
            assert abs(ours["accuracy"] - acc) < 1e-9
            for c, name in enumerate(("None", "Low", "Medium", "High")):
                for kind, oracle_vals in (("precision", precision), ("recall", recall)):
                    mine = ours[f"{kind}_{name}"]
                    if oracle_vals[c] is None:
                        assert mine is None
                    else:
                        assert abs(mine - oracle_vals[c]) < 1e-9

    def test_regression_perfect(self):
        m = evaluate_regression([1.0, 2.0, 3.0], [1.0, 2.0, 3.0])
        assert m["rmse"] == 0.0 and m["plcc"] == 1.0 and m["r2"] == 1.0

    def test_regression_hand_case(self):
        # preds = 2 * targets with targets [1,2,3]: SSres = 1+4+9 = 14,
        # SStot = 2, so R^2 = 1 - 14/2 = -6 (confirmed by the oracle below)
        m = evaluate_regression([2.0, 4.0, 6.0], [1.0, 2.0, 3.0])
        assert abs(m["plcc"] - 1.0) < 1e-12
        assert abs(m["r2"] - r2_oracle([2.0, 4.0, 6.0], [1.0, 2.0, 3.0])) < 1e-12
        assert abs(m["r2"] - (-6.0)) < 1e-12
        assert abs(m["rmse"] - np.sqrt(14.0 / 3.0)) < 1e-12

    def test_constant_prediction_gives_zero_r2(self):
        targets = [1.0, 2.0, 3.0]
        m = evaluate_regression([2.0, 2.0, 2.0], targets)
        assert abs(m["r2"]) < 1e-12
        assert m["plcc"] is None  # zero-variance predictions

    def test_matches_oracles_on_random_vectors(self):
        rng = np.random.default_rng(1)
        for _ in range(25):
            n = int(rng.integers(2, 100))
            preds = rng.normal(size=n)
            targets = rng.normal(size=n)
            m = evaluate_regression(preds, targets)
            assert abs(m["rmse"] - rmse_oracle(preds, targets)) < 1e-9
            assert abs(m["plcc"] - pearson_oracle(preds, targets)) < 1e-9
            assert abs(m["r2"] - r2_oracle(preds, targets)) < 1e-9


class TestRunCV:
    def test_two_fold_bookkeeping(self):
        windows = toy_windows(8)
        mcfg = toy_model_config()
        tcfg = TrainConfig(epochs=2, batch_size=4, patience=5, folds=2, seed=0)
        report = run_cv(windows, mcfg, tcfg)
        assert len(report.fold_metrics) == 2
        assert len(report.hygiene) == 2
        test_sets = [set(h["test"]) for h in report.hygiene]
        assert test_sets[0] | test_sets[1] == set(range(8))
        assert not test_sets[0] & test_sets[1]

    def test_mean_row_is_arithmetic_mean(self):
        folds = [{"a": 1.0, "b": None}, {"a": 3.0, "b": 0.5}]
        means = mean_over_folds(folds)
        assert means["a"] == 2.0
        assert means["b"] == 0.5

    def test_hygiene_validation_inside_training_partition(self):
        windows = toy_windows(20)
        mcfg = toy_model_config()
        tcfg = TrainConfig(epochs=2, batch_size=4, patience=5, folds=4, seed=1)
        report = run_cv(windows, mcfg, tcfg)
        for h in report.hygiene:
            test, val, fit = set(h["test"]), set(h["val"]), set(h["fit"])
            assert not val & test
            assert not fit & test
            assert not val & fit
            assert val | fit | test == set(range(20))
            assert set(h["norm_fit_on"]) == val | fit
            n_train = len(val) + len(fit)
            assert len(val) == max(1, round(0.2 * n_train))

    def test_same_seed_identical_report(self):
        windows = toy_windows(12)
        mcfg = toy_model_config(task="regression")
        tcfg = TrainConfig(epochs=3, batch_size=4, patience=5, folds=3, seed=9)
        a = run_cv(windows, mcfg, tcfg)
        b = run_cv(windows, mcfg, tcfg)
        for fa, fb in zip(a.fold_metrics, b.fold_metrics):
            for k in fa:
                if fa[k] is None:
                    assert fb[k] is None
                else:
                    assert abs(fa[k] - fb[k]) <= 1e-12

    def test_report_csv_has_fold_rows_and_mean(self):
        windows = toy_windows(8)
        mcfg = toy_model_config()
        tcfg = TrainConfig(epochs=1, batch_size=4, patience=5, folds=2, seed=0)
        report = run_cv(windows, mcfg, tcfg)
        lines = report.to_csv().strip().split("\n")
        assert len(lines) == 4  # header + 2 folds + mean
        assert lines[0].startswith("fold,")
        assert lines[-1].startswith("mean,")

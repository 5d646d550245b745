"""
Unit tests for demodulator module.
"""

import json
import math

import numpy as np
import pytest

from molcom_demod.demodulator import (
    CNN_CONFIG_FILE,
    INPUT_LEN,
    CnnConfig,
    TrainConfig,
    TrainingHistory,
    architecture_table,
    build_network,
    count_parameters,
    evaluate,
    layer_table,
    load_model,
    predict,
    predict_batch,
    save_model,
    threshold_baseline_fit,
    threshold_baseline_predict,
    threshold_baseline_predict_batch,
    train,
)
from molcom_demod.errors import DataError, DomainError
from molcom_demod.preprocess import SegmentDataset, stratified_split
from molcom_demod.tensor_nn import Conv1d, Dense, Flatten, MaxPool1d, ReLU, Sequential


def _separable_dataset(alphabet_size=4, per_class=40, seed=0):
    """Bumps whose height encodes the class, with a little noise."""
    rng = np.random.default_rng(seed)
    grid = np.linspace(0, 1, INPUT_LEN)
    bump = np.exp(-((grid - 0.3) ** 2) / 0.01)
    y = np.repeat(np.arange(alphabet_size), per_class)
    heights = 0.2 + 0.8 * y / (alphabet_size - 1)
    X = heights[:, np.newaxis] * bump + rng.normal(scale=0.01, size=(len(y), INPUT_LEN))
    X = np.clip(X, 0.0, 1.0)
    return SegmentDataset(X=X, y=y, alphabet_size=alphabet_size, split=stratified_split(y, seed=seed))


def _tiny_net(alphabet_size=4):
    """Small network over 128-sample segments with zero parameters."""
    return Sequential([Conv1d(1, 2, 3), ReLU(), MaxPool1d(), Flatten(), Dense(128, alphabet_size)])


class TestArchitecture:
    """Tests for build_network, count_parameters and layer_table."""

    @pytest.mark.slow
    def test_full_size_parameter_count(self):
        """Test the parameter count of the 4096-wide network."""
        net = build_network(CnnConfig(), np.random.default_rng(0))
        assert count_parameters(net) == 33_735_560

    def test_parameter_count_formula(self):
        """Test the count against the per-layer closed form for a narrow network."""
        f, c = 32, 6
        net = build_network(CnnConfig(alphabet_size=c, fc_width=f), np.random.default_rng(0))
        conv = (64 * 7 + 64) + (128 * 64 * 5 + 128) + (256 * 128 * 3 + 256)
        dense = (16 * 256 * f + f) + (f * f + f) + (f * c + c)
        assert count_parameters(net) == conv + dense

    def test_layer_table(self):
        """Test nine CONV/MAX/FC rows with dropout on the hidden FC rows."""
        net = build_network(CnnConfig(fc_width=64), np.random.default_rng(0))
        rows = layer_table(net)

        assert [r.kind for r in rows] == ["CONV", "MAX", "CONV", "MAX", "CONV", "MAX", "FC", "FC", "FC"]
        assert rows[0].input_shape == (128, 1)
        assert rows[0].output_shape == (128, 64)
        assert rows[0].kernel_size == 7
        assert rows[1].output_shape == (64, 64)
        assert rows[5].output_shape == (16, 256)
        assert rows[6].input_shape == (16, 256)
        assert rows[6].output_shape == (64,)
        assert rows[8].output_shape == (8,)
        assert [r.dropout for r in rows[6:]] == [0.5, 0.5, None]

    @pytest.mark.parametrize("c", [6, 8])
    def test_full_width_architecture_table(self, c):
        """Test every row of the 4096-wide architecture for C=6 and C=8."""
        rows = architecture_table(CnnConfig(alphabet_size=c))

        expected = [
            ("CONV", (128, 1), (128, 64), 7, 1, None),
            ("MAX", (128, 64), (64, 64), 2, 2, None),
            ("CONV", (64, 64), (64, 128), 5, 1, None),
            ("MAX", (64, 128), (32, 128), 2, 2, None),
            ("CONV", (32, 128), (32, 256), 3, 1, None),
            ("MAX", (32, 256), (16, 256), 2, 2, None),
            ("FC", (16, 256), (4096,), None, None, 0.5),
            ("FC", (4096,), (4096,), None, None, 0.5),
            ("FC", (4096,), (c,), None, None, None),
        ]
        actual = [(r.kind, r.input_shape, r.output_shape, r.kernel_size, r.stride, r.dropout) for r in rows]
        assert actual == expected
        assert [r.number for r in rows] == list(range(1, 10))

    @pytest.mark.parametrize("c", [6, 8])
    def test_untrained_loss_near_uniform(self, c):
        """Test an untrained network costs ln C to within 5%."""
        net = build_network(CnnConfig(alphabet_size=c, fc_width=64), np.random.default_rng(1))
        X = np.random.default_rng(2).uniform(size=(32, INPUT_LEN))
        y = np.arange(32) % c
        loss, _ = evaluate(net, X, y)
        assert abs(loss - math.log(c)) < 0.05 * math.log(c)

    def test_invalid_config(self):
        with pytest.raises(DomainError):
            CnnConfig(alphabet_size=1)
        with pytest.raises(DomainError):
            CnnConfig(input_len=64)
        with pytest.raises(DomainError):
            TrainConfig(plateau_patience=20, early_stop_patience=20)


class TestPredict:
    """Tests for predict and predict_batch."""

    def test_zero_network_ties_to_lowest(self):
        """Test uniform probabilities pick class 0."""
        label, probs = predict(_tiny_net(), np.zeros(INPUT_LEN))
        assert label == 0
        np.testing.assert_allclose(probs, np.full(4, 0.25))

    def test_batch_probabilities(self):
        net = build_network(CnnConfig(alphabet_size=4, fc_width=16), np.random.default_rng(0))
        labels, probs = predict_batch(net, np.random.default_rng(1).uniform(size=(5, INPUT_LEN)))
        assert labels.shape == (5,)
        np.testing.assert_allclose(probs.sum(axis=1), 1.0, atol=1e-6)
        np.testing.assert_array_equal(labels, probs.argmax(axis=1))

    def test_wrong_length(self):
        with pytest.raises(DataError):
            predict(_tiny_net(), np.zeros(100))

    def test_non_finite_segment(self):
        segment = np.zeros(INPUT_LEN)
        segment[3] = np.nan
        with pytest.raises(DataError):
            predict(_tiny_net(), segment)


class TestTrainingSchedule:
    """Tests for the plateau and early-stopping schedule."""

    def test_plateau_decay_and_early_stop(self):
        """Test decays after each plateau and the stop after the patience runs out."""
        dataset = _separable_dataset()
        net = _tiny_net()
        net.layers[0].initialize(np.random.default_rng(0))
        net.layers[4].initialize(np.random.default_rng(1))
        tcfg = TrainConfig(
            batch_size=32,
            learning_rate=1e-3,
            plateau_patience=2,
            early_stop_patience=5,
            improvement_tolerance=1e9,
            max_epochs=50,
        )
        net, history = train(net, dataset, tcfg)

        assert history.stop_reason == "early_stop"
        assert len(history) == 6
        assert history.best_epoch == 1
        assert history.learning_rates == pytest.approx([1e-3, 1e-3, 1e-3, 1e-4, 1e-4, 1e-5])

        X_val, y_val = dataset.subset("val")
        val_loss, _ = evaluate(net, X_val, y_val)
        assert val_loss == pytest.approx(history.epochs[0].val_loss, rel=1e-6)

    def test_max_epochs(self):
        net = _tiny_net()
        net.layers[4].initialize(np.random.default_rng(0))
        _, history = train(net, _separable_dataset(), TrainConfig(max_epochs=2))
        assert history.stop_reason == "max_epochs"
        assert [e.epoch for e in history.epochs] == [1, 2]

    def test_same_seed_same_run(self):
        """Test identical seeds give identical histories and weights, dropout included."""
        dataset = _separable_dataset()
        cnn = CnnConfig(alphabet_size=4, fc_width=16)
        tcfg = TrainConfig(batch_size=16, max_epochs=3, seed=7)

        net_a, history_a = train(build_network(cnn, np.random.default_rng(3)), dataset, tcfg)
        net_b, history_b = train(build_network(cnn, np.random.default_rng(3)), dataset, tcfg)

        assert history_a == history_b
        params_a, params_b = net_a.parameters(), net_b.parameters()
        assert params_a.keys() == params_b.keys()
        for name in params_a:
            np.testing.assert_array_equal(params_a[name], params_b[name])

    def test_alphabet_mismatch(self):
        with pytest.raises(DataError):
            train(_tiny_net(alphabet_size=8), _separable_dataset(), TrainConfig(max_epochs=1))

    @pytest.mark.slow
    def test_learns_separable_levels(self):
        """Test the CNN separates amplitude-coded bumps."""
        dataset = _separable_dataset(alphabet_size=4, per_class=40)
        net = build_network(CnnConfig(alphabet_size=4, fc_width=32, dropout=0.0), np.random.default_rng(0))
        net, history = train(net, dataset, TrainConfig(batch_size=16, max_epochs=30))

        X_test, y_test = dataset.subset("test")
        _, accuracy = evaluate(net, X_test, y_test)
        assert accuracy >= 0.9
        assert history.best_val_loss < history.epochs[0].val_loss


class TestThresholdBaseline:
    """Tests for the maximum-amplitude baseline."""

    def test_fit_and_predict(self):
        """Test class means of segment maxima and nearest-mean decisions."""
        dataset = _separable_dataset(alphabet_size=4)
        means = threshold_baseline_fit(dataset)
        assert np.all(np.diff(means) > 0)

        X_test, y_test = dataset.subset("test")
        np.testing.assert_array_equal(threshold_baseline_predict_batch(means, X_test), y_test)
        assert threshold_baseline_predict(means, X_test[0]) == y_test[0]

    def test_ties_go_to_lower_class(self):
        assert threshold_baseline_predict([0.2, 0.4], np.full(INPUT_LEN, 0.3)) == 0

    def test_missing_class(self):
        y = np.array([0, 0, 1, 1, 0, 1])
        dataset = SegmentDataset(
            X=np.zeros((6, INPUT_LEN)),
            y=y,
            alphabet_size=3,
            split={"train": [0, 1, 2, 3], "val": [4], "test": [5]},
        )
        with pytest.raises(DataError, match="class 2"):
            threshold_baseline_fit(dataset)


class TestPersistence:
    """Tests for model and history files."""

    def test_model_round_trip(self, tmp_path):
        cfg = CnnConfig(alphabet_size=4, fc_width=16)
        net = build_network(cfg, np.random.default_rng(0))
        save_model(net, cfg, tmp_path)

        loaded, loaded_cfg = load_model(tmp_path)
        assert loaded_cfg == cfg
        X = np.random.default_rng(1).uniform(size=(3, INPUT_LEN))
        np.testing.assert_array_equal(predict_batch(loaded, X)[1], predict_batch(net, X)[1])

    def test_config_mismatch(self, tmp_path):
        """Test a cnn.json disagreeing with the weights is a data error."""
        cfg = CnnConfig(alphabet_size=4, fc_width=16)
        save_model(build_network(cfg, np.random.default_rng(0)), cfg, tmp_path)
        (tmp_path / CNN_CONFIG_FILE).write_text(json.dumps({"alphabet_size": 6, "fc_width": 16}))
        with pytest.raises(DataError):
            load_model(tmp_path)

    def test_history_csv(self, tmp_path):
        net = _tiny_net()
        net.layers[4].initialize(np.random.default_rng(0))
        _, history = train(net, _separable_dataset(), TrainConfig(max_epochs=3))
        restored = TrainingHistory.from_csv(history.to_csv(tmp_path / "history.csv"))
        assert restored.epochs == history.epochs
        assert restored.best_epoch == history.best_epoch

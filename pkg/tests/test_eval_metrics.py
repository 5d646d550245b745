"""
Unit tests for eval_metrics module.
"""

import csv
import math

import numpy as np
import pytest

from molcom_demod.errors import DataError, DomainError
from molcom_demod.eval_metrics import (
    SUMMARY_COLUMNS,
    CapacityQuery,
    ConfusionMatrix,
    OffsetTable,
    ScenarioReport,
    accuracy,
    binary_entropy,
    bit_error_rate,
    bit_error_rate_from_confusion,
    bits_per_symbol,
    confusion,
    net_data_rate,
    offset_distribution,
    rate_boundary,
    report,
    row_normalize,
    symbol_to_bits,
    write_confusion_csv,
    write_offsets_csv,
    write_summary_csv,
)


class TestConfusion:
    """Tests for confusion counting and normalization."""

    def test_direct_count(self):
        cm = confusion([0, 0, 1], [0, 1, 1])
        np.testing.assert_array_equal(cm.counts, [[1, 1], [0, 1]])

    def test_perfect_predictions(self):
        """Test perfect predictions give a diagonal matrix normalizing to identity."""
        labels = np.arange(8).repeat(3)
        cm = confusion(labels, labels, 8)
        probs, empty = row_normalize(cm)
        np.testing.assert_array_equal(probs, np.eye(8))
        assert empty == []

    def test_matches_naive_recount(self):
        """Test 10^4 random pairs against an independent loop count."""
        rng = np.random.default_rng(0)
        truth = rng.integers(0, 6, 10_000)
        pred = rng.integers(0, 6, 10_000)
        cm = confusion(truth, pred, 6)

        naive = np.zeros((6, 6), dtype=int)
        for t, p in zip(truth, pred, strict=True):
            naive[t][p] += 1
        np.testing.assert_array_equal(cm.counts, naive)
        np.testing.assert_array_equal(cm.class_counts, np.bincount(truth, minlength=6))

    def test_empty_row_flagged(self):
        """Test a never-transmitted symbol yields an all-zero row that is reported."""
        cm = confusion([0, 0, 2], [0, 1, 2], 3)
        probs, empty = row_normalize(cm)
        assert empty == [1]
        np.testing.assert_array_equal(probs[1], [0, 0, 0])
        np.testing.assert_allclose(probs[[0, 2]].sum(axis=1), 1.0)

    def test_length_mismatch(self):
        with pytest.raises(DataError):
            confusion([0, 1], [0])

    def test_label_out_of_range(self):
        with pytest.raises(DataError):
            confusion([0, 3], [0, 1], 3)

    def test_negative_counts_rejected(self):
        with pytest.raises(DataError):
            ConfusionMatrix(np.array([[1, -1], [0, 1]]))


class TestOffsets:
    """Tests for offset_distribution and accuracy."""

    def test_identity(self):
        table = offset_distribution(ConfusionMatrix(np.eye(4, dtype=int) * 5))
        np.testing.assert_array_equal(table.probabilities, [1, 0, 0, 0])

    def test_swapped(self):
        table = offset_distribution(ConfusionMatrix(np.array([[0, 5], [5, 0]])))
        assert table[0] == 0.0
        assert table[1] == 1.0

    def test_offsets_are_absolute(self):
        """Test over- and under-estimates fold into the same offset."""
        cm = confusion([2, 2, 2, 2], [0, 4, 3, 2], 5)
        np.testing.assert_allclose(offset_distribution(cm).probabilities, [0.25, 0.25, 0.5, 0, 0])

    def test_random_sums_to_one(self):
        """Test offset probabilities sum to 1 and P(0) equals trace / total."""
        rng = np.random.default_rng(3)
        for _ in range(10):
            counts = rng.integers(0, 50, size=(8, 8))
            cm = ConfusionMatrix(counts)
            table = offset_distribution(cm)
            assert abs(table.probabilities.sum() - 1.0) <= 1e-9
            assert accuracy(cm) == np.trace(counts) / counts.sum()
            assert table[0] == pytest.approx(accuracy(cm), abs=1e-12)

    def test_published_column_is_a_distribution(self):
        OffsetTable(np.array([0.49, 0.20, 0.09, 0.08, 0.05, 0.03, 0.04, 0.02]))

    def test_empty_matrix(self):
        cm = ConfusionMatrix(np.zeros((3, 3), dtype=int))
        with pytest.raises(DataError):
            offset_distribution(cm)
        with pytest.raises(DataError):
            accuracy(cm)


class TestBitMappings:
    """Tests for symbol_to_bits and bit error rates."""

    def test_gray_code(self):
        np.testing.assert_array_equal(symbol_to_bits(5, 8, "gray"), [1, 1, 1])
        np.testing.assert_array_equal(symbol_to_bits(5, 8, "natural"), [1, 0, 1])

    @pytest.mark.parametrize("alphabet_size", [2, 4, 8, 16])
    def test_gray_adjacency(self, alphabet_size):
        """Test consecutive symbols differ in exactly one bit under Gray mapping."""
        for s in range(alphabet_size - 1):
            a = symbol_to_bits(s, alphabet_size, "gray")
            b = symbol_to_bits(s + 1, alphabet_size, "gray")
            assert int(np.sum(a != b)) == 1

    def test_bits_per_symbol(self):
        assert bits_per_symbol(2) == 1
        assert bits_per_symbol(6) == 3
        assert bits_per_symbol(8) == 3

    def test_zero_errors(self):
        labels = np.arange(8)
        assert bit_error_rate(labels, labels, 8) == 0.0

    def test_known_error_count(self):
        """Test 3 -> 4 flips all three natural bits but one Gray bit."""
        assert bit_error_rate([3], [4], 8, "natural") == 1.0
        assert bit_error_rate([3], [4], 8, "gray") == pytest.approx(1 / 3)

    def test_confusion_path_matches_labels(self):
        rng = np.random.default_rng(1)
        truth = rng.integers(0, 8, 500)
        pred = rng.integers(0, 8, 500)
        naive = sum(
            int(np.sum(symbol_to_bits(t, 8, "gray") != symbol_to_bits(p, 8, "gray")))
            for t, p in zip(truth, pred, strict=True)
        ) / (500 * 3)
        cm = confusion(truth, pred, 8)
        assert bit_error_rate_from_confusion(cm, "gray") == pytest.approx(naive)

    def test_unknown_mapping(self):
        with pytest.raises(DomainError):
            symbol_to_bits(1, 4, "hamming")


class TestRates:
    """Tests for binary_entropy, net_data_rate and rate_boundary."""

    def test_entropy_values(self):
        assert binary_entropy(0.5) == 1.0
        assert binary_entropy(0.0) == 0.0
        assert binary_entropy(1.0) == 0.0
        assert binary_entropy(0.01) == pytest.approx(0.080793, abs=1e-6)
        assert binary_entropy(0.02) == pytest.approx(0.141441, abs=1e-6)

    def test_entropy_symmetry(self):
        for x in np.linspace(0, 1, 1001):
            assert abs(binary_entropy(x) - binary_entropy(1 - x)) <= 1e-12

    def test_entropy_domain(self):
        with pytest.raises(DomainError):
            binary_entropy(1.5)

    def test_rate_equals_gross_when_f_is_pb(self):
        assert net_data_rate(CapacityQuery(6.0, 0.03, 0.03)) == pytest.approx(6.0, rel=1e-15)

    def test_rate_zero_at_half(self):
        assert net_data_rate(CapacityQuery(6.0, 0.5, 0.01)) == 0.0

    def test_rate_example(self):
        """Test Rg=6, f=0.02, pb=0.01 against the direct evaluation."""
        rate = net_data_rate(CapacityQuery(6.0, 0.02, 0.01))
        assert rate == pytest.approx(6 * (1 - 0.141441) / (1 - 0.080793), abs=1e-4)
        assert rate == pytest.approx(5.603, abs=2e-3)

    def test_rate_monotone_in_f(self):
        """Test the rate never increases with f for random (Rg, pb)."""
        rng = np.random.default_rng(7)
        grid = np.linspace(0, 0.5, 201)
        for _ in range(5):
            rg, pb = rng.uniform(0.5, 20), rng.uniform(0.001, 0.2)
            rates = [net_data_rate(CapacityQuery(rg, f, pb)) for f in grid]
            assert all(b <= a + 1e-12 for a, b in zip(rates, rates[1:], strict=False))

    def test_rate_boundary(self):
        """Test the largest f keeping 5.5 bit/s out of 6 bit/s gross."""
        f = rate_boundary(6.0, 5.5, 0.01)
        assert f == pytest.approx(0.0229, abs=1e-3)
        assert net_data_rate(CapacityQuery(6.0, f, 0.01)) == pytest.approx(5.5, abs=1e-9)
        assert net_data_rate(CapacityQuery(6.0, f - 1e-4, 0.01)) > 5.5
        assert net_data_rate(CapacityQuery(6.0, f + 1e-4, 0.01)) < 5.5

    def test_unreachable_target(self):
        with pytest.raises(DomainError):
            rate_boundary(6.0, 100.0)

    @pytest.mark.parametrize(
        "rg,f,pb",
        [(0.0, 0.1, 0.01), (6.0, 0.6, 0.01), (6.0, 0.1, 0.0), (6.0, 0.1, 0.5)],
    )
    def test_query_domains(self, rg, f, pb):
        with pytest.raises(DomainError):
            CapacityQuery(rg, f, pb)


class TestReport:
    """Tests for report and the CSV writers."""

    def test_identity_report(self):
        """Test a perfect classifier reaches Rg / (1 - H2(0.01))."""
        cm = confusion(np.arange(8).repeat(10), np.arange(8).repeat(10), 8)
        result = report(cm, symbol_rate=2.0)
        assert result.accuracy == 1.0
        assert result.f_natural == 0.0
        assert result.gross_rate == 6.0
        assert result.net_rate == pytest.approx(6.0 / (1 - binary_entropy(0.01)))
        assert result.net_rate / result.gross_rate == pytest.approx(1.0879, abs=1e-4)
        assert result.scenario == "C8_2Hz"
        assert not result.ber_approximate

    def test_random_binary_predictions(self):
        """Test coin-flip predictions carry essentially no information."""
        rng = np.random.default_rng(0)
        truth = rng.integers(0, 2, 100_000)
        pred = rng.integers(0, 2, 100_000)
        result = report(confusion(truth, pred, 2), symbol_rate=1.0)
        assert abs(result.accuracy - 0.5) < 0.01
        assert abs(result.f_natural - 0.5) < 0.01
        assert result.net_rate < 0.01

    def test_error_rate_above_half_is_clamped(self):
        """Test an always-wrong binary classifier reports zero net rate."""
        result = report(confusion([0, 1, 0, 1], [1, 0, 1, 0], 2), symbol_rate=1.0)
        assert result.f_natural == 1.0
        assert result.net_rate == 0.0

    def test_empty_row_and_approximate_ber(self):
        """Test C=6 with a missing class is flagged without failing."""
        cm = confusion([0, 1, 2, 3, 4], [0, 1, 2, 3, 5], 6)
        result = report(cm, symbol_rate=4.0, baseline_accuracy=0.5)
        assert result.empty_rows == [5]
        assert result.ber_approximate
        assert "Empty rows: [5]" in result.summary()
        assert "baseline" in result.summary()

    def test_dict_round_trip(self):
        result = report(confusion([0, 1, 1], [0, 1, 0], 2), symbol_rate=2.0, scenario="s")
        assert ScenarioReport.from_dict(result.to_dict()) == result

    def test_malformed_dict(self):
        with pytest.raises(DataError):
            ScenarioReport.from_dict({"scenario": "x"})

    def test_csv_outputs(self, tmp_path):
        """Test confusion, offsets and summary files in their documented layouts."""
        a = report(confusion([0, 1, 2, 3], [0, 1, 2, 2], 4), symbol_rate=2.0)
        b = report(confusion([0, 1], [1, 1], 2), symbol_rate=4.0)

        write_confusion_csv(confusion([0, 1, 2, 3], [0, 1, 2, 2], 4), tmp_path / "confusion.csv")
        with open(tmp_path / "confusion.csv", newline="") as f:
            rows = list(csv.reader(f))
        assert rows[0] == ["transmitted", "0", "1", "2", "3"]
        assert [float(v) for v in rows[4][1:]] == [0.0, 0.0, 1.0, 0.0]

        write_offsets_csv([a, b], tmp_path / "offsets.csv")
        with open(tmp_path / "offsets.csv", newline="") as f:
            rows = list(csv.reader(f))
        assert rows[0] == ["offset", "C4_2Hz", "C2_4Hz"]
        assert len(rows) == 5
        assert rows[3][2] == ""
        assert math.isclose(sum(float(r[1]) for r in rows[1:]), 1.0, abs_tol=1e-5)

        write_summary_csv([a, b], tmp_path / "summary.csv")
        with open(tmp_path / "summary.csv", newline="") as f:
            summary = list(csv.DictReader(f))
        assert list(summary[0]) == SUMMARY_COLUMNS
        assert float(summary[0]["accuracy"]) == 0.75
        assert summary[1]["scenario"] == "C2_4Hz"

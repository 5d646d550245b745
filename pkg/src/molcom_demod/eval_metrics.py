"""
Eval Metrics Module

Classification reporting and rate calculations for a demodulation scenario:

- confusion matrices (counts and row-normalized probabilities)
- demodulation offset distribution |demodulated - transmitted|
- bit error rate under natural or Gray symbol-to-bit mappings
- binary entropy and the noisy-channel net data rate bound
  R = Rg * (1 - H2(f)) / (1 - H2(pb))
"""

import csv
import logging
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any

import numpy as np
from scipy import optimize

from molcom_demod.errors import DataError, DomainError

logger = logging.getLogger(__name__)

MAPPINGS = ("natural", "gray")
DEFAULT_PB = 0.01

CONFUSION_FILE = "confusion.csv"
OFFSETS_FILE = "offsets.csv"
SUMMARY_FILE = "summary.csv"
SUMMARY_COLUMNS = [
    "scenario",
    "accuracy",
    "f_natural",
    "f_gray",
    "net_rate",
    "baseline_accuracy",
    "gross_rate",
    "pb",
    "ber_approximate",
    "empty_rows",
]


@dataclass(eq=False)
class ConfusionMatrix:
    """C x C counts; rows are transmitted symbols, columns demodulated symbols."""

    counts: np.ndarray

    def __post_init__(self):
        counts = np.asarray(self.counts)
        if counts.ndim != 2 or counts.shape[0] != counts.shape[1] or counts.shape[0] < 1:
            raise DataError(f"confusion matrix must be square, got shape {counts.shape}")
        if np.any(counts < 0) or not np.all(np.equal(np.mod(counts, 1), 0)):
            raise DataError("confusion counts must be nonnegative integers")
        self.counts = counts.astype(np.int64)

    @property
    def alphabet_size(self) -> int:
        return self.counts.shape[0]

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    @property
    def class_counts(self) -> np.ndarray:
        return self.counts.sum(axis=1)

    @property
    def empty_rows(self) -> list[int]:
        """Transmitted symbols that never occur."""
        return [int(i) for i in np.flatnonzero(self.class_counts == 0)]


@dataclass(frozen=True, eq=False)
class OffsetTable:
    """P(k) for offsets k = 0 .. C-1."""

    probabilities: np.ndarray

    def __post_init__(self):
        probs = np.asarray(self.probabilities, dtype=np.float64)
        object.__setattr__(self, "probabilities", probs)
        if np.any(probs < 0) or not math.isclose(float(probs.sum()), 1.0, abs_tol=1e-9):
            raise DataError(f"offset probabilities must be >= 0 and sum to 1, got {probs.tolist()}")

    def __getitem__(self, k: int) -> float:
        return float(self.probabilities[k])

    def __len__(self) -> int:
        return len(self.probabilities)


@dataclass(frozen=True)
class CapacityQuery:
    """Inputs of the net data rate bound."""

    gross_rate: float
    channel_ber: float
    residual_ber: float = DEFAULT_PB

    def __post_init__(self):
        if not self.gross_rate > 0:
            raise DomainError(f"gross_rate must be > 0, got {self.gross_rate}")
        if not 0 <= self.channel_ber <= 0.5:
            raise DomainError(f"channel bit error rate f must be in [0, 0.5], got {self.channel_ber}")
        if not 0 < self.residual_ber < 0.5:
            raise DomainError(f"tolerated residual error pb must be in (0, 0.5), got {self.residual_ber}")


def _check_labels(labels, alphabet_size: int, name: str) -> np.ndarray:
    arr = np.asarray(labels, dtype=np.int64)
    if arr.ndim != 1:
        raise DataError(f"{name} must be 1-D, got shape {arr.shape}")
    if arr.size and (arr.min() < 0 or arr.max() >= alphabet_size):
        raise DataError(f"{name} must lie in [0, {alphabet_size})")
    return arr


def confusion(truth, pred, alphabet_size: int | None = None) -> ConfusionMatrix:
    """
    Count (transmitted, demodulated) pairs.

    Args:
        truth: Transmitted labels
        pred: Demodulated labels
        alphabet_size: C (default: 1 + largest label seen)

    Raises:
        DataError: Length mismatch or labels out of range
    """
    truth_arr = np.asarray(truth, dtype=np.int64)
    pred_arr = np.asarray(pred, dtype=np.int64)
    if truth_arr.shape != pred_arr.shape:
        raise DataError(f"truth and pred lengths differ: {truth_arr.shape} vs {pred_arr.shape}")
    if alphabet_size is None:
        alphabet_size = int(max(truth_arr.max(initial=0), pred_arr.max(initial=0))) + 1
    truth_arr = _check_labels(truth_arr, alphabet_size, "truth")
    pred_arr = _check_labels(pred_arr, alphabet_size, "pred")
    counts = np.zeros((alphabet_size, alphabet_size), dtype=np.int64)
    np.add.at(counts, (truth_arr, pred_arr), 1)
    return ConfusionMatrix(counts)


def row_normalize(cm: ConfusionMatrix) -> tuple[np.ndarray, list[int]]:
    """
    Per-row probabilities.

    Returns:
        Tuple of (C x C probabilities, indices of empty rows, left all-zero)
    """
    sums = cm.class_counts.astype(np.float64)
    probs = np.zeros(cm.counts.shape, dtype=np.float64)
    nonempty = sums > 0
    probs[nonempty] = cm.counts[nonempty] / sums[nonempty, np.newaxis]
    empty = cm.empty_rows
    if empty:
        logger.warning(f"Confusion rows without samples: {empty}")
    return probs, empty


def offset_distribution(cm: ConfusionMatrix) -> OffsetTable:
    """
    P(k) = sum over |i - j| = k of counts[i][j] / total.

    Raises:
        DataError: Matrix without samples
    """
    total = cm.total
    if total == 0:
        raise DataError("offset distribution of an empty confusion matrix")
    c = cm.alphabet_size
    i, j = np.indices((c, c))
    mass = np.bincount(np.abs(i - j).ravel(), weights=cm.counts.ravel(), minlength=c)
    return OffsetTable(mass / total)


def accuracy(cm: ConfusionMatrix) -> float:
    total = cm.total
    if total == 0:
        raise DataError("accuracy of an empty confusion matrix")
    return float(np.trace(cm.counts)) / total


def bits_per_symbol(alphabet_size: int) -> int:
    if alphabet_size < 2:
        raise DomainError(f"alphabet_size must be >= 2, got {alphabet_size}")
    return math.ceil(math.log2(alphabet_size))


def _codes(alphabet_size: int, mapping: str) -> np.ndarray:
    if mapping not in MAPPINGS:
        raise DomainError(f"unknown bit mapping {mapping!r}, expected one of {MAPPINGS}")
    symbols = np.arange(alphabet_size, dtype=np.int64)
    return symbols ^ (symbols >> 1) if mapping == "gray" else symbols


def symbol_to_bits(symbol: int, alphabet_size: int, mapping: str = "natural") -> np.ndarray:
    """Code of a symbol as ceil(log2 C) bits, most significant first."""
    if not 0 <= symbol < alphabet_size:
        raise DataError(f"symbol must lie in [0, {alphabet_size}), got {symbol}")
    width = bits_per_symbol(alphabet_size)
    code = int(_codes(alphabet_size, mapping)[symbol])
    return np.array([(code >> (width - 1 - b)) & 1 for b in range(width)], dtype=np.uint8)


def _hamming_table(alphabet_size: int, mapping: str) -> np.ndarray:
    codes = _codes(alphabet_size, mapping)
    xor = codes[:, np.newaxis] ^ codes[np.newaxis, :]
    return np.array([[bin(int(v)).count("1") for v in row] for row in xor], dtype=np.int64)


def bit_error_rate(truth, pred, alphabet_size: int, mapping: str = "natural") -> float:
    """Differing bits / (symbols x bits per symbol)."""
    return bit_error_rate_from_confusion(confusion(truth, pred, alphabet_size), mapping)


def bit_error_rate_from_confusion(cm: ConfusionMatrix, mapping: str = "natural") -> float:
    """Bit error rate implied by a confusion matrix (Hamming distance weighted by counts)."""
    total = cm.total
    if total == 0:
        raise DataError("bit error rate of an empty confusion matrix")
    width = bits_per_symbol(cm.alphabet_size)
    errors = int((cm.counts * _hamming_table(cm.alphabet_size, mapping)).sum())
    return errors / (total * width)


def binary_entropy(x: float) -> float:
    """
    H2(x) = -x log2 x - (1-x) log2 (1-x), with H2(0) = H2(1) = 0.

    Raises:
        DomainError: x outside [0, 1]
    """
    if not 0 <= x <= 1:
        raise DomainError(f"binary entropy needs x in [0, 1], got {x}")
    if x == 0 or x == 1:
        return 0.0
    return float(-x * np.log2(x) - (1 - x) * np.log2(1 - x))


def net_data_rate(q: CapacityQuery) -> float:
    """Upper bound on the error-corrected rate: Rg (1 - H2(f)) / (1 - H2(pb))."""
    ratio = (1.0 - binary_entropy(q.channel_ber)) / (1.0 - binary_entropy(q.residual_ber))
    rate = q.gross_rate * ratio
    return max(rate, 0.0)


def rate_boundary(gross_rate: float, target_rate: float, residual_ber: float = DEFAULT_PB) -> float:
    """
    Largest channel bit error rate f for which the net rate still reaches target_rate.

    Raises:
        DomainError: Target not reachable even at f = 0, or not positive
    """
    ceiling = net_data_rate(CapacityQuery(gross_rate, 0.0, residual_ber))
    if not 0 < target_rate <= ceiling:
        raise DomainError(f"target rate must be in (0, {ceiling:.6g}], got {target_rate}")
    if target_rate == ceiling:
        return 0.0

    def gap(f: float) -> float:
        return net_data_rate(CapacityQuery(gross_rate, f, residual_ber)) - target_rate

    return float(optimize.brentq(gap, 0.0, 0.5, xtol=1e-12))


@dataclass
class ScenarioReport:
    """Evaluation bundle of one (C, symbol rate) scenario."""

    scenario: str
    alphabet_size: int
    symbol_rate: float
    accuracy: float
    offsets: list[float]
    f_natural: float
    f_gray: float
    gross_rate: float
    pb: float
    net_rate: float
    net_rate_gray: float
    confusion: list[list[int]]
    empty_rows: list[int] = field(default_factory=list)
    baseline_accuracy: float | None = None

    @property
    def ber_approximate(self) -> bool:
        """Bit rates of alphabets that are not a power of two leave codes unused."""
        c = self.alphabet_size
        return c & (c - 1) != 0

    def summary_row(self) -> dict[str, Any]:
        return {
            "scenario": self.scenario,
            "accuracy": self.accuracy,
            "f_natural": self.f_natural,
            "f_gray": self.f_gray,
            "net_rate": self.net_rate,
            "baseline_accuracy": "" if self.baseline_accuracy is None else self.baseline_accuracy,
            "gross_rate": self.gross_rate,
            "pb": self.pb,
            "ber_approximate": int(self.ber_approximate),
            "empty_rows": " ".join(str(i) for i in self.empty_rows),
        }

    def summary(self) -> str:
        """Return a human-readable summary."""
        lines = [
            f"Scenario: {self.scenario} (C={self.alphabet_size}, {self.symbol_rate} Hz)",
            f"Accuracy: {self.accuracy:.4f}",
            "Offsets: " + " ".join(f"{p:.2f}" for p in self.offsets),
            f"BER: natural={self.f_natural:.4f} gray={self.f_gray:.4f}"
            + (" (approximate)" if self.ber_approximate else ""),
            f"Net rate at pb={self.pb}: {self.net_rate:.3f} bit/s of {self.gross_rate:.3f} gross",
        ]
        if self.baseline_accuracy is not None:
            lines.append(f"Threshold baseline accuracy: {self.baseline_accuracy:.4f}")
        if self.empty_rows:
            lines.append(f"Empty rows: {self.empty_rows}")
        return "\n".join(lines)

    def to_dict(self) -> dict[str, Any]:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "ScenarioReport":
        try:
            return cls(**data)
        except TypeError as e:
            raise DataError(f"malformed scenario report: {e}") from e


def report(
    cm: ConfusionMatrix,
    symbol_rate: float,
    measured_f: float | None = None,
    pb: float = DEFAULT_PB,
    scenario: str | None = None,
    baseline_accuracy: float | None = None,
) -> ScenarioReport:
    """
    Compose accuracy, offsets, bit error rates and net rate for one scenario.

    The gross rate is symbol_rate x ceil(log2 C). measured_f defaults to the
    natural-mapping bit error rate of the confusion matrix; f above 0.5 is
    evaluated as 0.5 (no information).
    """
    c = cm.alphabet_size
    f_natural = bit_error_rate_from_confusion(cm, "natural")
    f_gray = bit_error_rate_from_confusion(cm, "gray")
    f = f_natural if measured_f is None else measured_f
    gross = symbol_rate * bits_per_symbol(c)
    _, empty = row_normalize(cm)

    return ScenarioReport(
        scenario=scenario or f"C{c}_{symbol_rate:g}Hz",
        alphabet_size=c,
        symbol_rate=symbol_rate,
        accuracy=accuracy(cm),
        offsets=[float(p) for p in offset_distribution(cm).probabilities],
        f_natural=f_natural,
        f_gray=f_gray,
        gross_rate=gross,
        pb=pb,
        net_rate=net_data_rate(CapacityQuery(gross, min(f, 0.5), pb)),
        net_rate_gray=net_data_rate(CapacityQuery(gross, min(f_gray, 0.5), pb)),
        confusion=cm.counts.tolist(),
        empty_rows=empty,
        baseline_accuracy=baseline_accuracy,
    )


def write_confusion_csv(cm: ConfusionMatrix, path: Path) -> Path:
    """Row-normalized C x C probabilities; header lists demodulated symbols."""
    probs, _ = row_normalize(cm)
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["transmitted", *range(cm.alphabet_size)])
        for i, row in enumerate(probs):
            writer.writerow([i, *(f"{p:.6f}" for p in row)])
    return Path(path)


def write_offsets_csv(reports: list[ScenarioReport], path: Path) -> Path:
    """One row per offset, one probability column per scenario (blank past C-1)."""
    depth = max((len(r.offsets) for r in reports), default=0)
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["offset", *(r.scenario for r in reports)])
        for k in range(depth):
            writer.writerow([k, *(f"{r.offsets[k]:.6f}" if k < len(r.offsets) else "" for r in reports)])
    return Path(path)


def write_summary_csv(reports: list[ScenarioReport], path: Path) -> Path:
    with open(path, "w", newline="") as f:
        writer = csv.DictWriter(f, fieldnames=SUMMARY_COLUMNS)
        writer.writeheader()
        for r in reports:
            writer.writerow(r.summary_row())
    return Path(path)

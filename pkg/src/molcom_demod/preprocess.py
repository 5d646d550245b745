"""
Preprocess Module

Receiver front-end turning a raw sensor trace into fixed-length symbol
windows, applied in this order:

1. resample_uniform: linear interpolation onto a uniform time grid
2. smooth: centered moving average (width 10 by default)
3. normalize: per-transmission min-max scaling to [0, 1]
4. segment: one window per symbol, either from a slope analysis of the
   signal (guided by the nominal symbol length) or from ground truth
5. resize_segment: linear interpolation of each window to 128 samples

build_dataset composes the chain over a corpus and performs a stratified
train/val/test split.
"""

import json
import logging
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any

import numpy as np

from molcom_demod.errors import DataError, DomainError
from molcom_demod.testbed_sim import Transmission

logger = logging.getLogger(__name__)

SEGMENT_LEN = 128
SPLIT_NAMES = ("train", "val", "test")
SEGMENT_MODES = ("slope", "oracle")

HEADER_FILE = "header.json"
DATA_FILE = "data.f32"
LABELS_FILE = "labels.u8"


@dataclass(frozen=True)
class PreprocessConfig:
    """Front-end constants."""

    smoothing_width: int = 10
    slope_threshold: float = 0.3
    min_separation: float = 0.8
    # None: derived from the smoothing width
    onset_lead: int | None = None
    segment_len: int = SEGMENT_LEN
    split_ratios: tuple[float, float, float] = (0.7, 0.15, 0.15)
    # None: resample at the transmission's nominal sample rate
    resample_rate: float | None = None

    def __post_init__(self):
        object.__setattr__(self, "split_ratios", tuple(float(r) for r in self.split_ratios))
        if self.smoothing_width < 1:
            raise DomainError(f"smoothing_width must be >= 1, got {self.smoothing_width}")
        if not 0 < self.slope_threshold < 1:
            raise DomainError(f"slope_threshold must be in (0, 1), got {self.slope_threshold}")
        if not 0 < self.min_separation <= 1:
            raise DomainError(f"min_separation must be in (0, 1], got {self.min_separation}")
        if self.segment_len < 2:
            raise DomainError(f"segment_len must be >= 2, got {self.segment_len}")
        if len(self.split_ratios) != 3 or any(r <= 0 for r in self.split_ratios):
            raise DomainError(f"split_ratios must be three positive fractions, got {self.split_ratios}")
        if not math.isclose(sum(self.split_ratios), 1.0, abs_tol=1e-9):
            raise DomainError(f"split_ratios must sum to 1, got {sum(self.split_ratios)}")
        if self.resample_rate is not None and not self.resample_rate > 0:
            raise DomainError(f"resample_rate must be > 0, got {self.resample_rate}")

    @property
    def resolved_onset_lead(self) -> int:
        """
        Samples between the start of a rise in the smoothed difference and the injection.

        The centered window looks ceil((w-1)/2) samples ahead and a pulse's
        first nonzero sample trails its injection by one.
        """
        if self.onset_lead is not None:
            return self.onset_lead
        return max(0, math.ceil((self.smoothing_width - 1) / 2) - 1)


@dataclass(frozen=True, eq=False)
class UniformSeries:
    """Uniformly sampled signal starting at start_time."""

    start_time: float
    sample_rate: float
    values: np.ndarray

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.float64)
        object.__setattr__(self, "values", values)
        if not self.sample_rate > 0:
            raise DomainError(f"sample_rate must be > 0, got {self.sample_rate}")
        if not np.all(np.isfinite(values)):
            raise DataError("series values must be finite")

    def __len__(self) -> int:
        return len(self.values)

    @property
    def times(self) -> np.ndarray:
        return self.start_time + np.arange(len(self.values)) / self.sample_rate

    def with_values(self, values: np.ndarray) -> "UniformSeries":
        return UniformSeries(self.start_time, self.sample_rate, values)


@dataclass
class SegmentationResult:
    """Result of segment()."""

    starts: list[int]
    segments: list[tuple[int, np.ndarray]]
    strategy: str
    samples_per_symbol: int
    detected_onsets: int = 0

    @property
    def fallback(self) -> bool:
        """True when no onset was detected and the grid was anchored at the series start."""
        return self.strategy == "slope_grid_fallback"

    def summary(self) -> str:
        """Return a human-readable summary."""
        return (
            f"Strategy: {self.strategy}\n"
            f"Segments: {len(self.segments)} x {self.samples_per_symbol} samples\n"
            f"Detected onsets: {self.detected_onsets}"
        )


@dataclass(eq=False)
class SegmentDataset:
    """Labeled fixed-length symbol windows with a train/val/test split."""

    X: np.ndarray
    y: np.ndarray
    alphabet_size: int
    split: dict[str, np.ndarray]
    provenance: dict[str, Any] = field(default_factory=dict)
    diagnostics: dict[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        self.X = np.asarray(self.X, dtype=np.float32)
        self.y = np.asarray(self.y, dtype=np.uint8)
        if not isinstance(self.split, dict) or set(self.split) != set(SPLIT_NAMES):
            raise DataError(f"split must have exactly the keys {list(SPLIT_NAMES)}")
        try:
            self.split = {name: np.asarray(self.split[name], dtype=np.int64) for name in SPLIT_NAMES}
        except (TypeError, ValueError) as e:
            raise DataError(f"split indices must be integers: {e}") from e
        if self.X.ndim != 2 or self.X.shape[0] != len(self.y):
            raise DataError(f"X must be n x L with n = len(y), got {self.X.shape} and {len(self.y)}")
        if len(self.y) and int(self.y.max()) >= self.alphabet_size:
            raise DataError(f"labels must be < alphabet_size ({self.alphabet_size})")
        joined = np.sort(np.concatenate([self.split[name] for name in SPLIT_NAMES]))
        if not np.array_equal(joined, np.arange(len(self.y))):
            raise DataError("split index sets must partition [0, n)")

    def __len__(self) -> int:
        return len(self.y)

    @property
    def segment_len(self) -> int:
        return self.X.shape[1]

    def subset(self, name: str) -> tuple[np.ndarray, np.ndarray]:
        """Rows and labels of one split."""
        if name not in SPLIT_NAMES:
            raise DataError(f"unknown split {name!r}, expected one of {SPLIT_NAMES}")
        idx = self.split[name]
        return self.X[idx], self.y[idx]


def resample_uniform(times, values, target_rate: float) -> UniformSeries:
    """
    Linear interpolation of (time, value) samples onto a uniform grid.

    The grid starts at the first input time and never extends past the last
    input time (no extrapolation).

    Raises:
        DataError: Fewer than 2 samples or times not strictly increasing
    """
    times = np.asarray(times, dtype=np.float64)
    values = np.asarray(values, dtype=np.float64)
    if times.shape != values.shape or times.ndim != 1:
        raise DataError(f"times and values must be 1-D of equal length, got {times.shape}, {values.shape}")
    if len(times) < 2:
        raise DataError(f"resampling needs >= 2 samples, got {len(times)}")
    if np.any(np.diff(times) <= 0):
        raise DataError("sample times must be strictly increasing")
    if not target_rate > 0:
        raise DomainError(f"target_rate must be > 0, got {target_rate}")

    span = times[-1] - times[0]
    n_out = math.floor(span * target_rate + 1e-9) + 1
    grid = times[0] + np.arange(n_out) / target_rate
    grid = np.minimum(grid, times[-1])
    return UniformSeries(float(times[0]), float(target_rate), np.interp(grid, times, values))


def smooth(series: UniformSeries, width: int = 10) -> UniformSeries:
    """
    Centered moving average with shrinking windows at the edges.

    Position i averages indices [i - floor((w-1)/2), i + ceil((w-1)/2)]
    clipped to the valid range, divided by the actual count.
    """
    if width < 1:
        raise DomainError(f"width must be >= 1, got {width}")
    n = len(series)
    if n == 0:
        raise DataError("cannot smooth an empty series")
    if width == 1:
        return series.with_values(series.values.copy())

    back = (width - 1) // 2
    ahead = width - 1 - back
    idx = np.arange(n)
    lo = np.maximum(idx - back, 0)
    hi = np.minimum(idx + ahead, n - 1)
    csum = np.concatenate([[0.0], np.cumsum(series.values)])
    averaged = (csum[hi + 1] - csum[lo]) / (hi - lo + 1)
    return series.with_values(averaged)


def normalize(series: UniformSeries) -> UniformSeries:
    """Min-max scaling to [0, 1]; a constant series maps to all zeros."""
    values = series.values
    if len(values) == 0:
        return series
    lo, hi = float(values.min()), float(values.max())
    if hi == lo:
        return series.with_values(np.zeros_like(values))
    return series.with_values((values - lo) / (hi - lo))


def _detect_onsets(
    values: np.ndarray,
    samples_per_symbol: int,
    threshold: float,
    min_separation: float,
    onset_lead: int,
) -> list[int]:
    """Onset indices from upward crossings of the first difference."""
    diff = np.diff(values, prepend=values[0])
    peak_slope = float(diff.max())
    if not peak_slope > 0:
        return []

    above = diff >= threshold * peak_slope
    crossings = np.flatnonzero(above[1:] & ~above[:-1]) + 1
    min_gap = min_separation * samples_per_symbol

    onsets: list[int] = []
    last_crossing = -math.inf
    for crossing in crossings:
        if crossing - last_crossing < min_gap:
            continue
        last_crossing = crossing
        # Walk back to the start of the rise
        j = int(crossing)
        while j > 1 and diff[j - 1] > 0:
            j -= 1
        # A rise already under way at the series start belongs to the first symbol
        onsets.append(0 if j <= 1 else j + onset_lead)
    return onsets


def _grid_from_onsets(onsets: list[int], n_symbols: int, spp: int) -> tuple[list[int], int]:
    """Assign onsets to nominal slots and project the grid into empty slots."""
    slots: dict[int, int] = {}
    for onset in onsets:
        slot = round(onset / spp)
        if 0 <= slot < n_symbols and slot not in slots:
            slots[slot] = onset

    if not slots:
        return [k * spp for k in range(n_symbols)], 0

    detected = sorted(slots)
    starts = []
    for k in range(n_symbols):
        if k in slots:
            starts.append(slots[k])
            continue
        nearest = min(detected, key=lambda j: (abs(j - k), j))
        starts.append(slots[nearest] + (k - nearest) * spp)
    return starts, len(slots)


def segment(
    series: UniformSeries,
    symbol_rate: float,
    n_symbols: int,
    mode: str = "slope",
    oracle_boundaries=None,
    threshold: float = 0.3,
    min_separation: float = 0.8,
    onset_lead: int = 4,
) -> SegmentationResult:
    """
    Split a preprocessed series into one window per symbol.

    Every window is one nominal symbol period long and starts at the symbol
    boundary. In slope mode the boundaries come from upward crossings of the
    first difference above threshold x (max first difference), separated by
    at least min_separation symbol periods; slots without an onset (silent or
    weak symbols) are filled from the nominal grid of the nearest detected
    onset. When nothing is detected the grid is anchored at the series start
    and the result is flagged. In oracle mode the ground-truth boundaries
    are used.

    Args:
        series: Smoothed, normalized uniform series
        symbol_rate: Symbols per second
        n_symbols: Number of symbols to extract
        mode: 'slope' or 'oracle'
        oracle_boundaries: Ground-truth symbol start times (oracle mode)
        threshold: Slope threshold as a fraction of the maximum slope
        min_separation: Minimum onset spacing in symbol periods
        onset_lead: Samples added to the start of a detected rise

    Returns:
        SegmentationResult with exactly n_symbols segments

    Raises:
        DataError: Series too short, unknown mode or missing oracle boundaries
    """
    if mode not in SEGMENT_MODES:
        raise DataError(f"unknown segmentation mode {mode!r}, expected one of {SEGMENT_MODES}")
    if n_symbols < 1:
        raise DataError(f"n_symbols must be >= 1, got {n_symbols}")
    spp = round(series.sample_rate / symbol_rate)
    n = len(series)
    if n < n_symbols * spp:
        raise DataError(f"series of {n} samples cannot hold {n_symbols} symbols of {spp} samples")

    if mode == "oracle":
        if oracle_boundaries is None or len(oracle_boundaries) != n_symbols:
            raise DataError("oracle mode needs one ground-truth boundary per symbol")
        starts = [
            round((float(b) - series.start_time) * series.sample_rate) for b in oracle_boundaries
        ]
        strategy, detected = "oracle", n_symbols
    else:
        onsets = _detect_onsets(series.values, spp, threshold, min_separation, onset_lead)
        starts, detected = _grid_from_onsets(onsets, n_symbols, spp)
        strategy = "slope" if detected else "slope_grid_fallback"
        if not detected:
            logger.warning("No onsets detected, falling back to grid anchored at series start")
        logger.debug(f"Slope segmentation: {len(onsets)} onsets, {detected}/{n_symbols} slots")

    starts = [min(max(s, 0), n - spp) for s in starts]
    segments = [(s, series.values[s : s + spp]) for s in starts]
    return SegmentationResult(
        starts=starts,
        segments=segments,
        strategy=strategy,
        samples_per_symbol=spp,
        detected_onsets=detected,
    )


def resize_segment(values, length: int = SEGMENT_LEN) -> np.ndarray:
    """
    Linear interpolation of a window to `length` points, endpoints preserved.

    Raises:
        DataError: Input shorter than 2 samples
    """
    values = np.asarray(values, dtype=np.float64)
    if values.ndim != 1 or len(values) < 2:
        raise DataError(f"segment needs >= 2 samples, got {values.shape}")
    if length < 2:
        raise DomainError(f"length must be >= 2, got {length}")
    positions = np.linspace(0.0, len(values) - 1, length)
    return np.interp(positions, np.arange(len(values)), values)


def preprocess_transmission(
    tx: Transmission, mode: str = "slope", config: PreprocessConfig | None = None
) -> tuple[np.ndarray, np.ndarray, SegmentationResult, UniformSeries]:
    """
    Run the front-end chain over one transmission.

    Returns:
        Tuple of (rows n_symbols x segment_len, labels, segmentation result,
        the normalized series)
    """
    config = config or PreprocessConfig()
    mod = tx.modulation
    rate = config.resample_rate or mod.sample_rate

    series = resample_uniform(tx.times, tx.values, rate)
    series = smooth(series, config.smoothing_width)
    series = normalize(series)
    result = segment(
        series,
        mod.symbol_rate,
        tx.n_symbols,
        mode=mode,
        oracle_boundaries=tx.boundaries if mode == "oracle" else None,
        threshold=config.slope_threshold,
        min_separation=config.min_separation,
        onset_lead=config.resolved_onset_lead,
    )
    rows = np.stack([resize_segment(values, config.segment_len) for _, values in result.segments])
    return rows, np.asarray(tx.symbols, dtype=np.int64), result, series


def _apportion(counts: np.ndarray, ratio: float, total: int, cap: np.ndarray) -> np.ndarray:
    """Largest-remainder allocation of `total` items across classes, at most `cap` each."""
    quotas = counts * ratio
    alloc = np.minimum(np.floor(quotas).astype(np.int64), cap)
    remainder = total - int(alloc.sum())
    order = np.argsort(-(quotas - np.floor(quotas)), kind="stable")
    while remainder > 0:
        progressed = False
        for c in order:
            if remainder == 0:
                break
            if alloc[c] < cap[c]:
                alloc[c] += 1
                remainder -= 1
                progressed = True
        if not progressed:
            break
    return alloc


def stratified_split(
    labels, ratios: tuple[float, float, float] = (0.7, 0.15, 0.15), seed: int = 0
) -> dict[str, np.ndarray]:
    """
    Deterministic stratified train/val/test split.

    Split sizes are round(ratio x n) for train and val (test takes the rest);
    per-class shares are apportioned by largest remainder, so each class sits
    within one row of its proportional train share. Classes with >= 3 rows
    appear in every split.
    """
    labels = np.asarray(labels)
    n = len(labels)
    rng = np.random.default_rng(seed)
    classes = np.unique(labels)
    members = [rng.permutation(np.flatnonzero(labels == c)) for c in classes]
    counts = np.array([len(m) for m in members], dtype=np.int64)

    train = _apportion(counts, ratios[0], round(ratios[0] * n), counts)
    val = _apportion(counts, ratios[1], round(ratios[1] * n), counts - train)
    for c, count in enumerate(counts):
        if count < 3:
            continue
        if val[c] == 0 and train[c] > 1:
            val[c] += 1
            train[c] -= 1
        if count - train[c] - val[c] == 0 and train[c] > 1:
            train[c] -= 1

    parts: dict[str, list[np.ndarray]] = {name: [] for name in SPLIT_NAMES}
    for c, m in enumerate(members):
        parts["train"].append(m[: train[c]])
        parts["val"].append(m[train[c] : train[c] + val[c]])
        parts["test"].append(m[train[c] + val[c] :])
    return {
        name: np.sort(np.concatenate(chunks)) if chunks else np.array([], dtype=np.int64)
        for name, chunks in parts.items()
    }


def build_dataset(
    transmissions: list[Transmission],
    mode: str = "slope",
    split_seed: int = 0,
    config: PreprocessConfig | None = None,
) -> SegmentDataset:
    """
    Preprocess a corpus into a labeled, split segment dataset.

    Args:
        transmissions: Corpus sharing alphabet size and symbol rate
        mode: Segmentation mode ('slope' or 'oracle')
        split_seed: Seed of the stratified split
        config: Front-end constants

    Returns:
        SegmentDataset with rows in [0, 1]

    Raises:
        DataError: Empty corpus or mixed configurations
    """
    config = config or PreprocessConfig()
    if not transmissions:
        raise DataError("cannot build a dataset from an empty corpus")

    first = transmissions[0].modulation
    for tx in transmissions[1:]:
        mod = tx.modulation
        if mod.alphabet_size != first.alphabet_size or mod.symbol_rate != first.symbol_rate:
            raise DataError(
                f"mixed configurations: transmission {tx.index} has C={mod.alphabet_size}, "
                f"{mod.symbol_rate} Hz; expected C={first.alphabet_size}, {first.symbol_rate} Hz"
            )

    rows, labels, deltas = [], [], []
    strategies: dict[str, int] = {}
    for tx in transmissions:
        X, y, result, series = preprocess_transmission(tx, mode, config)
        rows.append(X)
        labels.append(y)
        strategies[result.strategy] = strategies.get(result.strategy, 0) + 1
        if mode == "slope":
            truth = np.round((tx.boundaries - series.start_time) * series.sample_rate)
            deltas.append(np.asarray(result.starts) - truth.astype(np.int64))

    X_all = np.clip(np.concatenate(rows), 0.0, 1.0)
    y_all = np.concatenate(labels)
    split = stratified_split(y_all, config.split_ratios, split_seed)

    diagnostics: dict[str, Any] = {"strategies": strategies}
    if deltas:
        all_deltas = np.concatenate(deltas)
        diagnostics["boundary_deltas"] = all_deltas
        logger.info(
            f"Slope boundaries vs truth: mean |delta|={np.mean(np.abs(all_deltas)):.2f} samples, "
            f"max |delta|={int(np.max(np.abs(all_deltas)))}"
        )

    provenance = {
        "mode": mode,
        "split_seed": split_seed,
        "preprocess": asdict(config),
        "modulation": asdict(first),
        "channel": asdict(transmissions[0].channel),
        "noise": asdict(transmissions[0].noise),
        "corpus_seed": transmissions[0].seed,
        "n_transmissions": len(transmissions),
    }
    logger.info(
        f"Built dataset: {len(y_all)} segments "
        f"(train={len(split['train'])}, val={len(split['val'])}, test={len(split['test'])})"
    )
    return SegmentDataset(
        X=X_all,
        y=y_all,
        alphabet_size=first.alphabet_size,
        split=split,
        provenance=provenance,
        diagnostics=diagnostics,
    )


def save_dataset(dataset: SegmentDataset, out_dir: Path) -> Path:
    """Write header.json, data.f32 (little-endian f32, row-major) and labels.u8."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    header = {
        "n": len(dataset),
        "len": dataset.segment_len,
        "alphabet": dataset.alphabet_size,
        "split": {name: [int(i) for i in dataset.split[name]] for name in SPLIT_NAMES},
        "provenance": dataset.provenance,
    }
    with open(out_dir / HEADER_FILE, "w", encoding="utf-8") as f:
        json.dump(header, f, indent=2)
    dataset.X.astype("<f4").tofile(out_dir / DATA_FILE)
    dataset.y.astype(np.uint8).tofile(out_dir / LABELS_FILE)
    logger.info(f"Wrote dataset ({len(dataset)} rows) to {out_dir}")
    return out_dir


def load_dataset(in_dir: Path) -> SegmentDataset:
    """
    Read a dataset directory written by save_dataset.

    Raises:
        DataError: Missing files or sizes inconsistent with the header
    """
    in_dir = Path(in_dir)
    try:
        with open(in_dir / HEADER_FILE, encoding="utf-8") as f:
            header = json.load(f)
        n, length = int(header["n"]), int(header["len"])
        X = np.fromfile(in_dir / DATA_FILE, dtype="<f4")
        y = np.fromfile(in_dir / LABELS_FILE, dtype=np.uint8)
        split = header["split"]
        alphabet = int(header["alphabet"])
    except (OSError, KeyError, TypeError, ValueError) as e:
        raise DataError(f"cannot read dataset in {in_dir}: {e}") from e

    if X.size != n * length:
        raise DataError(f"{DATA_FILE} holds {X.size} floats, header says {n} x {length}")
    if y.size != n:
        raise DataError(f"{LABELS_FILE} holds {y.size} labels, header says {n}")
    return SegmentDataset(
        X=X.reshape(n, length).astype(np.float32),
        y=y,
        alphabet_size=alphabet,
        split=split,
        provenance=header.get("provenance", {}),
    )

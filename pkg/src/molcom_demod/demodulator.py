"""
Demodulator Module

Builds the nine-layer 1-D CNN symbol classifier, trains it with Adam under
a plateau/early-stopping schedule, and provides prediction plus a
threshold baseline that looks only at each segment's maximum.

Network (input 128 x 1):
    CONV 64@7 -> MAX -> CONV 128@5 -> MAX -> CONV 256@3 -> MAX
    -> FC fc_width (dropout) -> FC fc_width (dropout) -> FC C
ReLU follows every layer except the final classifier.
"""

import csv
import json
import logging
import math
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from molcom_demod.errors import DataError, DomainError, NumericError
from molcom_demod.preprocess import SegmentDataset
from molcom_demod.tensor_nn import (
    Conv1d,
    Dense,
    Dropout,
    Flatten,
    MaxPool1d,
    OptimizerConfig,
    ReLU,
    Sequential,
    adam_step,
    load_weights,
    save_weights,
    softmax,
    softmax_cross_entropy,
)

logger = logging.getLogger(__name__)

INPUT_LEN = 128
CNN_CONFIG_FILE = "cnn.json"
HISTORY_FILE = "history.csv"
CONV_STACK = ((64, 7), (128, 5), (256, 3))
# Classifier init is scaled down so an untrained network predicts near-uniformly
CLASSIFIER_INIT_GAIN = 0.1
EVAL_BATCH = 256


@dataclass(frozen=True)
class CnnConfig:
    """Architecture parameters."""

    alphabet_size: int = 8
    fc_width: int = 4096
    input_len: int = INPUT_LEN
    dropout: float = 0.5

    def __post_init__(self):
        if self.alphabet_size < 2:
            raise DomainError(f"alphabet_size must be >= 2, got {self.alphabet_size}")
        if self.fc_width < self.alphabet_size:
            raise DomainError(f"fc_width must be >= alphabet_size ({self.alphabet_size}), got {self.fc_width}")
        if self.input_len != INPUT_LEN:
            raise DomainError(f"input_len must be {INPUT_LEN}, got {self.input_len}")
        if not 0 <= self.dropout < 1:
            raise DomainError(f"dropout must be in [0, 1), got {self.dropout}")


@dataclass(frozen=True)
class TrainConfig:
    """Optimization schedule."""

    batch_size: int = 64
    learning_rate: float = 1e-3
    plateau_patience: int = 10
    decay_factor: float = 0.1
    early_stop_patience: int = 20
    max_epochs: int = 200
    improvement_tolerance: float = 1e-6
    seed: int = 0

    def __post_init__(self):
        if self.batch_size < 1:
            raise DomainError(f"batch_size must be >= 1, got {self.batch_size}")
        if not self.learning_rate > 0:
            raise DomainError(f"learning_rate must be > 0, got {self.learning_rate}")
        if not 0 < self.decay_factor < 1:
            raise DomainError(f"decay_factor must be in (0, 1), got {self.decay_factor}")
        if not 1 <= self.plateau_patience < self.early_stop_patience:
            raise DomainError(
                f"need 1 <= plateau_patience < early_stop_patience, "
                f"got {self.plateau_patience} and {self.early_stop_patience}"
            )
        if self.max_epochs < 1:
            raise DomainError(f"max_epochs must be >= 1, got {self.max_epochs}")
        if self.improvement_tolerance < 0:
            raise DomainError(f"improvement_tolerance must be >= 0, got {self.improvement_tolerance}")


@dataclass(frozen=True)
class EpochRecord:
    epoch: int
    train_loss: float
    val_loss: float
    lr: float


@dataclass
class TrainingHistory:
    """Per-epoch losses and learning rates of one training run."""

    epochs: list[EpochRecord] = field(default_factory=list)
    best_epoch: int = 0
    best_val_loss: float = math.inf
    stop_reason: str = "max_epochs"

    def __len__(self) -> int:
        return len(self.epochs)

    @property
    def learning_rates(self) -> list[float]:
        return [e.lr for e in self.epochs]

    def summary(self) -> str:
        """Return a human-readable summary."""
        return (
            f"Epochs: {len(self.epochs)} ({self.stop_reason})\n"
            f"Best epoch: {self.best_epoch} (val_loss={self.best_val_loss:.4f})\n"
            f"Final lr: {self.epochs[-1].lr if self.epochs else float('nan'):.1e}"
        )

    def to_csv(self, path: Path) -> Path:
        path = Path(path)
        with open(path, "w", newline="") as f:
            writer = csv.writer(f)
            writer.writerow(["epoch", "train_loss", "val_loss", "lr"])
            for e in self.epochs:
                writer.writerow([e.epoch, repr(e.train_loss), repr(e.val_loss), repr(e.lr)])
        return path

    @classmethod
    def from_csv(cls, path: Path) -> "TrainingHistory":
        history = cls()
        with open(path, newline="") as f:
            for row in csv.DictReader(f):
                history.epochs.append(
                    EpochRecord(
                        int(row["epoch"]),
                        float(row["train_loss"]),
                        float(row["val_loss"]),
                        float(row["lr"]),
                    )
                )
        if history.epochs:
            best = min(history.epochs, key=lambda e: e.val_loss)
            history.best_epoch, history.best_val_loss = best.epoch, best.val_loss
        return history


@dataclass(frozen=True)
class LayerRow:
    """One row of the architecture table."""

    number: int
    kind: str
    input_shape: tuple[int, ...]
    output_shape: tuple[int, ...]
    kernel_size: int | None = None
    stride: int | None = None
    dropout: float | None = None


def _network_layers(cfg: CnnConfig) -> list:
    layers = []
    in_channels = 1
    length = cfg.input_len
    for out_channels, kernel in CONV_STACK:
        layers += [Conv1d(in_channels, out_channels, kernel), ReLU(), MaxPool1d()]
        in_channels = out_channels
        length //= 2

    flat = length * in_channels
    layers += [
        Flatten(),
        Dense(flat, cfg.fc_width),
        Dropout(cfg.dropout),
        ReLU(),
        Dense(cfg.fc_width, cfg.fc_width),
        Dropout(cfg.dropout),
        ReLU(),
        Dense(cfg.fc_width, cfg.alphabet_size),
    ]
    return layers


def build_network(cfg: CnnConfig, rng: np.random.Generator) -> Sequential:
    """
    Build and initialize the CNN.

    Weights are Kaiming-uniform (bound sqrt(6 / fan_in)), biases zero; the
    classifier bound is scaled by CLASSIFIER_INIT_GAIN.
    """
    layers = _network_layers(cfg)
    classifier = layers[-1]
    for layer in layers:
        layer.initialize(rng, gain=CLASSIFIER_INIT_GAIN if layer is classifier else 1.0)
    net = Sequential(layers)
    logger.debug(f"Built network: C={cfg.alphabet_size}, fc_width={cfg.fc_width}, {count_parameters(net)} parameters")
    return net


def count_parameters(net: Sequential) -> int:
    return sum(int(p.size) for p in net.parameters().values())


def architecture_table(cfg: CnnConfig) -> list[LayerRow]:
    """Architecture rows of the network cfg describes, without initializing weights."""
    return layer_table(Sequential(_network_layers(cfg)), cfg.input_len)


def layer_table(net: Sequential, input_len: int = INPUT_LEN) -> list[LayerRow]:
    """
    Architecture rows in CONV/MAX/FC terms.

    ReLU, Dropout and Flatten do not start rows; dropout is reported on the
    FC row it follows, and an FC row after Flatten reports the unflattened
    input shape.
    """
    rows: list[LayerRow] = []
    names = {"Conv1d": "CONV", "MaxPool1d": "MAX", "Dense": "FC"}
    pending_input: tuple[int, ...] | None = None
    for layer, (in_shape, out_shape) in zip(net.layers, net.shapes((input_len, 1)), strict=True):
        if layer.kind == "Flatten":
            pending_input = in_shape
            continue
        if layer.kind == "Dropout" and rows:
            rows[-1] = replace(rows[-1], dropout=layer.p)
            continue
        if layer.kind not in names:
            continue
        kernel = getattr(layer, "kernel_size", None)
        stride = getattr(layer, "stride", 1 if layer.kind == "Conv1d" else None)
        rows.append(
            LayerRow(
                number=len(rows) + 1,
                kind=names[layer.kind],
                input_shape=pending_input or in_shape,
                output_shape=out_shape,
                kernel_size=kernel,
                stride=stride,
            )
        )
        pending_input = None
    return rows


def _check_segments(net: Sequential, X) -> np.ndarray:
    X = np.asarray(X)
    if X.ndim != 2 or X.shape[1] != INPUT_LEN:
        raise DataError(f"segments must be n x {INPUT_LEN}, got shape {X.shape}")
    if not np.all(np.isfinite(X)):
        raise DataError("segments contain non-finite values")
    return X.astype(net.dtype, copy=False)


def _logits(net: Sequential, X: np.ndarray, batch_size: int = EVAL_BATCH) -> np.ndarray:
    chunks = [
        net.forward(X[i : i + batch_size, :, np.newaxis], training=False)
        for i in range(0, len(X), batch_size)
    ]
    if not chunks:
        return np.zeros((0, net.layers[-1].params["bias"].size), dtype=np.float64)
    return np.concatenate(chunks).astype(np.float64)


def evaluate(net: Sequential, X, y, batch_size: int = EVAL_BATCH) -> tuple[float, float]:
    """Mean cross-entropy and accuracy with dropout disabled."""
    X = _check_segments(net, X)
    y = np.asarray(y, dtype=np.int64)
    if len(X) == 0:
        raise DataError("cannot evaluate on an empty set")
    logits = _logits(net, X, batch_size)
    loss, _ = softmax_cross_entropy(logits, y)
    accuracy = float(np.mean(np.argmax(logits, axis=1) == y))
    return loss, accuracy


def predict(net: Sequential, segment) -> tuple[int, np.ndarray]:
    """
    Classify one 128-sample segment.

    Returns:
        Tuple of (label, class probabilities); ties go to the lowest index
    """
    segment = np.asarray(segment)
    if segment.shape != (INPUT_LEN,):
        raise DataError(f"segment must have length {INPUT_LEN}, got shape {segment.shape}")
    labels, probs = predict_batch(net, segment[np.newaxis])
    return int(labels[0]), probs[0]


def predict_batch(net: Sequential, X, batch_size: int = EVAL_BATCH) -> tuple[np.ndarray, np.ndarray]:
    """Labels and probabilities for n x 128 segments."""
    X = _check_segments(net, X)
    probs = softmax(_logits(net, X, batch_size))
    return np.argmax(probs, axis=1), probs


def train(
    net: Sequential,
    dataset: SegmentDataset,
    tcfg: TrainConfig,
    rng: np.random.Generator | None = None,
) -> tuple[Sequential, TrainingHistory]:
    """
    Train on the dataset's train split, validating after every epoch.

    An epoch improves when val_loss < best - improvement_tolerance. After
    plateau_patience non-improving epochs in a row the learning rate is
    multiplied by decay_factor; after early_stop_patience non-improving
    epochs since the last improvement training stops. The weights of the
    best validation epoch are restored before returning.

    Args:
        net: Network to train (modified in place)
        dataset: Segment dataset with non-empty train and val splits
        tcfg: Schedule
        rng: Stream for shuffling and dropout (default: seeded from tcfg.seed)

    Returns:
        Tuple of (net with best weights, history)

    Raises:
        DataError: Empty split or alphabet mismatch
        NumericError: Non-finite loss
    """
    rng = rng if rng is not None else np.random.default_rng(tcfg.seed)
    n_classes = net.layers[-1].params["bias"].size
    if dataset.alphabet_size != n_classes:
        raise DataError(f"dataset has C={dataset.alphabet_size}, network outputs {n_classes} classes")
    X_train, y_train = dataset.subset("train")
    X_val, y_val = dataset.subset("val")
    if len(y_train) == 0 or len(y_val) == 0:
        raise DataError(f"train and val splits must be non-empty, got {len(y_train)} and {len(y_val)}")
    X_train = _check_segments(net, X_train)
    y_train = y_train.astype(np.int64)

    opt = OptimizerConfig(learning_rate=tcfg.learning_rate)
    history = TrainingHistory()
    best_state = net.state_copy()
    since_improvement = 0
    since_decay = 0

    logger.info(
        f"Training on {len(y_train)} segments (val {len(y_val)}), "
        f"{count_parameters(net)} parameters, batch {tcfg.batch_size}"
    )
    for epoch in range(1, tcfg.max_epochs + 1):
        lr = opt.learning_rate
        order = rng.permutation(len(y_train))
        total = 0.0
        for start in range(0, len(order), tcfg.batch_size):
            idx = order[start : start + tcfg.batch_size]
            logits = net.forward(X_train[idx, :, np.newaxis], training=True, rng=rng)
            loss, grad = softmax_cross_entropy(logits, y_train[idx])
            if not math.isfinite(loss):
                raise NumericError(f"non-finite training loss at epoch {epoch}, batch {start // tcfg.batch_size}")
            net.backward(grad)
            adam_step(net.parameters(), net.gradients(), opt)
            total += loss * len(idx)
        train_loss = total / len(y_train)

        val_loss, val_acc = evaluate(net, X_val, y_val)
        if not math.isfinite(val_loss):
            raise NumericError(f"non-finite validation loss at epoch {epoch}")
        history.epochs.append(EpochRecord(epoch, train_loss, val_loss, lr))
        logger.info(
            f"Epoch {epoch}: train_loss={train_loss:.4f} val_loss={val_loss:.4f} "
            f"val_acc={val_acc:.3f} lr={lr:.1e}"
        )

        if val_loss < history.best_val_loss - tcfg.improvement_tolerance:
            history.best_val_loss = val_loss
            history.best_epoch = epoch
            best_state = net.state_copy()
            since_improvement = 0
            since_decay = 0
            continue

        since_improvement += 1
        since_decay += 1
        if since_improvement >= tcfg.early_stop_patience:
            history.stop_reason = "early_stop"
            break
        if since_decay >= tcfg.plateau_patience:
            opt.learning_rate = lr * tcfg.decay_factor
            since_decay = 0
            logger.info(f"Validation plateau: lr -> {opt.learning_rate:.1e}")

    net.load_state(best_state)
    logger.info(f"Training finished: {history.summary().splitlines()[0]}, best epoch {history.best_epoch}")
    return net, history


def threshold_baseline_fit(dataset: SegmentDataset) -> np.ndarray:
    """
    Per-class mean of segment maxima over the train split.

    Raises:
        DataError: A class has no train rows
    """
    X, y = dataset.subset("train")
    peaks = X.max(axis=1).astype(np.float64)
    means = np.empty(dataset.alphabet_size, dtype=np.float64)
    for c in range(dataset.alphabet_size):
        mask = y == c
        if not mask.any():
            raise DataError(f"class {c} is missing from the train split")
        means[c] = peaks[mask].mean()
    logger.debug(f"Threshold baseline means: {np.round(means, 4).tolist()}")
    return means


def threshold_baseline_predict(means, segment) -> int:
    """Class whose mean maximum is nearest to the segment's maximum (ties to the lower class)."""
    return int(threshold_baseline_predict_batch(means, np.asarray(segment)[np.newaxis])[0])


def threshold_baseline_predict_batch(means, X) -> np.ndarray:
    means = np.asarray(means, dtype=np.float64)
    peaks = np.asarray(X, dtype=np.float64).max(axis=1)
    return np.argmin(np.abs(peaks[:, np.newaxis] - means[np.newaxis, :]), axis=1)


def save_model(net: Sequential, cfg: CnnConfig, out_dir: Path) -> Path:
    """Write weights (manifest.json + weights.bin) and cnn.json."""
    out_dir = save_weights(net, out_dir)
    with open(out_dir / CNN_CONFIG_FILE, "w", encoding="utf-8") as f:
        json.dump(asdict(cfg), f, indent=2)
    logger.info(f"Saved model to {out_dir}")
    return out_dir


def load_model(in_dir: Path) -> tuple[Sequential, CnnConfig]:
    """
    Read a model directory written by save_model.

    Raises:
        DataError: Missing files or a network that does not match cnn.json
    """
    in_dir = Path(in_dir)
    try:
        with open(in_dir / CNN_CONFIG_FILE, encoding="utf-8") as f:
            cfg = CnnConfig(**json.load(f))
    except (OSError, TypeError, ValueError) as e:
        raise DataError(f"cannot read {in_dir / CNN_CONFIG_FILE}: {e}") from e
    net = load_weights(in_dir)
    n_classes = net.layers[-1].params["bias"].size if net.layers else 0
    if n_classes != cfg.alphabet_size:
        raise DataError(f"weights output {n_classes} classes, cnn.json says {cfg.alphabet_size}")
    return net, cfg

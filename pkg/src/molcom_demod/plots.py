"""
Static SVG plots of pipeline artifacts.

Plots are secondary to the CSV outputs: every function logs and swallows
rendering failures and returns None in that case.
"""

from functools import wraps
from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from molcom_demod.logging_config import get_logger  # noqa: E402

logger = get_logger(__name__)


def _never_fails(func):
    @wraps(func)
    def wrapper(*args, **kwargs) -> Path | None:
        try:
            return func(*args, **kwargs)
        except Exception as e:
            logger.warning(f"Plot {func.__name__} failed: {e}")
            plt.close("all")
            return None

    return wrapper


@_never_fails
def plot_trace(
    times,
    values,
    boundaries,
    symbols,
    path: Path,
    detected_starts=None,
    title: str = "Normalized sensor trace",
) -> Path:
    """
    Sensor trace with ground-truth symbol starts and values annotated.

    Args:
        times: Sample times in seconds
        values: Normalized signal
        boundaries: Ground-truth symbol start times
        symbols: Transmitted symbol values
        path: Output SVG path
        detected_starts: Optional detected symbol start times
    """
    fig, ax = plt.subplots(figsize=(12, 3.5))
    ax.plot(times, values, color="tab:blue", linewidth=1.0, label="signal")
    top = float(np.max(values)) if len(values) else 1.0
    for b, s in zip(boundaries, symbols, strict=True):
        ax.axvline(b, color="0.6", linestyle=":", linewidth=0.8)
        ax.text(b, top * 1.02, str(int(s)), fontsize=8, ha="left", va="bottom")
    if detected_starts is not None:
        for d in detected_starts:
            ax.axvline(d, color="tab:red", linestyle="--", linewidth=0.6)
    ax.set_xlabel("time [s]")
    ax.set_ylabel("normalized signal")
    ax.set_title(title)
    fig.tight_layout()
    fig.savefig(path, format="svg")
    plt.close(fig)
    return Path(path)


@_never_fails
def plot_confusion(probabilities, path: Path, title: str = "Demodulation probabilities") -> Path:
    """Heatmap of row-normalized confusion probabilities, annotated per cell."""
    probs = np.asarray(probabilities, dtype=np.float64)
    c = probs.shape[0]
    fig, ax = plt.subplots(figsize=(1.0 + 0.7 * c, 0.8 + 0.7 * c))
    image = ax.imshow(probs, cmap="Blues", vmin=0.0, vmax=1.0)
    for i in range(c):
        for j in range(c):
            ax.text(
                j,
                i,
                f"{probs[i, j]:.2f}",
                ha="center",
                va="center",
                fontsize=8,
                color="white" if probs[i, j] > 0.5 else "black",
            )
    ax.set_xticks(range(c))
    ax.set_yticks(range(c))
    ax.set_xlabel("demodulated symbol")
    ax.set_ylabel("transmitted symbol")
    ax.set_title(title)
    fig.colorbar(image, ax=ax, fraction=0.046)
    fig.tight_layout()
    fig.savefig(path, format="svg")
    plt.close(fig)
    return Path(path)


@_never_fails
def plot_history(epochs, train_loss, val_loss, path: Path) -> Path:
    """Training and validation loss per epoch."""
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.plot(epochs, train_loss, label="train")
    ax.plot(epochs, val_loss, label="validation")
    ax.set_xlabel("epoch")
    ax.set_ylabel("cross-entropy")
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, format="svg")
    plt.close(fig)
    return Path(path)


@_never_fails
def plot_offsets(scenarios: list[str], offsets: list[list[float]], path: Path) -> Path:
    """Grouped bars of offset probabilities, one group per offset."""
    depth = max((len(o) for o in offsets), default=0)
    width = 0.8 / max(len(scenarios), 1)
    fig, ax = plt.subplots(figsize=(7, 4))
    for n, (name, probs) in enumerate(zip(scenarios, offsets, strict=True)):
        ax.bar(np.arange(len(probs)) + n * width, probs, width=width, label=name)
    ax.set_xticks(np.arange(depth) + 0.4 - width / 2)
    ax.set_xticklabels([str(k) for k in range(depth)])
    ax.set_xlabel("offset |demodulated - transmitted|")
    ax.set_ylabel("probability")
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, format="svg")
    plt.close(fig)
    return Path(path)

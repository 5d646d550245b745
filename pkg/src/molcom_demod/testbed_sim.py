"""
Testbed Simulator Module

Synthesizes testbed-like sensor traces for concentration shift keying:
each symbol level injects a proportional amount of particles whose arrival
at the sensor follows the hitting-time density of the channel. Pulses
superpose linearly, which produces inter-symbol interference at higher
symbol rates. On top of that the simulator adds:

- per-symbol lognormal injection jitter
- a slow sinusoidal baseline drift
- additive Gaussian sensor noise
- per-sample timestamp jitter (nonuniform sampling)

Level 0 injects nothing.
"""

import json
import logging
import math
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Any

import numpy as np

from molcom_demod.channel_models import ChannelParams, hitting_density, hitting_peak, hitting_peak_time
from molcom_demod.errors import DataError, DomainError

logger = logging.getLogger(__name__)

# Tail appended after the last symbol, in symbol periods
TAIL_PERIODS = 2
# Timestamp jitter is clipped to this fraction of the sampling interval
MAX_JITTER_FRACTION = 0.45


@dataclass(frozen=True)
class ModulationConfig:
    """
    Concentration shift keying parameters.

    particles_scale=None selects the amplitude that makes an isolated
    level-1 pulse peak at 1.0 for the channel in use.
    """

    alphabet_size: int = 8
    symbol_rate: float = 2.0
    particles_scale: float | None = None
    sample_rate: float = 100.0

    def __post_init__(self):
        if self.alphabet_size < 2:
            raise DomainError(f"alphabet_size must be >= 2, got {self.alphabet_size}")
        if not self.symbol_rate > 0:
            raise DomainError(f"symbol_rate must be > 0, got {self.symbol_rate}")
        if self.particles_scale is not None and not self.particles_scale > 0:
            raise DomainError(f"particles_scale must be > 0, got {self.particles_scale}")
        if not self.sample_rate >= 8 * self.symbol_rate:
            raise DomainError(
                f"sample_rate must be >= 8 x symbol_rate ({8 * self.symbol_rate}), got {self.sample_rate}"
            )

    @property
    def symbol_period(self) -> float:
        return 1.0 / self.symbol_rate

    @property
    def samples_per_symbol(self) -> int:
        return round(self.sample_rate / self.symbol_rate)

    def resolved_scale(self, ch: ChannelParams) -> float:
        """Amplitude of one level unit for the given channel."""
        if self.particles_scale is not None:
            return self.particles_scale
        return 1.0 / hitting_peak(ch)


@dataclass(frozen=True)
class NoiseConfig:
    """Disturbances added on top of the noiseless pulse train."""

    awgn_sigma: float = 0.02
    amplitude_jitter_sigma: float = 0.05
    drift_amplitude: float = 0.05
    drift_period: float = 30.0
    sampling_jitter_sigma: float = 0.001

    def __post_init__(self):
        for name in (
            "awgn_sigma",
            "amplitude_jitter_sigma",
            "drift_amplitude",
            "sampling_jitter_sigma",
        ):
            value = getattr(self, name)
            if not value >= 0:
                raise DomainError(f"{name} must be >= 0, got {value}")
        if not self.drift_period > 0:
            raise DomainError(f"drift_period must be > 0, got {self.drift_period}")

    @classmethod
    def off(cls) -> "NoiseConfig":
        """All disturbances disabled."""
        return cls(
            awgn_sigma=0.0,
            amplitude_jitter_sigma=0.0,
            drift_amplitude=0.0,
            sampling_jitter_sigma=0.0,
        )

    def check_sampling(self, sample_rate: float) -> None:
        if not self.sampling_jitter_sigma < 0.25 / sample_rate:
            raise DomainError(
                f"sampling_jitter_sigma must be < 0.25/sample_rate ({0.25 / sample_rate}), "
                f"got {self.sampling_jitter_sigma}"
            )


@dataclass(frozen=True, eq=False)
class Transmission:
    """A symbol sequence and the noisy, nonuniformly sampled trace it produced."""

    symbols: np.ndarray
    boundaries: np.ndarray
    times: np.ndarray
    values: np.ndarray
    modulation: ModulationConfig
    channel: ChannelParams
    noise: NoiseConfig
    seed: int | None = None
    index: int = 0
    extra: dict[str, Any] = field(default_factory=dict)

    @property
    def n_symbols(self) -> int:
        return len(self.symbols)

    def config_echo(self) -> dict[str, Any]:
        """Full echo of the generating configuration."""
        return {
            "modulation": asdict(self.modulation),
            "channel": asdict(self.channel),
            "noise": asdict(self.noise),
            "seed": self.seed,
            "index": self.index,
            **self.extra,
        }

    def to_record(self) -> dict[str, Any]:
        return {
            "config": self.config_echo(),
            "symbols": [int(s) for s in self.symbols],
            "boundaries_s": [float(b) for b in self.boundaries],
            "t_s": [float(t) for t in self.times],
            "v": [float(v) for v in self.values],
        }

    @classmethod
    def from_record(cls, record: dict[str, Any]) -> "Transmission":
        try:
            config = dict(record["config"])
            modulation = ModulationConfig(**config.pop("modulation"))
            channel = ChannelParams(**config.pop("channel"))
            noise = NoiseConfig(**config.pop("noise"))
            seed = config.pop("seed", None)
            index = int(config.pop("index", 0))
            return cls(
                symbols=np.asarray(record["symbols"], dtype=np.int64),
                boundaries=np.asarray(record["boundaries_s"], dtype=np.float64),
                times=np.asarray(record["t_s"], dtype=np.float64),
                values=np.asarray(record["v"], dtype=np.float64),
                modulation=modulation,
                channel=channel,
                noise=noise,
                seed=seed,
                index=index,
                extra=config,
            )
        except (KeyError, TypeError) as e:
            raise DataError(f"malformed transmission record: {e!r}") from e


def random_message(n: int, alphabet_size: int, rng: np.random.Generator) -> np.ndarray:
    """n symbols drawn uniformly from [0, alphabet_size - 1]."""
    if n < 1:
        raise DomainError(f"n must be >= 1, got {n}")
    if alphabet_size < 2:
        raise DomainError(f"alphabet_size must be >= 2, got {alphabet_size}")
    return rng.integers(0, alphabet_size, size=n, dtype=np.int64)


def _sample_times(n_samples: int, mod: ModulationConfig, noise: NoiseConfig, rng) -> np.ndarray:
    nominal = np.arange(n_samples, dtype=np.float64) / mod.sample_rate
    limit = MAX_JITTER_FRACTION / mod.sample_rate
    jitter = np.clip(rng.normal(0.0, 1.0, size=n_samples) * noise.sampling_jitter_sigma, -limit, limit)
    # The trace starts at t = 0
    jitter[0] = max(jitter[0], 0.0)
    times = np.sort(nominal + jitter)
    if np.any(np.diff(times) <= 0):
        raise DataError("sample timestamps are not strictly increasing")
    return times


def pulse_train(
    levels: np.ndarray, boundaries: np.ndarray, times: np.ndarray, ch: ChannelParams
) -> np.ndarray:
    """Superposition sum_k levels[k] * h(t - boundaries[k]); h = 0 before injection."""
    values = np.zeros_like(times)
    for level, start in zip(levels, boundaries, strict=True):
        if level == 0:
            continue
        mask = times > start
        values[mask] += level * hitting_density(ch, times[mask] - start)
    return values


def modulate(
    symbols,
    mod: ModulationConfig,
    ch: ChannelParams,
    noise: NoiseConfig,
    rng: np.random.Generator,
) -> Transmission:
    """
    Synthesize the sensor trace for a symbol sequence.

    Args:
        symbols: Levels in [0, alphabet_size - 1]
        mod: Modulation parameters
        ch: Channel parameters (pulse shape)
        noise: Disturbances
        rng: Random stream; all draws happen regardless of the noise settings

    Returns:
        Transmission with ground-truth boundaries and samples

    Raises:
        DataError: If the symbol sequence is empty or out of range
    """
    symbols = np.asarray(symbols, dtype=np.int64)
    if symbols.ndim != 1 or len(symbols) == 0:
        raise DataError("symbol sequence must be a non-empty 1-D sequence")
    if symbols.min() < 0 or symbols.max() >= mod.alphabet_size:
        raise DataError(f"symbols must lie in [0, {mod.alphabet_size - 1}]")
    noise.check_sampling(mod.sample_rate)

    n = len(symbols)
    period = mod.symbol_period
    boundaries = np.arange(n, dtype=np.float64) * period
    duration = (n + TAIL_PERIODS) * period
    n_samples = math.floor(duration * mod.sample_rate + 1e-9) + 1

    times = _sample_times(n_samples, mod, noise, rng)
    jitter = np.exp(noise.amplitude_jitter_sigma * rng.normal(0.0, 1.0, size=n))
    drift_phase = rng.uniform(0.0, 2.0 * math.pi)
    sensor_noise = rng.normal(0.0, 1.0, size=n_samples)

    amplitudes = symbols * jitter * mod.resolved_scale(ch)
    values = pulse_train(amplitudes, boundaries, times, ch)
    if noise.drift_amplitude > 0:
        values += noise.drift_amplitude * np.sin(
            2.0 * math.pi * times / noise.drift_period + drift_phase
        )
    if noise.awgn_sigma > 0:
        values += noise.awgn_sigma * sensor_noise

    return Transmission(
        symbols=symbols,
        boundaries=boundaries,
        times=times,
        values=values,
        modulation=mod,
        channel=ch,
        noise=noise,
    )


def transmission_rng(master_seed: int, index: int) -> np.random.Generator:
    """Independent random stream for transmission `index` of a corpus."""
    return np.random.default_rng(np.random.SeedSequence(master_seed, spawn_key=(index,)))


def generate_transmission(
    index: int,
    msg_len: int,
    mod: ModulationConfig,
    ch: ChannelParams,
    noise: NoiseConfig,
    master_seed: int,
) -> Transmission:
    """Generate transmission `index` of the corpus seeded by master_seed."""
    rng = transmission_rng(master_seed, index)
    symbols = random_message(msg_len, mod.alphabet_size, rng)
    tx = modulate(symbols, mod, ch, noise, rng)
    return replace(tx, seed=master_seed, index=index)


def generate_corpus(
    n_transmissions: int,
    msg_len: int,
    mod: ModulationConfig,
    ch: ChannelParams,
    noise: NoiseConfig,
    master_seed: int,
    max_workers: int | None = None,
    parallel: bool = False,
    verbose: bool = False,
) -> list[Transmission]:
    """
    Generate a corpus of independent transmissions.

    Transmission i draws from its own stream derived from (master_seed, i),
    so the parallel and sequential paths return identical corpora in index order.

    Args:
        n_transmissions: Number of transmissions (>= 1)
        msg_len: Symbols per transmission
        mod: Modulation parameters
        ch: Channel parameters
        noise: Disturbances
        master_seed: Corpus seed
        max_workers: Worker processes for the parallel path
        parallel: If True, generate across a process pool
        verbose: Worker logging level

    Returns:
        List of transmissions ordered by index
    """
    if n_transmissions < 1:
        raise DomainError(f"n_transmissions must be >= 1, got {n_transmissions}")
    if msg_len < 1:
        raise DomainError(f"msg_len must be >= 1, got {msg_len}")

    logger.info(
        f"Generating {n_transmissions} transmissions x {msg_len} symbols "
        f"(C={mod.alphabet_size}, {mod.symbol_rate} Hz, seed={master_seed})"
    )

    if parallel and n_transmissions > 1:
        from molcom_demod.processor import BatchProcessor

        processor = BatchProcessor(
            msg_len, mod, ch, noise, master_seed, max_workers=max_workers, verbose=verbose
        )
        results = processor.execute_parallel(list(range(n_transmissions)))
        failures = [r for r in results if not r["success"]]
        if failures:
            raise DataError(f"{len(failures)} transmissions failed: {failures[0]['error']}")
        return [r["transmission"] for r in results]

    return [
        generate_transmission(i, msg_len, mod, ch, noise, master_seed)
        for i in range(n_transmissions)
    ]


def isi_ratio(ch: ChannelParams, symbol_rate: float) -> float:
    """
    Residual of a pulse one symbol period after its peak, relative to the peak.

    This is the fraction of a symbol's peak that leaks into the next
    symbol's peak time.
    """
    if not symbol_rate > 0:
        raise DomainError(f"symbol_rate must be > 0, got {symbol_rate}")
    t_peak = hitting_peak_time(ch)
    return float(hitting_density(ch, t_peak + 1.0 / symbol_rate) / hitting_peak(ch))


def write_transmissions(transmissions: list[Transmission], path: Path) -> Path:
    """Write transmissions as JSON lines (one record per line, UTF-8)."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as f:
        for tx in transmissions:
            f.write(json.dumps(tx.to_record()))
            f.write("\n")
    logger.info(f"Wrote {len(transmissions)} transmissions to {path}")
    return path


def read_transmissions(path: Path) -> list[Transmission]:
    """Read a transmissions.jsonl file."""
    transmissions = []
    with open(path, encoding="utf-8") as f:
        for line_no, line in enumerate(f, start=1):
            if not line.strip():
                continue
            try:
                record = json.loads(line)
            except json.JSONDecodeError as e:
                raise DataError(f"{path}:{line_no}: invalid JSON ({e})") from e
            try:
                transmissions.append(Transmission.from_record(record))
            except (DataError, DomainError) as e:
                raise DataError(f"{path}:{line_no}: {e}") from e
    logger.debug(f"Read {len(transmissions)} transmissions from {path}")
    return transmissions

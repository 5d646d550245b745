"""
Channel Models Module

Closed-form diffusion channel functions for a point transmitter and a
spherical absorbing receiver:

1. arrival_fraction: cumulative fraction of molecules absorbed by time t
2. arrival_fraction_fitted: the same law with three correction parameters
3. fit_channel: least-squares fit of the correction parameters
4. hitting_density: first-arrival-time density, used as the pulse shape

All functions accept scalars or numpy arrays of times and are pure.
"""

import csv
import logging
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy import optimize, special

from molcom_demod.errors import DataError, DomainError, FitError

logger = logging.getLogger(__name__)

# Fit configuration
FIT_START = (1.0, 1.0, 1.0)
FIT_RESTARTS = ((1.25, 1.0, 1.0), (1.0, 1.25, 1.0), (1.0, 1.0, 1.25), (0.8, 0.8, 0.8))
FIT_MAX_EVALS = 10_000
FIT_XATOL = 1e-8
FIT_FATOL = 1e-15
FIT_MAX_POLISH = 10


@dataclass(frozen=True)
class ChannelParams:
    """Physical description of the diffusion channel (consistent length unit, seconds)."""

    receiver_radius: float = 1.0
    distance: float = 4.0
    diffusion_coeff: float = 20.0

    def __post_init__(self):
        if not self.receiver_radius > 0:
            raise DomainError(f"receiver_radius must be > 0, got {self.receiver_radius}")
        if not self.distance > self.receiver_radius:
            raise DomainError(
                f"distance must be > receiver_radius ({self.receiver_radius}), got {self.distance}"
            )
        if not self.diffusion_coeff > 0:
            raise DomainError(f"diffusion_coeff must be > 0, got {self.diffusion_coeff}")

    @property
    def capture_limit(self) -> float:
        """Asymptotic arrival fraction r / (d + r)."""
        return self.receiver_radius / (self.distance + self.receiver_radius)


@dataclass(frozen=True)
class FitParams:
    """Correction parameters (b1, b2, b3) of the fitted arrival law."""

    b1: float = 1.0
    b2: float = 1.0
    b3: float = 1.0

    def __post_init__(self):
        if not self.b1 > 0:
            raise DomainError(f"b1 must be > 0, got {self.b1}")
        if not (math.isfinite(self.b2) and math.isfinite(self.b3)):
            raise DomainError(f"b2 and b3 must be finite, got ({self.b2}, {self.b3})")

    def as_tuple(self) -> tuple[float, float, float]:
        return (self.b1, self.b2, self.b3)


IDENTITY_FIT = FitParams(1.0, 1.0, 1.0)


@dataclass(frozen=True, eq=False)
class ObservedSeries:
    """Observed arrival fractions S(t_k) at N strictly increasing times."""

    times: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        times = np.asarray(self.times, dtype=np.float64)
        values = np.asarray(self.values, dtype=np.float64)
        object.__setattr__(self, "times", times)
        object.__setattr__(self, "values", values)

        if times.ndim != 1 or times.shape != values.shape:
            raise DataError(
                f"times and values must be 1-D of equal length, got {times.shape} and {values.shape}"
            )
        if len(times) < 3:
            raise DataError(f"observed series needs >= 3 points, got {len(times)}")
        if not np.all(np.isfinite(times)) or not np.all(np.isfinite(values)):
            raise DataError("observed series contains non-finite entries")
        if times[0] <= 0 or np.any(np.diff(times) <= 0):
            raise DataError("observed times must be positive and strictly increasing")

    def __len__(self) -> int:
        return len(self.times)

    @classmethod
    def from_csv(cls, path: Path) -> "ObservedSeries":
        """Read a CSV with header `t_s,value`."""
        times, values = [], []
        with open(path, newline="") as f:
            reader = csv.DictReader(f)
            if reader.fieldnames is None or {"t_s", "value"} - set(reader.fieldnames):
                raise DataError(f"{path}: expected header 't_s,value', got {reader.fieldnames}")
            for line_no, row in enumerate(reader, start=2):
                try:
                    times.append(float(row["t_s"]))
                    values.append(float(row["value"]))
                except (TypeError, ValueError) as e:
                    raise DataError(f"{path}:{line_no}: {e}") from e
        return cls(np.array(times), np.array(values))

    def to_csv(self, path: Path) -> None:
        with open(path, "w", newline="") as f:
            writer = csv.writer(f)
            writer.writerow(["t_s", "value"])
            for t, v in zip(self.times, self.values, strict=True):
                writer.writerow([repr(float(t)), repr(float(v))])


def _as_times(t) -> np.ndarray:
    times = np.asarray(t, dtype=np.float64)
    if not np.all(np.isfinite(times)) or np.any(times <= 0):
        raise DomainError(f"times must be finite and > 0, got {t!r}")
    return times


def _scalar_or_array(values: np.ndarray, like):
    return float(values) if np.ndim(like) == 0 else values


def erfc(z):
    """
    Complementary error function 1 - erf(z).

    Args:
        z: Finite real number or array

    Returns:
        erfc(z) with the shape of z

    Raises:
        DomainError: If z is not finite
    """
    arr = np.asarray(z, dtype=np.float64)
    if not np.all(np.isfinite(arr)):
        raise DomainError(f"erfc requires finite input, got {z!r}")
    return _scalar_or_array(special.erfc(arr), z)


def arrival_fraction(ch: ChannelParams, t):
    """
    Fraction of released molecules absorbed by the receiver up to time t.

    F(t) = r/(d+r) * erfc(d / sqrt(4 D t))
    """
    return arrival_fraction_fitted(ch, IDENTITY_FIT, t)


def arrival_fraction_fitted(ch: ChannelParams, fit: FitParams, t):
    """
    Arrival fraction with correction parameters.

    F(t; b1, b2, b3) = b1 * r/(d+r) * erfc(d / sqrt((4D)^b2 * t^b3))

    Raises:
        DomainError: If t <= 0 or the radicand is not positive
    """
    times = _as_times(t)
    radicand = (4.0 * ch.diffusion_coeff) ** fit.b2 * times**fit.b3
    if np.any(~(radicand > 0)) or not np.all(np.isfinite(radicand)):
        raise DomainError(f"radicand (4D)^b2 * t^b3 must be finite and > 0 for fit {fit}")
    values = fit.b1 * ch.capture_limit * special.erfc(ch.distance / np.sqrt(radicand))
    return _scalar_or_array(values, t)


def _residual_sum(ch: ChannelParams, obs: ObservedSeries, b: np.ndarray) -> float:
    b1, b2, b3 = (float(x) for x in b)
    if not b1 > 0:
        return math.inf
    try:
        model = arrival_fraction_fitted(ch, FitParams(b1, b2, b3), obs.times)
    except DomainError:
        return math.inf
    rss = float(np.sum((model - obs.values) ** 2))
    return rss if math.isfinite(rss) else math.inf


def residual_sum_of_squares(ch: ChannelParams, fit: FitParams, obs: ObservedSeries) -> float:
    """Objective of the channel fit: sum_k (F(t_k; b) - S(t_k))^2."""
    return _residual_sum(ch, obs, np.array(fit.as_tuple()))


def fit_channel(ch: ChannelParams, obs: ObservedSeries) -> FitParams:
    """
    Fit (b1, b2, b3) by least squares with restarted Nelder-Mead.

    The search starts at (1, 1, 1) and at four perturbed points, then keeps
    restarting from the incumbent until the objective stops improving.

    Args:
        ch: Channel whose arrival law is corrected
        obs: Observed arrival fractions

    Returns:
        FitParams minimizing the residual sum of squares

    Raises:
        FitError: If the objective is non-finite at every start point
    """
    options = {"xatol": FIT_XATOL, "fatol": FIT_FATOL, "maxfev": FIT_MAX_EVALS}

    def objective(b: np.ndarray) -> float:
        return _residual_sum(ch, obs, b)

    best_x: np.ndarray | None = None
    best_f = math.inf
    for start in (FIT_START, *FIT_RESTARTS):
        result = optimize.minimize(objective, np.array(start), method="Nelder-Mead", options=options)
        logger.debug(f"Fit from {start}: rss={result.fun:.3e} nfev={result.nfev}")
        if math.isfinite(result.fun) and result.fun < best_f:
            best_x, best_f = result.x, float(result.fun)

    if best_x is None:
        raise FitError(f"objective non-finite at all start points ({len(obs)} observations)")

    # Nelder-Mead can stall on a collapsed simplex; restart from the incumbent
    for _ in range(FIT_MAX_POLISH):
        result = optimize.minimize(objective, best_x, method="Nelder-Mead", options=options)
        if not result.fun < best_f:
            break
        best_x, best_f = result.x, float(result.fun)

    fit = FitParams(*(float(x) for x in best_x))
    logger.info(f"Channel fit: b=({fit.b1:.6f}, {fit.b2:.6f}, {fit.b3:.6f}) rss={best_f:.3e}")
    return fit


def hitting_density(ch: ChannelParams, t):
    """
    First-arrival-time density at the receiver surface.

    h(t) = r (d - r) / (d sqrt(4 pi D t^3)) * exp(-(d - r)^2 / (4 D t))

    Integrates to r/d over (0, inf); the mode is (d - r)^2 / (6 D).

    Raises:
        DomainError: If t <= 0
    """
    times = _as_times(t)
    r, d, diff = ch.receiver_radius, ch.distance, ch.diffusion_coeff
    gap = d - r
    prefactor = r * gap / (d * np.sqrt(4.0 * np.pi * diff * times**3))
    values = prefactor * np.exp(-(gap**2) / (4.0 * diff * times))
    return _scalar_or_array(values, t)


def hitting_peak_time(ch: ChannelParams) -> float:
    """Time of the maximum of hitting_density."""
    return (ch.distance - ch.receiver_radius) ** 2 / (6.0 * ch.diffusion_coeff)


def hitting_peak(ch: ChannelParams) -> float:
    """Maximum value of hitting_density."""
    return float(hitting_density(ch, hitting_peak_time(ch)))


def log_times(t_min: float, t_max: float, n: int) -> np.ndarray:
    """n log-spaced observation times in [t_min, t_max]."""
    if not 0 < t_min < t_max:
        raise DomainError(f"need 0 < t_min < t_max, got ({t_min}, {t_max})")
    return np.geomspace(t_min, t_max, n)


def sample_observations(
    ch: ChannelParams,
    fit: FitParams,
    times: np.ndarray,
    noise_sigma: float = 0.0,
    rng: np.random.Generator | None = None,
) -> ObservedSeries:
    """
    Synthesize an observed series from the fitted arrival law.

    Args:
        ch: Channel parameters
        fit: Generating correction parameters
        times: Observation times (> 0, increasing)
        noise_sigma: Standard deviation of additive Gaussian noise
        rng: Random stream (required when noise_sigma > 0)
    """
    values = np.asarray(arrival_fraction_fitted(ch, fit, times), dtype=np.float64)
    if noise_sigma > 0:
        if rng is None:
            raise DomainError("rng is required when noise_sigma > 0")
        values = values + rng.normal(0.0, noise_sigma, size=values.shape)
    return ObservedSeries(np.asarray(times, dtype=np.float64), values)

"""
Unit tests for channel_models module.

Closed-form laws are checked against quadrature and grid-search oracles
that live here, not in the library.
"""

import math

import numpy as np
import pytest
from scipy import integrate, optimize, special

from molcom_demod.channel_models import (
    ChannelParams,
    FitParams,
    ObservedSeries,
    arrival_fraction,
    arrival_fraction_fitted,
    erfc,
    fit_channel,
    hitting_density,
    hitting_peak,
    hitting_peak_time,
    log_times,
    residual_sum_of_squares,
    sample_observations,
)
from molcom_demod.errors import DataError, DomainError, FitError


def _erfc_quadrature(z: float) -> float:
    value, _ = integrate.quad(lambda u: math.exp(-u * u), z, math.inf, epsabs=1e-12)
    return 2.0 / math.sqrt(math.pi) * value


def _grid_oracle(ch: ChannelParams, obs: ObservedSeries, points: int = 21) -> float:
    """Smallest residual over a points^3 grid on [0.5, 1.5]^3."""
    axis = np.linspace(0.5, 1.5, points)
    b1, b2, b3 = np.meshgrid(axis, axis, axis, indexing="ij")
    t = obs.times[np.newaxis, np.newaxis, np.newaxis, :]
    radicand = (4.0 * ch.diffusion_coeff) ** b2[..., np.newaxis] * t ** b3[..., np.newaxis]
    model = (
        b1[..., np.newaxis]
        * ch.receiver_radius
        / (ch.distance + ch.receiver_radius)
        * special.erfc(ch.distance / np.sqrt(radicand))
    )
    rss = np.sum((model - obs.values) ** 2, axis=-1)
    return float(rss.min())


class TestErfc:
    """Tests for the complementary error function."""

    def test_zero(self):
        """Test erfc(0) = 1."""
        assert erfc(0.0) == pytest.approx(1.0, abs=1e-12)

    def test_known_values(self):
        """Test erfc(1) and erfc(6) against the quadrature oracle."""
        assert erfc(1.0) == pytest.approx(0.157299, abs=1e-6)
        assert erfc(6.0) <= 1e-6

    def test_matches_quadrature_oracle(self):
        """Test erfc on [-6, 6] with step 0.01 within 1e-6 of quadrature."""
        grid = np.round(np.arange(-600, 601) / 100.0, 2)
        oracle = np.array([_erfc_quadrature(z) for z in grid])
        assert np.max(np.abs(erfc(grid) - oracle)) <= 1e-6

    def test_reflection(self):
        """Test erfc(z) + erfc(-z) = 2 for random z."""
        rng = np.random.default_rng(0)
        z = rng.uniform(-6, 6, size=1000)
        assert np.max(np.abs(erfc(z) + erfc(-z) - 2.0)) <= 1e-9

    def test_scalar_in_scalar_out(self):
        """Test that a scalar input returns a Python float."""
        assert isinstance(erfc(0.5), float)

    @pytest.mark.parametrize("z", [math.inf, -math.inf, math.nan])
    def test_non_finite_raises(self, z):
        """Test that non-finite input is a domain error."""
        with pytest.raises(DomainError):
            erfc(z)


class TestChannelParams:
    """Tests for ChannelParams invariants."""

    def test_defaults(self):
        """Test default simulator channel."""
        ch = ChannelParams()
        assert (ch.receiver_radius, ch.distance, ch.diffusion_coeff) == (1.0, 4.0, 20.0)
        assert ch.capture_limit == pytest.approx(0.2)

    @pytest.mark.parametrize(
        "kwargs",
        [
            {"receiver_radius": 0.0},
            {"receiver_radius": 2.0, "distance": 2.0},
            {"diffusion_coeff": -1.0},
        ],
    )
    def test_invalid_params_raise(self, kwargs):
        """Test r > 0, d > r and D > 0."""
        with pytest.raises(DomainError):
            ChannelParams(**kwargs)

    def test_fit_params_b1_positive(self):
        """Test that b1 <= 0 is rejected."""
        with pytest.raises(DomainError):
            FitParams(0.0, 1.0, 1.0)


class TestArrivalFraction:
    """Tests for arrival_fraction and its fitted variant."""

    def test_limit_is_capture_fraction(self):
        """Test F(1e12) = r/(d+r) within 1e-6."""
        ch = ChannelParams(1.0, 4.0, 1.0)
        assert arrival_fraction(ch, 1e12) == pytest.approx(0.2, abs=1e-6)

    def test_limit_random_params(self):
        """Test the supremum for 20 random parameter sets."""
        rng = np.random.default_rng(1)
        for _ in range(20):
            r = rng.uniform(0.2, 1.0)
            ch = ChannelParams(r, r * rng.uniform(1.5, 20.0), rng.uniform(5.0, 50.0))
            assert arrival_fraction(ch, 1e12) == pytest.approx(ch.capture_limit, abs=1e-6)

    def test_known_value(self):
        """Test r=0.5, d=5, D=1, t=25 -> 0.5/5.5 * erfc(0.5)."""
        ch = ChannelParams(0.5, 5.0, 1.0)
        assert arrival_fraction(ch, 25.0) == pytest.approx(0.043591, abs=1e-6)

    def test_early_time_is_zero(self):
        """Test that F vanishes right after release."""
        ch = ChannelParams(1.0, 4.0, 1.0)
        assert arrival_fraction(ch, 1e-9) <= 1e-12

    def test_monotone_nondecreasing(self):
        """Test F(t1) <= F(t2) for t1 < t2 on random channels."""
        rng = np.random.default_rng(2)
        for _ in range(20):
            r = rng.uniform(0.2, 2.0)
            ch = ChannelParams(r, r * rng.uniform(1.5, 20.0), rng.uniform(0.1, 50.0))
            t = np.sort(rng.uniform(1e-3, 1e3, size=200))
            values = arrival_fraction(ch, t)
            assert np.all(np.diff(values) >= -1e-12)

    @pytest.mark.parametrize("t", [0.0, -1.0])
    def test_nonpositive_time_raises(self, t):
        """Test that t <= 0 is a domain error."""
        with pytest.raises(DomainError):
            arrival_fraction(ChannelParams(), t)

    def test_identity_fit_matches_plain_law(self):
        """Test fit=(1,1,1) reproduces arrival_fraction."""
        ch = ChannelParams(0.5, 5.0, 1.0)
        t = log_times(0.01, 100.0, 64)
        fitted = arrival_fraction_fitted(ch, FitParams(1.0, 1.0, 1.0), t)
        assert np.max(np.abs(fitted - arrival_fraction(ch, t))) <= 1e-12

    def test_linear_in_b1(self):
        """Test fit=(2,1,1) is exactly twice the plain law."""
        ch = ChannelParams(0.5, 5.0, 1.0)
        t = log_times(0.01, 100.0, 64)
        fitted = arrival_fraction_fitted(ch, FitParams(2.0, 1.0, 1.0), t)
        np.testing.assert_array_equal(fitted, 2.0 * arrival_fraction(ch, t))

    def test_fitted_matches_direct_formula(self):
        """Test fit=(1.2, 0.9, 1.1) at t=25 against an independent evaluation."""
        ch = ChannelParams(0.5, 5.0, 1.0)
        expected = 1.2 * 0.5 / 5.5 * math.erfc(5.0 / math.sqrt(4.0**0.9 * 25.0**1.1))
        value = arrival_fraction_fitted(ch, FitParams(1.2, 0.9, 1.1), 25.0)
        assert value == pytest.approx(expected, abs=1e-12)


class TestFitChannel:
    """Tests for the least-squares channel fit."""

    @pytest.fixture
    def channel(self):
        return ChannelParams(1.0, 4.0, 1.0)

    @pytest.fixture
    def times(self):
        return log_times(0.1, 100.0, 50)

    def test_recovers_identity(self, channel, times):
        """Test noiseless data from (1,1,1) recovers each component within 1e-3."""
        obs = sample_observations(channel, FitParams(1.0, 1.0, 1.0), times)
        fit = fit_channel(channel, obs)
        assert fit.as_tuple() == pytest.approx((1.0, 1.0, 1.0), abs=1e-3)

    def test_recovers_perturbed(self, channel, times):
        """Test noiseless data from (1.2, 0.9, 1.1) recovers each component within 1e-2."""
        truth = FitParams(1.2, 0.9, 1.1)
        obs = sample_observations(channel, truth, times)
        assert residual_sum_of_squares(channel, truth, obs) < 1e-10

        fit = fit_channel(channel, obs)
        assert fit.as_tuple() == pytest.approx(truth.as_tuple(), abs=1e-2)

    def test_never_worse_than_grid_oracle(self, channel, times):
        """Test the fit residual against a 21^3 grid on noisy instances."""
        truth = FitParams(1.2, 0.9, 1.1)
        for seed in range(10):
            rng = np.random.default_rng(seed)
            obs = sample_observations(channel, truth, times, noise_sigma=0.005, rng=rng)
            fit = fit_channel(channel, obs)
            rss = residual_sum_of_squares(channel, fit, obs)
            assert math.isfinite(rss)
            assert rss <= _grid_oracle(channel, obs) + 1e-9

    def test_objective_non_finite_everywhere_raises(self, channel, times):
        """Test that a fit with an overflowing objective fails loudly."""
        obs = ObservedSeries(times, np.full(len(times), 1e300))
        with pytest.raises(FitError):
            fit_channel(channel, obs)

    def test_noise_requires_rng(self, channel, times):
        """Test that noisy sampling without a generator is rejected."""
        with pytest.raises(DomainError):
            sample_observations(channel, FitParams(), times, noise_sigma=0.01)


class TestObservedSeries:
    """Tests for ObservedSeries validation and CSV I/O."""

    def test_too_few_points(self):
        """Test N >= 3."""
        with pytest.raises(DataError):
            ObservedSeries([1.0, 2.0], [0.1, 0.2])

    def test_times_must_increase(self):
        """Test strictly increasing positive times."""
        with pytest.raises(DataError):
            ObservedSeries([1.0, 1.0, 2.0], [0.1, 0.2, 0.3])

    def test_non_finite_values(self):
        """Test that NaN values are rejected."""
        with pytest.raises(DataError):
            ObservedSeries([1.0, 2.0, 3.0], [0.1, math.nan, 0.3])

    def test_csv_round_trip(self, tmp_path):
        """Test to_csv/from_csv preserve values exactly."""
        obs = sample_observations(ChannelParams(), FitParams(1.2, 0.9, 1.1), log_times(0.01, 10, 20))
        path = tmp_path / "obs.csv"
        obs.to_csv(path)

        assert path.read_text().splitlines()[0] == "t_s,value"
        loaded = ObservedSeries.from_csv(path)
        np.testing.assert_array_equal(loaded.times, obs.times)
        np.testing.assert_array_equal(loaded.values, obs.values)

    def test_csv_wrong_header(self, tmp_path):
        """Test that a CSV without t_s,value columns is a data error."""
        path = tmp_path / "bad.csv"
        path.write_text("time,v\n1,0.1\n2,0.2\n3,0.3\n")
        with pytest.raises(DataError):
            ObservedSeries.from_csv(path)


class TestHittingDensity:
    """Tests for the first-arrival-time density."""

    @staticmethod
    def _total_mass(ch: ChannelParams) -> float:
        tp = hitting_peak_time(ch)
        head, _ = integrate.quad(lambda t: hitting_density(ch, t), 0.0, tp, limit=200)
        # t = tp / w^2 maps (tp, inf) to (0, 1) with a bounded integrand
        tail, _ = integrate.quad(
            lambda w: hitting_density(ch, tp / (w * w)) * 2.0 * tp / w**3, 0.0, 1.0, limit=200
        )
        return head + tail

    def test_total_mass(self):
        """Test the integral over (0, inf) equals r/d for r=1, d=4, D=1."""
        assert self._total_mass(ChannelParams(1.0, 4.0, 1.0)) == pytest.approx(0.25, abs=1e-4)

    def test_total_mass_random_params(self):
        """Test r/d mass for three random channels with d/r in [2, 20]."""
        rng = np.random.default_rng(3)
        for _ in range(3):
            r = rng.uniform(0.5, 2.0)
            ch = ChannelParams(r, r * rng.uniform(2.0, 20.0), rng.uniform(0.5, 30.0))
            expected = ch.receiver_radius / ch.distance
            assert self._total_mass(ch) == pytest.approx(expected, abs=1e-4)

    def test_mode(self):
        """Test the argmax (d-r)^2/(6D) = 1.5 against numeric maximization."""
        ch = ChannelParams(1.0, 4.0, 1.0)
        assert hitting_peak_time(ch) == pytest.approx(1.5)
        result = optimize.minimize_scalar(
            lambda t: -hitting_density(ch, t), bounds=(0.1, 10.0), method="bounded"
        )
        assert result.x == pytest.approx(1.5, abs=1e-3)
        assert hitting_peak(ch) == pytest.approx(-result.fun, rel=1e-9)

    def test_vanishes_near_zero(self):
        """Test h(1e-12) = 0."""
        assert hitting_density(ChannelParams(1.0, 4.0, 1.0), 1e-12) <= 1e-12

    def test_nonnegative(self):
        """Test h(t) >= 0 on a wide grid."""
        values = hitting_density(ChannelParams(), log_times(1e-6, 1e4, 500))
        assert np.all(values >= 0)

    def test_nonpositive_time_raises(self):
        """Test that t <= 0 is a domain error."""
        with pytest.raises(DomainError):
            hitting_density(ChannelParams(), np.array([0.1, 0.0]))

    def test_log_times_bounds(self):
        """Test log_times endpoints and domain check."""
        t = log_times(0.01, 10.0, 50)
        assert len(t) == 50
        assert t[0] == pytest.approx(0.01)
        assert t[-1] == pytest.approx(10.0)
        with pytest.raises(DomainError):
            log_times(1.0, 0.5, 10)

import dataclasses
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.optimize import minimize_scalar

from hfslock.angular import HalfInt
from hfslock.config import Config, build_lock
from hfslock.lineshape import HfsComponent, SpectrumModel
from hfslock.locksim import (LaserModel, LockConfig, LockConfigError, error_signal, lif_response, lock_point,
                             lockin_demodulate, run_lock, stability_stats)

FS, FD = 2099.2, 8.2
GAUSS_FWHM = 375.0


def gaussian_model(fwhm=GAUSS_FWHM, baseline=0.0):
    comp = HfsComponent(HalfInt(2), HalfInt(4), offset=0.0, rel_intensity=1.0)
    return SpectrumModel((comp,), cog=0.0, gaussian_fwhm=fwhm, lorentzian_fwhm=0.0, baseline_offset=baseline)


def gaussian_derivative(delta, fwhm=GAUSS_FWHM):
    k = 4.0 * math.log(2.0) / fwhm ** 2
    return -2.0 * k * delta * math.exp(-k * delta * delta)


@pytest.fixture(scope="module")
def fixture_cfg(data_dir):
    return Config.load(data_dir / "lock_fixture.cfg")


@pytest.fixture(scope="module")
def fixture_lock(data_dir):
    return build_lock(Config.load(data_dir / "lock_fixture.cfg"))


# ------------------------------------------------------------- detector

class TestLif:
    def test_peak(self):
        m = gaussian_model(baseline=0.05)
        assert lif_response(m, 0.0) == pytest.approx(float(np.max(m(np.linspace(-50, 50, 1001)))), rel=1e-12)

    def test_far_detuned(self):
        m = gaussian_model(baseline=0.05)
        assert abs(lif_response(m, 10 * m.fwhm) - 0.05) <= 1e-4

    def test_noise_variance(self):
        m = gaussian_model()
        sigma = lif_response(m, 0.0) / 70.0
        draws = lif_response(m, np.zeros(10_000), sigma, np.random.default_rng(11))
        assert np.var(draws, ddof=1) == pytest.approx(sigma ** 2, rel=0.05)

    def test_noise_needs_rng(self):
        with pytest.raises(ValueError):
            lif_response(gaussian_model(), 0.0, 0.1)


class TestDemodulate:
    N = 256 * 3

    def t(self):
        return np.arange(self.N) / FS

    @settings(max_examples=50)
    @given(a=st.floats(-10, 10), c=st.floats(-100, 100))
    def test_in_phase(self, a, c):
        s = c + a * np.sin(2 * np.pi * FD * self.t())
        assert abs(lockin_demodulate(s, FD, FS) - a) <= 1e-10 * max(1.0, abs(c))

    @settings(max_examples=50)
    @given(a=st.floats(-10, 10), c=st.floats(-100, 100))
    def test_quadrature(self, a, c):
        s = c + a * np.cos(2 * np.pi * FD * self.t())
        assert abs(lockin_demodulate(s, FD, FS)) <= 1e-10 * max(1.0, abs(c))

    def test_phase(self):
        s = np.cos(2 * np.pi * FD * self.t())
        assert lockin_demodulate(s, FD, FS, phase=np.pi / 2) == pytest.approx(1.0, abs=1e-12)

    def test_non_integer_periods(self):
        with pytest.raises(ValueError, match="integer"):
            lockin_demodulate(np.ones(300), FD, FS)
        with pytest.raises(ValueError):
            lockin_demodulate(np.ones(0), FD, FS)

    @pytest.mark.parametrize("dither", [5.0, GAUSS_FWHM / 20])
    @pytest.mark.parametrize("delta", [-120.0, 50.0, 200.0])
    def test_gaussian_derivative(self, dither, delta):
        cfg = LockConfig(gaussian_model(), 0, dither_amplitude=dither, sample_rate=FS, duration=600.0)
        want = gaussian_derivative(delta) * dither
        assert error_signal(cfg, delta) == pytest.approx(want, rel=0.01)


class TestDiscriminator:
    def test_odd_symmetry(self):
        cfg = LockConfig(gaussian_model(), 0, sample_rate=FS)
        for d in (1.0, 30.0, 150.0, 300.0):
            assert error_signal(cfg, d) == pytest.approx(-error_signal(cfg, -d), rel=1e-9, abs=1e-15)

    def test_single_peak_zero_crossing(self):
        cfg = LockConfig(gaussian_model(), 0, sample_rate=FS)
        assert abs(lock_point(cfg)) <= 1e-6

    @pytest.mark.parametrize("fraction", [20, 4])
    def test_blended_zero_crossing(self, fixture_lock, fraction):
        _, cfg, _ = fixture_lock
        m = cfg.discriminator
        cfg = dataclasses.replace(cfg, dither_amplitude=m.fwhm / fraction)
        center = m.cog + m.components[cfg.target_index].offset
        peak = minimize_scalar(lambda x: -float(m(np.array([x]))[0]), bounds=(center - 100, center + 100),
                               method="bounded", options={"xatol": 1e-8}).x
        assert abs(lock_point(cfg) - peak) <= cfg.dither_amplitude ** 2 / m.fwhm

    def test_bad_target(self):
        with pytest.raises(LockConfigError):
            LockConfig(gaussian_model(), 1)


# ----------------------------------------------------------------- loop

class TestLoop:
    def test_zero_noise_on_resonance(self):
        cfg = LockConfig(gaussian_model(), 0, sample_rate=FS, duration=60.0, averaging_times=(0.2, 1.0))
        run = run_lock(LaserModel(lock_point(cfg)), cfg)
        assert np.max(np.abs(run.error)) <= 1e-12
        assert np.max(np.abs(run.frequency - run.frequency[0])) <= 1e-9
        assert run.locked

    def test_ramp_tracking(self, fixture_lock):
        laser, cfg, _ = fixture_lock
        laser = dataclasses.replace(laser, random_walk_sigma=0.0, white_noise_sigma=0.0)
        cfg = dataclasses.replace(cfg, detector_noise_sigma=0.0, duration=180.0)
        run = run_lock(laser, cfg)
        settled = run.detuning[run.t > 30.0]
        assert np.max(np.abs(settled)) < 0.1
        # type-1 loop: steady-state lag is rate / Ki
        rate = laser.drift_rate / 3600.0
        assert np.mean(settled) == pytest.approx(rate / cfg.ki, rel=0.05)

    def test_open_loop_drift(self, fixture_lock):
        laser, cfg, _ = fixture_lock
        run = run_lock(laser, cfg, engaged=False)
        stats = run.stats_json()
        assert stats["discriminator_net_drift_mhz"] >= 5.0
        assert not run.engaged and np.all(run.control == 0.0)

    def test_closed_loop_spread(self, fixture_lock):
        laser, cfg, engaged = fixture_lock
        assert engaged
        run = run_lock(laser, cfg)
        assert run.locked
        assert all(v <= 1.4 for v in run.stats.windowed_spread.values())

    def test_lost_lock_flag(self):
        cfg = LockConfig(gaussian_model(), 0, sample_rate=FS, ki=0.0, duration=60.0, averaging_times=(1.0,))
        run = run_lock(LaserModel(0.0, drift_rate=60 * 600.0), cfg)
        assert not run.locked

    def test_bit_reproducible(self, fixture_lock):
        laser, cfg, _ = fixture_lock
        cfg = dataclasses.replace(cfg, duration=30.0, averaging_times=(0.2, 1.0))
        a, b = run_lock(laser, cfg), run_lock(laser, cfg)
        for name in ("t", "frequency", "error", "control"):
            assert np.array_equal(getattr(a, name), getattr(b, name))
        c = run_lock(dataclasses.replace(laser, seed=99), cfg)
        assert not np.array_equal(a.frequency, c.frequency)

    def test_outputs_finite(self, fixture_lock):
        laser, cfg, _ = fixture_lock
        cfg = dataclasses.replace(cfg, duration=30.0, averaging_times=(1.0,))
        run = run_lock(laser, cfg)
        for arr in (run.frequency, run.error, run.control):
            assert np.all(np.isfinite(arr))
        assert run.t.size == cfg.n_windows

    def test_csv(self, fixture_lock, tmp_path):
        laser, cfg, _ = fixture_lock
        run = run_lock(laser, dataclasses.replace(cfg, duration=4.0, averaging_times=(1.0,)))
        run.write_csv(tmp_path / "run.csv")
        lines = (tmp_path / "run.csv").read_text().splitlines()
        assert lines[0] == "t,frequency_mhz,error,control" and len(lines) == run.t.size + 1


class TestLaser:
    def test_deterministic(self):
        a = LaserModel(0.0, 30.0, 0.01, 0.05, seed=4).trajectory(1000, 1e-3)
        b = LaserModel(0.0, 30.0, 0.01, 0.05, seed=4).trajectory(1000, 1e-3)
        assert np.array_equal(a, b)

    def test_ramp(self):
        nu = LaserModel(10.0, 3600.0).trajectory(11, 0.1)
        assert np.allclose(nu, 10.0 + np.arange(11) * 0.1)

    def test_negative_noise(self):
        with pytest.raises(LockConfigError):
            LaserModel(0.0, random_walk_sigma=-1.0)


# ---------------------------------------------------------------- stats

class TestStats:
    T = np.arange(6000) * 0.1 + 0.05

    def test_constant(self):
        s = stability_stats(self.T, np.full(self.T.size, 3.3), (0.2, 1.0, 10.0, 60.0))
        assert all(v == 0.0 for v in s.windowed_spread.values()) and s.drift_slope == 0.0

    def test_ramp(self):
        r = 0.01
        s = stability_stats(self.T, r * self.T, (0.2, 1.0, 10.0, 60.0))
        assert s.drift_slope / 3600.0 == pytest.approx(r, rel=1e-9)
        for dt, spread in s.windowed_spread.items():
            assert spread == pytest.approx(r * (600.0 - dt), rel=1e-9)

    def test_white_noise_allan(self):
        y = np.random.default_rng(5).normal(0.0, 1.0, 200_000)
        t = np.arange(y.size) * 0.01
        s = stability_stats(t, y, (0.1, 1.0))
        ratio = s.allan_deviation[1.0] / s.allan_deviation[0.1]
        assert ratio == pytest.approx(10 ** -0.5, rel=0.15)
        assert s.allan_deviation[0.1] == pytest.approx(1 / math.sqrt(10), rel=0.15)

    def test_too_short(self):
        with pytest.raises(ValueError, match="shorter"):
            stability_stats(self.T, self.T, (300.0,))

    def test_window_counts(self):
        s = stability_stats(self.T, self.T, (0.2, 60.0))
        assert s.window_counts == {0.2: 3000, 60.0: 10}


# --------------------------------------------------------------- config

class TestConfig:
    def model(self):
        return gaussian_model()

    @pytest.mark.parametrize("kwargs,match", [
        ({"sample_rate": 8.2 * 19}, "20 x"),
        ({"sample_rate": 8.2 * 100.5}, "integer multiple"),
        ({"duration": 100.0}, "3 x"),
        ({"lockin_periods": 0}, "lockin_periods"),
        ({"lockin_periods": 1.5}, "lockin_periods"),
        ({"ki": -1.0}, "gains"),
        ({"dither_amplitude": 0.0}, "dither_amplitude"),
        ({"dither_frequency": 0.0}, "dither_frequency"),
        ({"averaging_times": (0.0,)}, "averaging"),
    ])
    def test_rejects(self, kwargs, match):
        with pytest.raises(LockConfigError, match=match):
            LockConfig(self.model(), 0, **kwargs)

    def test_whole_windows_count_toward_duration(self):
        with pytest.raises(LockConfigError, match="whole lock-in windows"):
            LockConfig(self.model(), 0, duration=3.0, averaging_times=(1.0,))
        LockConfig(self.model(), 0, duration=3.05, averaging_times=(1.0,))

    def test_default_dither(self):
        cfg = LockConfig(self.model(), 0)
        assert cfg.dither_amplitude == pytest.approx(GAUSS_FWHM / 20)
        assert cfg.lockin_time_constant == pytest.approx(1 / 8.2)

    def test_fixture_resolves(self, fixture_lock):
        laser, cfg, engaged = fixture_lock
        assert cfg.samples_per_period == 256 and cfg.n_windows == 4920
        assert laser.start_frequency == pytest.approx(lock_point(cfg))
        peak = cfg.discriminator.lines(np.array([lock_point(cfg)]))[0]
        assert peak / cfg.detector_noise_sigma == pytest.approx(70.0, rel=1e-3)

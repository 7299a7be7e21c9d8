"""Closed-loop simulation of a dither / lock-in / PID laser frequency lock.

The laser frequency is simulated sample by sample at ``sample_rate``: a
deterministic ramp, a seeded random walk and white frequency noise, plus the
controller output and the sinusoidal dither. The fluorescence detector sees
the spectrum model at the instantaneous frequency plus white detector
noise. One lock-in window (an integer number of dither periods) yields one
error value; the PID runs once per window, so the update cadence equals the
window rate and the loop cannot respond faster than half of it.

All frequencies are in MHz in the frame of the discriminator's
:class:`~hfslock.lineshape.SpectrumModel`.
"""
from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
from scipy.optimize import brentq

from . import kernels
from .lineshape import SpectrumModel

DEFAULT_AVERAGING_TIMES = (0.2, 1.0, 10.0, 60.0)
MIN_SAMPLES_PER_PERIOD = 20


class LockConfigError(ValueError):
    pass


@dataclass(frozen=True)
class LaserModel:
    """Free-running laser: ``start + drift*t + random walk + white noise``."""

    start_frequency: float
    drift_rate: float = 0.0            # MHz / h
    random_walk_sigma: float = 0.0     # MHz / sqrt(s)
    white_noise_sigma: float = 0.0     # MHz per sample
    seed: Optional[int] = None

    def __post_init__(self):
        if self.random_walk_sigma < 0 or self.white_noise_sigma < 0:
            raise LockConfigError("laser noise amplitudes must be >= 0")

    def trajectory(self, n: int, dt: float) -> np.ndarray:
        """Free-running frequency at ``t = k*dt`` for ``k = 0..n-1``."""
        t = np.arange(n) * dt
        nu = self.start_frequency + self.drift_rate / 3600.0 * t
        rng = np.random.default_rng(self.seed)
        # both draws happen unconditionally so the stream layout never depends on the amplitudes
        steps = rng.normal(0.0, 1.0, n)
        white = rng.normal(0.0, 1.0, n)
        if self.random_walk_sigma > 0:
            walk = np.cumsum(steps) * (self.random_walk_sigma * math.sqrt(dt))
            nu = nu + walk - walk[0]
        if self.white_noise_sigma > 0:
            nu = nu + self.white_noise_sigma * white
        return nu


@dataclass(frozen=True)
class LockConfig:
    discriminator: SpectrumModel
    target_index: int
    dither_frequency: float = 8.2
    dither_amplitude: Optional[float] = None   # MHz; None -> FWHM / 20
    lockin_periods: int = 1
    kp: float = 0.0
    ki: float = 4.0                            # 1/s
    kd: float = 0.0                            # s
    output_limit: float = 1000.0               # MHz
    sample_rate: float = 8.2 * 256
    detector_noise_sigma: float = 0.0
    detector_seed: Optional[int] = None
    duration: float = 600.0
    averaging_times: tuple = DEFAULT_AVERAGING_TIMES

    def __post_init__(self):
        if not 0 <= self.target_index < len(self.discriminator.components):
            raise LockConfigError(f"target_index {self.target_index} outside 0..{len(self.discriminator.components) - 1}")
        if not self.dither_frequency > 0:
            raise LockConfigError("dither_frequency must be > 0")
        if self.dither_amplitude is None:
            object.__setattr__(self, "dither_amplitude", self.discriminator.fwhm / 20.0)
        if not self.dither_amplitude > 0:
            raise LockConfigError("dither_amplitude must be > 0")
        if not (isinstance(self.lockin_periods, int) and self.lockin_periods >= 1):
            raise LockConfigError("lockin_periods must be an integer >= 1")
        if self.sample_rate < MIN_SAMPLES_PER_PERIOD * self.dither_frequency:
            raise LockConfigError(f"sample_rate must be >= {MIN_SAMPLES_PER_PERIOD} x dither_frequency")
        ratio = self.sample_rate / self.dither_frequency
        if abs(ratio - round(ratio)) > 1e-9 * ratio:
            raise LockConfigError("sample_rate must be an integer multiple of dither_frequency")
        if self.kp < 0 or self.ki < 0 or self.kd < 0:
            raise LockConfigError("PID gains must be >= 0")
        if not self.output_limit > 0:
            raise LockConfigError("output_limit must be > 0")
        if self.detector_noise_sigma < 0:
            raise LockConfigError("detector_noise_sigma must be >= 0")
        if not self.duration > 0:
            raise LockConfigError("duration must be > 0")
        times = tuple(float(t) for t in self.averaging_times)
        object.__setattr__(self, "averaging_times", times)
        if any(t <= 0 for t in times):
            raise LockConfigError("averaging times must be > 0")
        if self.window_samples > round(self.duration * self.sample_rate):
            raise LockConfigError("duration shorter than one lock-in window")
        # the record holds whole lock-in windows only
        record = self.n_windows * self.window_samples / self.sample_rate
        if times and record < 3 * max(times):
            raise LockConfigError(f"duration {self.duration} s ({record:.6g} s of whole lock-in windows) is "
                                  f"shorter than 3 x the longest averaging time {max(times)} s")

    @property
    def samples_per_period(self) -> int:
        return int(round(self.sample_rate / self.dither_frequency))

    @property
    def window_samples(self) -> int:
        return self.samples_per_period * self.lockin_periods

    @property
    def lockin_time_constant(self) -> float:
        return self.lockin_periods / self.dither_frequency

    @property
    def n_windows(self) -> int:
        return int(round(self.duration * self.sample_rate)) // self.window_samples

    def dither_waveform(self) -> np.ndarray:
        n = np.arange(self.window_samples)
        return self.dither_amplitude * np.sin(2.0 * np.pi * self.dither_frequency * n / self.sample_rate)


# ------------------------------------------------------------ primitives

def lif_response(model: SpectrumModel, nu, noise_sigma: float = 0.0,
                 rng: Optional[np.random.Generator] = None):
    """Detector signal at laser frequency ``nu``: model value plus white noise."""
    scalar = np.ndim(nu) == 0
    val = model(np.atleast_1d(nu))
    if noise_sigma > 0:
        if rng is None:
            raise ValueError("a random generator is required when noise_sigma > 0")
        val = val + rng.normal(0.0, noise_sigma, val.shape)
    return float(val[0]) if scalar else val


def lockin_demodulate(samples, dither_frequency: float, sample_rate: float, phase: float = 0.0) -> float:
    """In-phase lock-in output ``(2/N) sum s[n] sin(2 pi f t_n + phase)``, ``t_n = n / sample_rate``.

    The window must span an integer number of dither periods; then a pure
    ``C + a sin(2 pi f t)`` input returns ``a``.
    """
    s = np.asarray(samples, dtype=float)
    n = s.size
    periods = n * dither_frequency / sample_rate
    if n == 0 or abs(periods - round(periods)) > 1e-9 * max(periods, 1.0) or round(periods) < 1:
        raise ValueError(f"window of {n} samples holds {periods:.6g} dither periods; need a positive integer")
    t = np.arange(n) / sample_rate
    return float(2.0 / n * np.dot(s, np.sin(2.0 * np.pi * dither_frequency * t + phase)))


def error_signal(config: LockConfig, nu: float) -> float:
    """Noise-free demodulated error with the laser parked at ``nu``."""
    d = config.dither_waveform()
    return lockin_demodulate(config.discriminator(nu + d), config.dither_frequency, config.sample_rate)


def lock_point(config: LockConfig) -> float:
    """Zero crossing of the noise-free error signal at the target component."""
    m = config.discriminator
    center = m.cog + m.components[config.target_index].offset
    half = 0.5 * m.fwhm
    lo, hi = center - half, center + half
    e_lo, e_hi = error_signal(config, lo), error_signal(config, hi)
    if not (e_lo > 0 > e_hi):
        raise LockConfigError("target component has no isolated maximum for the discriminator to lock to")
    return brentq(lambda x: error_signal(config, x), lo, hi, xtol=1e-9)


def discriminator_slope(config: LockConfig, nu0: float, h: Optional[float] = None) -> float:
    """d(error)/d(nu) at ``nu0`` by central difference of the noise-free error."""
    if h is None:
        h = 1e-3 * config.discriminator.fwhm
    return (error_signal(config, nu0 + h) - error_signal(config, nu0 - h)) / (2.0 * h)


# ----------------------------------------------------------------- stats

@dataclass
class StabilityStats:
    windowed_spread: dict          # averaging time (s) -> max - min of window means (MHz)
    drift_slope: float             # MHz / h
    allan_deviation: dict          # averaging time (s) -> MHz
    window_counts: dict = field(default_factory=dict)

    def to_json(self) -> dict:
        key = lambda t: repr(float(t))
        return {
            "windowed_spread_mhz": {key(t): v for t, v in self.windowed_spread.items()},
            "allan_deviation_mhz": {key(t): v for t, v in self.allan_deviation.items()},
            "window_counts": {key(t): v for t, v in self.window_counts.items()},
            "drift_slope_mhz_per_h": self.drift_slope,
            "max_spread_mhz": max(self.windowed_spread.values()) if self.windowed_spread else None,
        }


def stability_stats(t: np.ndarray, frequency: np.ndarray, averaging_times: Sequence[float]) -> StabilityStats:
    """Spread, drift and Allan deviation of a uniformly sampled frequency record.

    Each averaging time ``dt`` uses non-overlapping blocks of
    ``max(1, floor(dt / step))`` consecutive samples; shorter blocks average
    less noise, so rounding down is the conservative choice.
    """
    t = np.asarray(t, dtype=float)
    y = np.asarray(frequency, dtype=float)
    if t.size < 2 or t.shape != y.shape:
        raise ValueError("need at least two samples of matching t and frequency")
    step = float(np.mean(np.diff(t)))
    duration = step * t.size
    spread, adev, counts = {}, {}, {}
    for tau in averaging_times:
        tau = float(tau)
        if not tau > 0:
            raise ValueError("averaging times must be > 0")
        if duration < 3 * tau:
            raise ValueError(f"record of {duration:.6g} s is shorter than 3 x averaging time {tau} s")
        m = max(1, int(math.floor(tau / step + 1e-9)))
        nblk = y.size // m
        means = y[:nblk * m].reshape(nblk, m).mean(axis=1)
        spread[tau] = float(means.max() - means.min())
        adev[tau] = float(math.sqrt(0.5 * np.mean(np.diff(means) ** 2))) if nblk > 1 else float("nan")
        counts[tau] = nblk
    slope = float(np.polyfit(t, y, 1)[0]) * 3600.0 if np.ptp(y) > 0 else 0.0
    return StabilityStats(spread, slope, adev, counts)


# ------------------------------------------------------------------- run

@dataclass
class LockRun:
    t: np.ndarray
    frequency: np.ndarray          # mean laser frequency per window, dither excluded
    error: np.ndarray
    control: np.ndarray
    locked: bool
    engaged: bool
    lock_point: float
    slope_cal: float
    stats: Optional[StabilityStats] = None

    @property
    def detuning(self) -> np.ndarray:
        return self.frequency - self.lock_point

    @property
    def measured_detuning(self) -> np.ndarray:
        """Detuning read from the error signal through the linear discriminator."""
        return self.error / self.slope_cal

    def write_csv(self, path) -> None:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["t", "frequency_mhz", "error", "control"])
        for row in zip(self.t, self.frequency, self.error, self.control):
            w.writerow([repr(float(v)) for v in row])
        Path(path).write_text(buf.getvalue())

    def stats_json(self) -> dict:
        out = {} if self.stats is None else self.stats.to_json()
        drift_read = float(np.polyfit(self.t, self.measured_detuning, 1)[0]) * 3600.0
        duration = float(self.t[-1] - self.t[0]) + float(self.t[1] - self.t[0]) if self.t.size > 1 else 0.0
        out.update({
            "engaged": self.engaged,
            "locked": self.locked,
            "lock_point_mhz": self.lock_point,
            "discriminator_slope_per_mhz": self.slope_cal,
            "discriminator_drift_mhz_per_h": drift_read,
            "discriminator_net_drift_mhz": drift_read * duration / 3600.0,
            "duration_s": duration,
        })
        return out

    def write_stats(self, path) -> None:
        Path(path).write_text(json.dumps(self.stats_json(), indent=2, sort_keys=True) + "\n")


def run_lock(laser: LaserModel, config: LockConfig, engaged: bool = True) -> LockRun:
    """Simulate ``config.duration`` seconds of the locked (or free-running) laser."""
    m = config.discriminator
    nu0 = lock_point(config)
    slope = discriminator_slope(config, nu0)
    if slope == 0:
        raise LockConfigError("discriminator slope vanishes at the lock point")
    nwin = config.window_samples
    n = config.n_windows * nwin
    dt = 1.0 / config.sample_rate
    nu_free = laser.trajectory(n, dt)
    rng = np.random.default_rng(config.detector_seed)
    noise = rng.normal(0.0, 1.0, n) * config.detector_noise_sigma
    dither = config.dither_waveform()
    dt_window = nwin * dt
    freq, err, ctrl = kernels.lock_loop(
        nu_free, noise, dither, m.centers, m.weights, m.sigma, m.gamma,
        m.amplitude, m.baseline_offset, m.baseline_slope, m.cog,
        config.kp, config.ki, config.kd, dt_window, config.output_limit, slope, bool(engaged))
    t = (np.arange(freq.size) + 0.5) * dt_window
    locked = bool(np.all(np.abs(freq - nu0) <= m.fwhm)) and bool(np.all(np.isfinite(freq)))
    run = LockRun(t, freq, err, ctrl, locked, bool(engaged), nu0, slope)
    if config.averaging_times:
        run.stats = stability_stats(t, freq, config.averaging_times)
    return run

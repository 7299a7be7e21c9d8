"""Flat ``key = value`` configuration files with dotted keys.

Lines starting with ``#`` are comments; so is anything after `` #`` on a
value line. Keys are case-sensitive and may appear once.
"""
from __future__ import annotations

import configparser
import math
from pathlib import Path
from typing import Optional

import numpy as np

from .angular import HalfInt, HfsConstants, dipole_allowed, line_components
from .lineshape import SpectrumModel
from .locksim import DEFAULT_AVERAGING_TIMES, LaserModel, LockConfig

_SECTION = "config"
_REQUIRED = object()


class ConfigError(ValueError):
    pass


class Config:
    """Typed access to a parsed configuration; every lookup is recorded.

    ``resolved`` collects the value actually used for each key (defaults
    included) so a run can be reproduced from it.
    """

    def __init__(self, values: dict, source: str = "<string>"):
        self.values = dict(values)
        self.source = source
        self.resolved: dict = {}

    @classmethod
    def parse(cls, text: str, source: str = "<string>") -> "Config":
        parser = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#",),
                                           comment_prefixes=("#",), delimiters=("=",), strict=True)
        parser.optionxform = str
        try:
            parser.read_string(f"[{_SECTION}]\n" + text, source=source)
        except configparser.DuplicateOptionError as exc:
            raise ConfigError(f"{source}: key {exc.option!r} given twice (line {exc.lineno - 1})") from None
        except configparser.Error as exc:
            raise ConfigError(f"{source}: {exc}") from None
        values = {k: v.strip() for k, v in parser[_SECTION].items()}
        for key, value in values.items():
            if value == "":
                raise ConfigError(f"{source}: key {key!r} has an empty value")
        return cls(values, source)

    @classmethod
    def load(cls, path) -> "Config":
        path = Path(path)
        try:
            text = path.read_text()
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
        return cls.parse(text, source=str(path))

    def has(self, key: str) -> bool:
        return key in self.values

    def set_default(self, key: str, value) -> None:
        self.values.setdefault(key, str(value))

    def _raw(self, key, default):
        if key in self.values:
            return self.values[key]
        if default is _REQUIRED:
            raise ConfigError(f"{self.source}: missing required key {key!r}")
        return None

    def _record(self, key, value):
        self.resolved[key] = value
        return value

    def get_float(self, key: str, default=_REQUIRED, minimum: Optional[float] = None,
                  positive: bool = False) -> Optional[float]:
        raw = self._raw(key, default)
        if raw is None:
            return self._record(key, default)
        try:
            value = float(raw)
        except ValueError:
            raise ConfigError(f"{self.source}: {key} = {raw!r} is not a number") from None
        if not math.isfinite(value):
            raise ConfigError(f"{self.source}: {key} must be finite")
        if positive and not value > 0:
            raise ConfigError(f"{self.source}: {key} must be > 0, got {value}")
        if minimum is not None and value < minimum:
            raise ConfigError(f"{self.source}: {key} must be >= {minimum}, got {value}")
        return self._record(key, value)

    def get_int(self, key: str, default=_REQUIRED, minimum: Optional[int] = None) -> Optional[int]:
        raw = self._raw(key, default)
        if raw is None:
            return self._record(key, default)
        try:
            value = int(raw)
        except ValueError:
            raise ConfigError(f"{self.source}: {key} = {raw!r} is not an integer") from None
        if minimum is not None and value < minimum:
            raise ConfigError(f"{self.source}: {key} must be >= {minimum}, got {value}")
        return self._record(key, value)

    def get_bool(self, key: str, default=_REQUIRED) -> Optional[bool]:
        raw = self._raw(key, default)
        if raw is None:
            return self._record(key, default)
        text = raw.lower()
        if text in ("1", "true", "yes", "on"):
            return self._record(key, True)
        if text in ("0", "false", "no", "off"):
            return self._record(key, False)
        raise ConfigError(f"{self.source}: {key} = {raw!r} is not a boolean")

    def get_str(self, key: str, default=_REQUIRED) -> Optional[str]:
        raw = self._raw(key, default)
        return self._record(key, default if raw is None else raw)

    def get_halfint(self, key: str, default=_REQUIRED) -> Optional[HalfInt]:
        raw = self._raw(key, default)
        if raw is None:
            if default is None:
                return self._record(key, None)
            value = HalfInt.parse(default)
        else:
            try:
                value = HalfInt.parse(raw)
            except (ValueError, TypeError):
                raise ConfigError(f"{self.source}: {key} = {raw!r} is not a non-negative half-integer") from None
        self.resolved[key] = str(value)
        return value

    def get_floats(self, key: str, default=_REQUIRED) -> Optional[tuple]:
        raw = self._raw(key, default)
        if raw is None:
            return self._record(key, None if default is None else tuple(default))
        try:
            value = tuple(float(v) for v in raw.split(",") if v.strip())
        except ValueError:
            raise ConfigError(f"{self.source}: {key} = {raw!r} is not a comma-separated list of numbers") from None
        return self._record(key, value)

    def check_unused(self) -> None:
        unknown = sorted(set(self.values) - set(self.resolved))
        if unknown:
            raise ConfigError(f"{self.source}: unknown key(s): {', '.join(unknown)}")


# -------------------------------------------------------- shared builders

def build_line(cfg: Config, prefix: str = "line."):
    """Spectrum model of one ``J -> J'`` line from ``line.*`` keys.

    Returns ``(model, I, J_lower, J_upper)``. Intensities are the normalized
    6-j weights.
    """
    i = cfg.get_halfint(prefix + "I")
    jl = cfg.get_halfint(prefix + "J_lower")
    ju = cfg.get_halfint(prefix + "J_upper")
    if not dipole_allowed(jl, ju):
        raise ConfigError(f"{cfg.source}: {prefix}J_lower = {jl} and {prefix}J_upper = {ju} violate "
                          f"|dJ| <= 1 (and not 0 -> 0)")
    lower = HfsConstants(cfg.get_float(prefix + "A_lower"), cfg.get_float(prefix + "B_lower", 0.0))
    upper = HfsConstants(cfg.get_float(prefix + "A_upper"), cfg.get_float(prefix + "B_upper", 0.0))
    gw = cfg.get_float(prefix + "gaussian_fwhm", minimum=0.0)
    lw = cfg.get_float(prefix + "lorentzian_fwhm", 0.0, minimum=0.0)
    if gw == 0 and lw == 0:
        raise ConfigError(f"{cfg.source}: {prefix}gaussian_fwhm and {prefix}lorentzian_fwhm cannot both be 0")
    model = SpectrumModel(
        tuple(line_components(i, jl, ju, lower, upper)),
        cog=cfg.get_float(prefix + "cog", 0.0),
        gaussian_fwhm=gw,
        lorentzian_fwhm=lw,
        amplitude=cfg.get_float(prefix + "amplitude", 1.0, positive=True),
        baseline_offset=cfg.get_float(prefix + "baseline_offset", 0.0),
        baseline_slope=cfg.get_float(prefix + "baseline_slope", 0.0),
    )
    return model, i, jl, ju


def scan_axis(cfg: Config, model: SpectrumModel) -> np.ndarray:
    """Scan axis from ``axis.step`` and either ``axis.start``/``axis.stop`` or ``axis.margin``.

    With ``axis.margin`` the scan covers every component plus the margin on
    both sides of the pattern.
    """
    step = cfg.get_float("axis.step", positive=True)
    if cfg.has("axis.start") or cfg.has("axis.stop"):
        start = cfg.get_float("axis.start")
        stop = cfg.get_float("axis.stop")
        if not stop > start:
            raise ConfigError(f"{cfg.source}: axis.stop must be > axis.start")
    else:
        margin = cfg.get_float("axis.margin", positive=True)
        c = model.cog + model.centers if model.components else np.array([model.cog])
        start, stop = float(c.min() - margin), float(c.max() + margin)
    n = int(math.floor((stop - start) / step + 1e-9)) + 1
    if n < 2:
        raise ConfigError(f"{cfg.source}: axis has fewer than 2 samples")
    return start + step * np.arange(n)


def parse_target(text: str, source: str, key: str):
    """``"6->7"`` -> ``(HalfInt(F), HalfInt(F'))``."""
    try:
        f, fp = (HalfInt.parse(v) for v in text.split("->"))
    except (ValueError, TypeError):
        raise ConfigError(f"{source}: {key} = {text!r} must look like F->F' (e.g. 6->7)") from None
    return f, fp


def build_lock(cfg: Config, seed: Optional[int] = None):
    """``(LaserModel, LockConfig, engaged)`` from ``line.*``, ``lock.*``, ``laser.*`` keys.

    ``detector.snr`` sets the detector noise so that the target component's
    peak above baseline over the per-sample noise sigma equals the value;
    ``detector.noise_sigma`` sets it directly. ``laser.start_frequency``
    defaults to the lock point. A ``seed`` overrides both ``laser.seed`` and
    ``detector.seed`` (the detector then uses ``seed + 1``).
    """
    from .locksim import lock_point

    model, _, _, _ = build_line(cfg)
    key = "lock.target"
    f, fp = parse_target(cfg.get_str(key), cfg.source, key)
    matches = [k for k, c in enumerate(model.components) if c.f_lower == f and c.f_upper == fp]
    if not matches:
        raise ConfigError(f"{cfg.source}: {key}: no component F={f} -> F'={fp} in this line")
    target = matches[0]

    if cfg.has("detector.snr") and cfg.has("detector.noise_sigma"):
        raise ConfigError(f"{cfg.source}: give either detector.snr or detector.noise_sigma, not both")
    if cfg.has("detector.snr"):
        snr = cfg.get_float("detector.snr", positive=True)
        peak = float(model.lines(np.array([model.cog + model.components[target].offset]))[0])
        noise = peak / snr
    else:
        noise = cfg.get_float("detector.noise_sigma", 0.0, minimum=0.0)
    laser_seed = cfg.get_int("laser.seed", None) if seed is None else seed
    det_seed = cfg.get_int("detector.seed", None) if seed is None else seed + 1

    try:
        lock = LockConfig(
            discriminator=model,
            target_index=target,
            dither_frequency=cfg.get_float("lock.dither_frequency", 8.2, positive=True),
            dither_amplitude=cfg.get_float("lock.dither_amplitude", None, positive=True),
            lockin_periods=cfg.get_int("lock.lockin_periods", 1, minimum=1),
            kp=cfg.get_float("pid.kp", 0.0, minimum=0.0),
            ki=cfg.get_float("pid.ki", 4.0, minimum=0.0),
            kd=cfg.get_float("pid.kd", 0.0, minimum=0.0),
            output_limit=cfg.get_float("pid.output_limit", 1000.0, positive=True),
            sample_rate=cfg.get_float("lock.sample_rate", 8.2 * 256, positive=True),
            detector_noise_sigma=noise,
            detector_seed=det_seed,
            duration=cfg.get_float("lock.duration", positive=True),
            averaging_times=cfg.get_floats("stats.averaging_times", DEFAULT_AVERAGING_TIMES),
        )
    except ValueError as exc:
        raise ConfigError(f"{cfg.source}: {exc}") from None
    start = cfg.get_float("laser.start_frequency", None)
    if start is None:
        start = lock_point(lock)
    laser = LaserModel(
        start_frequency=start,
        drift_rate=cfg.get_float("laser.drift_rate", 0.0),
        random_walk_sigma=cfg.get_float("laser.random_walk", 0.0, minimum=0.0),
        white_noise_sigma=cfg.get_float("laser.white_noise", 0.0, minimum=0.0),
        seed=laser_seed,
    )
    engaged = cfg.get_bool("lock.engaged", True)
    cfg.resolved["detector.noise_sigma_resolved"] = noise
    cfg.resolved["laser.seed"] = laser_seed
    cfg.resolved["detector.seed"] = det_seed
    cfg.resolved["lock.dither_amplitude"] = lock.dither_amplitude
    return laser, lock, engaged

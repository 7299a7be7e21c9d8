"""Frequency-axis reconstruction from Fabry-Perot transmission markers.

A piezo scan is recorded against sample index. Consecutive FPI transmission
peaks are one free spectral range apart, so the marker positions pin the
relative frequency at a handful of samples; a shape-preserving cubic fills
in between and one wavemeter reading fixes the absolute offset.
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np
from scipy.interpolate import PchipInterpolator
from scipy.ndimage import uniform_filter1d
from scipy.signal import find_peaks

from .lineshape import Trace

SMOOTH_POINTS = 5
DEFAULT_PROMINENCE = 0.2
DEFAULT_FSR_MHZ = 2109.0
DEFAULT_FSR_UNCERTAINTY_MHZ = 12.0


class LinearizeError(ValueError):
    pass


@dataclass(frozen=True)
class MarkerSet:
    peak_positions: np.ndarray
    fsr: float
    fsr_uncertainty: float = 0.0

    def __post_init__(self):
        pos = np.asarray(self.peak_positions, dtype=float)
        object.__setattr__(self, "peak_positions", pos)
        if pos.ndim != 1 or pos.size < 2:
            raise LinearizeError("need at least 2 marker positions")
        if not np.all(np.diff(pos) > 0):
            raise LinearizeError("marker positions must be strictly increasing")
        if not self.fsr > 0:
            raise LinearizeError("fsr must be > 0")
        if self.fsr_uncertainty < 0:
            raise LinearizeError("fsr_uncertainty must be >= 0")

    def with_fsr(self, fsr: float, fsr_uncertainty: Optional[float] = None) -> "MarkerSet":
        unc = self.fsr_uncertainty if fsr_uncertainty is None else fsr_uncertainty
        return MarkerSet(self.peak_positions, fsr, unc)


@dataclass(frozen=True)
class Anchor:
    """Wavemeter reading: ``frequency`` (MHz) at fractional ``sample``."""

    sample: float
    frequency: float
    uncertainty: float = 50.0


@dataclass(frozen=True)
class FrequencyAxis:
    frequency: np.ndarray
    anchor: Anchor
    markers: MarkerSet
    monotone: bool

    @property
    def relative_scale_uncertainty(self) -> float:
        """FSR uncertainty as a fractional scale error on frequency differences."""
        return self.markers.fsr_uncertainty / self.markers.fsr

    def sidecar(self) -> dict:
        return {
            "marker_positions": [float(p) for p in self.markers.peak_positions],
            "fsr_mhz": self.markers.fsr,
            "fsr_uncertainty_mhz": self.markers.fsr_uncertainty,
            "relative_scale_uncertainty": self.relative_scale_uncertainty,
            "anchor": {"sample": self.anchor.sample, "frequency_mhz": self.anchor.frequency,
                       "uncertainty_mhz": self.anchor.uncertainty},
            "monotone": bool(self.monotone),
            "n_samples": int(self.frequency.size),
        }


REFINE_METHODS = ("lsq", "three_point")
# the least-squares parabola uses samples above this fraction of the peak height
LSQ_LEVEL = 0.5


def _parabolic_vertex(y: np.ndarray, k: int) -> float:
    a, b, c = y[k - 1], y[k], y[k + 1]
    den = a - 2.0 * b + c
    if den == 0.0:
        return float(k)
    return k + 0.5 * (a - c) / den


def _lsq_vertex(y: np.ndarray, k: int, base: float) -> float:
    """Vertex of the least-squares parabola through the top of the peak at ``k``.

    Uses every contiguous sample above ``LSQ_LEVEL`` of the peak height and at
    least the three around ``k``, where it reduces to the three-point vertex.
    """
    level = base + LSQ_LEVEL * (y[k] - base)
    lo = hi = k
    while lo > 0 and y[lo - 1] > level:
        lo -= 1
    while hi < y.size - 1 and y[hi + 1] > level:
        hi += 1
    lo, hi = min(lo, k - 1), max(hi, k + 1)
    if hi - lo == 2:
        return _parabolic_vertex(y, k)
    x = np.arange(lo, hi + 1, dtype=float) - k
    c2, c1, _ = np.polyfit(x, y[lo:hi + 1], 2)
    if c2 >= 0:
        return _parabolic_vertex(y, k)
    v = -c1 / (2.0 * c2)
    # a vertex outside the fitted span means the fit is meaningless
    return k + v if lo - k <= v <= hi - k else _parabolic_vertex(y, k)


def detect_markers(trace: Trace, min_prominence: float = DEFAULT_PROMINENCE,
                   fsr: float = DEFAULT_FSR_MHZ, fsr_uncertainty: float = DEFAULT_FSR_UNCERTAINTY_MHZ,
                   refine: str = "lsq") -> MarkerSet:
    """Locate FPI transmission peaks with sub-sample precision.

    The marker channel is smoothed with a 5-point moving average; maxima whose
    prominence reaches ``min_prominence`` times the raw channel range are
    refined on the smoothed channel, either by a least-squares parabola over
    the upper half of the peak (``"lsq"``) or by the parabola through the
    three samples around the maximum (``"three_point"``). The three-point
    vertex is exact for noise-free data but uses so few samples that detector
    noise dominates its error. Positions are sample indices.
    """
    if refine not in REFINE_METHODS:
        raise LinearizeError(f"refine must be one of {REFINE_METHODS}")
    if trace.fpi is None:
        raise LinearizeError("trace has no fpi marker channel")
    if not 0 < min_prominence <= 1:
        raise LinearizeError("min_prominence must be in (0, 1]")
    raw = trace.fpi
    span = float(np.max(raw) - np.min(raw)) if raw.size else 0.0
    if span <= 0:
        raise LinearizeError("fpi channel is flat; no markers")
    smooth = uniform_filter1d(raw, SMOOTH_POINTS, mode="nearest")
    peaks, _ = find_peaks(smooth, prominence=min_prominence * span)
    peaks = peaks[(peaks > 0) & (peaks < raw.size - 1)]
    if peaks.size < 2:
        raise LinearizeError(f"found {peaks.size} marker peak(s); need at least 2 to build an axis")
    if refine == "lsq":
        base = float(np.min(smooth))
        pos = np.array([_lsq_vertex(smooth, int(k), base) for k in peaks])
    else:
        pos = np.array([_parabolic_vertex(smooth, int(k)) for k in peaks])
    return MarkerSet(pos, fsr, fsr_uncertainty)


def build_axis(markers: MarkerSet, n_samples: int, anchor: Anchor) -> FrequencyAxis:
    """Sample index -> frequency (MHz) through the marker comb.

    Marker ``k`` sits at ``k * fsr``. Between markers the map is the monotone
    piecewise cubic (PCHIP) through those knots; outside it continues
    linearly with the end slopes. The result is shifted so that
    ``anchor.sample`` maps to ``anchor.frequency``.
    """
    if n_samples < 1:
        raise LinearizeError("n_samples must be >= 1")
    if not 0 <= anchor.sample <= n_samples - 1:
        raise LinearizeError(f"anchor sample {anchor.sample} outside scan 0..{n_samples - 1}")
    pos = markers.peak_positions
    rel = markers.fsr * np.arange(pos.size, dtype=float)
    pchip = PchipInterpolator(pos, rel, extrapolate=False)
    slope = pchip.derivative()
    lo_slope, hi_slope = float(slope(pos[0])), float(slope(pos[-1]))
    # the end rule can clip the derivative to zero (up to rounding), which
    # would make the extrapolation flat; fall back to the end secant
    lo_secant = (rel[1] - rel[0]) / (pos[1] - pos[0])
    hi_secant = (rel[-1] - rel[-2]) / (pos[-1] - pos[-2])
    if not lo_slope > 1e-9 * lo_secant:
        lo_slope = lo_secant
    if not hi_slope > 1e-9 * hi_secant:
        hi_slope = hi_secant

    def rel_freq(s):
        s = np.asarray(s, dtype=float)
        out = np.empty(s.shape)
        left, right = s < pos[0], s > pos[-1]
        mid = ~(left | right)
        out[mid] = pchip(s[mid])
        out[left] = rel[0] + lo_slope * (s[left] - pos[0])
        out[right] = rel[-1] + hi_slope * (s[right] - pos[-1])
        return out

    samples = np.arange(n_samples, dtype=float)
    offset = anchor.frequency - float(rel_freq(np.array([anchor.sample]))[0])
    freq = rel_freq(samples) + offset
    monotone = bool(n_samples < 2 or np.all(np.diff(freq) > 0))
    return FrequencyAxis(freq, anchor, markers, monotone)


def linearize_trace(trace: Trace, anchor: Anchor, fsr: float = DEFAULT_FSR_MHZ,
                    fsr_uncertainty: float = DEFAULT_FSR_UNCERTAINTY_MHZ,
                    min_prominence: float = DEFAULT_PROMINENCE, refine: str = "lsq"
                    ) -> tuple[Trace, FrequencyAxis]:
    """Replace the sample-index abscissa of ``trace`` by calibrated MHz."""
    markers = detect_markers(trace, min_prominence, fsr, fsr_uncertainty, refine)
    axis = build_axis(markers, len(trace), anchor)
    if not axis.monotone:
        raise LinearizeError("reconstructed axis is not strictly increasing")
    out = Trace(axis.frequency, trace.lif.copy(), None if trace.fpi is None else trace.fpi.copy(),
                frequency_axis_valid=True, meta=dict(trace.meta))
    return out, axis


def write_sidecar(axis: FrequencyAxis, path) -> None:
    Path(path).write_text(json.dumps(axis.sidecar(), indent=2) + "\n")


def airy_comb(n_samples: int, positions, finesse_width: float, contrast: float = 1.0,
              background: float = 0.0) -> np.ndarray:
    """Synthetic marker channel: Lorentzian-like transmission peaks at ``positions``.

    ``finesse_width`` is the peak FWHM in samples.
    """
    s = np.arange(n_samples, dtype=float)[:, None]
    g = 0.5 * finesse_width
    peaks = g * g / ((s - np.asarray(positions, dtype=float)[None, :]) ** 2 + g * g)
    return background + contrast * peaks.sum(axis=1)

"""Line profiles, Doppler widths and synthetic hyperfine scans."""
from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import kernels
from .angular import HfsComponent
from .constants import AMU, FWHM_PER_SIGMA, K_B


def _check_widths(gaussian_fwhm, lorentzian_fwhm):
    if gaussian_fwhm < 0 or lorentzian_fwhm < 0:
        raise ValueError("line widths must be >= 0")
    if gaussian_fwhm == 0 and lorentzian_fwhm == 0:
        raise ValueError("gaussian_fwhm and lorentzian_fwhm cannot both be 0")


def voigt(x, gaussian_fwhm: float, lorentzian_fwhm: float):
    """Voigt profile normalized to 1 at zero detuning.

    Parameters
    ----------
    x : float or array_like
        Detuning from line center in MHz.
    gaussian_fwhm, lorentzian_fwhm : float
        Full widths at half maximum of the Gaussian and Lorentzian parts (MHz).
    """
    _check_widths(gaussian_fwhm, lorentzian_fwhm)
    scalar = np.ndim(x) == 0
    xa = np.atleast_1d(np.asarray(x, dtype=float)).ravel()
    out = kernels.profile_sum(xa, np.zeros(1), np.ones(1),
                              gaussian_fwhm / FWHM_PER_SIGMA, 0.5 * lorentzian_fwhm)
    if scalar:
        return float(out[0])
    return out.reshape(np.shape(x))


def voigt_fwhm(gaussian_fwhm: float, lorentzian_fwhm: float) -> float:
    """Olivero-Longbothum estimate of the Voigt FWHM (about 0.02 % accurate)."""
    return 0.5346 * lorentzian_fwhm + math.sqrt(0.2166 * lorentzian_fwhm ** 2 + gaussian_fwhm ** 2)


def doppler_fwhm(wavelength_nm: float, temperature: float, mass_u: float) -> float:
    """Doppler FWHM in MHz of a thermal vapor at ``temperature`` (K)."""
    if wavelength_nm <= 0 or temperature <= 0 or mass_u <= 0:
        raise ValueError("wavelength, temperature and mass must all be > 0")
    v = math.sqrt(8.0 * math.log(2.0) * K_B * temperature / (mass_u * AMU))
    return v / (wavelength_nm * 1e-9) / 1e6


@dataclass(frozen=True)
class SpectrumModel:
    """Sum of Voigt profiles with shared widths on an affine baseline.

    Component ``offset`` values are relative to ``cog``; intensities are used
    as given, so normalize them beforehand if ``amplitude`` should mean
    "total line strength".
    """

    components: tuple[HfsComponent, ...]
    cog: float = 0.0
    gaussian_fwhm: float = 375.0
    lorentzian_fwhm: float = 0.0
    amplitude: float = 1.0
    baseline_offset: float = 0.0
    baseline_slope: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "components", tuple(self.components))
        _check_widths(self.gaussian_fwhm, self.lorentzian_fwhm)
        if not self.amplitude > 0:
            raise ValueError("amplitude must be > 0")
        if any(math.isnan(c.offset) for c in self.components):
            raise ValueError("every component needs a finite offset")

    @property
    def centers(self) -> np.ndarray:
        return np.array([c.offset for c in self.components], dtype=float)

    @property
    def weights(self) -> np.ndarray:
        return np.array([c.rel_intensity for c in self.components], dtype=float)

    @property
    def sigma(self) -> float:
        return self.gaussian_fwhm / FWHM_PER_SIGMA

    @property
    def gamma(self) -> float:
        return 0.5 * self.lorentzian_fwhm

    @property
    def fwhm(self) -> float:
        return voigt_fwhm(self.gaussian_fwhm, self.lorentzian_fwhm)

    def baseline(self, nu) -> np.ndarray:
        nu = np.asarray(nu, dtype=float)
        return self.baseline_offset + self.baseline_slope * (nu - self.cog)

    def lines(self, nu) -> np.ndarray:
        """Line contribution above the baseline, ``amplitude * sum_k I_k V_k``."""
        nu = np.atleast_1d(np.asarray(nu, dtype=float))
        return self.amplitude * kernels.profile_sum(nu - self.cog, self.centers, self.weights,
                                                    self.sigma, self.gamma)

    def __call__(self, nu) -> np.ndarray:
        nu = np.atleast_1d(np.asarray(nu, dtype=float))
        return self.baseline(nu) + self.lines(nu)

    def with_params(self, **changes) -> "SpectrumModel":
        return replace(self, **changes)


@dataclass
class Trace:
    """One recorded or synthetic scan.

    ``abscissa`` is a frequency in MHz when ``frequency_axis_valid`` is set and
    a sample index otherwise.
    """

    abscissa: np.ndarray
    lif: np.ndarray
    fpi: Optional[np.ndarray] = None
    frequency_axis_valid: bool = False
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.abscissa = np.asarray(self.abscissa, dtype=float)
        self.lif = np.asarray(self.lif, dtype=float)
        if self.fpi is not None:
            self.fpi = np.asarray(self.fpi, dtype=float)
            if self.fpi.shape != self.lif.shape:
                raise ValueError("fpi and lif channels differ in length")
        if self.abscissa.shape != self.lif.shape:
            raise ValueError("abscissa and lif differ in length")
        if self.abscissa.size > 1 and not np.all(np.diff(self.abscissa) > 0):
            raise ValueError("abscissa must be strictly increasing")
        if not np.all(np.isfinite(self.lif)):
            raise ValueError("lif channel contains non-finite samples")

    def __len__(self):
        return self.abscissa.size


AXIS_TAG = "# axis: "


def write_trace_csv(trace: Trace, path) -> None:
    """CSV with header ``abscissa,lif,fpi``; an empty ``fpi`` field means no marker channel.

    A leading ``# axis: frequency_mhz`` (or ``sample_index``) comment records
    whether the abscissa is calibrated.
    """
    buf = io.StringIO()
    buf.write(AXIS_TAG + ("frequency_mhz" if trace.frequency_axis_valid else "sample_index") + "\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["abscissa", "lif", "fpi"])
    for n in range(len(trace)):
        fpi = "" if trace.fpi is None else repr(float(trace.fpi[n]))
        w.writerow([repr(float(trace.abscissa[n])), repr(float(trace.lif[n])), fpi])
    Path(path).write_text(buf.getvalue())


def read_trace_csv(path) -> Trace:
    lines = Path(path).read_text().splitlines()
    valid = False
    body = []
    for line in lines:
        if line.startswith("#"):
            if line.startswith(AXIS_TAG):
                valid = line[len(AXIS_TAG):].strip() == "frequency_mhz"
            continue
        if line.strip():
            body.append(line)
    rows = list(csv.reader(body))
    if not rows or [h.strip() for h in rows[0]] != ["abscissa", "lif", "fpi"]:
        raise ValueError(f"{path}: expected header 'abscissa,lif,fpi'")
    x, y, f = [], [], []
    for lineno, row in enumerate(rows[1:], start=2):
        if len(row) != 3:
            raise ValueError(f"{path}: data row {lineno} has {len(row)} fields, expected 3")
        x.append(float(row[0]))
        y.append(float(row[1]))
        f.append(row[2].strip())
    has_fpi = any(f)
    if has_fpi and not all(f):
        raise ValueError(f"{path}: fpi column is only partly filled")
    fpi = np.array([float(v) for v in f]) if has_fpi else None
    return Trace(np.array(x), np.array(y), fpi, frequency_axis_valid=valid)


def synthesize(model: SpectrumModel, axis: Sequence[float], noise_sigma: float = 0.0,
               seed: Optional[int] = None) -> Trace:
    """Evaluate ``model`` on ``axis`` (MHz) and add seeded white Gaussian noise."""
    axis = np.asarray(axis, dtype=float)
    if axis.size > 1 and not np.all(np.diff(axis) > 0):
        raise ValueError("axis must be strictly increasing")
    lif = model(axis)
    if noise_sigma > 0:
        rng = np.random.default_rng(seed)
        lif = lif + rng.normal(0.0, noise_sigma, size=axis.size)
    return Trace(axis, lif, None, frequency_axis_valid=True,
                 meta={"noise_sigma": noise_sigma, "seed": seed})


def noise_for_snr(model: SpectrumModel, axis, snr: float) -> float:
    """Noise sigma giving peak-above-baseline / sigma equal to ``snr`` on ``axis``."""
    return float(np.max(model.lines(axis))) / snr

"""Energy-level database, Ritz line prediction and wavelength bookkeeping.

Wavelengths are in nm and wavenumbers in cm^-1 throughout, linked by
``lambda_vac = 1e7 / sigma``. Air wavelengths use Edlen's 1966 dispersion
formula for standard air.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence

from .angular import HalfInt, HfsConstants, Level, dipole_allowed
from .constants import C, HC_OVER_K_CM

TSV_HEADER = ("energy_cm1", "parity", "twoJ", "A_MHz", "B_MHz", "label")
PARITY_CODES = {"e": "even", "o": "odd"}
DUPLICATE_TOL_CM = 0.001
DEFAULT_TEMPERATURE = 2000.0
FLUORESCENCE_WINDOW_AIR_NM = (300.0, 900.0)
EDLEN_RANGE_NM = (200.0, 2000.0)


class DatabaseError(ValueError):
    pass


@dataclass(frozen=True)
class LevelDatabase:
    levels: tuple[Level, ...]
    metadata: str = ""

    def __post_init__(self):
        levels = tuple(self.levels)
        object.__setattr__(self, "levels", levels)
        for a_idx, a in enumerate(levels):
            for b in levels[a_idx + 1:]:
                if _same_level(a, b):
                    raise DatabaseError(f"duplicate level {a.energy} cm^-1 J={a.j} {a.parity}")

    def __len__(self):
        return len(self.levels)

    def __iter__(self):
        return iter(self.levels)


def _same_level(a: Level, b: Level) -> bool:
    return abs(a.energy - b.energy) < DUPLICATE_TOL_CM and a.j == b.j and a.parity == b.parity


def _parse_float(text, lineno, col):
    try:
        value = float(text)
    except ValueError:
        raise DatabaseError(f"line {lineno}, column {col}: cannot parse {text!r} as a number") from None
    if not math.isfinite(value):
        raise DatabaseError(f"line {lineno}, column {col}: non-finite value {text!r}")
    return value


def parse_database(text: str, source: str = "<string>") -> LevelDatabase:
    """Parse the level TSV format (see :data:`TSV_HEADER`)."""
    levels: list[Level] = []
    header_seen = False
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.rstrip("\r\n")
        if not line.strip() or line.lstrip().startswith("#"):
            continue
        cols = line.split("\t")
        if not header_seen:
            if tuple(c.strip() for c in cols) != TSV_HEADER:
                raise DatabaseError(f"line {lineno}: expected header {'<TAB>'.join(TSV_HEADER)}")
            header_seen = True
            continue
        if len(cols) != len(TSV_HEADER):
            raise DatabaseError(f"line {lineno}: {len(cols)} columns, expected {len(TSV_HEADER)}")
        energy = _parse_float(cols[0].strip(), lineno, 1)
        code = cols[1].strip()
        if code not in PARITY_CODES:
            raise DatabaseError(f"line {lineno}, column 2: parity must be 'e' or 'o', got {code!r}")
        try:
            twice = int(cols[2].strip())
        except ValueError:
            raise DatabaseError(f"line {lineno}, column 3: twoJ must be an integer, got {cols[2]!r}") from None
        if twice < 0:
            raise DatabaseError(f"line {lineno}, column 3: twoJ must be >= 0")
        a_txt, b_txt = cols[3].strip(), cols[4].strip()
        hfs = None
        if a_txt or b_txt:
            a = _parse_float(a_txt, lineno, 4) if a_txt else 0.0
            b = _parse_float(b_txt, lineno, 5) if b_txt else 0.0
            hfs = HfsConstants(a, b)
        if energy < 0:
            raise DatabaseError(f"line {lineno}, column 1: energy must be >= 0")
        level = Level(cols[5].strip(), energy, HalfInt(twice), PARITY_CODES[code], hfs, f"{source}:{lineno}")
        for other in levels:
            if _same_level(level, other):
                raise DatabaseError(f"line {lineno}: duplicate of level defined at {other.source}")
        levels.append(level)
    if not header_seen:
        raise DatabaseError(f"{source}: missing header line")
    return LevelDatabase(tuple(levels), metadata=source)


def load_database(path) -> LevelDatabase:
    path = Path(path)
    return parse_database(path.read_text(), source=path.name)


# ------------------------------------------------------------ wavelengths

def ritz_wavelength(lower: Level, upper: Level) -> float:
    """Vacuum wavelength (nm) of the ``lower -> upper`` combination line."""
    return 1e7 / (upper.energy - lower.energy)


def _check_edlen(wavelength_nm):
    lo, hi = EDLEN_RANGE_NM
    if not lo <= wavelength_nm <= hi:
        raise ValueError(f"wavelength {wavelength_nm} nm outside {lo}-{hi} nm")


def air_index(vacuum_wavelength_nm: float) -> float:
    """Refractive index of standard air (Edlen 1966) at a vacuum wavelength."""
    _check_edlen(vacuum_wavelength_nm)
    s2 = (1e3 / vacuum_wavelength_nm) ** 2          # (1/um)^2
    return 1.0 + 1e-8 * (8342.13 + 2406030.0 / (130.0 - s2) + 15997.0 / (38.9 - s2))


def vacuum_to_air(vacuum_wavelength_nm: float) -> float:
    return vacuum_wavelength_nm / air_index(vacuum_wavelength_nm)


def air_to_vacuum(air_wavelength_nm: float, tol: float = 1e-9) -> float:
    """Inverse of :func:`vacuum_to_air` by fixed-point iteration."""
    _check_edlen(air_wavelength_nm)
    vac = air_wavelength_nm
    for _ in range(50):
        nxt = air_wavelength_nm * air_index(min(max(vac, EDLEN_RANGE_NM[0]), EDLEN_RANGE_NM[1]))
        if abs(nxt - vac) < tol:
            return nxt
        vac = nxt
    return vac


def boltzmann_weight(energy_cm1: float, temperature: float = DEFAULT_TEMPERATURE) -> float:
    if temperature <= 0:
        raise ValueError("temperature must be > 0")
    return math.exp(-HC_OVER_K_CM * energy_cm1 / temperature)


# ------------------------------------------------------------- prediction

def e1_allowed(a: Level, b: Level) -> bool:
    return a.parity != b.parity and dipole_allowed(a.j, b.j) and a.energy != b.energy


@dataclass(frozen=True)
class FluorescenceCandidate:
    final: Level
    air_wavelength: float


@dataclass(frozen=True)
class PredictedLine:
    lower: Level
    upper: Level
    vacuum_wavelength: float
    wavenumber: float
    boltzmann_weight: float
    fluorescence_candidates: tuple[FluorescenceCandidate, ...] = ()
    match_quality: Optional[float] = None

    def to_json(self) -> dict:
        out = {
            "lower": level_to_json(self.lower),
            "upper": level_to_json(self.upper),
            "vacuum_wavelength_nm": self.vacuum_wavelength,
            "wavenumber_cm1": self.wavenumber,
            "boltzmann_weight": self.boltzmann_weight,
            "fluorescence_candidates": [
                {"final": level_to_json(c.final), "air_wavelength_nm": c.air_wavelength}
                for c in self.fluorescence_candidates
            ],
        }
        if self.match_quality is not None:
            out["match_quality_nm"] = self.match_quality
        return out


def level_to_json(level: Level) -> dict:
    return {
        "label": level.label,
        "energy_cm1": level.energy,
        "twoJ": level.j.twice,
        "parity": level.parity,
        "A_MHz": None if level.hfs is None else level.hfs.A,
        "B_MHz": None if level.hfs is None else level.hfs.B,
    }


def fluorescence_candidates(db: LevelDatabase, upper: Level,
                            window_air_nm=FLUORESCENCE_WINDOW_AIR_NM) -> tuple[FluorescenceCandidate, ...]:
    """Dipole-allowed decays of ``upper`` whose air wavelength lies in the window."""
    lo, hi = window_air_nm
    out = []
    for final in db.levels:
        if final.energy >= upper.energy or not e1_allowed(final, upper):
            continue
        vac = ritz_wavelength(final, upper)
        if not EDLEN_RANGE_NM[0] <= vac <= EDLEN_RANGE_NM[1]:
            continue
        air = vacuum_to_air(vac)
        if lo <= air <= hi:
            out.append(FluorescenceCandidate(final, air))
    out.sort(key=lambda c: (c.air_wavelength, c.final.energy))
    return tuple(out)


def _sort_key(line: PredictedLine):
    # weight first; the rest only makes the order independent of row order
    return (-line.boltzmann_weight, line.vacuum_wavelength, line.lower.energy, line.upper.energy,
            line.lower.j.twice, line.upper.j.twice)


def predict(db: LevelDatabase, window: Sequence[float], temperature: float = DEFAULT_TEMPERATURE
            ) -> list[PredictedLine]:
    """All E1 combination lines with vacuum wavelength in ``window`` (nm), strongest population first."""
    lam_min, lam_max = window
    if not lam_min < lam_max:
        raise ValueError("window must satisfy lambda_min < lambda_max")
    if temperature <= 0:
        raise ValueError("temperature must be > 0")
    # wavenumber window, so no division happens for pairs that cannot match
    s_min, s_max = 1e7 / lam_max, 1e7 / lam_min
    levels = sorted(db.levels, key=lambda lv: lv.energy)
    out = []
    for a_idx, lower in enumerate(levels):
        for upper in levels[a_idx + 1:]:
            ds = upper.energy - lower.energy
            if ds > s_max:
                break
            if ds < s_min or not e1_allowed(lower, upper):
                continue
            lam = ritz_wavelength(lower, upper)
            if not lam_min <= lam <= lam_max:
                continue
            out.append(PredictedLine(lower, upper, lam, ds, boltzmann_weight(lower.energy, temperature),
                                     fluorescence_candidates(db, upper)))
    out.sort(key=_sort_key)
    return out


def classify(db: LevelDatabase, measured_vacuum_wavelength: float, tolerance: float,
             temperature: float = DEFAULT_TEMPERATURE) -> list[PredictedLine]:
    """Candidate assignments within ``tolerance`` nm, best match first."""
    if tolerance < 0:
        raise ValueError("tolerance must be >= 0")
    if tolerance == 0:
        return []
    lines = predict(db, (measured_vacuum_wavelength - tolerance, measured_vacuum_wavelength + tolerance),
                    temperature)
    out = [PredictedLine(p.lower, p.upper, p.vacuum_wavelength, p.wavenumber, p.boltzmann_weight,
                         p.fluorescence_candidates, abs(p.vacuum_wavelength - measured_vacuum_wavelength))
           for p in lines]
    out.sort(key=lambda p: (p.match_quality,) + _sort_key(p))
    return out


def predictions_to_json(lines: Sequence[PredictedLine]) -> str:
    return json.dumps([p.to_json() for p in lines], indent=2) + "\n"


# -------------------------------------------------------------- Mg+ table

@dataclass(frozen=True)
class MgReference:
    """Mg+ D2 line and its 2nd / 4th sub-harmonic wavelengths (nm, vacuum)."""

    isotope: int
    fundamental: float
    second_subharmonic: float
    fourth_subharmonic: float

    def __post_init__(self):
        if self.isotope not in (24, 25, 26):
            raise ValueError(f"no Mg+ reference for isotope {self.isotope}")


MG_REFERENCES = {
    24: MgReference(24, 279.6355, 559.2710, 1118.5420),
    25: MgReference(25, 279.6349, 559.2698, 1118.5396),
    26: MgReference(26, 279.6347, 559.2694, 1118.5388),
}


def mg_offset(wavelength_nm: float, ref: MgReference) -> float:
    """Signed optical frequency offset ``c (1/lambda - 1/lambda_ref)`` in MHz.

    ``lambda_ref`` is the 4th sub-harmonic; positive means the laser line
    lies above the Mg+ reference in frequency.
    """
    if not wavelength_nm > 0:
        raise ValueError("wavelength must be > 0")
    return C * (1.0 / (wavelength_nm * 1e-9) - 1.0 / (ref.fourth_subharmonic * 1e-9)) / 1e6

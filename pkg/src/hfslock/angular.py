"""Angular-momentum bookkeeping and first-order hyperfine structure.

All quantum numbers are :class:`HalfInt` values stored as twice the physical
value, so coupling ranges and selection rules are evaluated in integers.
Rational intermediate results use :class:`fractions.Fraction`; a float only
appears when a dimensionless coefficient meets a hyperfine constant in MHz.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction
from functools import lru_cache
from typing import Optional


@dataclass(frozen=True, order=True)
class HalfInt:
    """Non-negative half-integer, ``value = twice / 2``."""

    twice: int

    def __post_init__(self):
        if not isinstance(self.twice, int) or isinstance(self.twice, bool):
            raise TypeError(f"twice must be an int, got {self.twice!r}")
        if self.twice < 0:
            raise ValueError(f"angular momentum must be >= 0, got twice={self.twice}")

    @classmethod
    def parse(cls, value) -> "HalfInt":
        """Build from ``"7/2"``, ``"3"``, ``3.5``, ``Fraction(7, 2)`` or another HalfInt."""
        if isinstance(value, HalfInt):
            return value
        if isinstance(value, str):
            text = value.strip()
            if "/" in text:
                num, den = text.split("/", 1)
                if int(den) != 2:
                    raise ValueError(f"not a half-integer: {value!r}")
                return cls(int(num))
            value = Fraction(text)
        twice = Fraction(value) * 2
        if twice.denominator != 1:
            raise ValueError(f"not a half-integer: {value!r}")
        return cls(int(twice))

    @property
    def value(self) -> Fraction:
        return Fraction(self.twice, 2)

    @property
    def is_integer(self) -> bool:
        return self.twice % 2 == 0

    def __float__(self):
        return self.twice / 2.0

    def __add__(self, other: "HalfInt") -> "HalfInt":
        return HalfInt(self.twice + other.twice)

    def __sub__(self, other: "HalfInt") -> "HalfInt":
        return HalfInt(self.twice - other.twice)

    def __str__(self):
        return str(self.twice // 2) if self.is_integer else f"{self.twice}/2"

    def __repr__(self):
        return f"HalfInt({self})"


def coupled_range(a: HalfInt, b: HalfInt) -> list[HalfInt]:
    """All ``F`` from ``|a - b|`` to ``a + b`` in unit steps."""
    lo = abs(a.twice - b.twice)
    return [HalfInt(t) for t in range(lo, a.twice + b.twice + 1, 2)]


@dataclass(frozen=True)
class HfsConstants:
    """Magnetic dipole ``A`` and electric quadrupole ``B`` constants, in MHz."""

    A: float
    B: float = 0.0

    def __post_init__(self):
        if not (math.isfinite(self.A) and math.isfinite(self.B)):
            raise ValueError(f"hyperfine constants must be finite: A={self.A}, B={self.B}")


PARITIES = ("even", "odd")


@dataclass(frozen=True)
class Level:
    label: str
    energy: float
    j: HalfInt
    parity: str
    hfs: Optional[HfsConstants] = None
    source: str = ""

    def __post_init__(self):
        if not self.energy >= 0.0:
            raise ValueError(f"level energy must be >= 0 cm^-1, got {self.energy}")
        if self.parity not in PARITIES:
            raise ValueError(f"parity must be 'even' or 'odd', got {self.parity!r}")


def dipole_allowed(j_lower: HalfInt, j_upper: HalfInt) -> bool:
    """Electric-dipole rule on J alone: ``|dJ| <= 1`` and not ``0 -> 0``."""
    return abs(j_upper.twice - j_lower.twice) <= 2 and not (j_lower.twice == 0 and j_upper.twice == 0)


@dataclass(frozen=True)
class Transition:
    lower: Level
    upper: Level
    nuclear_spin: HalfInt

    def __post_init__(self):
        if not self.upper.energy > self.lower.energy:
            raise ValueError(
                f"upper level ({self.upper.energy}) must lie above lower level ({self.lower.energy})")
        if self.upper.parity == self.lower.parity:
            raise ValueError("electric dipole transition requires a parity change")
        if not dipole_allowed(self.lower.j, self.upper.j):
            raise ValueError(f"J {self.lower.j} -> {self.upper.j} violates |dJ| <= 1, not 0 -> 0")

    @property
    def wavenumber(self) -> float:
        return self.upper.energy - self.lower.energy


@dataclass(frozen=True)
class HfsComponent:
    f_lower: HalfInt
    f_upper: HalfInt
    offset: float = math.nan
    rel_intensity: float = 0.0
    diagonal: bool = field(default=False)

    def __post_init__(self):
        if abs(self.f_upper.twice - self.f_lower.twice) > 2:
            raise ValueError(f"|dF| > 1 for F={self.f_lower} -> F'={self.f_upper}")
        if self.f_lower.twice + self.f_upper.twice < 2:
            raise ValueError("F = 0 -> F' = 0 is forbidden")
        if self.rel_intensity < 0:
            raise ValueError("relative intensity must be >= 0")


def _check_coupling(i: HalfInt, j: HalfInt, f: HalfInt):
    if not (abs(j.twice - i.twice) <= f.twice <= j.twice + i.twice) or (f.twice + i.twice + j.twice) % 2:
        raise ValueError(f"F={f} is not reachable by coupling I={i} and J={j}")


@lru_cache(maxsize=4096)
def casimir_coefficients(i: HalfInt, j: HalfInt, f: HalfInt) -> tuple[Fraction, Fraction]:
    """Exact rational coefficients ``(cA, cB)`` with ``shift = cA*A + cB*B``.

    ``cA = K/2`` and ``cB`` is the quadrupole angular factor; ``cB`` is 0 when
    ``I <= 1/2`` or ``J <= 1/2`` where the quadrupole moment cannot couple.
    """
    _check_coupling(i, j, f)
    I, J, F = i.value, j.value, f.value
    K = F * (F + 1) - I * (I + 1) - J * (J + 1)
    if i.twice <= 1 or j.twice <= 1:
        c_b = Fraction(0)
    else:
        c_b = (Fraction(3, 4) * K * (K + 1) - I * (I + 1) * J * (J + 1)) / (2 * I * (2 * I - 1) * J * (2 * J - 1))
    return K / 2, c_b


def casimir_shift(i: HalfInt, j: HalfInt, f: HalfInt, c: HfsConstants) -> float:
    """First-order hyperfine energy shift of sublevel ``F`` in MHz (Casimir formula)."""
    c_a, c_b = casimir_coefficients(i, j, f)
    return float(c_a) * c.A + float(c_b) * c.B


def sublevel_count(i: HalfInt, j: HalfInt) -> int:
    """Number of hyperfine sublevels F of a level: ``2J+1`` if ``J < I`` else ``2I+1``."""
    return j.twice + 1 if j.twice < i.twice else i.twice + 1


def component_pairs(i: HalfInt, j_lower: HalfInt, j_upper: HalfInt) -> list[tuple[HalfInt, HalfInt]]:
    """Dipole-allowed ``(F, F')`` pairs ordered by ``(F, F')``."""
    if not dipole_allowed(j_lower, j_upper):
        raise ValueError(f"J {j_lower} -> {j_upper} is not dipole allowed")
    pairs = []
    for f in coupled_range(i, j_lower):
        for fp in coupled_range(i, j_upper):
            if abs(fp.twice - f.twice) <= 2 and f.twice + fp.twice >= 2:
                pairs.append((f, fp))
    return pairs


def _factorial_ratio_delta(a: int, b: int, c: int) -> Fraction:
    """Triangle coefficient ``Delta(abc)`` squared, arguments as twice-values."""
    return Fraction(
        math.factorial((a + b - c) // 2) * math.factorial((a - b + c) // 2) * math.factorial((-a + b + c) // 2),
        math.factorial((a + b + c) // 2 + 1),
    )


def _triangle(a: int, b: int, c: int) -> bool:
    return abs(a - b) <= c <= a + b and (a + b + c) % 2 == 0


@lru_cache(maxsize=8192)
def wigner_6j_squared(j1: int, j2: int, j3: int, j4: int, j5: int, j6: int) -> tuple[Fraction, int]:
    """Square and sign of the 6-j symbol ``{j1 j2 j3; j4 j5 j6}`` via the Racah sum.

    Arguments are twice-values. The squared value is returned as an exact
    fraction together with the sign (+1, -1 or 0) so callers never need a
    square root for line strengths.
    """
    triads = ((j1, j2, j3), (j1, j5, j6), (j4, j2, j6), (j4, j5, j3))
    if not all(_triangle(*t) for t in triads):
        return Fraction(0), 0
    pref = Fraction(1)
    for t in triads:
        pref *= _factorial_ratio_delta(*t)

    a1 = (j1 + j2 + j3) // 2
    a2 = (j1 + j5 + j6) // 2
    a3 = (j4 + j2 + j6) // 2
    a4 = (j4 + j5 + j3) // 2
    b1 = (j1 + j2 + j4 + j5) // 2
    b2 = (j2 + j3 + j5 + j6) // 2
    b3 = (j3 + j1 + j6 + j4) // 2
    total = 0
    for t in range(max(a1, a2, a3, a4), min(b1, b2, b3) + 1):
        term = Fraction(
            math.factorial(t + 1),
            math.factorial(t - a1) * math.factorial(t - a2) * math.factorial(t - a3) * math.factorial(t - a4)
            * math.factorial(b1 - t) * math.factorial(b2 - t) * math.factorial(b3 - t),
        )
        total += -term if t % 2 else term
    if total == 0:
        return Fraction(0), 0
    return pref * total * total, 1 if total > 0 else -1


def _line_strength(i: HalfInt, j: HalfInt, jp: HalfInt, f: HalfInt, fp: HalfInt) -> Fraction:
    w2, _ = wigner_6j_squared(j.twice, f.twice, i.twice, fp.twice, jp.twice, 2)
    return (f.twice + 1) * (fp.twice + 1) * w2


def relative_intensities(i: HalfInt, j_lower: HalfInt, j_upper: HalfInt) -> dict[tuple[HalfInt, HalfInt], float]:
    """Normalized 6-j line strengths for every allowed ``(F, F')`` pair."""
    pairs = component_pairs(i, j_lower, j_upper)
    strengths = {p: _line_strength(i, j_lower, j_upper, *p) for p in pairs}
    total = sum(strengths.values())
    return {p: float(s / total) for p, s in strengths.items()}


def relative_intensity(t: Transition, f: HalfInt, f_prime: HalfInt) -> float:
    """Standard line-strength weight ``(2F+1)(2F'+1){J F I; F' J' 1}^2``, normalized over the line."""
    i, j, jp = t.nuclear_spin, t.lower.j, t.upper.j
    _check_coupling(i, j, f)
    _check_coupling(i, jp, f_prime)
    if abs(f_prime.twice - f.twice) > 2 or f.twice + f_prime.twice < 2:
        raise ValueError(f"F={f} -> F'={f_prime} violates the dipole triangle rule")
    return relative_intensities(i, j, jp)[(f, f_prime)]


def line_components(i: HalfInt, j_lower: HalfInt, j_upper: HalfInt,
                    lower_hfs: Optional[HfsConstants] = None,
                    upper_hfs: Optional[HfsConstants] = None) -> list[HfsComponent]:
    """Components of a ``J -> J'`` line from quantum numbers alone.

    Offsets are NaN unless both sets of hyperfine constants are given.
    """
    weights = relative_intensities(i, j_lower, j_upper)
    dj = j_upper.twice - j_lower.twice
    out = []
    for (f, fp), w in weights.items():
        if lower_hfs is not None and upper_hfs is not None:
            offset = casimir_shift(i, j_upper, fp, upper_hfs) - casimir_shift(i, j_lower, f, lower_hfs)
        else:
            offset = math.nan
        out.append(HfsComponent(f, fp, offset, w, fp.twice - f.twice == dj))
    return out


def enumerate_components(t: Transition) -> list[HfsComponent]:
    """All hyperfine components of ``t`` ordered by ``(F, F')``."""
    return line_components(t.nuclear_spin, t.lower.j, t.upper.j, t.lower.hfs, t.upper.hfs)

"""Hyperfine spectroscopy and laser-lock toolkit.

Modules: :mod:`angular` (quantum numbers, Casimir shifts, line strengths),
:mod:`lineshape` (Voigt profiles, synthetic scans), :mod:`fitter`
(Casimir-constrained least squares), :mod:`levels` (level database, Ritz
prediction, air wavelengths, Mg+ offsets), :mod:`linearize` (FPI marker
axis), :mod:`locksim` (dither / lock-in / PID lock) and :mod:`cli`.
"""
__version__ = "0.1.0"

"""Least-squares fit of hyperfine spectra with Casimir-locked component positions.

The parameter vector seen by users ("external" order) is::

    A_lower, B_lower, A_upper, B_upper, cog, gaussian_fwhm, lorentzian_fwhm,
    amplitude, baseline_offset, baseline_slope, I[F->F'] ...

Component positions are never free: they are recomputed from the four
hyperfine constants on every evaluation, leaving ``cog`` as the only position
parameter. Internally the optimizer works on log-widths and, when the
intensities are free, on per-component heights ``amplitude * I_k`` so the
amplitude/intensity scale redundancy never enters the normal matrix.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import kernels
from .angular import HalfInt, HfsConstants, casimir_coefficients, component_pairs, relative_intensities
from .constants import FWHM_PER_SIGMA
from .lineshape import Trace, write_trace_csv

BASE_NAMES = ("A_lower", "B_lower", "A_upper", "B_upper", "cog",
              "gaussian_fwhm", "lorentzian_fwhm", "amplitude", "baseline_offset", "baseline_slope")
(IA_LO, IB_LO, IA_UP, IB_UP, ICOG, IGW, ILW, IAMP, IOFF, ISLOPE) = range(len(BASE_NAMES))
NB = len(BASE_NAMES)
MHZ_PARAMS = (IA_LO, IB_LO, IA_UP, IB_UP, ICOG)

MAX_ITER = 500
REL_STEP = 1e-6
ABS_STEP_MHZ = 1e-3
CHI2_RTOL = 1e-10
CHI2_RTOL_COUNT = 3
STEP_TOL = 1e-8
LAMBDA_UP = 3.0
LAMBDA_DOWN = 3.0
LAMBDA_MAX = 1e16
COND_MAX = 1e13
WIDTH_FLOOR = 1e-3
LOG_WIDTH_MAX = 20.0


class FitError(ValueError):
    pass


@dataclass(frozen=True)
class FitProblem:
    trace: Trace
    i: HalfInt
    j_lower: HalfInt
    j_upper: HalfInt
    initial: np.ndarray
    fix_mask: np.ndarray

    def __post_init__(self):
        if not self.trace.frequency_axis_valid:
            raise FitError("trace has no calibrated frequency axis; run linearize first")
        pairs = component_pairs(self.i, self.j_lower, self.j_upper)
        object.__setattr__(self, "initial", np.array(self.initial, dtype=float))
        object.__setattr__(self, "fix_mask", np.array(self.fix_mask, dtype=bool))
        n = NB + len(pairs)
        if self.initial.shape != (n,) or self.fix_mask.shape != (n,):
            raise FitError(f"J {self.j_lower} -> {self.j_upper} has {len(pairs)} components; "
                           f"parameter vectors must have length {n}")
        inten = self.initial[NB:]
        if np.any(inten < 0) or not math.isclose(inten.sum(), 1.0, rel_tol=1e-9):
            raise FitError("initial intensities must be >= 0 and sum to 1")
        ifix = self.fix_mask[NB:]
        if ifix.any() and not ifix.all():
            raise FitError("intensities must be either all free or all fixed")
        if not ifix.any() and self.fix_mask[IAMP]:
            raise FitError("amplitude can only be fixed together with the intensities")
        for k in (IGW, ILW):
            if self.initial[k] < 0:
                raise FitError(f"{BASE_NAMES[k]} must be >= 0")
        if self.initial[IGW] == 0 and self.initial[ILW] == 0:
            raise FitError("both widths are 0")

    @classmethod
    def create(cls, trace: Trace, i, j_lower, j_upper, lower: HfsConstants, upper: HfsConstants,
               cog: float, gaussian_fwhm: float, lorentzian_fwhm: float,
               amplitude: Optional[float] = None, baseline_offset: Optional[float] = None,
               baseline_slope: float = 0.0, intensities: Optional[Sequence[float]] = None,
               fixed: Sequence[str] = ()) -> "FitProblem":
        """Build a problem with 6-j intensities and data-driven amplitude/baseline guesses.

        ``fixed`` lists parameter names to hold; ``"intensities"`` fixes all of them.
        """
        i, j_lower, j_upper = (HalfInt.parse(v) for v in (i, j_lower, j_upper))
        if intensities is None:
            intensities = list(relative_intensities(i, j_lower, j_upper).values())
        intensities = np.asarray(intensities, dtype=float)
        if baseline_offset is None:
            baseline_offset = float(np.percentile(trace.lif, 10))
        if amplitude is None:
            peak = float(np.max(trace.lif)) - baseline_offset
            amplitude = max(peak, 1e-12) / max(float(np.max(intensities)), 1e-12)
        initial = np.concatenate([[lower.A, lower.B, upper.A, upper.B, cog, gaussian_fwhm, lorentzian_fwhm,
                                   amplitude, baseline_offset, baseline_slope], intensities])
        pairs = component_pairs(i, j_lower, j_upper)
        names = parameter_names(pairs)
        mask = np.zeros(len(names), dtype=bool)
        for name in fixed:
            if name == "intensities":
                mask[NB:] = True
            elif name in names:
                mask[names.index(name)] = True
            else:
                raise FitError(f"unknown parameter {name!r}")
        return cls(trace, i, j_lower, j_upper, initial, mask)

    @property
    def pairs(self):
        return component_pairs(self.i, self.j_lower, self.j_upper)

    @property
    def names(self) -> list[str]:
        return parameter_names(self.pairs)


def parameter_names(pairs) -> list[str]:
    return list(BASE_NAMES) + [f"I[{f}->{fp}]" for f, fp in pairs]


class _Casimir:
    """Per-problem coefficient tables so offsets are a linear map of (A, B)."""

    def __init__(self, problem: FitProblem):
        rows = []
        for f, fp in problem.pairs:
            la, lb = casimir_coefficients(problem.i, problem.j_lower, f)
            ua, ub = casimir_coefficients(problem.i, problem.j_upper, fp)
            rows.append((-float(la), -float(lb), float(ua), float(ub)))
        self.matrix = np.array(rows, dtype=float).reshape(-1, 4)

    def offsets(self, p) -> np.ndarray:
        return self.matrix @ p[:4]


def _profiles(problem: FitProblem, cas: _Casimir, p: np.ndarray) -> np.ndarray:
    nu = problem.trace.abscissa
    return kernels.profile_matrix(nu - p[ICOG], cas.offsets(p), p[IGW] / FWHM_PER_SIGMA, 0.5 * p[ILW])


def _combine(problem: FitProblem, p: np.ndarray, prof: np.ndarray) -> np.ndarray:
    nu = problem.trace.abscissa
    return p[IOFF] + p[ISLOPE] * (nu - p[ICOG]) + p[IAMP] * (prof @ p[NB:])


def _evaluate(problem: FitProblem, cas: _Casimir, p: np.ndarray) -> np.ndarray:
    return _combine(problem, p, _profiles(problem, cas, p))


def model_eval(problem: FitProblem, params) -> np.ndarray:
    """Predicted LIF signal on the trace abscissa for an external parameter vector."""
    p = np.asarray(params, dtype=float)
    return _evaluate(problem, _Casimir(problem), p)


class _Packing:
    """Maps between external parameters and the free internal vector."""

    def __init__(self, problem: FitProblem):
        self.problem = problem
        self.base = problem.initial.copy()
        fm = problem.fix_mask
        self.free_intensities = not fm[NB:].any()
        self.n_comp = fm.size - NB
        idx = [k for k in range(NB) if not fm[k] and not (k == IAMP and self.free_intensities)]
        self.base_idx = idx
        self.log_idx = [n for n, k in enumerate(idx) if k in (IGW, ILW)]
        y = problem.trace.lif
        x = problem.trace.abscissa
        ptp = float(np.ptp(y)) or 1.0
        span = float(np.ptp(x)) or 1.0
        floors = []
        for k in idx:
            if k in MHZ_PARAMS:
                floors.append(ABS_STEP_MHZ)
            elif k in (IGW, ILW):
                floors.append(REL_STEP)
            elif k == ISLOPE:
                floors.append(REL_STEP * ptp / span)
            else:
                floors.append(REL_STEP * ptp)
        if self.free_intensities:
            floors += [REL_STEP * ptp] * self.n_comp
        self.floors = np.array(floors)
        linear = [k in (IAMP, IOFF, ISLOPE) for k in idx]
        if self.free_intensities:
            linear += [True] * self.n_comp
        self.linear = np.array(linear, dtype=bool)
        self.height_slice = slice(len(idx), len(idx) + self.n_comp) if self.free_intensities else None

    @property
    def size(self):
        return len(self.base_idx) + (self.n_comp if self.free_intensities else 0)

    def to_internal(self, ext: np.ndarray) -> np.ndarray:
        vals = []
        for k in self.base_idx:
            vals.append(math.log(max(ext[k], WIDTH_FLOOR)) if k in (IGW, ILW) else ext[k])
        if self.free_intensities:
            vals += list(ext[IAMP] * ext[NB:])
        return np.array(vals, dtype=float)

    def to_external(self, q: np.ndarray) -> np.ndarray:
        ext = self.base.copy()
        for n, k in enumerate(self.base_idx):
            ext[k] = math.exp(min(q[n], LOG_WIDTH_MAX)) if k in (IGW, ILW) else q[n]
        if self.free_intensities:
            h = q[len(self.base_idx):]
            s = h.sum()
            ext[IAMP] = s
            ext[NB:] = h / s if s > 0 else 1.0 / self.n_comp
        return ext

    def project(self, q: np.ndarray) -> np.ndarray:
        if self.free_intensities:
            q = q.copy()
            h = q[len(self.base_idx):]
            np.maximum(h, 0.0, out=h)
            if h.sum() <= 0:
                h[:] = self.floors[len(self.base_idx):]
        return q

    def external_jacobian(self, q: np.ndarray) -> np.ndarray:
        """d(external free-or-derived parameters)/d(internal), shape (n_ext, n_int)."""
        ext = self.to_external(q)
        T = np.zeros((ext.size, q.size))
        for n, k in enumerate(self.base_idx):
            T[k, n] = ext[k] if k in (IGW, ILW) else 1.0
        if self.free_intensities:
            m0 = len(self.base_idx)
            h = q[m0:]
            s = h.sum()
            T[IAMP, m0:] = 1.0
            inten = h / s
            for a in range(self.n_comp):
                for b in range(self.n_comp):
                    T[NB + a, m0 + b] = ((a == b) - inten[a]) / s
        return T


@dataclass
class FitResult:
    names: list
    parameters: np.ndarray
    sigmas: Optional[np.ndarray]
    chi2: float
    deviation: Trace
    converged: bool
    iterations: int
    degenerate: bool = False
    fix_mask: Optional[np.ndarray] = None
    chi2_history: list = field(default_factory=list)
    message: str = ""

    def value(self, name: str) -> float:
        return float(self.parameters[self.names.index(name)])

    def sigma(self, name: str) -> Optional[float]:
        if self.sigmas is None:
            return None
        s = self.sigmas[self.names.index(name)]
        return None if math.isnan(s) else float(s)

    def to_json(self) -> dict:
        fixed = [] if self.fix_mask is None else [n for n, f in zip(self.names, self.fix_mask) if f]
        # held parameters carry no sigma; null marks one that could not be estimated
        return {
            "names": list(self.names),
            "parameters": {n: float(v) for n, v in zip(self.names, self.parameters)},
            "sigmas": {n: self.sigma(n) for n in self.names if n not in fixed},
            "fixed": fixed,
            "chi2": float(self.chi2),
            "iterations": int(self.iterations),
            "converged": bool(self.converged),
            "degenerate": bool(self.degenerate),
            "message": self.message,
        }

    def save(self, json_path, deviation_path=None) -> None:
        Path(json_path).write_text(json.dumps(self.to_json(), indent=2) + "\n")
        if deviation_path is not None:
            write_trace_csv(self.deviation, deviation_path)


def forward_jacobian(fun, q: np.ndarray, f0: np.ndarray, floors: np.ndarray, cheap=None) -> np.ndarray:
    """Forward-difference Jacobian with step ``max(REL_STEP*|q|, floor)``.

    ``cheap``, if given, is a second model function used for the columns
    flagged in its ``linear`` attribute; it must return the same values as
    ``fun`` (typically by reusing cached line profiles).
    """
    J = np.empty((f0.size, q.size))
    for n in range(q.size):
        h = max(REL_STEP * abs(q[n]), floors[n])
        qh = q.copy()
        qh[n] += h
        f = cheap(qh) if cheap is not None and cheap.linear[n] else fun(qh)
        J[:, n] = (f - f0) / h
    return J


# Gaussian-width multipliers of the coarse passes, widest first
COARSE_WIDTH_FACTORS = (4.0, 2.0)
# staging passes run on every k-th sample so that at most this many remain
STAGING_SAMPLES = 3000
# staging passes stop early; only the final pass needs the full tolerance
STAGING_CHI2_RTOL = 1e-6


def _subproblem(problem: FitProblem, initial, fix_mask, trace=None) -> FitProblem:
    return FitProblem(problem.trace if trace is None else trace, problem.i, problem.j_lower,
                      problem.j_upper, initial, fix_mask)


def _decimated(trace: Trace) -> Trace:
    k = -(-len(trace) // STAGING_SAMPLES)
    if k <= 1:
        return trace
    fpi = None if trace.fpi is None else trace.fpi[::k]
    return Trace(trace.abscissa[::k], trace.lif[::k], fpi, trace.frequency_axis_valid)


def fit(problem: FitProblem, max_iter: int = MAX_ITER, staged: bool = True) -> FitResult:
    """Levenberg-Marquardt fit of ``problem``.

    With ``staged`` set the fit is a continuation sharing one iteration budget:

    1. coarse passes with the Gaussian width inflated by each of
       ``COARSE_WIDTH_FACTORS`` in turn; quadrupole constants, widths and
       intensities held, so a pattern that starts a linewidth or more away
       from its true scale still has overlap to climb;
    2. widths restored to their start values and released, intensities held;
    3. a final pass with the problem's own mask on the full trace.

    Passes 1 and 2 only need to land in the right basin, so they run on a
    decimated copy of long traces. Releasing the intensities early lets weak
    off-diagonal components shrink to zero before the hyperfine constants
    have settled, which strands the fit in a false minimum.
    """
    if not staged:
        return _fit(problem, max_iter)
    init = problem.initial
    mask = problem.fix_mask
    coarse_trace = _decimated(problem.trace)
    amp_fixed = mask[IAMP] and mask[NB:].all()

    passes = []
    coarse_mask = mask.copy()
    coarse_mask[NB:] = True
    coarse_mask[[IGW, ILW, IB_LO, IB_UP]] = True
    coarse_mask[IAMP] = amp_fixed
    width = IGW if init[IGW] > 0 else ILW
    for factor in COARSE_WIDTH_FACTORS:
        passes.append((coarse_mask, coarse_trace, {width: init[width] * factor}))
    locked_mask = mask.copy()
    locked_mask[NB:] = True
    locked_mask[IAMP] = amp_fixed
    widths = {IGW: init[IGW], ILW: init[ILW]}
    passes.append((locked_mask, coarse_trace, widths))
    passes.append((mask, problem.trace, {}))

    budget = max_iter
    history = []
    total = 0
    params = init.copy()
    result = None
    for pmask, trace, overrides in passes:
        start = params.copy()
        start[NB:] = init[NB:]
        for k, v in overrides.items():
            start[k] = v
        final = trace is problem.trace and pmask is mask
        result = _fit(_subproblem(problem, start, pmask, trace), budget,
                      CHI2_RTOL if final else STAGING_CHI2_RTOL)
        params = result.parameters
        total += result.iterations
        budget = max(budget - result.iterations, 1)
        if final:
            history += result.chi2_history if not history else result.chi2_history[1:]
    result.iterations = total
    result.chi2_history = history
    return result


def _fit(problem: FitProblem, max_iter: int, chi2_rtol: float = CHI2_RTOL) -> FitResult:
    cas = _Casimir(problem)
    pack = _Packing(problem)
    y = problem.trace.lif
    npar = pack.size
    if y.size < 3 * npar:
        raise FitError(f"{y.size} samples for {npar} free parameters; need at least {3 * npar}")

    cache = {}

    def model(q):
        p = pack.to_external(q)
        prof = _profiles(problem, cas, p)
        cache["prof"] = prof
        return _combine(problem, p, prof)

    def cheap(q):
        return _combine(problem, pack.to_external(q), cache["base"])

    cheap.linear = pack.linear

    def jacobian(q, f):
        model(q)
        cache["base"] = cache["prof"]
        return forward_jacobian(model, q, f, pack.floors, cheap)

    q = pack.project(pack.to_internal(problem.initial))
    f = model(q)
    r = y - f
    chi2 = float(r @ r)
    history = [chi2]
    lam = 1e-3
    small = 0
    converged = False
    message = "iteration limit reached"
    hidx = pack.height_slice
    it = 0
    while it < max_iter:
        it += 1
        J = jacobian(q, f)
        JTJ = J.T @ J
        g = J.T @ r
        free = np.ones(q.size, dtype=bool)
        if hidx is not None:
            # heights sitting on the h >= 0 bound and pushed outward stay put
            free[hidx] = ~((q[hidx] <= 0.0) & (g[hidx] <= 0.0))
        A = JTJ[np.ix_(free, free)]
        b = g[free]
        d = np.diag(A).copy()
        d[d <= 0] = 1e-30
        while True:
            step = np.zeros(q.size)
            try:
                step[free] = np.linalg.solve(A + lam * np.diag(d), b)
                ok = True
            except np.linalg.LinAlgError:
                ok = False
            if ok:
                q_new = pack.project(q + step)
                f_new = model(q_new)
                r_new = y - f_new
                chi2_new = float(r_new @ r_new)
                if np.isfinite(chi2_new) and chi2_new < chi2:
                    break
            lam *= LAMBDA_UP
            if lam > LAMBDA_MAX:
                break
        if lam > LAMBDA_MAX:
            converged = True
            message = "no further decrease possible"
            break
        rel = (chi2 - chi2_new) / chi2 if chi2 > 0 else 0.0
        dq = q_new - q
        q, f, r, chi2 = q_new, f_new, r_new, chi2_new
        history.append(chi2)
        lam = max(lam / LAMBDA_DOWN, 1e-12)
        small = small + 1 if rel < chi2_rtol else 0
        if small >= CHI2_RTOL_COUNT:
            converged = True
            message = "relative chi2 change below tolerance"
            break
        if np.linalg.norm(dq) < STEP_TOL * (np.linalg.norm(q) + STEP_TOL):
            converged = True
            message = "parameter step below tolerance"
            break
        if chi2 == 0.0:
            converged = True
            message = "exact fit"
            break

    ext = pack.to_external(q)
    sigmas = None
    degenerate = False
    J = jacobian(q, f)
    JTJ = J.T @ J
    scale = np.sqrt(np.diag(JTJ))
    if np.any(scale == 0):
        degenerate = True
    else:
        Js = JTJ / np.outer(scale, scale)
        if np.linalg.cond(Js) > COND_MAX:
            degenerate = True
    if converged and not degenerate:
        dof = y.size - npar
        s2 = chi2 / dof
        cov_q = s2 * np.linalg.inv(JTJ)
        T = pack.external_jacobian(q)
        cov = T @ cov_q @ T.T
        sigmas = np.sqrt(np.clip(np.diag(cov), 0, None))
        sigmas[problem.fix_mask] = np.nan
    if degenerate:
        message += "; singular normal matrix (degenerate parametrization)"

    dev = Trace(problem.trace.abscissa, r.copy(), None, frequency_axis_valid=True)
    return FitResult(problem.names, ext, sigmas, chi2, dev, converged, it, degenerate,
                     problem.fix_mask.copy(), history, message)


def snr_estimate(trace: Trace, result: FitResult) -> float:
    """Peak of the fitted lines above baseline divided by the RMS of the deviation curve.

    Returns ``inf`` for a residual-free fit.
    """
    p = result.parameters
    baseline = p[IOFF] + p[ISLOPE] * (trace.abscissa - p[ICOG])
    model = trace.lif - result.deviation.lif
    peak = float(np.max(model - baseline))
    rms = float(np.sqrt(np.mean(result.deviation.lif ** 2)))
    if rms == 0.0:
        return math.inf
    return peak / rms


def compare_j_assignments(trace: Trace, i, candidates, lower: HfsConstants, upper: HfsConstants,
                          cog: float, gaussian_fwhm: float, lorentzian_fwhm: float,
                          rtol: float = 1e-6) -> list[tuple[HalfInt, HalfInt, FitResult, bool]]:
    """Fit each ``(J, J')`` candidate and rank by chi2.

    The boolean marks results tied with the best within ``rtol``; ties are
    reported, never resolved.
    """
    out = []
    for jl, ju in candidates:
        prob = FitProblem.create(trace, i, jl, ju, lower, upper, cog, gaussian_fwhm, lorentzian_fwhm)
        out.append((prob.j_lower, prob.j_upper, fit(prob)))
    out.sort(key=lambda row: row[2].chi2)
    best = out[0][2].chi2
    return [(jl, ju, res, abs(res.chi2 - best) <= rtol * max(best, 1e-300)) for jl, ju, res in out]

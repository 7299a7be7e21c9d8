import json
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.signal import find_peaks

from hfslock.angular import HalfInt, HfsConstants, relative_intensities
from hfslock.fitter import (BASE_NAMES, NB, FitError, FitProblem, _Casimir, _evaluate, _Packing,
                            compare_j_assignments, forward_jacobian, fit, model_eval, snr_estimate)
from hfslock.lineshape import Trace, noise_for_snr, read_trace_csv, synthesize

from conftest import flag_axis, flag_model

TRUTH = dict(a_lo=300.0, b_lo=-20.0, a_up=575.0, b_up=10.0, g=365.0, l=20.0)
START = dict(lower=HfsConstants(330.0, -22.0), upper=HfsConstants(520.0, 11.0), gaussian_fwhm=400.0,
             lorentzian_fwhm=22.0)
SCALED = ("amplitude", "baseline_offset", "baseline_slope")


def truth_problem(trace, **overrides):
    kw = dict(lower=HfsConstants(TRUTH["a_lo"], TRUTH["b_lo"]), upper=HfsConstants(TRUTH["a_up"], TRUTH["b_up"]),
              cog=0.0, gaussian_fwhm=TRUTH["g"], lorentzian_fwhm=TRUTH["l"], amplitude=1.0, baseline_offset=0.05)
    kw.update(overrides)
    return FitProblem.create(trace, "5/2", "7/2", "9/2", **kw)


def start_problem(trace, cog=0.0, **kw):
    return FitProblem.create(trace, "5/2", "7/2", "9/2", cog=cog, **{**START, **kw})


@pytest.fixture(scope="module")
def clean():
    m = flag_model()
    return m, synthesize(m, np.round(flag_axis(m, step=4.0)))


@pytest.fixture(scope="module")
def noisy():
    m = flag_model()
    axis = np.round(flag_axis(m, step=4.0))
    sigma = noise_for_snr(m, axis, 70.0)
    return m, synthesize(m, axis, sigma, seed=3), sigma


@pytest.fixture(scope="module")
def noisy_fit(noisy):
    _, trace, _ = noisy
    return fit(start_problem(trace))


# ------------------------------------------------------------- model

class TestModelEval:
    def test_truth_reproduces_trace(self, clean):
        _, trace = clean
        prob = truth_problem(trace)
        assert np.max(np.abs(model_eval(prob, prob.initial) - trace.lif)) <= 1e-12

    def test_single_component(self, clean):
        m, trace = clean
        prob = truth_problem(trace)
        p = prob.initial.copy()
        k = prob.names.index("I[6->7]")
        p[NB:] = 0.0
        p[k] = 1.0
        y = model_eval(prob, p)
        peaks, _ = find_peaks(y)
        assert peaks.size == 1
        target = [c.offset for c in m.components if str(c.f_lower) == "6" and str(c.f_upper) == "7"][0]
        assert abs(trace.abscissa[peaks[0]] - target) <= 4.0

    def test_cog_translation(self, clean):
        _, trace = clean
        prob = truth_problem(trace)
        p = prob.initial.copy()
        delta = 256.0
        shifted = Trace(trace.abscissa + delta, trace.lif, None, True)
        sprob = truth_problem(shifted)
        q = p.copy()
        q[BASE_NAMES.index("cog")] += delta
        assert np.array_equal(model_eval(sprob, q), model_eval(prob, p))

    def test_positions_follow_constants(self, clean):
        _, trace = clean
        prob = truth_problem(trace)
        p = prob.initial.copy()
        p[0] = 250.0
        moved = flag_model(a_lo=250.0)
        assert np.allclose(model_eval(prob, p), moved(trace.abscissa), atol=1e-12)


class TestProblem:
    def test_component_count_from_j(self, clean):
        _, trace = clean
        assert len(truth_problem(trace).initial) == NB + 15
        prob = FitProblem.create(trace, "5/2", "9/2", "9/2", HfsConstants(1), HfsConstants(1), 0, 375, 0)
        assert len(prob.initial) == NB + 16

    def test_needs_frequency_axis(self, clean):
        _, trace = clean
        raw = Trace(np.arange(len(trace), dtype=float), trace.lif)
        with pytest.raises(FitError, match="linearize"):
            truth_problem(raw)

    def test_too_few_samples(self):
        m = flag_model()
        trace = synthesize(m, np.linspace(-3000, 3000, 60))
        with pytest.raises(FitError, match="samples"):
            fit(truth_problem(trace))

    def test_intensity_simplex(self, clean):
        _, trace = clean
        with pytest.raises(FitError):
            truth_problem(trace, intensities=[0.5] * 15)
        with pytest.raises(FitError):
            truth_problem(trace, fixed=["I[6->7]"])
        with pytest.raises(FitError):
            truth_problem(trace, fixed=["nonsense"])


# --------------------------------------------------------------- fit

class TestFit:
    def test_noise_free_round_trip(self, clean):
        _, trace = clean
        res = fit(start_problem(trace))
        assert res.converged
        assert res.chi2 <= 1e-12 * float(trace.lif @ trace.lif)
        for name, key in (("A_lower", "a_lo"), ("A_upper", "a_up"), ("B_lower", "b_lo"), ("B_upper", "b_up")):
            assert res.value(name) == pytest.approx(TRUTH[key], abs=1e-3)

    def test_noisy_round_trip(self, noisy, noisy_fit):
        _, trace, sigma = noisy
        res = noisy_fit
        assert res.converged and not res.degenerate
        for name, key in (("A_lower", "a_lo"), ("A_upper", "a_up"), ("B_lower", "b_lo"), ("B_upper", "b_up")):
            assert abs(res.value(name) - TRUTH[key]) <= 3 * res.sigma(name)
        rms = math.sqrt(np.mean(res.deviation.lif ** 2))
        assert rms == pytest.approx(sigma, rel=0.1)

    def test_deviation_is_data_minus_model(self, noisy, noisy_fit):
        _, trace, _ = noisy
        prob = start_problem(trace)
        model = model_eval(prob, noisy_fit.parameters)
        assert np.allclose(noisy_fit.deviation.lif, trace.lif - model, atol=1e-12)
        assert np.array_equal(noisy_fit.deviation.abscissa, trace.abscissa)

    def test_chi2_non_increasing(self, noisy_fit):
        h = np.array(noisy_fit.chi2_history)
        assert h.size > 1
        assert np.all(np.diff(h) <= 0)

    def test_intensities_stay_on_simplex(self, noisy_fit):
        inten = noisy_fit.parameters[NB:]
        assert np.all(inten >= 0)
        assert inten.sum() == pytest.approx(1.0, abs=1e-12)

    def test_wrong_j_upper_is_worse(self, noisy):
        _, trace, _ = noisy
        rows = compare_j_assignments(trace, "5/2", [("7/2", "9/2"), ("7/2", "7/2")],
                                     START["lower"], START["upper"], 0.0, 400.0, 22.0)
        assert [(str(a), str(b)) for a, b, _, _ in rows][0] == ("7/2", "9/2")
        assert rows[1][2].chi2 > rows[0][2].chi2
        assert rows[0][3] and not rows[1][3]

    def test_fixed_parameters_are_held(self, noisy):
        _, trace, _ = noisy
        res = fit(start_problem(trace, fixed=["B_lower", "B_upper", "intensities"]))
        assert res.converged
        assert res.value("B_lower") == -22.0 and res.value("B_upper") == 11.0
        assert res.sigma("B_lower") is None and res.sigma("I[6->7]") is None
        assert res.sigma("A_lower") is not None
        w = list(relative_intensities(HalfInt(5), HalfInt(7), HalfInt(9)).values())
        assert np.allclose(res.parameters[NB:], w)
        out = res.to_json()
        assert set(out["fixed"]) >= {"B_lower", "B_upper", "I[6->7]"}

    def test_translation_equivariance(self, noisy, noisy_fit):
        _, trace, _ = noisy
        delta = 1024.0
        shifted = Trace(trace.abscissa + delta, trace.lif, None, True)
        res = fit(start_problem(shifted, cog=delta))
        for n in BASE_NAMES:
            want = noisy_fit.value(n) + (delta if n == "cog" else 0.0)
            tol = 1e-6 if n == "cog" else 1e-4 * noisy_fit.sigma(n)
            assert abs(res.value(n) - want) <= tol, n

    def test_detector_scale_equivariance(self, noisy, noisy_fit):
        _, trace, _ = noisy
        c = 7.5
        res = fit(start_problem(Trace(trace.abscissa, c * trace.lif, None, True)))
        for n in BASE_NAMES:
            want = noisy_fit.value(n) * (c if n in SCALED else 1.0)
            tol = 1e-4 * noisy_fit.sigma(n) * (c if n in SCALED else 1.0)
            assert abs(res.value(n) - want) <= tol, n

    def test_serialization(self, noisy_fit, tmp_path):
        noisy_fit.save(tmp_path / "fit.json", tmp_path / "dev.csv")
        data = json.loads((tmp_path / "fit.json").read_text())
        assert data["names"][:NB] == list(BASE_NAMES)
        assert data["parameters"]["A_lower"] == noisy_fit.value("A_lower")
        assert data["converged"] is True
        dev = read_trace_csv(tmp_path / "dev.csv")
        assert np.array_equal(dev.lif, noisy_fit.deviation.lif)

    def test_iteration_cap(self, noisy):
        _, trace, _ = noisy
        res = fit(start_problem(trace), max_iter=3)
        assert not res.converged
        assert res.iterations <= 3 + 3     # each staging pass runs at least one iteration
        assert "iteration limit" in res.message


class TestSnr:
    def test_noise_free_is_infinite(self, clean):
        _, trace = clean
        prob = truth_problem(trace)
        res = fit(prob)
        assert snr_estimate(trace, res) == math.inf or snr_estimate(trace, res) > 1e6

    def test_exact_residual_is_infinite(self, clean):
        _, trace = clean
        res = fit(truth_problem(trace), max_iter=1)
        res.deviation = Trace(trace.abscissa, np.zeros(len(trace)), None, True)
        assert snr_estimate(trace, res) == math.inf

    def test_construction_70(self, noisy, noisy_fit):
        _, trace, _ = noisy
        assert 60.0 <= snr_estimate(trace, noisy_fit) <= 80.0

    def test_doubling_sigma_halves(self, noisy, noisy_fit):
        m, trace, sigma = noisy
        doubled = synthesize(m, trace.abscissa, 2 * sigma, seed=4)
        res = fit(start_problem(doubled))
        ratio = snr_estimate(doubled, res) / snr_estimate(trace, noisy_fit)
        assert ratio == pytest.approx(0.5, rel=0.1)


# ---------------------------------------------------------- Jacobian

class TestJacobian:
    # |A| >= 100 keeps the pattern from collapsing onto the cog, where every
    # position derivative vanishes and a relative comparison means nothing.
    # Widths span the thermal range; much narrower lines put the forward
    # truncation error (step x Casimir lever arm / width) above 1e-4.
    @settings(max_examples=25, deadline=None)
    @given(a_lo=st.floats(100, 800) | st.floats(-800, -100), a_up=st.floats(100, 800) | st.floats(-800, -100),
           b_lo=st.floats(-100, 100),
           b_up=st.floats(-100, 100), cog=st.floats(-500, 500), g=st.floats(300, 600), l=st.floats(5, 100))
    def test_forward_matches_central(self, a_lo, a_up, b_lo, b_up, cog, g, l):
        m = flag_model(a_lo=a_lo, b_lo=b_lo, a_up=a_up, b_up=b_up, g=g, l=l, cog=cog)
        trace = synthesize(m, flag_axis(m, step=20.0))
        prob = truth_problem(trace, lower=HfsConstants(a_lo, b_lo), upper=HfsConstants(a_up, b_up), cog=cog,
                             gaussian_fwhm=g, lorentzian_fwhm=l)
        # the Jacobian the optimizer builds: internal coordinates and step floors
        pack = _Packing(prob)
        cas = _Casimir(prob)
        fun = lambda q: _evaluate(prob, cas, pack.to_external(q))
        q = pack.to_internal(prob.initial)
        J = forward_jacobian(fun, q, fun(q), pack.floors)
        for n in range(q.size):
            # small enough that the oracle's own h^2 error stays far below 1e-4
            h = max(1e-5 * abs(q[n]), 10 * pack.floors[n])
            e = np.zeros(q.size)
            e[n] = h
            central = (fun(q + e) - fun(q - e)) / (2 * h)
            scale = np.max(np.abs(central))
            assert scale > 0
            assert np.max(np.abs(J[:, n] - central)) <= 1e-4 * scale, n

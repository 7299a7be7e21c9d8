import os
from importlib import resources
from pathlib import Path

import numpy as np
import pytest

from hfslock.angular import HalfInt, HfsConstants, line_components
from hfslock.config import Config, build_line, scan_axis
from hfslock.lineshape import SpectrumModel, noise_for_snr, synthesize

DATA = Path(str(resources.files("hfslock").joinpath("data")))
H = HalfInt.parse


@pytest.fixture(scope="session")
def data_dir() -> Path:
    return DATA


def flag_model(a_lo=300.0, b_lo=-20.0, a_up=575.0, b_up=10.0, g=365.0, l=20.0, amplitude=1.0,
               offset=0.05, slope=0.0, cog=0.0, jl="7/2", ju="9/2") -> SpectrumModel:
    comps = line_components(H("5/2"), H(jl), H(ju), HfsConstants(a_lo, b_lo), HfsConstants(a_up, b_up))
    return SpectrumModel(tuple(comps), cog=cog, gaussian_fwhm=g, lorentzian_fwhm=l, amplitude=amplitude,
                         baseline_offset=offset, baseline_slope=slope)


def flag_axis(model: SpectrumModel, step=2.0, margin=2500.0) -> np.ndarray:
    c = model.cog + model.centers
    return np.arange(c.min() - margin, c.max() + margin + 1e-9, step)


@pytest.fixture(scope="session")
def flag_fixture_trace():
    """The shipped synthesis fixture (S/N 70, 0.4 MHz step, seed 1) and its noise sigma."""
    cfg = Config.load(DATA / "flag_synth.cfg")
    model, *_ = build_line(cfg)
    axis = scan_axis(cfg, model)
    sigma = noise_for_snr(model, axis, cfg.get_float("noise.snr"))
    return model, synthesize(model, axis, sigma, seed=cfg.get_int("noise.seed")), sigma


def pytest_report_header(config):
    from hfslock import kernels
    return f"hfslock kernel backend: {kernels.BACKEND} (HFSLOCK_DISABLE_NUMBA={os.environ.get('HFSLOCK_DISABLE_NUMBA', '')!r})"


ACCEPTANCE = pytest.StashKey[list]()


def pytest_configure(config):
    config.stash[ACCEPTANCE] = []


@pytest.fixture
def acceptance_report(request):
    """Record one PASS/FAIL line for the terminal summary (and print it)."""
    def report(line: str) -> None:
        request.config.stash[ACCEPTANCE].append(line)
        print(line)
    return report


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.stash.get(ACCEPTANCE, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)

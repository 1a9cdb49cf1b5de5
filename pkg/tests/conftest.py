import numpy as np
import pytest
from scipy.constants import c

from sr_opo_comb import biphoton, cavity, correlation
from sr_opo_comb.cli import nearest_resonance
from sr_opo_comb.config import load_config

PUMP_NM = 780.0


@pytest.fixture(scope="session")
def scenario():
    return load_config()


@pytest.fixture(scope="session")
def device(scenario):
    return scenario.resonator


@pytest.fixture(scope="session")
def phase_match(scenario):
    return scenario.phase_match


def tooth_pair(resonator, signal_nm, pump_nm=PUMP_NM):
    nu_s = nearest_resonance(resonator, signal_nm)
    return c / nu_s * 1e9, c / (c / (pump_nm * 1e-9) - nu_s) * 1e9


@pytest.fixture(scope="session")
def sr_spectrum_1600(device, phase_match):
    ls, li = tooth_pair(device, 1600.0)
    js = biphoton.joint_amplitude(device, phase_match, "singly_resonant_signal", PUMP_NM, ls)
    return js, ls, li


@pytest.fixture(scope="session")
def sr_beats_1600(device, sr_spectrum_1600):
    js, ls, li = sr_spectrum_1600
    fsr = cavity.fsr(device, ls)
    cf = correlation.g2_from_spectrum(
        js, correlation.BandpassFilter(ls, 1.0), correlation.BandpassFilter(li, 1.0), fsr_hz=fsr
    )
    return cf, fsr


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)

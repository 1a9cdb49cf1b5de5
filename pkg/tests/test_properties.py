import numpy as np
import pytest
from hypothesis import HealthCheck, assume, given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays
from scipy.constants import c

from sr_opo_comb import analysis, biphoton, cavity, correlation, dispersion
from sr_opo_comb import montecarlo as mc

PROPS = settings(max_examples=40, deadline=None, suppress_health_check=[HealthCheck.function_scoped_fixture])
CENTER_HZ = c / 1600e-9
OPEN = correlation.BandpassFilter(1600.0, 1e4, "rectangular")
finite = dict(allow_nan=False, allow_infinity=False)


@PROPS
@given(
    gamma=st.floats(1e6, 1e9),
    center=st.floats(-0.5, 0.5),
    amplitude=st.floats(1e-3, 1e3),
    offset=st.floats(0.0, 0.3),
)
def test_lorentzian_roundtrip(gamma, center, amplitude, offset):
    f = np.linspace(-8 * gamma, 8 * gamma, 801)
    peak = amplitude
    y = analysis.lorentzian(f, peak * (gamma / 2) ** 2, center * gamma, gamma, offset * peak)
    fit = analysis.lorentzian_fit(analysis.ScanTrace(f, y))
    assert fit["gamma_f"] == pytest.approx(gamma, rel=1e-6)
    assert fit["f0"] == pytest.approx(center * gamma, abs=1e-6 * gamma)


@PROPS
@given(rate=st.floats(1e-3, 1.0), amplitude=st.floats(0.1, 100.0), floor=st.floats(0.0, 0.2))
def test_exponential_roundtrip(rate, amplitude, floor):
    t = np.linspace(0, 6 / rate, 300)
    y = amplitude * np.exp(-rate * t / 2) + floor * amplitude
    fit = analysis.exponential_envelope_fit(t, y)
    assert fit["gamma"] == pytest.approx(rate, rel=1e-6)


@PROPS
@given(
    slope=st.floats(-1e3, 1e3, **finite),
    intercept=st.floats(-1e3, 1e3, **finite),
    x=arrays(float, st.integers(3, 20), elements=st.floats(0, 10, **finite)),
)
def test_linear_fit_exact(slope, intercept, x):
    assume(np.ptp(x) > 1e-3)
    fit = analysis.linear_fit(x, slope * x + intercept)
    assert fit["slope"] == pytest.approx(slope, abs=1e-7 * (1 + abs(slope) + abs(intercept)))
    assert fit["intercept"] == pytest.approx(intercept, abs=1e-6 * (1 + abs(slope) + abs(intercept)))


@PROPS
@given(
    y=arrays(np.int64, st.integers(5, 200), elements=st.integers(-1000, 1000)),
    exponent=st.integers(-10, 10),
    shift=st.integers(-1000, 1000),
)
def test_peak_pick_affine_invariant(y, exponent, shift):
    # power-of-two scale and integer shift keep the transform exact
    y = y.astype(float)
    scale = 2.0**exponent
    np.testing.assert_array_equal(analysis.peak_pick(y, 0.2, 2), analysis.peak_pick(scale * y + shift, 0.2, 2))


def _random_spectrum(seed, points=2**12):
    """Sum of a few complex Gaussian lines; smooth, so psi stays well inside the delay grid."""
    rng = np.random.default_rng(seed)
    span = 200e9
    d = (np.arange(points) - points // 2) * (span / points)
    f = np.zeros(points, dtype=complex)
    for _ in range(rng.integers(1, 6)):
        centre, width = rng.uniform(-0.3, 0.3) * span, rng.uniform(2e9, 20e9)
        f += (rng.standard_normal() + 1j * rng.standard_normal()) * np.exp(-(((d - centre) / width) ** 2))
    return biphoton.JointSpectrum(2 * CENTER_HZ, CENTER_HZ, d, f, biphoton.ResonanceConfig.SINGLY_RESONANT_SIGNAL)


@PROPS
@given(seed=st.integers(0, 2**32 - 1))
def test_parseval(seed):
    js = _random_spectrum(seed)
    cf = correlation.g2_from_spectrum(js, OPEN, OPEN)
    assert cf.integral() == pytest.approx(js.norm(), rel=1e-9)
    assert cf.metadata["spectral_mass"] == pytest.approx(js.norm(), rel=1e-12)


@PROPS
@given(seed=st.integers(0, 2**32 - 1))
def test_start_swap_is_time_reversal(seed):
    js = _random_spectrum(seed)
    a = correlation.g2_from_spectrum(js, OPEN, OPEN, "idler")
    b = correlation.g2_from_spectrum(js, OPEN, OPEN, "signal")
    np.testing.assert_allclose(a.mirrored().density, b.density, rtol=1e-9, atol=1e-12 * a.density.max())
    np.testing.assert_array_equal(a.mirrored().mirrored().density, a.density)


@PROPS
@given(seed=st.integers(0, 2**32 - 1), sigma=st.floats(0.0, 200.0))
def test_jitter_preserves_mass(seed, sigma):
    rng = np.random.default_rng(seed)
    t = np.arange(-4000.0, 4000.0 + 1, 2.0)
    density = np.where(np.abs(t) < 1000, rng.random(t.size), 0.0)
    cf = correlation.CorrelationFunction(t, density)
    out = correlation.apply_jitter(cf, sigma)
    assert out.integral() == pytest.approx(cf.integral(), rel=1e-9)
    assert np.all(out.density >= 0)


@PROPS
@given(dk=st.floats(-1e5, 1e5, **finite), length=st.floats(1e-4, 0.1))
def test_phase_match_envelope_bounded(dk, length):
    assert abs(dispersion.phase_match_envelope(dk, length)) <= 1 + 1e-15
    assert abs(dispersion.phase_match_envelope(0.0, length)) == 1


@PROPS
@given(signal_nm=st.floats(1420.0, 1700.0), idler_nm=st.floats(1420.0, 1700.0))
def test_mismatch_symmetric_under_exchange(phase_match, signal_nm, idler_nm):
    model = dispersion.IndexModel()
    pump_nm = 1 / (1 / signal_nm + 1 / idler_nm)
    a = dispersion.qpm_mismatch(model, phase_match, pump_nm, signal_nm, idler_nm)
    b = dispersion.qpm_mismatch(model, phase_match, pump_nm, idler_nm, signal_nm)
    assert a == pytest.approx(b, rel=1e-12, abs=1e-9)
    with pytest.raises(dispersion.DispersionDomainError):
        dispersion.check_energy_conservation(pump_nm, signal_nm, idler_nm * (1 + 1e-6))


@PROPS
@given(rho=st.floats(1e-3, 0.999))
def test_finesse_inverse(rho):
    assert cavity.rho_from_finesse(cavity.finesse_from_rho(rho)) == pytest.approx(rho, rel=1e-9)


@PROPS
@given(nu=st.floats(c / 1700e-9, c / 1500e-9))
def test_transmission_bounded(device, nu):
    assert abs(cavity.transmission_amplitude(device, nu)) ** 2 <= 1 + 1e-12


def test_calibration_idempotent(device, phase_match):
    model = device.index_model
    again = dispersion.calibrate(model, phase_match, qpm_temperature_c=model.temperature)
    assert again.index_slope_per_um == pytest.approx(model.index_slope_per_um, rel=1e-9, abs=1e-15)
    assert again.phase_offset == pytest.approx(model.phase_offset, rel=1e-9, abs=1e-15)


def _flat_delay():
    t = np.arange(-1000.0, 1000.0, 2.0)
    return correlation.CorrelationFunction(t, np.exp(-((t / 100.0) ** 2)))


@settings(max_examples=10, deadline=None)
@given(
    eta_s=st.floats(0.01, 0.5),
    eta_i=st.floats(0.01, 0.5),
    qe=st.floats(0.2, 1.0),
    seed=st.integers(0, 2**32 - 1),
)
def test_singles_follow_thinning(eta_s, eta_i, qe, seed):
    cfg = mc.ExperimentConfig(duration_s=0.01, signal_path_transmittance=eta_s,
                              idler_path_transmittance=eta_i, rng_seed=seed)
    det = mc.DetectorModel(efficiency=qe, dark_rate=0.0)
    stream = mc.sample_experiment(cfg, _flat_delay(), mc.default_detectors(cfg, det))
    for photon, eta in (("signal", eta_s), ("idler", eta_i)):
        mean = cfg.pair_rate * cfg.duration_s * eta * qe
        assert abs(stream.total(photon) - mean) < 5 * np.sqrt(mean)

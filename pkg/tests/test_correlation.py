import json

import numpy as np
import pytest
from scipy.constants import c

from sr_opo_comb import biphoton, cavity, correlation
from sr_opo_comb.analysis import FitError
from sr_opo_comb.cli import nearest_resonance

from conftest import PUMP_NM, tooth_pair

CENTER_HZ = c / 1600e-9
OPEN = 1e4  # nm; a rectangular filter that passes the whole grid


def synthetic(amplitude_of_detuning, span_hz, points=2**16):
    """JointSpectrum with a prescribed amplitude and all-pass filters."""
    d = (np.arange(points) - points // 2) * (span_hz / points)
    f = amplitude_of_detuning(d).astype(complex)
    f /= np.sqrt(np.sum(np.abs(f) ** 2) * span_hz / points)
    js = biphoton.JointSpectrum(2 * CENTER_HZ, CENTER_HZ, d, f, biphoton.ResonanceConfig.SINGLY_RESONANT_SIGNAL)
    open_filter = correlation.BandpassFilter(1600.0, OPEN, "rectangular")
    return js, open_filter


def single_pole(fwhm_hz):
    # causal Lorentzian: |f|^2 has FWHM fwhm_hz, |psi|^2 ~ exp(-2 pi fwhm t)
    return lambda d: 1 / (np.pi * fwhm_hz - 2j * np.pi * d)


def two_teeth(spacing_hz, width_hz=20e6):
    return lambda d: single_pole(width_hz)(d - spacing_hz / 2) + single_pole(width_hz)(d + spacing_hz / 2)


def test_sr_beat_period(sr_beats_1600):
    cf, fsr = sr_beats_1600
    assert correlation.beat_period(cf) == pytest.approx(285.7, abs=2.0)


def test_sr_decay_is_causal(sr_beats_1600):
    cf, _ = sr_beats_1600
    before = cf.window(-5000, -300).density.max()
    assert before < 1e-3 * cf.density.max()


def test_parseval(sr_beats_1600):
    cf, _ = sr_beats_1600
    assert cf.integral() == pytest.approx(cf.metadata["spectral_mass"], rel=1e-6)


@pytest.mark.parametrize("spacing", [3.5e9, 7.0e9])
def test_two_tooth_beat(spacing):
    js, flt = synthetic(two_teeth(spacing), 40 * 3.5e9, 2**18)
    cf = correlation.g2_from_spectrum(js, flt, flt, fsr_hz=spacing)
    assert correlation.beat_period(cf) == pytest.approx(1e12 / spacing, abs=cf.step_ps)


@pytest.mark.parametrize("fwhm", [60e6, 116e6])
def test_factor_two_envelope(fwhm):
    js, flt = synthetic(single_pole(fwhm), 200e9, 2**18)
    cf = correlation.g2_from_spectrum(js, flt, flt)
    fit = correlation.envelope_fit(cf)
    assert fit.extra["gamma_over_2pi_hz"] == pytest.approx(2 * fwhm, rel=0.01)


def test_narrow_filters_give_single_decay(device, sr_spectrum_1600):
    js, ls, li = sr_spectrum_1600
    fsr = cavity.fsr(device, ls)
    sf = correlation.BandpassFilter(ls, 0.03, "rectangular")
    idf = correlation.BandpassFilter(li, 0.03, "rectangular")
    cf = correlation.heralded_waveform(js, sf, idf, "idler", fsr)
    with pytest.raises(correlation.InsufficientFringesError):
        correlation.beat_period(cf)
    fit = correlation.envelope_fit(cf)
    assert fit.extra["gamma_over_2pi_hz"] == pytest.approx(2 * cavity.linewidth(device, ls), rel=0.05)


def test_heralded_roles_mirror(device, sr_spectrum_1600):
    js, ls, li = sr_spectrum_1600
    sf = correlation.BandpassFilter(ls, 0.03, "rectangular")
    idf = correlation.BandpassFilter(li, 0.03, "rectangular")
    a = correlation.heralded_waveform(js, sf, idf, "idler")
    b = correlation.heralded_waveform(js, sf, idf, "signal")
    assert np.max(np.abs(b.density - a.mirrored().density)) < 1e-9 * a.density.max()
    assert b.metadata["start_channel"] == "signal"


def test_heralded_rejects_wide_filters(sr_spectrum_1600):
    js, ls, li = sr_spectrum_1600
    wide = correlation.BandpassFilter(ls, 1.0)
    with pytest.raises(ValueError, match="single-tooth"):
        correlation.heralded_waveform(js, wide, correlation.BandpassFilter(li, 0.03), fsr_hz=3.5e9)


def test_degenerate_doubly_resonant_symmetric(device, phase_match):
    nu = nearest_resonance(device, 1560.0)
    lam = c / nu * 1e9
    js = biphoton.joint_amplitude(device, phase_match, "doubly_resonant", PUMP_NM, lam, pump_hz=2 * nu)
    flt = correlation.BandpassFilter(lam, 1.0)
    cf = correlation.g2_from_spectrum(js, flt, flt, fsr_hz=cavity.fsr(device, lam))
    g = cf.density
    assert np.max(np.abs(g - g[::-1])) < 1e-3 * g.max()
    assert correlation.beat_period(cf) == pytest.approx(284.0, abs=6.0)
    swapped = correlation.g2_from_spectrum(js, flt, flt, "signal")
    np.testing.assert_allclose(swapped.density, g, rtol=0, atol=1e-9 * g.max())


def test_empty_overlap(sr_spectrum_1600):
    js, _, _ = sr_spectrum_1600
    far = correlation.BandpassFilter(1650.0, 0.03, "rectangular")
    with pytest.raises(correlation.EmptyOverlapError):
        correlation.g2_from_spectrum(js, far, far)


def test_filter_invariants():
    with pytest.raises(ValueError):
        correlation.BandpassFilter(1600.0, 0.0)
    with pytest.raises(ValueError):
        correlation.BandpassFilter(1600.0, 1.0, "lorentzian")
    assert correlation.BandpassFilter(1600.0, 0.03).fwhm_hz == pytest.approx(3.51e9, rel=1e-3)


def test_jitter_identity_and_mass(sr_beats_1600):
    cf, _ = sr_beats_1600
    same = correlation.apply_jitter(cf, 0.0)
    np.testing.assert_array_equal(same.density, cf.density)
    sigma = correlation.combined_jitter_sigma(80.0, 80.0)
    assert sigma == pytest.approx(80 / 2.3548 * np.sqrt(2), rel=1e-4)
    smeared = correlation.apply_jitter(cf, sigma)
    assert smeared.integral() == pytest.approx(cf.integral(), rel=1e-6)
    assert smeared.metadata["jitter_sigma_ps"] == pytest.approx(sigma)
    with pytest.raises(ValueError):
        correlation.apply_jitter(cf, -1.0)


def test_jitter_lifts_fringe_minima(sr_beats_1600):
    cf, fsr = sr_beats_1600
    smeared = correlation.apply_jitter(cf, correlation.combined_jitter_sigma(80.0, 80.0))
    minima = correlation.fringe_minima(smeared)[:5]
    assert np.all(minima > 1e-3 * smeared.density.max())


def test_visibility_decreases_with_jitter(sr_beats_1600):
    cf, fsr = sr_beats_1600
    vis = [correlation.fringe_visibility(correlation.apply_jitter(cf, s), 1e12 / fsr) for s in (0, 20, 34, 50)]
    assert all(a > b for a, b in zip(vis, vis[1:]))


def test_envelope_convention_exact():
    theta = 850.0
    t = np.arange(-3000, 20000, 2.0)
    y = np.where(t >= 0, np.exp(-t / theta), 0.0)
    cf = correlation.CorrelationFunction(t, y)
    fit = correlation.envelope_fit(cf)
    assert fit["gamma"] == pytest.approx(2 / (theta * 1e-12), rel=1e-8)
    assert fit["tau0_ps"] == 0.0


def test_rising_side_is_mirrored_decay():
    t = np.arange(-10000, 10001, 2.0)
    y = np.exp(-np.abs(t) / 500.0) * (t <= 0)
    fit = correlation.envelope_fit(correlation.CorrelationFunction(t, y), "rising")
    assert fit["gamma"] == pytest.approx(2 / 500e-12, rel=1e-8)


def test_envelope_needs_structure():
    t = np.arange(-100, 100, 1.0)
    with pytest.raises(FitError):
        correlation.envelope_fit(correlation.CorrelationFunction(t, np.ones_like(t)))
    with pytest.raises(ValueError):
        correlation.envelope_fit(correlation.CorrelationFunction(t, np.ones_like(t)), "sideways")


def test_beat_needs_fsr(sr_beats_1600):
    cf, _ = sr_beats_1600
    bare = correlation.CorrelationFunction(cf.delays_ps, cf.density, {})
    with pytest.raises(ValueError, match="FSR"):
        correlation.beat_period(bare)


def test_exports(tmp_path, sr_beats_1600):
    cf, _ = sr_beats_1600
    small = cf.window(-100, 100)
    small.to_csv(tmp_path / "g.csv")
    data = np.loadtxt(tmp_path / "g.csv", delimiter=",", skiprows=1)
    np.testing.assert_allclose(data[:, 1], small.density, rtol=1e-15)
    record = json.loads(correlation.fit_record(correlation.envelope_fit(cf)))
    assert set(record) >= {"A", "gamma_hz", "tau0_ps", "d", "residual"}

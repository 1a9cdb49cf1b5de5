"""
Joint spectral amplitude of cavity-filtered photon pairs.

For a monochromatic pump at nu_p, a pair with signal nu_s0 + Omega has its
idler at nu_p - nu_s0 - Omega, so one detuning axis carries the whole
biphoton. The amplitude is the product of the phase-matching envelope with the
out-coupling amplitude of each photon:

    f(Omega) = Phi(Omega) * E_s(nu_s0 + Omega) * G_i(nu_i0 - Omega)

* singly resonant: E_s is the cavity emission through the back face, G_i the
  bare transmission of the back face.
* doubly resonant: both are cavity emission amplitudes. Each photon sees the
  round-trip phase at its own frequency but the coating reflectance of the
  longer-wavelength member of the pair, i.e. a coating that is mirror
  symmetric about degeneracy (equal finesse for signal and idler).
* non resonant: both bare.

Frequencies in Hz, wavelengths in nm.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from enum import Enum
from pathlib import Path

import numpy as np
from scipy.constants import c

from . import cavity
from .dispersion import PhaseMatchSpec, phase_match_envelope, qpm_mismatch_from_frequencies

MIN_POINTS = 2**14
MIN_SPAN_FSR = 20
DEFAULT_SPAN_FSR = 160
DEFAULT_POINTS = 2**18
TOOTH_NODES = 33


class ResonanceConfig(str, Enum):
    SINGLY_RESONANT_SIGNAL = "singly_resonant_signal"
    DOUBLY_RESONANT = "doubly_resonant"
    NON_RESONANT = "non_resonant"


def _nm_to_hz(lam_nm):
    return c / (np.asarray(lam_nm, dtype=float) * 1e-9)


def _hz_to_nm(nu_hz):
    return c / np.asarray(nu_hz, dtype=float) * 1e9


@dataclass(frozen=True)
class JointSpectrum:
    pump_frequency_hz: float
    center_signal_hz: float
    detuning_hz: np.ndarray
    amplitude: np.ndarray
    config: ResonanceConfig

    @property
    def center_idler_hz(self):
        return self.pump_frequency_hz - self.center_signal_hz

    @property
    def step_hz(self):
        return float(self.detuning_hz[1] - self.detuning_hz[0])

    @property
    def signal_hz(self):
        return self.center_signal_hz + self.detuning_hz

    @property
    def idler_hz(self):
        return self.center_idler_hz - self.detuning_hz

    def norm(self):
        return float(np.sum(np.abs(self.amplitude) ** 2) * self.step_hz)

    def to_csv(self, path):
        with Path(path).open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["detuning_hz", "re", "im"])
            for d, a in zip(self.detuning_hz, self.amplitude):
                w.writerow([repr(float(d)), repr(float(a.real)), repr(float(a.imag))])


def _phase_matching(resonator, phase_match, signal_hz, idler_hz):
    dk = qpm_mismatch_from_frequencies(resonator.index_model, phase_match, signal_hz, idler_hz)
    return phase_match_envelope(dk, phase_match.crystal_length_mm * 1e-3)


def _bare(resonator, nu):
    return np.sqrt(1 - resonator.back_mirror(_hz_to_nm(nu)))


def _cavity(resonator, nu, coating_nu, port="back"):
    lam = _hz_to_nm(coating_nu)
    return cavity.cavity_emission(
        cavity.round_trip_phase(resonator, nu),
        cavity.round_trip_magnitude(resonator, lam),
        resonator.mirror(port)(lam),
    )


def pair_factors(resonator, config, signal_hz, idler_hz, signal_port="back", idler_port="back"):
    """Out-coupling amplitudes (E_s, G_i) for the given variant."""
    config = ResonanceConfig(config)
    if config is ResonanceConfig.NON_RESONANT:
        return _bare(resonator, signal_hz), _bare(resonator, idler_hz)
    if config is ResonanceConfig.SINGLY_RESONANT_SIGNAL:
        return _cavity(resonator, signal_hz, signal_hz, signal_port), _bare(resonator, idler_hz)
    long_member = np.minimum(signal_hz, idler_hz)
    return (
        _cavity(resonator, signal_hz, long_member, signal_port),
        _cavity(resonator, idler_hz, long_member, idler_port),
    )


def raw_amplitude(resonator, phase_match, config, signal_hz, idler_hz):
    e_s, g_i = pair_factors(resonator, config, signal_hz, idler_hz)
    return _phase_matching(resonator, phase_match, signal_hz, idler_hz) * e_s * g_i


def joint_amplitude(
    resonator: cavity.ResonatorSpec,
    phase_match: PhaseMatchSpec,
    config,
    pump_nm: float,
    center_signal_nm: float,
    span_hz: float | None = None,
    points: int = DEFAULT_POINTS,
    pump_hz: float | None = None,
) -> JointSpectrum:
    """
    Sample and normalize f(Omega) on a uniform grid of ``points`` detunings
    covering ``span_hz`` (default 160 FSR) around the signal center.

    ``pump_hz`` overrides ``pump_nm`` when the pump has to sit at an exact
    frequency (e.g. twice a cavity resonance for degenerate pairs).
    """
    config = ResonanceConfig(config)
    nu_p = float(pump_hz) if pump_hz is not None else float(_nm_to_hz(pump_nm))
    nu_s0 = float(_nm_to_hz(center_signal_nm))
    if not 0 < nu_s0 < nu_p:
        raise ValueError("signal center must lie below the pump frequency")
    local_fsr = cavity.fsr(resonator, center_signal_nm)
    span = DEFAULT_SPAN_FSR * local_fsr if span_hz is None else float(span_hz)
    if points < MIN_POINTS:
        raise ValueError(f"need at least {MIN_POINTS} grid points, got {points}")
    if span < MIN_SPAN_FSR * local_fsr * (1 - 1e-9):
        raise ValueError(f"span must cover at least {MIN_SPAN_FSR} FSR")
    step = span / points
    detuning = (np.arange(points) - points // 2) * step
    signal = nu_s0 + detuning
    idler = (nu_p - nu_s0) - detuning
    f = raw_amplitude(resonator, phase_match, config, signal, idler)
    norm = np.sqrt(np.sum(np.abs(f) ** 2) * step)
    if norm == 0:
        raise ValueError("joint amplitude vanishes on the grid")
    return JointSpectrum(nu_p, nu_s0, detuning, f / norm, config)


@dataclass(frozen=True)
class ModeTable:
    signal_nm: np.ndarray
    idler_nm: np.ndarray
    rate: np.ndarray

    def __len__(self):
        return int(self.signal_nm.size)

    def to_csv(self, path):
        with Path(path).open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["signal_nm", "idler_nm", "rate"])
            for row in zip(self.signal_nm, self.idler_nm, self.rate):
                w.writerow([f"{row[0]:.6f}", f"{row[1]:.6f}", repr(float(row[2]))])


def _check_signal_range(pump_nm, lo_nm, hi_nm):
    if lo_nm < 2 * pump_nm * (1 - 1e-12):
        raise ValueError(
            f"signal range must lie on the long-wavelength side of degeneracy ({2 * pump_nm} nm)"
        )


def _tooth_window(resonator, config, signal_teeth_hz, lam_s):
    if ResonanceConfig(config) is ResonanceConfig.NON_RESONANT:
        return cavity.fsr(resonator, lam_s)
    return cavity.linewidth(resonator, lam_s)


def _tooth_nodes(teeth, width, n=TOOTH_NODES):
    x, w = np.polynomial.legendre.leggauss(n)
    nodes = teeth[:, None] + 0.5 * width[:, None] * x[None, :]
    weights = 0.5 * width[:, None] * w[None, :]
    return nodes, weights


def signal_teeth(resonator, pump_nm, lo_nm, hi_nm):
    _check_signal_range(pump_nm, lo_nm, hi_nm)
    return cavity.resonance_frequencies(resonator, lo_nm, hi_nm)


def mode_table(resonator, phase_match, config, pump_nm, lo_nm, hi_nm) -> ModeTable:
    """
    One row per signal cavity resonance in [lo_nm, hi_nm]; the rate is |f|^2
    integrated over one linewidth centred on the tooth, normalized to the
    largest row.
    """
    teeth = signal_teeth(resonator, pump_nm, lo_nm, hi_nm)
    if teeth.size == 0:
        return ModeTable(np.empty(0), np.empty(0), np.empty(0))
    nu_p = float(_nm_to_hz(pump_nm))
    lam_s = _hz_to_nm(teeth)
    nodes, weights = _tooth_nodes(teeth, _tooth_window(resonator, config, teeth, lam_s))
    f = raw_amplitude(resonator, phase_match, config, nodes, nu_p - nodes)
    rate = np.sum(np.abs(f) ** 2 * weights, axis=1)
    return ModeTable(lam_s, _hz_to_nm(nu_p - teeth), rate / rate.max())


@dataclass(frozen=True)
class ClusterReport:
    config: ResonanceConfig
    signal_nm: np.ndarray
    idler_nm: np.ndarray
    suppression: np.ndarray
    idler_detuning_hz: np.ndarray
    local_spacing_modes: np.ndarray
    cluster_spacing_modes: float | None
    message: str

    @property
    def min_suppression(self):
        return float(self.suppression.min()) if self.suppression.size else float("nan")

    def to_csv(self, path):
        with Path(path).open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["signal_nm", "idler_nm", "suppression", "idler_detuning_hz"])
            for row in zip(self.signal_nm, self.idler_nm, self.suppression, self.idler_detuning_hz):
                w.writerow([f"{row[0]:.6f}", f"{row[1]:.6f}", repr(float(row[2])), repr(float(row[3]))])


def cluster_analysis(
    resonator, phase_match, config, pump_nm, lo_nm, hi_nm, pump_hz=None, nodes_per_tooth=None
) -> ClusterReport:
    """
    Per-tooth suppression from misaligned signal and idler resonance combs.

    For each signal resonance the pair rate is integrated over one FSR and
    divided by the same integral with the idler comb shifted so that the
    partner frequency sits exactly on an idler resonance. Variants without an
    idler cavity are unaffected by the shift, so their ratio is 1.
    """
    config = ResonanceConfig(config)
    teeth = signal_teeth(resonator, pump_nm, lo_nm, hi_nm)
    nu_p = float(_nm_to_hz(pump_nm)) if pump_hz is None else float(pump_hz)
    lam_s = _hz_to_nm(teeth)
    partners = nu_p - teeth
    lam_i = _hz_to_nm(partners)
    fsr_s = cavity.fsr(resonator, lam_s)
    fsr_i = cavity.fsr(resonator, lam_i)
    diff = np.abs(fsr_s - fsr_i)
    with np.errstate(divide="ignore"):
        local = np.where(diff > 1e-12 * fsr_s, fsr_s / diff, np.inf)
    phase_i = cavity.round_trip_phase(resonator, partners)
    detuning = (np.angle(np.exp(1j * phase_i)) / (2 * np.pi)) * fsr_i

    if config is not ResonanceConfig.DOUBLY_RESONANT or teeth.size == 0:
        ratio = np.ones(teeth.size)
        message = f"{config.value}: idler not resonant, no clustering"
        spacing = None
    else:
        linew = cavity.linewidth(resonator, lam_s)
        n = nodes_per_tooth or int(max(401, 20 * np.max(fsr_s / linew)))
        grid = np.linspace(-0.5, 0.5, n)
        ratio = np.empty(teeth.size)
        for chunk in np.array_split(np.arange(teeth.size), max(1, teeth.size * n // 2_000_000)):
            nu = teeth[chunk, None] + fsr_s[chunk, None] * grid[None, :]
            idl = nu_p - nu
            coating = np.minimum(nu, idl)
            lam_c = _hz_to_nm(coating)
            rho = cavity.round_trip_magnitude(resonator, lam_c)
            r_back = resonator.back_mirror(lam_c)
            e_s = cavity.cavity_emission(cavity.round_trip_phase(resonator, nu), rho, r_back)
            phi_i = cavity.round_trip_phase(resonator, idl)
            pm = np.abs(_phase_matching(resonator, phase_match, nu, idl)) ** 2
            actual = np.abs(cavity.cavity_emission(phi_i, rho, r_back)) ** 2
            aligned = np.abs(cavity.cavity_emission(phi_i - phase_i[chunk, None], rho, r_back)) ** 2
            w = pm * np.abs(e_s) ** 2
            ratio[chunk] = np.trapezoid(w * actual, axis=1) / np.trapezoid(w * aligned, axis=1)
        finite = local[np.isfinite(local)]
        if finite.size == 0:
            spacing = None
            message = "doubly_resonant: FSR_s == FSR_i, no clustering within range"
        else:
            spacing = float(finite.min())
            message = f"doubly_resonant: clusters every ~{spacing:.0f} modes at the far edge"
    return ClusterReport(config, lam_s, lam_i, ratio, detuning, local, spacing, message)


@dataclass(frozen=True)
class SpectralEnvelope:
    wavelength_nm: np.ndarray
    rate: np.ndarray
    signal_rate: np.ndarray
    idler_rate: np.ndarray
    mode_count: int

    def to_csv(self, path):
        with Path(path).open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["wavelength_nm", "rate", "signal_rate", "idler_rate"])
            for row in zip(self.wavelength_nm, self.rate, self.signal_rate, self.idler_rate):
                w.writerow([f"{row[0]:.6f}"] + [repr(float(v)) for v in row[1:]])


def filter_power(center_nm, fwhm_nm, frequency_hz, shape="gaussian"):
    """Power transmission of a bandpass filter specified in wavelength."""
    nu0 = float(_nm_to_hz(center_nm))
    width = c * fwhm_nm * 1e-9 / (center_nm * 1e-9) ** 2
    x = (np.asarray(frequency_hz, dtype=float) - nu0) / width
    if shape == "gaussian":
        return np.exp(-4 * np.log(2) * x**2)
    if shape == "rectangular":
        return (np.abs(x) <= 0.5).astype(float)
    raise ValueError(f"unknown filter shape {shape!r}")


def per_tooth_singles(resonator, phase_match, config, pump_nm, lo_nm, hi_nm):
    """
    Relative singles rates contributed by each signal tooth to the signal and
    idler detectors behind the back face.

    A photon inside the cavity splits between the two faces; only the back face
    is collected. A photon without a cavity leaves the chip with probability 1
    and is collected with the back-face transmission.
    """
    config = ResonanceConfig(config)
    teeth = signal_teeth(resonator, pump_nm, lo_nm, hi_nm)
    nu_p = float(_nm_to_hz(pump_nm))
    lam_s = _hz_to_nm(teeth)
    nodes, weights = _tooth_nodes(teeth, _tooth_window(resonator, config, teeth, lam_s))
    idl = nu_p - nodes
    pm = np.abs(_phase_matching(resonator, phase_match, nodes, idl)) ** 2
    s_back, i_back = pair_factors(resonator, config, nodes, idl, "back", "back")
    s_front, i_front = pair_factors(resonator, config, nodes, idl, "front", "front")
    s_back, i_back = np.abs(s_back) ** 2, np.abs(i_back) ** 2
    if config is ResonanceConfig.NON_RESONANT:
        s_all = i_all = 1.0
    elif config is ResonanceConfig.SINGLY_RESONANT_SIGNAL:
        s_all, i_all = s_back + np.abs(s_front) ** 2, 1.0
    else:
        s_all, i_all = s_back + np.abs(s_front) ** 2, i_back + np.abs(i_front) ** 2
    signal = np.sum(pm * s_back * i_all * weights, axis=1)
    idler = np.sum(pm * s_all * i_back * weights, axis=1)
    return teeth, nu_p - teeth, signal, idler


def spectral_envelope(
    resonator,
    phase_match,
    config,
    pump_nm,
    lo_nm,
    hi_nm,
    filter_fwhm_nm,
    step_nm=0.5,
    shape="gaussian",
) -> SpectralEnvelope:
    """Singles rate versus bandpass-filter center across [lo_nm, hi_nm]."""
    if filter_fwhm_nm <= 0:
        raise ValueError("filter FWHM must be positive")
    degenerate = 2 * pump_nm
    margin = 4 * filter_fwhm_nm
    partner_of_lo = 1 / (1 / pump_nm - 1 / max(lo_nm - margin, pump_nm * 1.01))
    sig_hi = min(max(hi_nm + margin, partner_of_lo), 1700.0)
    teeth_s, teeth_i, sig, idl = per_tooth_singles(
        resonator, phase_match, config, pump_nm, degenerate, sig_hi
    )
    centers = np.arange(lo_nm, hi_nm + step_nm / 2, step_nm)
    sig_part = np.array([np.sum(sig * filter_power(l, filter_fwhm_nm, teeth_s, shape)) for l in centers])
    idl_part = np.array([np.sum(idl * filter_power(l, filter_fwhm_nm, teeth_i, shape)) for l in centers])
    total = sig_part + idl_part
    scale = total.max() if total.size and total.max() > 0 else 1.0
    lam_s = _hz_to_nm(teeth_s)
    lam_i = _hz_to_nm(teeth_i)
    in_range = (lam_s >= lo_nm) & (lam_s <= hi_nm) & (lam_i >= lo_nm) & (lam_i <= hi_nm)
    return SpectralEnvelope(centers, total / scale, sig_part / scale, idl_part / scale, int(in_range.sum()))

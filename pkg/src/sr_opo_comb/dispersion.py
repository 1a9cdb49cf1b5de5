"""
Refractive index, group index and quasi-phase-matching of the poled waveguide.

The bulk index is the temperature-dependent extraordinary-index formula for
congruent lithium niobate of D. H. Jundt, Opt. Lett. 22, 1553 (1997), valid
0.4-5 um and 20-250 degC. The waveguide (Zn-doped core, tantalate clad) is not
bulk, so two small corrections sit on top of it:

    n_eff(lam) = n_bulk(lam, T) + phase_offset + index_slope_per_um * (lam - lam_ref)

Both corrections shift the group index n - lam dn/dlam by a constant
(``phase_offset`` and ``-index_slope_per_um * lam_ref`` respectively), but only
the slope survives in an energy-conserving phase mismatch. ``calibrate`` uses
that split: the slope sets first-order QPM of 1560 nm SHG at 50 degC, then the
offset sets the group index that gives a 3.5 GHz free spectral range for a
20 mm resonator. The group index is always derived from the phase index, so the
FSR and the spacing of the resonance comb agree.

Wavelengths are vacuum wavelengths in nm throughout.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np
from scipy.constants import c
from scipy.optimize import brentq

WAVELENGTH_MIN_NM = 700.0
WAVELENGTH_MAX_NM = 1700.0
TEMPERATURE_MIN_C = 20.0
TEMPERATURE_MAX_C = 80.0
REFERENCE_WAVELENGTH_NM = 1560.0
DERIVATIVE_REL_STEP = 1e-4

# Jundt (1997), congruent LiNbO3, extraordinary ray. lambda in um.
JUNDT_1997_EXTRAORDINARY = (
    5.35583, 0.100473, 0.20692, 100.0, 11.34927, 1.5334e-2,  # a1..a6
    4.629e-7, 3.862e-8, -0.89e-8, 2.657e-5,                  # b1..b4
)


class DispersionDomainError(ValueError):
    """Wavelength, temperature or energy-conservation precondition violated."""


class CalibrationError(RuntimeError):
    """No root of a calibration constraint inside the search bracket."""


@dataclass(frozen=True)
class IndexModel:
    sellmeier_coefficients: tuple[float, ...] = JUNDT_1997_EXTRAORDINARY
    temperature: float = 50.0  # degC
    phase_offset: float = 0.0
    index_slope_per_um: float = 0.0
    constant_index: float | None = None  # dispersionless toy model when set

    def __post_init__(self):
        if not TEMPERATURE_MIN_C <= self.temperature <= TEMPERATURE_MAX_C:
            raise DispersionDomainError(
                f"temperature {self.temperature} degC outside "
                f"[{TEMPERATURE_MIN_C}, {TEMPERATURE_MAX_C}]"
            )
        if self.constant_index is None and len(self.sellmeier_coefficients) != 10:
            raise ValueError("expected 10 Jundt-form Sellmeier coefficients")


@dataclass(frozen=True)
class PhaseMatchSpec:
    poling_period_um: float = 18.090
    crystal_length_mm: float = 20.0
    qpm_order: int = 1

    def __post_init__(self):
        if self.poling_period_um <= 0:
            raise ValueError(f"poling period must be positive, got {self.poling_period_um}")
        if self.crystal_length_mm <= 0:
            raise ValueError(f"crystal length must be positive, got {self.crystal_length_mm}")
        if self.qpm_order not in (1, 3, 5):
            raise ValueError(f"qpm_order must be 1, 3 or 5, got {self.qpm_order}")


def _check_wavelength(wavelength_nm, margin=0.0):
    lam = np.asarray(wavelength_nm, dtype=float)
    lo = WAVELENGTH_MIN_NM * (1 - margin)
    hi = WAVELENGTH_MAX_NM * (1 + margin)
    if not np.all(np.isfinite(lam)) or np.any(lam < lo) or np.any(lam > hi):
        raise DispersionDomainError(
            f"wavelength outside [{WAVELENGTH_MIN_NM}, {WAVELENGTH_MAX_NM}] nm"
        )
    return lam


def bulk_index(coefficients, wavelength_nm, temperature_c):
    """Jundt-form extraordinary index of congruent lithium niobate."""
    a1, a2, a3, a4, a5, a6, b1, b2, b3, b4 = coefficients
    lam2 = (np.asarray(wavelength_nm, dtype=float) * 1e-3) ** 2
    f = (temperature_c - 24.5) * (temperature_c + 570.82)
    n2 = (
        a1 + b1 * f
        + (a2 + b2 * f) / (lam2 - (a3 + b3 * f) ** 2)
        + (a4 + b4 * f) / (lam2 - a5**2)
        - a6 * lam2
    )
    return np.sqrt(n2)


def _phase_index(model: IndexModel, lam):
    if model.constant_index is not None:
        base = np.full_like(lam, model.constant_index, dtype=float)
    else:
        base = bulk_index(model.sellmeier_coefficients, lam, model.temperature)
    slope = model.index_slope_per_um * (lam - REFERENCE_WAVELENGTH_NM) * 1e-3
    return base + model.phase_offset + slope


def refractive_index(model: IndexModel, wavelength_nm):
    """Effective phase index n(lam, T). Accepts scalars or arrays."""
    lam = _check_wavelength(wavelength_nm)
    n = _phase_index(model, lam)
    return float(n) if n.ndim == 0 else n


def group_index(model: IndexModel, wavelength_nm):
    """n_g = n - lam dn/dlam, central difference with relative step 1e-4."""
    lam = _check_wavelength(wavelength_nm)
    h = lam * DERIVATIVE_REL_STEP
    dn = (_phase_index(model, lam + h) - _phase_index(model, lam - h)) / (2 * h)
    ng = _phase_index(model, lam) - lam * dn
    return float(ng) if ng.ndim == 0 else ng


def check_energy_conservation(pump_nm, signal_nm, idler_nm, rtol=1e-9):
    inv_p = 1.0 / np.asarray(pump_nm, dtype=float)
    inv_si = 1.0 / np.asarray(signal_nm, dtype=float) + 1.0 / np.asarray(idler_nm, dtype=float)
    if np.any(np.abs(inv_si - inv_p) > rtol * np.abs(inv_p)):
        raise DispersionDomainError(
            "wavelength triple violates energy conservation 1/lp = 1/ls + 1/li"
        )


def _mismatch(model, spec, lam_p, lam_s, lam_i):
    # rad/m; wavelengths in nm
    n_p = _phase_index(model, lam_p)
    n_s = _phase_index(model, lam_s)
    n_i = _phase_index(model, lam_i)
    per_nm = n_p / lam_p - n_s / lam_s - n_i / lam_i - spec.qpm_order / (spec.poling_period_um * 1e3)
    return 2 * np.pi * per_nm * 1e9


def qpm_mismatch(model: IndexModel, spec: PhaseMatchSpec, pump_nm, signal_nm, idler_nm):
    """Wavevector mismatch 2pi[n_p/lp - n_s/ls - n_i/li - m/Lambda] in rad/m."""
    lam_p = _check_wavelength(pump_nm)
    lam_s = _check_wavelength(signal_nm)
    lam_i = _check_wavelength(idler_nm)
    check_energy_conservation(lam_p, lam_s, lam_i)
    dk = _mismatch(model, spec, lam_p, lam_s, lam_i)
    return float(dk) if np.ndim(dk) == 0 else dk


def qpm_mismatch_from_frequencies(model, spec, signal_hz, idler_hz):
    """Mismatch for a pump at signal_hz + idler_hz; energy conservation holds by construction."""
    signal_hz = np.asarray(signal_hz, dtype=float)
    idler_hz = np.asarray(idler_hz, dtype=float)
    lam_s = _check_wavelength(c / signal_hz * 1e9)
    lam_i = _check_wavelength(c / idler_hz * 1e9)
    lam_p = _check_wavelength(c / (signal_hz + idler_hz) * 1e9)
    return _mismatch(model, spec, lam_p, lam_s, lam_i)


def phase_match_envelope(delta_k, length_m):
    """sinc(dk L/2) exp(i dk L/2) with sinc(x) = sin(x)/x."""
    if length_m <= 0:
        raise ValueError(f"length must be positive, got {length_m}")
    x = np.asarray(delta_k, dtype=float) * length_m / 2
    # np.sinc is the normalized sin(pi x)/(pi x)
    amp = np.sinc(x / np.pi) * np.exp(1j * x)
    return complex(amp) if amp.ndim == 0 else amp


def calibrate(
    model: IndexModel,
    spec: PhaseMatchSpec,
    resonator_length_mm: float = 20.0,
    fsr_hz: float = 3.5e9,
    fsr_wavelength_nm: float = 1580.0,
    qpm_pump_nm: float = 780.0,
    qpm_temperature_c: float = 50.0,
    bracket: float = 0.5,
) -> IndexModel:
    """
    Solve the index slope and phase offset so that the model satisfies

    * zero QPM mismatch for degenerate SHG at ``2 * qpm_pump_nm`` (type-0),
    * ``group_index(fsr_wavelength_nm) == c / (2 L fsr_hz)``.

    The offset never enters the mismatch, so the slope is solved first and the
    offset second, each by a bracketed 1-D root search.
    """
    model = replace(model, temperature=qpm_temperature_c)
    lam_s = 2 * qpm_pump_nm

    def qpm_residual(slope):
        trial = replace(model, index_slope_per_um=slope)
        return _mismatch(trial, spec, qpm_pump_nm, lam_s, lam_s) * 1e-3

    try:
        slope = brentq(qpm_residual, -bracket, bracket, xtol=1e-16, rtol=4 * np.finfo(float).eps)
    except ValueError as exc:
        raise CalibrationError(f"QPM constraint has no root in +/-{bracket} per um") from exc
    model = replace(model, index_slope_per_um=slope)

    target = c / (2 * resonator_length_mm * 1e-3 * fsr_hz)

    def group_residual(offset):
        return group_index(replace(model, phase_offset=offset), fsr_wavelength_nm) - target

    try:
        offset = brentq(group_residual, -bracket, bracket, xtol=1e-16, rtol=4 * np.finfo(float).eps)
    except ValueError as exc:
        raise CalibrationError(f"group-index target {target:.6f} has no root in +/-{bracket}") from exc
    return replace(model, phase_offset=offset)

"""
Fabry-Perot response of the monolithic waveguide resonator.

The end faces of the poled waveguide are the cavity mirrors. A round trip
multiplies the intracavity field by

    rho * exp(i phi),   rho = sqrt(R_front R_back) (1 - loss_per_pass),
                        phi = 4 pi n(lam) L / lam

Frequencies are in Hz (not rad/s) and wavelengths in nm.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np
from scipy.constants import c

from .dispersion import IndexModel, _check_wavelength, _phase_index, group_index

PORTS = ("front", "back")


class MirrorRangeError(ValueError):
    """Reflectance queried outside the tabulated wavelength range."""


class FinesseError(ValueError):
    """Finesse undefined (no feedback) or divergent (no loss)."""


@dataclass(frozen=True)
class MirrorSpectrum:
    """Tabulated power reflectance, linearly interpolated, never extrapolated."""

    wavelengths_nm: np.ndarray
    reflectances: np.ndarray

    def __post_init__(self):
        lam = np.asarray(self.wavelengths_nm, dtype=float)
        r = np.asarray(self.reflectances, dtype=float)
        if lam.ndim != 1 or lam.shape != r.shape or lam.size < 2:
            raise ValueError("need matching 1-D wavelength and reflectance arrays (>= 2 samples)")
        if np.any(np.diff(lam) <= 0):
            raise ValueError("mirror wavelengths must be strictly increasing")
        if np.any(r < 0) or np.any(r > 1):
            raise ValueError("reflectances must lie in [0, 1]")
        object.__setattr__(self, "wavelengths_nm", lam)
        object.__setattr__(self, "reflectances", r)

    @classmethod
    def flat(cls, reflectance, lo_nm=700.0, hi_nm=1700.0):
        return cls(np.array([lo_nm, hi_nm]), np.array([reflectance, reflectance]))

    @classmethod
    def from_csv(cls, path):
        path = Path(path)
        if not path.is_file():
            raise FileNotFoundError(f"mirror table not found: {path}")
        with path.open(newline="") as fh:
            reader = csv.DictReader(fh)
            if reader.fieldnames is None or not {"wavelength_nm", "reflectance"} <= set(reader.fieldnames):
                raise ValueError(f"{path}: header must contain wavelength_nm,reflectance")
            rows = [(float(r["wavelength_nm"]), float(r["reflectance"])) for r in reader]
        lam, refl = zip(*rows) if rows else ((), ())
        return cls(np.array(lam), np.array(refl))

    def to_csv(self, path):
        with Path(path).open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["wavelength_nm", "reflectance"])
            for lam, r in zip(self.wavelengths_nm, self.reflectances):
                w.writerow([f"{lam:.6f}", f"{r:.10f}"])

    def __call__(self, wavelength_nm):
        lam = np.asarray(wavelength_nm, dtype=float)
        if np.any(lam < self.wavelengths_nm[0]) or np.any(lam > self.wavelengths_nm[-1]):
            raise MirrorRangeError(
                f"wavelength outside mirror table [{self.wavelengths_nm[0]}, {self.wavelengths_nm[-1]}] nm"
            )
        r = np.interp(lam, self.wavelengths_nm, self.reflectances)
        return float(r) if r.ndim == 0 else r


@dataclass(frozen=True)
class ResonatorSpec:
    length_mm: float
    index_model: IndexModel
    front_mirror: MirrorSpectrum
    back_mirror: MirrorSpectrum
    internal_loss_per_pass: float = 0.005

    def __post_init__(self):
        if self.length_mm <= 0:
            raise ValueError(f"length must be positive, got {self.length_mm}")
        if not 0 <= self.internal_loss_per_pass < 1:
            raise ValueError(f"internal loss must lie in [0, 1), got {self.internal_loss_per_pass}")

    @property
    def length_m(self):
        return self.length_mm * 1e-3

    def mirror(self, port):
        if port not in PORTS:
            raise ValueError(f"port must be one of {PORTS}, got {port!r}")
        return self.front_mirror if port == "front" else self.back_mirror


def _wavelength_of(frequency_hz):
    return c / np.asarray(frequency_hz, dtype=float) * 1e9


def _scalar(x):
    return np.asarray(x).item() if np.ndim(x) == 0 else x


def fsr(spec: ResonatorSpec, wavelength_nm):
    """Free spectral range c / (2 n_g L) in Hz."""
    return c / (2 * group_index(spec.index_model, wavelength_nm) * spec.length_m)


def round_trip_magnitude(spec: ResonatorSpec, wavelength_nm):
    lam = np.asarray(wavelength_nm, dtype=float)
    r = np.sqrt(spec.front_mirror(lam) * spec.back_mirror(lam))
    return r * (1 - spec.internal_loss_per_pass)


def round_trip_phase(spec: ResonatorSpec, frequency_hz):
    """phi = 4 pi n L / lam, evaluated at optical frequency in Hz."""
    nu = np.asarray(frequency_hz, dtype=float)
    lam = _check_wavelength(_wavelength_of(nu))
    return 4 * np.pi * _phase_index(spec.index_model, lam) * spec.length_m * nu / c


def round_trip_amplitude(spec: ResonatorSpec, wavelength_nm):
    lam = _check_wavelength(wavelength_nm)
    amp = round_trip_magnitude(spec, lam) * np.exp(1j * round_trip_phase(spec, c / (lam * 1e-9)))
    return _scalar(amp)


def finesse_from_rho(rho):
    rho = np.asarray(rho, dtype=float)
    if np.any(rho <= 0):
        raise FinesseError("finesse undefined for zero round-trip feedback")
    if np.any(rho >= 1):
        raise FinesseError("finesse diverges for a lossless round trip (rho >= 1)")
    return _scalar(np.pi * np.sqrt(rho) / (1 - rho))


def rho_from_finesse(finesse_value):
    """Inverse of pi sqrt(rho) / (1 - rho) on (0, 1)."""
    f = float(finesse_value)
    if f <= 0:
        raise FinesseError(f"finesse must be positive, got {f}")
    x = (-np.pi + np.sqrt(np.pi**2 + 4 * f * f)) / (2 * f)
    return x * x


def finesse(spec: ResonatorSpec, wavelength_nm):
    return finesse_from_rho(round_trip_magnitude(spec, _check_wavelength(wavelength_nm)))


def linewidth(spec: ResonatorSpec, wavelength_nm):
    """Resonance FWHM fsr / finesse in Hz."""
    return fsr(spec, wavelength_nm) / finesse(spec, wavelength_nm)


def quality_factor(spec: ResonatorSpec, wavelength_nm):
    lam = np.asarray(wavelength_nm, dtype=float)
    return _scalar(c / (lam * 1e-9) / linewidth(spec, lam))


def transmission_amplitude(spec: ResonatorSpec, frequency_hz):
    """Field transmission t1 t2 exp(i phi/2) / (1 - rho exp(i phi)); |t|^2 is the Airy function."""
    lam = _wavelength_of(frequency_hz)
    t1 = np.sqrt(1 - spec.front_mirror(lam))
    t2 = np.sqrt(1 - spec.back_mirror(lam))
    phi = round_trip_phase(spec, frequency_hz)
    rho = round_trip_magnitude(spec, lam)
    return _scalar(t1 * t2 * np.exp(0.5j * phi) / (1 - rho * np.exp(1j * phi)))


def cavity_emission(phase, rho, port_reflectance):
    """sqrt(1 - R_port) / (1 - rho exp(i phase)) for explicit round-trip parameters."""
    return np.sqrt(1 - port_reflectance) / (1 - rho * np.exp(1j * phase))


def emission_amplitude(spec: ResonatorSpec, frequency_hz, port="back"):
    """Amplitude with which a photon generated inside the cavity leaves through ``port``."""
    mirror = spec.mirror(port)
    lam = _wavelength_of(frequency_hz)
    amp = cavity_emission(round_trip_phase(spec, frequency_hz), round_trip_magnitude(spec, lam), mirror(lam))
    return _scalar(amp)


def port_split(spec: ResonatorSpec, wavelength_nm, port="back"):
    """Fraction of cavity photons leaving through ``port``: T_port / (T_front + T_back)."""
    lam = np.asarray(wavelength_nm, dtype=float)
    t_front = 1 - spec.front_mirror(lam)
    t_back = 1 - spec.back_mirror(lam)
    return _scalar((t_front if port == "front" else t_back) / (t_front + t_back))


def resonance_frequencies(spec: ResonatorSpec, lo_nm, hi_nm, tol_hz=1e3):
    """
    All frequencies in the wavelength interval where phi = 0 mod 2 pi, ascending.

    Brackets on a grid of fsr/20 and refines each bracket by bisection to ``tol_hz``.
    """
    lo_nm, hi_nm = float(lo_nm), float(hi_nm)
    if hi_nm <= lo_nm:
        return np.empty(0)
    _check_wavelength([lo_nm, hi_nm])
    nu_lo, nu_hi = c / (hi_nm * 1e-9), c / (lo_nm * 1e-9)
    step = min(fsr(spec, lo_nm), fsr(spec, hi_nm)) / 20
    grid = np.linspace(nu_lo, nu_hi, max(int(np.ceil((nu_hi - nu_lo) / step)) + 1, 2))
    order = round_trip_phase(spec, grid) / (2 * np.pi)
    if np.any(np.diff(order) <= 0):
        raise ValueError("round-trip phase is not monotone in frequency on this range")
    orders = np.arange(np.ceil(order[0]), np.floor(order[-1]) + 1)
    if orders.size == 0:
        return np.empty(0)
    idx = np.clip(np.searchsorted(order, orders), 1, grid.size - 1)
    left, right = grid[idx - 1], grid[idx]
    while np.max(right - left) > tol_hz:
        mid = 0.5 * (left + right)
        below = round_trip_phase(spec, mid) / (2 * np.pi) < orders
        left = np.where(below, mid, left)
        right = np.where(below, right, mid)
    return 0.5 * (left + right)


def calibrate_mirrors(
    spec: ResonatorSpec,
    finesse_targets: dict[float, float],
    shape_nodes: dict[float, float] | None = None,
    lo_nm=700.0,
    hi_nm=1700.0,
) -> ResonatorSpec:
    """
    Equal front/back reflectance tables that hit ``finesse_targets`` exactly at
    their wavelengths, given the resonator's internal loss.

    ``shape_nodes`` adds fixed-reflectance samples (coating shape away from the
    calibration points). The reflectance is held flat beyond the outermost nodes.
    """
    nodes = dict(shape_nodes or {})
    keep = 1 - spec.internal_loss_per_pass
    for lam, f in finesse_targets.items():
        r = rho_from_finesse(f) / keep
        if not 0 < r < 1:
            raise FinesseError(f"finesse {f} at {lam} nm not reachable with loss {spec.internal_loss_per_pass}")
        nodes[float(lam)] = r
    lam = np.array(sorted(nodes))
    refl = np.array([nodes[k] for k in lam])
    if lam[0] > lo_nm:
        lam, refl = np.r_[lo_nm, lam], np.r_[refl[0], refl]
    if lam[-1] < hi_nm:
        lam, refl = np.r_[lam, hi_nm], np.r_[refl, refl[-1]]
    table = MirrorSpectrum(lam, refl)
    return replace(spec, front_mirror=table, back_mirror=table)

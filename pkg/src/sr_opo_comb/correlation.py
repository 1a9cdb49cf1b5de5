"""
Start-stop coincidence densities from joint spectra.

The two-photon temporal amplitude is the Fourier transform of the filtered
joint spectrum,

    psi(tau) = int f(nu) T_s(nu_s) T_i(nu_i) exp(-2 pi i nu tau) dnu,

with tau = t_signal - t_idler (idler starts the TDC, signal stops it). A
photon stored in a cavity leaves late, so a signal-resonant source fills
tau >= 0. The density is |psi|^2 per ps, normalized so that its integral equals
the filtered spectral mass.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.constants import c
from scipy.ndimage import gaussian_filter1d

from .analysis import FitError, FitResult, exponential_envelope_fit, peak_pick
from .biphoton import JointSpectrum, filter_power

FWHM_PER_SIGMA = 2 * np.sqrt(2 * np.log(2))
CHANNELS = ("idler", "signal")


class EmptyOverlapError(ValueError):
    """The filters pass nothing of the joint spectrum."""


class InsufficientFringesError(ValueError):
    pass


@dataclass(frozen=True)
class BandpassFilter:
    center_nm: float
    fwhm_nm: float
    shape: str = "gaussian"

    def __post_init__(self):
        if self.fwhm_nm <= 0:
            raise ValueError(f"filter FWHM must be positive, got {self.fwhm_nm}")
        if self.shape not in ("gaussian", "rectangular"):
            raise ValueError(f"unknown filter shape {self.shape!r}")

    @property
    def fwhm_hz(self):
        return c * self.fwhm_nm * 1e-9 / (self.center_nm * 1e-9) ** 2

    def amplitude(self, frequency_hz):
        return np.sqrt(filter_power(self.center_nm, self.fwhm_nm, frequency_hz, self.shape))


@dataclass(frozen=True)
class CorrelationFunction:
    delays_ps: np.ndarray
    density: np.ndarray
    metadata: dict = field(default_factory=dict)

    @property
    def step_ps(self):
        return float(self.delays_ps[1] - self.delays_ps[0])

    def integral(self):
        return float(np.sum(self.density) * self.step_ps)

    def mirrored(self):
        """Exchange start and stop channels: G(tau) -> G(-tau) on a symmetric grid."""
        if not np.allclose(self.delays_ps, -self.delays_ps[::-1], rtol=0, atol=1e-9 * self.step_ps):
            raise ValueError("delay grid is not symmetric about zero")
        meta = dict(self.metadata)
        meta["start_channel"] = "signal" if meta.get("start_channel", "idler") == "idler" else "idler"
        return CorrelationFunction(self.delays_ps, self.density[::-1].copy(), meta)

    def window(self, lo_ps, hi_ps):
        sel = (self.delays_ps >= lo_ps) & (self.delays_ps <= hi_ps)
        return CorrelationFunction(self.delays_ps[sel], self.density[sel], dict(self.metadata))

    def to_csv(self, path):
        with Path(path).open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["tau_ps", "density"])
            for t, g in zip(self.delays_ps, self.density):
                w.writerow([f"{t:.6f}", repr(float(g))])


def filtered_spectrum(js: JointSpectrum, signal_filter: BandpassFilter, idler_filter: BandpassFilter):
    g = js.amplitude * signal_filter.amplitude(js.signal_hz) * idler_filter.amplitude(js.idler_hz)
    if not np.any(np.abs(g) > 0):
        raise EmptyOverlapError("filters do not overlap the joint spectrum grid")
    return g


def _transform(g, step_hz, start_channel):
    n = g.size
    spectrum = np.fft.ifftshift(g)
    if start_channel == "idler":
        psi = np.fft.fftshift(np.fft.fft(spectrum)) * step_hz
    elif start_channel == "signal":
        psi = np.fft.fftshift(np.fft.ifft(spectrum)) * (step_hz * n)
    else:
        raise ValueError(f"start channel must be one of {CHANNELS}, got {start_channel!r}")
    dt_ps = 1e12 / (n * step_hz)
    delays = (np.arange(n) - n // 2) * dt_ps
    # drop the unpaired -N/2 sample so the grid is symmetric about zero
    return delays[1:], (np.abs(psi[1:]) ** 2) * 1e-12


def g2_from_spectrum(
    js: JointSpectrum,
    signal_filter: BandpassFilter,
    idler_filter: BandpassFilter,
    start_channel="idler",
    fsr_hz=None,
) -> CorrelationFunction:
    """Coincidence density versus start-stop delay for the filtered biphoton."""
    g = filtered_spectrum(js, signal_filter, idler_filter)
    delays, density = _transform(g, js.step_hz, start_channel)
    meta = {
        "config": js.config.value,
        "signal_filter": vars(signal_filter).copy(),
        "idler_filter": vars(idler_filter).copy(),
        "start_channel": start_channel,
        "jitter_sigma_ps": 0.0,
        "spectral_mass": float(np.sum(np.abs(g) ** 2) * js.step_hz),
    }
    if fsr_hz is not None:
        meta["fsr_hz"] = float(fsr_hz)
    return CorrelationFunction(delays, density, meta)


def heralded_waveform(
    js: JointSpectrum,
    signal_filter: BandpassFilter,
    idler_filter: BandpassFilter,
    start_channel="idler",
    fsr_hz=None,
) -> CorrelationFunction:
    """
    Waveform of the photon heralded by ``start_channel``. Intended for
    single-tooth filters; with ``fsr_hz`` given, filters wider than 2 FSR are
    rejected.
    """
    if fsr_hz is not None:
        for flt in (signal_filter, idler_filter):
            if flt.fwhm_hz > 2 * fsr_hz:
                raise ValueError(
                    f"filter at {flt.center_nm} nm passes {flt.fwhm_hz / fsr_hz:.1f} FSR; "
                    "heralded waveforms need single-tooth filters"
                )
    return g2_from_spectrum(js, signal_filter, idler_filter, start_channel, fsr_hz)


def per_detector_sigma(jitter_fwhm_ps):
    return jitter_fwhm_ps / FWHM_PER_SIGMA


def combined_jitter_sigma(*fwhm_ps):
    """Quadrature sum of per-detector Gaussian sigmas."""
    return float(np.sqrt(sum(per_detector_sigma(f) ** 2 for f in fwhm_ps)))


def apply_jitter(cf: CorrelationFunction, sigma_ps: float) -> CorrelationFunction:
    """Convolve with a unit-area Gaussian of standard deviation ``sigma_ps``."""
    if sigma_ps < 0:
        raise ValueError("jitter sigma must be non-negative")
    meta = dict(cf.metadata)
    meta["jitter_sigma_ps"] = float(np.hypot(meta.get("jitter_sigma_ps", 0.0), sigma_ps))
    # below a millionth of a bin the kernel is a delta (and scipy divides by sigma)
    if sigma_ps < 1e-6 * cf.step_ps:
        return CorrelationFunction(cf.delays_ps, cf.density.copy(), meta)
    smoothed = gaussian_filter1d(cf.density, sigma_ps / cf.step_ps, mode="wrap", truncate=8.0)
    return CorrelationFunction(cf.delays_ps, np.clip(smoothed, 0, None), meta)


def _min_separation_ps(cf, fsr_hz):
    fsr_hz = fsr_hz if fsr_hz is not None else cf.metadata.get("fsr_hz")
    if fsr_hz is None:
        raise ValueError("beat analysis needs the cavity FSR (argument or metadata)")
    return 0.4e12 / fsr_hz


def fringe_peaks(cf: CorrelationFunction, fsr_hz=None, prominence_fraction=0.1):
    return peak_pick(cf.density, prominence_fraction, _min_separation_ps(cf, fsr_hz), x=cf.delays_ps)


def beat_period(cf: CorrelationFunction, fsr_hz=None) -> float:
    """Mean spacing (ps) of fringe maxima."""
    peaks = fringe_peaks(cf, fsr_hz)
    if peaks.size < 3:
        raise InsufficientFringesError(f"found {peaks.size} fringe peaks, need at least 3")
    return float(np.mean(np.diff(peaks)))


def fringe_minima(cf: CorrelationFunction, fsr_hz=None):
    """Lowest density between each pair of adjacent fringe maxima."""
    peaks = fringe_peaks(cf, fsr_hz)
    idx = np.searchsorted(cf.delays_ps, peaks)
    return np.array([cf.density[a:b + 1].min() for a, b in zip(idx[:-1], idx[1:])])


def fringe_visibility(cf: CorrelationFunction, period_ps: float) -> float:
    """(max - min) / (max + min) over one period following the global maximum."""
    k = int(np.argmax(cf.density))
    t0 = cf.delays_ps[k]
    sel = (cf.delays_ps >= t0) & (cf.delays_ps <= t0 + period_ps)
    hi, lo = cf.density[sel].max(), cf.density[sel].min()
    return float((hi - lo) / (hi + lo))


def envelope_fit(cf: CorrelationFunction, side="decaying", fsr_hz=None) -> FitResult:
    """
    Fit A exp(-gamma (t - tau0)/2) + d to the envelope on one side of the
    maximum (tau0 = delay of maximum density). ``side='rising'`` fits the
    time-mirrored curve. Fringe maxima are the envelope points when at least
    10 are resolved; otherwise all bins above 3x the noise floor (median of
    the opposite side, or of the last tenth when there is none) are used.
    gamma is returned in rad/s.
    """
    if side not in ("decaying", "rising"):
        raise ValueError("side must be 'decaying' or 'rising'")
    t = cf.delays_ps if side == "decaying" else -cf.delays_ps[::-1]
    y = cf.density if side == "decaying" else cf.density[::-1]
    k = int(np.argmax(y))
    tau0 = float(t[k])
    after = t >= tau0
    if np.any(~after):
        floor = float(np.median(y[~after]))
    else:
        tail = y[after]
        floor = float(np.median(tail[-max(1, tail.size // 10):]))

    pts_t = pts_y = None
    sep_fsr = fsr_hz if fsr_hz is not None else cf.metadata.get("fsr_hz")
    if sep_fsr is not None:
        peaks = peak_pick(y[after], 0.1, 0.4e12 / sep_fsr, x=t[after])
        if peaks.size >= 10:
            idx = np.searchsorted(t, peaks)
            pts_t, pts_y = t[idx], y[idx]
    if pts_t is None:
        sel = after & (y > 3 * floor)
        if np.count_nonzero(sel) < 50:
            raise FitError("fewer than 10 fringe peaks and fewer than 50 bins above noise")
        pts_t, pts_y = t[sel], y[sel]
    fit = exponential_envelope_fit(pts_t - tau0, pts_y)
    gamma = fit.parameters["gamma"] * 1e12
    return FitResult(
        parameters={"A": fit["A"], "gamma": gamma, "tau0_ps": tau0 if side == "decaying" else -tau0, "d": fit["d"]},
        uncertainties={"A": fit.uncertainties["A"], "gamma": fit.uncertainties["gamma"] * 1e12,
                       "tau0_ps": 0.0, "d": fit.uncertainties["d"]},
        residual_norm=fit.residual_norm,
        converged=fit.converged,
        iterations=fit.iterations,
        extra={"gamma_over_2pi_hz": gamma / (2 * np.pi), "side": side, "points": int(pts_t.size)},
    )


def fit_record(fit: FitResult) -> str:
    """JSON record {A, gamma_hz, tau0_ps, d, residual} with gamma_hz = gamma / 2 pi."""
    return json.dumps({
        "A": fit["A"],
        "gamma_hz": fit.extra["gamma_over_2pi_hz"],
        "gamma_rad_per_s": fit["gamma"],
        "tau0_ps": fit["tau0_ps"],
        "d": fit["d"],
        "residual": fit.residual_norm,
    }, indent=2)

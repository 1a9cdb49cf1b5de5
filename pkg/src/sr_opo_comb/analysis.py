"""
Parameter extraction: Lorentzian resonance fits, exponential envelopes,
linear trends, FSR recovery and fringe peak picking.

Nonlinear fits use Levenberg-Marquardt (MINPACK through
``scipy.optimize.least_squares``) with analytic Jacobians. Every fit is done
in rescaled coordinates so that the optimizer sees O(1) numbers; results are
mapped back to physical units before they are returned.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.optimize import least_squares
from scipy.signal import find_peaks, peak_prominences

MAX_ITERATIONS = 200
XTOL = 1e-8
FTOL = 1e-10


class FitError(RuntimeError):
    """Optimizer did not converge within the iteration cap."""

    def __init__(self, message, residual_norm=float("nan")):
        super().__init__(f"{message} (residual norm {residual_norm:.4g})")
        self.residual_norm = residual_norm


class NoPeakError(ValueError):
    pass


@dataclass(frozen=True)
class ScanTrace:
    """Transmitted power versus laser frequency offset (Hz)."""

    frequency_hz: np.ndarray
    power: np.ndarray

    def __post_init__(self):
        f = np.asarray(self.frequency_hz, dtype=float)
        p = np.asarray(self.power, dtype=float)
        if f.ndim != 1 or f.shape != p.shape:
            raise ValueError("frequency and power must be 1-D arrays of equal length")
        if np.any(np.diff(f) <= 0):
            raise ValueError("frequency offsets must be strictly increasing")
        object.__setattr__(self, "frequency_hz", f)
        object.__setattr__(self, "power", p)


@dataclass
class FitResult:
    parameters: dict[str, float]
    uncertainties: dict[str, float]
    residual_norm: float
    converged: bool
    iterations: int
    extra: dict = field(default_factory=dict)

    def __getitem__(self, name):
        return self.parameters[name]

    def to_json(self, **kwargs):
        return json.dumps(asdict(self), **kwargs)


def lorentzian(f, amplitude, center, fwhm, offset):
    """A / ((f - f0)^2 + (gamma/2)^2) + d."""
    return amplitude / ((f - center) ** 2 + (fwhm / 2) ** 2) + offset


def _lorentzian_jac(p, u):
    a, u0, g, _ = p
    q = (u - u0) ** 2 + (g / 2) ** 2
    return np.column_stack([1 / q, 2 * a * (u - u0) / q**2, -a * g / (2 * q**2), np.ones_like(u)])


def _exp_model(p, t):
    a, g, d = p
    return a * np.exp(-g * t / 2) + d


def _exp_jac(p, t):
    a, g, _ = p
    e = np.exp(-g * t / 2)
    return np.column_stack([e, -a * t * e / 2, np.ones_like(t)])


def _levenberg_marquardt(model, jac, p0, x, y):
    """Returns (params, 1-sigma errors, residual norm, iterations)."""
    res = least_squares(
        lambda p: model(p, x) - y,
        p0,
        jac=lambda p: jac(p, x),
        method="lm",
        xtol=XTOL,
        ftol=FTOL,
        gtol=np.finfo(float).eps,
        max_nfev=MAX_ITERATIONS,
    )
    norm = float(np.linalg.norm(res.fun))
    if res.status <= 0:
        raise FitError(f"no convergence in {MAX_ITERATIONS} iterations: {res.message}", norm)
    dof = max(y.size - p0.size, 1)
    jtj = res.jac.T @ res.jac
    try:
        cov = np.linalg.inv(jtj) * (norm**2 / dof)
        err = np.sqrt(np.clip(np.diag(cov), 0, None))
    except np.linalg.LinAlgError:
        err = np.full(p0.size, np.inf)
    return res.x, err, norm, int(res.nfev)


def _half_prominence_width(x, y, peak, base):
    half = base + (y[peak] - base) / 2
    lo = peak
    while lo > 0 and y[lo - 1] > half:
        lo -= 1
    hi = peak
    while hi < y.size - 1 and y[hi + 1] > half:
        hi += 1
    return max(x[hi] - x[lo], x[1] - x[0])


def lorentzian_fit(trace: ScanTrace, initial: dict | None = None) -> FitResult:
    """Fit A((f-f0)^2 + (gamma_f/2)^2)^-1 + d to one resonance of a scan trace."""
    f, y = trace.frequency_hz, trace.power
    base = float(np.median(y))
    peak = int(np.argmax(y))
    prominence = y[peak] - base
    scale_y = float(np.max(np.abs(y))) or 1.0
    if prominence <= 1e-9 * scale_y:
        raise NoPeakError("trace has no peak above its background")
    if np.count_nonzero(y > base + 0.1 * prominence) < 10:
        raise NoPeakError("peak spans fewer than 10 samples above background")

    if initial is None:
        gamma0 = _half_prominence_width(f, y, peak, base)
        initial = {"A": prominence * (gamma0 / 2) ** 2, "f0": f[peak], "gamma_f": gamma0, "d": base}
    scale_f = abs(initial["gamma_f"])
    f_ref = initial["f0"]
    u = (f - f_ref) / scale_f
    p0 = np.array([
        initial["A"] / (scale_y * scale_f**2),
        0.0,
        initial["gamma_f"] / scale_f,
        initial["d"] / scale_y,
    ])
    p, err, norm, nit = _levenberg_marquardt(
        lambda q, x: lorentzian(x, *q), _lorentzian_jac, p0, u, y / scale_y
    )
    conv = np.array([scale_y * scale_f**2, scale_f, scale_f, scale_y])
    values = p * conv
    values[1] += f_ref
    values[2] = abs(values[2])
    names = ("A", "f0", "gamma_f", "d")
    return FitResult(
        parameters=dict(zip(names, map(float, values))),
        uncertainties=dict(zip(names, map(float, err * conv))),
        residual_norm=norm * scale_y,
        converged=True,
        iterations=nit,
    )


def exponential_envelope_fit(t, y, initial_rate=None) -> FitResult:
    """
    Fit y = A exp(-gamma t / 2) + d for t >= 0 (t in any time unit; gamma in
    its inverse). A one-sided exponential; callers shift and mirror t.
    """
    t = np.asarray(t, dtype=float)
    y = np.asarray(y, dtype=float)
    if t.size < 4:
        raise FitError("need at least 4 envelope points")
    scale_y = float(np.max(np.abs(y))) or 1.0
    scale_t = float(np.max(t) - np.min(t)) or 1.0
    ys, ts = y / scale_y, t / scale_t
    if initial_rate is None:
        # log-linear guess from the points above the tail level
        tail = np.min(ys)
        sel = ys - tail > 0.05 * (np.max(ys) - tail)
        if np.count_nonzero(sel) >= 2:
            slope = np.polyfit(ts[sel], np.log(ys[sel] - tail + 1e-12), 1)[0]
            g0 = max(-2 * slope, 1e-3)
        else:
            g0 = 1.0
    else:
        g0 = initial_rate * scale_t
    p0 = np.array([np.max(ys) - np.min(ys), g0, np.min(ys)])
    p, err, norm, nit = _levenberg_marquardt(_exp_model, _exp_jac, p0, ts, ys)
    conv = np.array([scale_y, 1 / scale_t, scale_y])
    names = ("A", "gamma", "d")
    return FitResult(
        parameters=dict(zip(names, map(float, p * conv))),
        uncertainties=dict(zip(names, map(float, err * conv))),
        residual_norm=norm * scale_y,
        converged=True,
        iterations=nit,
    )


def fsr_estimate(resonances_hz):
    """Mean adjacent spacing and its standard deviation."""
    r = np.sort(np.asarray(resonances_hz, dtype=float))
    if r.size < 2:
        raise ValueError("need at least two resonances to estimate the FSR")
    gaps = np.diff(r)
    return float(gaps.mean()), float(gaps.std(ddof=1)) if gaps.size > 1 else 0.0


def linear_fit(x, y, through_origin=False, sigma=None) -> FitResult:
    """
    Least-squares line, optionally forced through the origin. ``sigma``
    gives per-point standard errors for a weighted fit.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    need = 1 if through_origin else 2
    if x.size < need or x.shape != y.shape:
        raise ValueError(f"need at least {need} (x, y) pairs of equal length")
    if not through_origin and np.ptp(x) == 0:
        raise ValueError("degenerate x: all abscissae identical")
    if through_origin and not np.any(x):
        raise ValueError("degenerate x: all abscissae zero")
    w = np.ones_like(x) if sigma is None else 1 / np.asarray(sigma, dtype=float) ** 2
    design = x[:, None] if through_origin else np.column_stack([x, np.ones_like(x)])
    sw = np.sqrt(w)
    coef, *_ = np.linalg.lstsq(design * sw[:, None], y * sw, rcond=None)
    resid = y - design @ coef
    chi2 = float(np.sum(w * resid**2))
    dof = x.size - design.shape[1]
    cov = np.linalg.inv(design.T @ (design * w[:, None]))
    if sigma is None:
        cov = cov * (chi2 / dof if dof > 0 else 0.0)
    err = np.sqrt(np.diag(cov))
    ss_tot = float(np.sum(w * (y - (np.average(y, weights=w) if not through_origin else 0.0)) ** 2))
    names = ("slope",) if through_origin else ("slope", "intercept")
    return FitResult(
        parameters=dict(zip(names, map(float, coef))),
        uncertainties=dict(zip(names, map(float, err))),
        residual_norm=float(np.sqrt(np.sum(resid**2))),
        converged=True,
        iterations=1,
        extra={"r_squared": 1 - chi2 / ss_tot if ss_tot > 0 else 1.0, "chi2": chi2, "dof": dof},
    )


def peak_pick(series, prominence_fraction=0.1, min_separation=1, x=None):
    """
    Local maxima whose prominence is at least ``prominence_fraction`` of the
    series' peak-to-peak range, kept greedily by descending prominence with
    ``min_separation`` enforced (in units of ``x`` if given, else samples).
    Ties go to the earlier peak. Returns ascending positions.
    """
    y = np.asarray(series, dtype=float)
    if y.size == 0:
        return np.empty(0)
    pos = np.arange(y.size, dtype=float) if x is None else np.asarray(x, dtype=float)
    span = np.ptp(y)
    idx, _ = find_peaks(y)
    if idx.size == 0 or span == 0:
        return np.empty(0)
    prom = peak_prominences(y, idx)[0]
    keep = prom >= prominence_fraction * span
    idx, prom = idx[keep], prom[keep]
    chosen = []
    for k in np.argsort(-prom, kind="stable"):
        p = pos[idx[k]]
        if all(abs(p - q) >= min_separation for q in chosen):
            chosen.append(p)
    return np.sort(np.array(chosen))

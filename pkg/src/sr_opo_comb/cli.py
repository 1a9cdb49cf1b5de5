"""
Scenario runner: ``sr-opo-comb <scenario> --config <ini> --out <dir>``.

Each scenario computes everything first and then writes CSV curves plus a
JSON summary, each through a temp file and rename. Exit status is 0 on
success, 2 for usage errors and 1 when a module raises.
"""

from __future__ import annotations

import argparse
import io
import json
import os
import sys
import tempfile
from concurrent.futures import ThreadPoolExecutor
from dataclasses import replace
from pathlib import Path

import numpy as np
from scipy.constants import c

from . import analysis, biphoton, cavity, correlation, montecarlo
from .config import experiment_config, load_config
from .dispersion import group_index, qpm_mismatch

SCENARIOS = ("calibrate", "scan", "beats", "heralded_waveform", "heralded_g2", "rates", "spectrum", "cluster")


def _nm(nu_hz):
    return c / nu_hz * 1e9


def nearest_resonance(resonator, wavelength_nm, half_width_nm=0.05):
    res = cavity.resonance_frequencies(resonator, wavelength_nm - half_width_nm, wavelength_nm + half_width_nm)
    return float(res[np.argmin(np.abs(res - c / (wavelength_nm * 1e-9)))])


def derived_seed(seed, *tags):
    """Child seed for one run of a sweep, independent of evaluation order."""
    return int(np.random.SeedSequence([seed, *tags]).generate_state(1, np.uint64)[0])


def _csv(header, *columns, fmt=repr):
    buf = io.StringIO()
    buf.write(",".join(header) + "\n")
    for row in zip(*columns):
        buf.write(",".join(fmt(float(v)) for v in row) + "\n")
    return buf.getvalue()


def _json(data):
    return json.dumps(data, indent=2, sort_keys=True) + "\n"


def _map(fn, items, parallel):
    items = list(items)
    if parallel and len(items) > 1:
        with ThreadPoolExecutor(max_workers=min(len(items), os.cpu_count() or 1)) as pool:
            return list(pool.map(fn, items))
    return [fn(x) for x in items]


def _joint(sc, config, center_nm, pump_hz=None):
    run = sc["run"]
    span = run["grid_span_fsr"] * cavity.fsr(sc.resonator, center_nm)
    return biphoton.joint_amplitude(
        sc.resonator, sc.phase_match, config, sc["device"]["pump_nm"], center_nm,
        span_hz=span, points=run["grid_points"], pump_hz=pump_hz,
    )


def _jitter_sigma(sc):
    jit = sc.detector.jitter_fwhm_ps
    return correlation.combined_jitter_sigma(jit, jit)


def _tooth_pair(sc, signal_nm):
    nu_s = nearest_resonance(sc.resonator, signal_nm)
    nu_p = c / (sc["device"]["pump_nm"] * 1e-9)
    return _nm(nu_s), _nm(nu_p - nu_s)


def _fit_summary(fit):
    return {"A": fit["A"], "gamma_rad_per_s": fit["gamma"], "gamma_over_2pi_hz": fit.extra["gamma_over_2pi_hz"],
            "tau0_ps": fit["tau0_ps"], "d": fit["d"], "residual": fit.residual_norm}


def _window_rows(cf, half_ps):
    return np.abs(cf.delays_ps) <= half_ps


def run_calibrate(sc, args):
    res, model = sc.resonator, sc.resonator.index_model
    dev = sc["device"]
    lam_ng = dev["fsr_wavelength_nm"]
    pump = dev["qpm_pump_nm"]
    dk = qpm_mismatch(model, sc.phase_match, pump, 2 * pump, 2 * pump)
    table = {}
    for lam in sc["cavity"]["table_wavelengths_nm"]:
        table[f"{lam:g}"] = {
            "finesse": cavity.finesse(res, lam),
            "linewidth_hz": cavity.linewidth(res, lam),
            "quality_factor": cavity.quality_factor(res, lam),
            "fsr_hz": cavity.fsr(res, lam),
            "reflectance_front": res.front_mirror(lam),
            "reflectance_back": res.back_mirror(lam),
        }
    report = {
        "phase_offset": model.phase_offset,
        "index_slope_per_um": model.index_slope_per_um,
        "temperature_c": model.temperature,
        "group_index": group_index(model, lam_ng),
        "group_index_target": c / (2 * res.length_m * dev["fsr_ghz"] * 1e9),
        "fsr_hz": cavity.fsr(res, lam_ng),
        "qpm_delta_k_rad_per_m": dk,
        "qpm_delta_k_L": dk * sc.phase_match.crystal_length_mm * 1e-3,
        "table": table,
    }
    return {"calibrate_report.json": _json(report)}


def run_scan(sc, args):
    res, run = sc.resonator, sc["run"]
    out, summary = {}, {}
    for k, lam in enumerate(run["scan_wavelengths_nm"]):
        nu0 = nearest_resonance(res, lam)
        lw = cavity.linewidth(res, lam)
        half = min(3 * lw, 0.5 * cavity.fsr(res, lam))
        offset = np.linspace(-half, half, run["scan_points"])
        model = np.abs(cavity.transmission_amplitude(res, nu0 + offset)) ** 2
        rng = np.random.default_rng(derived_seed(run["seed"], 1, k))
        power = model + run["scan_noise_fraction"] * model.max() * rng.standard_normal(offset.size)
        fit = analysis.lorentzian_fit(analysis.ScanTrace(offset, power))
        out[f"scan_{lam:g}.csv"] = _csv(["frequency_offset_hz", "power", "model"], offset, power, model)
        summary[f"{lam:g}"] = {
            "resonance_hz": nu0,
            "gamma_f_fit_hz": fit["gamma_f"],
            "gamma_f_fit_err_hz": fit.uncertainties["gamma_f"],
            "gamma_f_model_hz": lw,
            "finesse_model": cavity.finesse(res, lam),
        }
    lam = run["scan_wavelengths_nm"][0]
    fsr_nm = lam**2 * 1e-9 * cavity.fsr(res, lam) / c
    reach = (run["fsr_scan_teeth"] / 2 + 2) * fsr_nm
    teeth = cavity.resonance_frequencies(res, lam - reach, lam + reach)
    centre = int(np.argmin(np.abs(teeth - c / (lam * 1e-9))))
    sel = teeth[max(0, centre - run["fsr_scan_teeth"] // 2):][: run["fsr_scan_teeth"] + 1]
    mean, std = analysis.fsr_estimate(sel)
    summary["fsr_estimate_hz"] = {"mean": mean, "std": std, "teeth": int(sel.size)}
    out["scan_summary.json"] = _json(summary)
    return out


def beat_case(sc, config, signal_nm, idler_nm, center_nm, pump_hz=None):
    """Ideal and jittered correlation for wide filters plus their analysis."""
    filt = sc["filters"]
    js = _joint(sc, config, center_nm, pump_hz)
    fsr = cavity.fsr(sc.resonator, signal_nm)
    sf = correlation.BandpassFilter(signal_nm, filt["wide_fwhm_nm"], filt["wide_shape"])
    idf = correlation.BandpassFilter(idler_nm, filt["wide_fwhm_nm"], filt["wide_shape"])
    cf = correlation.g2_from_spectrum(js, sf, idf, fsr_hz=fsr)
    cj = correlation.apply_jitter(cf, _jitter_sigma(sc))
    g = cf.density
    minima = correlation.fringe_minima(cj)
    summary = {
        "signal_nm": signal_nm,
        "idler_nm": idler_nm,
        "config": biphoton.ResonanceConfig(config).value,
        "fsr_hz": fsr,
        "beat_period_ps": correlation.beat_period(cf),
        "beat_period_jittered_ps": correlation.beat_period(cj),
        "expected_period_ps": 1e12 / fsr,
        "asymmetry": float(np.max(np.abs(g - g[::-1])) / g.max()),
        "first_minimum_over_max_jittered": float(minima[0] / cj.density.max()),
        "visibility": correlation.fringe_visibility(cf, 1e12 / fsr),
        "visibility_jittered": correlation.fringe_visibility(cj, 1e12 / fsr),
        "linewidth_hz": cavity.linewidth(sc.resonator, signal_nm),
    }
    if biphoton.ResonanceConfig(config) is not biphoton.ResonanceConfig.DOUBLY_RESONANT:
        # a symmetric waveform has no single-sided decay to fit
        summary["envelope"] = _fit_summary(correlation.envelope_fit(cf))
        summary["envelope_jittered"] = _fit_summary(correlation.envelope_fit(cj))
    return cf, cj, summary


def run_beats(sc, args):
    cases = []
    for lam in sc["filters"]["beat_signals_nm"]:
        ls, li = _tooth_pair(sc, lam)
        cases.append((f"{sc.variant.value}_{lam:g}", sc.variant, ls, li, ls, None))
    # degenerate pairs need the pump at twice a resonance
    nu_d = nearest_resonance(sc.resonator, sc["filters"]["degenerate_nm"])
    lam_d = _nm(nu_d)
    cases.append((f"doubly_resonant_{sc['filters']['degenerate_nm']:g}", "doubly_resonant", lam_d, lam_d, lam_d, 2 * nu_d))

    def one(case):
        label, config, ls, li, centre, pump_hz = case
        return label, beat_case(sc, config, ls, li, centre, pump_hz)

    out, summary = {}, {}
    half = sc["run"]["histogram_window_ns"] * 1e3 / 2
    for label, (cf, cj, s) in _map(one, cases, args.parallel):
        rows = _window_rows(cf, half)
        out[f"beats_{label}.csv"] = _csv(["tau_ps", "density", "density_jittered"],
                                          cf.delays_ps[rows], cf.density[rows], cj.density[rows])
        summary[label] = s
    out["beats_summary.json"] = _json(summary)
    return out


def heralded_pair(sc):
    """Single-tooth waveforms for idler and signal heralds."""
    filt = sc["filters"]
    ls, li = _tooth_pair(sc, filt["heralded_signal_nm"])
    js = _joint(sc, "singly_resonant_signal", ls)
    fsr = cavity.fsr(sc.resonator, ls)
    sf = correlation.BandpassFilter(ls, filt["narrow_fwhm_nm"], filt["narrow_shape"])
    idf = correlation.BandpassFilter(li, filt["narrow_fwhm_nm"], filt["narrow_shape"])
    by_idler = correlation.heralded_waveform(js, sf, idf, "idler", fsr)
    by_signal = correlation.heralded_waveform(js, sf, idf, "signal", fsr)
    return ls, li, fsr, by_idler, by_signal


def run_heralded_waveform(sc, args):
    ls, li, fsr, by_idler, by_signal = heralded_pair(sc)
    mirror = float(np.max(np.abs(by_signal.density - by_idler.mirrored().density)) / by_idler.density.max())
    fringes = int(correlation.fringe_peaks(by_idler).size)
    try:
        period = correlation.beat_period(by_idler)
    except correlation.InsufficientFringesError:
        period = None
    summary = {
        "signal_nm": ls,
        "idler_nm": li,
        "fsr_hz": fsr,
        "filter_shape": sc["filters"]["narrow_shape"],
        "fringe_peaks": fringes,
        "beat_period_ps": period,
        "mirror_max_difference": mirror,
        "decay_idler_herald": _fit_summary(correlation.envelope_fit(by_idler, "decaying")),
        "rise_signal_herald": _fit_summary(correlation.envelope_fit(by_signal, "rising")),
        "linewidth_hz": cavity.linewidth(sc.resonator, ls),
    }
    rows = _window_rows(by_idler, sc["run"]["histogram_window_ns"] * 1e3 / 2)
    return {
        "heralded_waveform.csv": _csv(["tau_ps", "idler_start", "signal_start"],
                                      by_idler.delays_ps[rows], by_idler.density[rows], by_signal.density[rows]),
        "heralded_waveform_summary.json": _json(summary),
    }


def source_correlation(sc):
    """Unjittered wide-filter correlation used as the Monte Carlo delay law."""
    ls, li = _tooth_pair(sc, sc["filters"]["heralded_signal_nm"])
    cf, _, _ = beat_case(sc, sc.variant, ls, li, ls)
    return cf


def run_heralded_g2(sc, args):
    run = sc["run"]
    cf = source_correlation(sc)
    det = replace(sc.detector, efficiency=run["g2_detector_efficiency"])
    window = run["coincidence_window_ns"]
    jobs = [(k, p, split) for k, p in enumerate(run["powers_mw"]) for split in ("idler", "signal")]

    def one(job):
        k, power, split = job
        cfg = experiment_config(
            sc, power, splitter_present=True, split_channel=split, duration_s=run["g2_duration_s"],
            signal_path_transmittance=run["g2_transmittance"], idler_path_transmittance=run["g2_transmittance"],
            rng_seed=derived_seed(run["seed"], 2, k, split == "signal"),
        )
        stream = montecarlo.sample_experiment(cfg, cf, montecarlo.default_detectors(cfg, det))
        herald = "signal" if split == "idler" else "idler"
        offset = run["signal_delay_ps"] * (1 if herald == "idler" else -1)
        return montecarlo.heralded_g2(stream, herald, f"{split}_a", f"{split}_b", window, offset)

    results = dict(zip(jobs, _map(one, jobs, args.parallel)))
    powers = np.array(run["powers_mw"])
    g_sig = [results[(k, p, "idler")] for k, p in enumerate(powers)]  # signal heralds, idler split
    g_idl = [results[(k, p, "signal")] for k, p in enumerate(powers)]
    summary = {"powers_mw": powers.tolist(), "window_ns": window}
    for name, est in (("signal_heralded", g_sig), ("idler_heralded", g_idl)):
        val = np.array([e.value for e in est])
        err = np.array([e.error for e in est])
        origin = analysis.linear_fit(powers, val, through_origin=True, sigma=err)
        free = analysis.linear_fit(powers, val, sigma=err)
        summary[name] = {
            "g2": val.tolist(), "error": err.tolist(), "counts": [e.counts for e in est],
            "slope_through_origin": origin["slope"], "slope_err": origin.uncertainties["slope"],
            "chi2_through_origin": origin.extra["chi2"], "dof": origin.extra["dof"],
            "intercept": free["intercept"], "intercept_err": free.uncertainties["intercept"],
        }
    diff = [abs(a.value - b.value) / np.hypot(a.error, b.error) for a, b in zip(g_sig, g_idl)]
    summary["heralds_z_score"] = diff
    csv_text = _csv(["power_mw", "g2_signal_heralded", "err_signal_heralded", "g2_idler_heralded", "err_idler_heralded"],
                    powers, [e.value for e in g_sig], [e.error for e in g_sig],
                    [e.value for e in g_idl], [e.error for e in g_idl])
    return {"heralded_g2.csv": csv_text, "heralded_g2_summary.json": _json(summary)}


def run_rates(sc, args):
    run = sc["run"]
    cf = source_correlation(sc)
    powers = np.array(run["powers_mw"])
    delay = run["signal_delay_ps"]

    def one(item):
        k, power = item
        cfg = experiment_config(sc, power, rng_seed=derived_seed(run["seed"], 3, k))
        stream = montecarlo.sample_experiment(cfg, cf, montecarlo.default_detectors(cfg, sc.detector))
        t = cfg.duration_s
        hist = montecarlo.tdc_histogram(stream, "idler", "signal", cfg.tdc_bin_ps, cfg.histogram_window_ns,
                                        delay - cfg.histogram_window_ns * 1e3 / 2)
        return {
            "signal_cps": stream.total("signal") / t,
            "idler_cps": stream.total("idler") / t,
            "coincidence_cps": montecarlo.coincidences(stream, "idler", "signal", run["coincidence_window_ns"], delay) / t,
            "ratio": montecarlo.singles_ratio(stream),
            "eta_idler": montecarlo.channel_efficiency(stream, "signal", "idler", run["efficiency_window_ns"], -delay),
            "eta_signal": montecarlo.channel_efficiency(stream, "idler", "signal", run["efficiency_window_ns"], delay),
            "histogram": hist,
        }

    rows = _map(one, enumerate(powers), args.parallel)
    summary = {"powers_mw": powers.tolist()}
    for key in ("signal_cps", "idler_cps", "coincidence_cps"):
        y = np.array([r[key] for r in rows])
        fit = analysis.linear_fit(powers, y)
        summary[key] = {"values": y.tolist(), "slope": fit["slope"], "intercept": fit["intercept"],
                        "r_squared": fit.extra["r_squared"]}
    det_eff = sc.detector.efficiency
    summary["configured"] = {
        "eta_signal": run["signal_transmittance"] * run["signal_port_split"] * det_eff,
        "eta_idler": run["idler_transmittance"] * det_eff,
    }
    for key in ("ratio", "eta_idler", "eta_signal"):
        summary[key] = [{"value": r[key].value, "error": r[key].error} for r in rows]
    mid = rows[int(np.argmin(np.abs(powers - 1.0)))]["histogram"]
    summary["histogram_peak_ps"] = float(mid.centers_ps[np.argmax(mid.counts)])
    return {
        "rates.csv": _csv(["power_mw", "signal_cps", "idler_cps", "coincidence_cps"], powers,
                          *[[r[k] for r in rows] for k in ("signal_cps", "idler_cps", "coincidence_cps")]),
        "rates_histogram.csv": _csv(["tau_ps", "counts"], mid.centers_ps, mid.counts),
        "rates_summary.json": _json(summary),
    }


def run_spectrum(sc, args):
    filt = sc["filters"]
    env = biphoton.spectral_envelope(
        sc.resonator, sc.phase_match, sc.variant, sc["device"]["pump_nm"], filt["spectrum_lo_nm"],
        filt["spectrum_hi_nm"], filt["spectrum_fwhm_nm"], filt["spectrum_step_nm"], filt["wide_shape"],
    )
    csv_text = _csv(["wavelength_nm", "rate", "signal_rate", "idler_rate"],
                    env.wavelength_nm, env.rate, env.signal_rate, env.idler_rate)
    summary = {"config": sc.variant.value, "mode_count": env.mode_count,
               "lo_nm": filt["spectrum_lo_nm"], "hi_nm": filt["spectrum_hi_nm"],
               "filter_fwhm_nm": filt["spectrum_fwhm_nm"], "peak_rate_nm": float(env.wavelength_nm[np.argmax(env.rate)])}
    return {"spectrum_envelope.csv": csv_text, "spectrum_summary.json": _json(summary)}


def run_cluster(sc, args):
    filt = sc["filters"]
    pump = sc["device"]["pump_nm"]
    report = biphoton.cluster_analysis(sc.resonator, sc.phase_match, sc.variant, pump, 2 * pump, filt["spectrum_hi_nm"])
    lo = filt["spectrum_lo_nm"]
    in_range = report.idler_nm >= lo
    summary = {
        "config": sc.variant.value,
        "min_suppression": report.min_suppression,
        "teeth": int(report.suppression.size),
        "mode_count": int(in_range.sum()),
        "teeth_above_0.9": int(np.count_nonzero(report.suppression > 0.9)),
        "cluster_spacing_modes": report.cluster_spacing_modes,
        "message": report.message,
    }
    csv_text = _csv(["signal_nm", "idler_nm", "suppression", "idler_detuning_hz"],
                    report.signal_nm, report.idler_nm, report.suppression, report.idler_detuning_hz)
    return {f"cluster_{sc.variant.value}.csv": csv_text, "cluster_summary.json": _json(summary)}


RUNNERS = {
    "calibrate": run_calibrate,
    "scan": run_scan,
    "beats": run_beats,
    "heralded_waveform": run_heralded_waveform,
    "heralded_g2": run_heralded_g2,
    "rates": run_rates,
    "spectrum": run_spectrum,
    "cluster": run_cluster,
}


def write_atomic(path: Path, text: str):
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        Path(tmp).unlink(missing_ok=True)
        raise


def build_parser():
    ap = argparse.ArgumentParser(prog="sr-opo-comb", description="Photon-pair comb scenario runner.")
    ap.add_argument("scenario", choices=SCENARIOS)
    ap.add_argument("--config", type=Path, default=None,
                    help="INI file (default: $SR_OPO_COMB_CONFIG or the packaged default)")
    ap.add_argument("--out", type=Path, default=Path("."), help="output directory")
    ap.add_argument("--seed", type=int, default=None, help="override [run] seed")
    ap.add_argument("--parallel", action="store_true", help="run independent sweep points concurrently")
    ap.add_argument("--variant", choices=[v.value for v in biphoton.ResonanceConfig], default=None,
                    help="override [device] variant")
    return ap


def run(scenario, config=None, out=Path("."), seed=None, parallel=False, variant=None):
    """Validate, compute and write one scenario. Returns the written paths."""
    sc = load_config(config, variant)
    if seed is not None:
        sc.values["run"]["seed"] = int(seed)
        experiment_config(sc, 1.0)
    args = argparse.Namespace(parallel=parallel)
    files = RUNNERS[scenario](sc, args)
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    paths = []
    for name, text in files.items():
        write_atomic(out / name, text)
        paths.append(out / name)
    return paths


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        paths = run(args.scenario, args.config, args.out, args.seed, args.parallel, args.variant)
    except (ValueError, RuntimeError, OSError) as exc:
        print(f"sr-opo-comb: error: {exc}", file=sys.stderr)
        return 1
    for p in paths:
        print(p)
    return 0


if __name__ == "__main__":
    sys.exit(main())

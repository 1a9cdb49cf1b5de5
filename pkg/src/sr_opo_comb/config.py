"""
INI configuration for scenario runs.

Every physical key carries its unit in the name. Mirror tables are CSV files
resolved relative to the configuration file. ``load_config`` validates the
whole file and builds the device before any scenario computes anything.
"""

from __future__ import annotations

import configparser
import os
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

from . import cavity
from .biphoton import ResonanceConfig
from .dispersion import IndexModel, PhaseMatchSpec, calibrate
from .montecarlo import DetectorModel, ExperimentConfig

ENV_VAR = "SR_OPO_COMB_CONFIG"

# finesse of the coated end faces at the three characterization wavelengths
TABLE_FINESSE = {1600.0: 59.0, 1580.0: 29.0, 1560.0: 7.0}
# fixed reflectance samples of the dichroic coating away from those points:
# anti-reflective around the idler band, rising through 1540-1550 nm
COATING_SHAPE = {800.0: 0.01, 1500.0: 0.01, 1525.0: 0.01, 1540.0: 0.20, 1550.0: 0.42}


class ConfigError(ValueError):
    pass


def _floats(text):
    return tuple(float(v) for v in text.replace(",", " ").split())


# section -> key -> (parser, default)
SCHEMA = {
    "device": {
        "length_mm": (float, 20.0),
        "crystal_length_mm": (float, 20.0),
        "temperature_c": (float, 50.0),
        "poling_period_um": (float, 18.090),
        "qpm_order": (int, 1),
        "pump_nm": (float, 780.0),
        "variant": (str, "singly_resonant_signal"),
        "calibrate": (lambda s: s.strip().lower() in ("1", "true", "yes", "on"), True),
        "fsr_ghz": (float, 3.5),
        "fsr_wavelength_nm": (float, 1580.0),
        "qpm_pump_nm": (float, 780.0),
        "phase_offset": (float, 0.0),
        "index_slope_per_um": (float, 0.0),
    },
    "cavity": {
        "front_mirror_csv": (str, "mirror_front.csv"),
        "back_mirror_csv": (str, "mirror_back.csv"),
        "internal_loss_per_pass": (float, 0.005),
        "table_wavelengths_nm": (_floats, (1600.0, 1580.0, 1560.0)),
    },
    "filters": {
        "wide_fwhm_nm": (float, 1.0),
        "narrow_fwhm_nm": (float, 0.03),
        "wide_shape": (str, "gaussian"),
        "narrow_shape": (str, "rectangular"),
        "beat_signals_nm": (_floats, (1600.0, 1580.0)),
        "degenerate_nm": (float, 1560.0),
        "heralded_signal_nm": (float, 1600.0),
        "spectrum_fwhm_nm": (float, 3.0),
        "spectrum_lo_nm": (float, 1520.0),
        "spectrum_hi_nm": (float, 1600.0),
        "spectrum_step_nm": (float, 0.5),
    },
    "detectors": {
        "efficiency": (float, 0.6),
        "dark_rate_cps": (float, 100.0),
        "jitter_fwhm_ps": (float, 80.0),
        "dead_time_ns": (float, 0.0),
    },
    "run": {
        "seed": (int, 0),
        "grid_points": (int, 2**18),
        "grid_span_fsr": (float, 160.0),
        "scan_wavelengths_nm": (_floats, (1600.0, 1580.0, 1560.0)),
        "scan_points": (int, 2001),
        "scan_noise_fraction": (float, 0.05),
        "fsr_scan_teeth": (int, 10),
        "pair_rate_per_s_mw": (float, 4e6),
        "signal_transmittance": (float, 0.009),
        "idler_transmittance": (float, 0.013),
        "signal_port_split": (float, 1.0),
        "signal_delay_ps": (float, 2000.0),
        "pair_statistics": (str, "poisson"),
        "powers_mw": (_floats, (0.5, 1.0, 1.5, 2.0)),
        "rates_duration_s": (float, 3.0),
        "tdc_bin_ps": (float, 16.0),
        "histogram_window_ns": (float, 9.0),
        "coincidence_window_ns": (float, 9.0),
        "efficiency_window_ns": (float, 40.0),
        "g2_transmittance": (float, 0.5),
        "g2_detector_efficiency": (float, 1.0),
        "g2_duration_s": (float, 0.05),
    },
}


@dataclass(frozen=True)
class Scenario:
    """A validated configuration together with the calibrated device."""

    source: Path
    values: dict
    resonator: cavity.ResonatorSpec
    phase_match: PhaseMatchSpec
    variant: ResonanceConfig
    detector: DetectorModel
    notes: dict = field(default_factory=dict)

    def __getitem__(self, section):
        return self.values[section]


def default_config_path():
    env = os.environ.get(ENV_VAR)
    if env:
        return Path(env)
    return Path(str(resources.files("sr_opo_comb") / "data" / "default.ini"))


def _parse(path):
    parser = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
    with path.open() as fh:
        parser.read_file(fh)
    unknown_sections = set(parser.sections()) - set(SCHEMA)
    if unknown_sections:
        raise ConfigError(f"{path}: unknown sections {sorted(unknown_sections)}")
    values = {}
    for section, keys in SCHEMA.items():
        got = dict(parser[section]) if parser.has_section(section) else {}
        unknown = set(got) - set(keys)
        if unknown:
            raise ConfigError(f"{path}: unknown keys in [{section}]: {sorted(unknown)}")
        values[section] = {}
        for key, (kind, default) in keys.items():
            if key in got:
                try:
                    values[section][key] = kind(got[key])
                except ValueError as exc:
                    raise ConfigError(f"{path}: [{section}] {key} = {got[key]!r}: {exc}") from exc
            else:
                values[section][key] = default
    return values


def default_mirror_tables(length_mm=20.0, internal_loss_per_pass=0.005):
    """Equal front/back tables reproducing TABLE_FINESSE for the given loss."""
    flat = cavity.MirrorSpectrum.flat(0.5)
    base = cavity.ResonatorSpec(length_mm, IndexModel(), flat, flat, internal_loss_per_pass)
    spec = cavity.calibrate_mirrors(base, TABLE_FINESSE, COATING_SHAPE)
    return spec.front_mirror, spec.back_mirror


def experiment_config(scenario, power_mw, **overrides) -> ExperimentConfig:
    run = scenario["run"]
    kwargs = dict(
        pump_power_mw=power_mw,
        intrinsic_pair_rate=run["pair_rate_per_s_mw"],
        signal_path_transmittance=run["signal_transmittance"],
        idler_path_transmittance=run["idler_transmittance"],
        signal_port_split=run["signal_port_split"],
        signal_delay_ps=run["signal_delay_ps"],
        tdc_bin_ps=run["tdc_bin_ps"],
        histogram_window_ns=run["histogram_window_ns"],
        duration_s=run["rates_duration_s"],
        rng_seed=run["seed"],
        pair_statistics=run["pair_statistics"],
    )
    kwargs.update(overrides)
    return ExperimentConfig(**kwargs)


def build_device(values, base_dir):
    dev, cav = values["device"], values["cavity"]
    phase_match = PhaseMatchSpec(dev["poling_period_um"], dev["crystal_length_mm"], dev["qpm_order"])
    model = IndexModel(
        temperature=dev["temperature_c"],
        phase_offset=dev["phase_offset"],
        index_slope_per_um=dev["index_slope_per_um"],
    )
    if dev["calibrate"]:
        model = calibrate(
            model,
            phase_match,
            resonator_length_mm=dev["length_mm"],
            fsr_hz=dev["fsr_ghz"] * 1e9,
            fsr_wavelength_nm=dev["fsr_wavelength_nm"],
            qpm_pump_nm=dev["qpm_pump_nm"],
            qpm_temperature_c=dev["temperature_c"],
        )
    mirrors = []
    for key in ("front_mirror_csv", "back_mirror_csv"):
        p = Path(cav[key])
        p = p if p.is_absolute() else base_dir / p
        mirrors.append(cavity.MirrorSpectrum.from_csv(p))
    resonator = cavity.ResonatorSpec(dev["length_mm"], model, *mirrors, cav["internal_loss_per_pass"])
    return resonator, phase_match


def load_config(path=None, variant=None) -> Scenario:
    path = Path(path) if path is not None else default_config_path()
    if not path.is_file():
        raise FileNotFoundError(f"config file not found: {path}")
    values = _parse(path)
    if variant is not None:
        values["device"]["variant"] = variant
    try:
        config = ResonanceConfig(values["device"]["variant"])
    except ValueError as exc:
        choices = [v.value for v in ResonanceConfig]
        raise ConfigError(f"variant must be one of {choices}") from exc
    for section, key in (("filters", "wide_shape"), ("filters", "narrow_shape")):
        if values[section][key] not in ("gaussian", "rectangular"):
            raise ConfigError(f"[{section}] {key} must be gaussian or rectangular")
    det = values["detectors"]
    detector = DetectorModel(det["efficiency"], det["dark_rate_cps"], det["jitter_fwhm_ps"], det["dead_time_ns"])
    resonator, phase_match = build_device(values, path.parent)
    scenario = Scenario(path, values, resonator, phase_match, config, detector)
    run = values["run"]
    for power in run["powers_mw"]:
        experiment_config(scenario, power)
    experiment_config(scenario, 1.0, duration_s=run["g2_duration_s"],
                      signal_path_transmittance=run["g2_transmittance"],
                      idler_path_transmittance=run["g2_transmittance"])
    DetectorModel(run["g2_detector_efficiency"], det["dark_rate_cps"], det["jitter_fwhm_ps"], det["dead_time_ns"])
    if run["grid_points"] < 2**14 or run["grid_span_fsr"] < 20:
        raise ConfigError("[run] grid needs at least 2^14 points and 20 FSR span")
    return scenario

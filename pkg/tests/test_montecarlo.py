import numpy as np
import pytest

from sr_opo_comb import montecarlo as mc
from sr_opo_comb.correlation import CorrelationFunction, combined_jitter_sigma

QUIET = mc.DetectorModel(efficiency=1.0, dark_rate=0.0, jitter_fwhm_ps=0.0)


@pytest.fixture(scope="module")
def decay():
    """One-sided exponential delay law with a 1 ns time constant."""
    t = np.arange(-5000.0, 20000.0, 2.0)
    return CorrelationFunction(t, np.where(t >= 0, np.exp(-t / 1000.0), 0.0))


def stream_of(**channels):
    return mc.EventStream({k: np.asarray(v, dtype=np.int64) for k, v in channels.items()})


def test_dead_detectors_give_empty_stream(decay):
    cfg = mc.ExperimentConfig(duration_s=0.01)
    dead = mc.DetectorModel(efficiency=0.0, dark_rate=0.0)
    st = mc.sample_experiment(cfg, decay, mc.default_detectors(cfg, dead))
    assert st.counts() == {"idler": 0, "signal": 0}


def test_determinism_and_slicing(decay):
    cfg = mc.ExperimentConfig(pump_power_mw=1.0, duration_s=0.6, rng_seed=99)
    a = mc.sample_experiment(cfg, decay)
    b = mc.sample_experiment(cfg, decay, workers=2)
    for ch in cfg.channels():
        np.testing.assert_array_equal(a[ch], b[ch])
    c = mc.sample_experiment(mc.ExperimentConfig(pump_power_mw=1.0, duration_s=0.6, rng_seed=100), decay)
    assert not np.array_equal(a["signal"], c["signal"])


def test_timestamps_sorted_integer(decay):
    st = mc.sample_experiment(mc.ExperimentConfig(duration_s=0.02), decay)
    for ch in st.channels:
        assert st[ch].dtype == np.int64
        assert np.all(np.diff(st[ch]) >= 0)


def test_singles_match_thinning(decay):
    cfg = mc.ExperimentConfig(pump_power_mw=0.5, duration_s=0.5, rng_seed=3)
    det = mc.DetectorModel(efficiency=0.6, dark_rate=100.0)
    st = mc.sample_experiment(cfg, decay, mc.default_detectors(cfg, det))
    for photon, eta in (("signal", 0.009), ("idler", 0.013)):
        expected = cfg.pair_rate * cfg.duration_s * eta * 0.6 + 100.0 * cfg.duration_s
        assert abs(st.total(photon) - expected) < 3 * np.sqrt(expected)


def test_efficiency_estimator_recovers_truth(decay):
    cfg = mc.ExperimentConfig(pump_power_mw=1.0, duration_s=2.0, rng_seed=11)
    st = mc.sample_experiment(cfg, decay)
    est = mc.channel_efficiency(st, "signal", "idler", window_ns=40.0, offset_ps=-10000.0)
    assert abs(est.value - 0.013 * 0.6) < 3 * est.error
    est = mc.channel_efficiency(st, "idler", "signal", window_ns=40.0, offset_ps=10000.0)
    assert abs(est.value - 0.009 * 0.6) < 3 * est.error


def test_histogram_bin_count_and_arithmetic():
    st = stream_of(idler=[1000], signal=[1100])
    h = mc.tdc_histogram(st, "idler", "signal", 16.0, 9.0)
    assert h.counts.size == 562
    assert h.counts.sum() == 1 and h.counts[6] == 1


def test_histogram_mirror(rng):
    start = np.sort(rng.integers(0, 10**9, 3000))
    stop = np.sort(rng.integers(0, 10**9, 3000))
    st = stream_of(idler=start, signal=stop)
    # odd bin count and half-integer edges: integer delays never sit on an edge
    fwd = mc.tdc_histogram(st, "idler", "signal", 15.0, 15.015, offset_ps=-7507.5)
    rev = mc.tdc_histogram(st, "signal", "idler", 15.0, 15.015, offset_ps=-7507.5)
    assert fwd.counts.size == 1001
    np.testing.assert_array_equal(fwd.counts, rev.counts[::-1])
    assert fwd.counts.sum() > 0


def test_histogram_empty_and_invalid():
    st = stream_of(idler=[5])
    assert mc.tdc_histogram(st, "idler", "signal").counts.sum() == 0
    with pytest.raises(ValueError):
        mc.tdc_histogram(st, "idler", "signal", bin_ps=0)


def test_coincidence_peak_location():
    t = np.arange(-2000.0, 2000.0, 2.0)
    narrow = CorrelationFunction(t, np.exp(-0.5 * ((t - 100.0) / 10.0) ** 2))
    cfg = mc.ExperimentConfig(duration_s=0.02, signal_delay_ps=3000.0, signal_path_transmittance=0.5,
                              idler_path_transmittance=0.5, rng_seed=5)
    det = mc.DetectorModel(efficiency=1.0, dark_rate=100.0, jitter_fwhm_ps=80.0)
    st = mc.sample_experiment(cfg, narrow, mc.default_detectors(cfg, det))
    h = mc.tdc_histogram(st, "idler", "signal", 16.0, 9.0, offset_ps=-1500.0)
    peak = h.centers_ps[np.argmax(h.counts)]
    assert abs(peak - 3100.0) <= combined_jitter_sigma(80.0, 80.0)


def test_single_pair_source_has_no_triples(decay):
    cfg = mc.ExperimentConfig(duration_s=0.05, splitter_present=True, split_channel="idler",
                              signal_path_transmittance=0.5, idler_path_transmittance=0.5,
                              pair_statistics="single_pair")
    st = mc.sample_experiment(cfg, decay, mc.default_detectors(cfg, QUIET))
    g2 = mc.heralded_g2(st, "signal", "idler_a", "idler_b", 9.0, 0.0)
    assert g2.counts["N_HAB"] == 0
    assert abs(g2.value) <= 3 * g2.error


def test_thermal_bursts_raise_g2(decay):
    values = {}
    for stats in ("poisson", "thermal_single_mode"):
        cfg = mc.ExperimentConfig(pump_power_mw=2.0, duration_s=0.05, splitter_present=True,
                                  signal_path_transmittance=0.5, idler_path_transmittance=0.5,
                                  pair_statistics=stats, coherence_time_ps=5000.0, rng_seed=8)
        st = mc.sample_experiment(cfg, decay, mc.default_detectors(cfg, QUIET))
        values[stats] = mc.heralded_g2(st, "signal", "idler_a", "idler_b", 9.0, 0.0)
    p, t = values["poisson"], values["thermal_single_mode"]
    assert t.value - p.value > 3 * np.hypot(t.error, p.error)


def test_g2_undefined_without_pairwise_coincidences():
    st = stream_of(signal=[0, 10**6], idler_a=[5 * 10**5], idler_b=[])
    with pytest.raises(mc.UndefinedEstimateError):
        mc.heralded_g2(st, "signal", "idler_a", "idler_b")


def test_g2_counting_arithmetic():
    # two heralds; the first has both arms inside +/-4.5 ns, the second only arm a
    st = stream_of(signal=[0, 10**6], idler_a=[100, 10**6 + 200], idler_b=[-300])
    g2 = mc.heralded_g2(st, "signal", "idler_a", "idler_b", 9.0)
    assert g2.counts == {"N_H": 2, "N_HA": 2, "N_HB": 1, "N_HAB": 1}
    assert g2.value == pytest.approx(2 * 1 / (2 * 1))


@pytest.mark.parametrize("split, expected", [(0.5, 0.5), (1.0, 1.0), (0.54, 0.54)])
def test_singles_ratio(decay, split, expected):
    cfg = mc.ExperimentConfig(duration_s=0.05, signal_path_transmittance=0.5, idler_path_transmittance=0.5,
                              signal_port_split=split, rng_seed=21)
    st = mc.sample_experiment(cfg, decay, mc.default_detectors(cfg, QUIET))
    r = mc.singles_ratio(st)
    assert abs(r.value - expected) < 3 * r.error


def test_singles_ratio_needs_counts():
    with pytest.raises(mc.UndefinedEstimateError):
        mc.singles_ratio(stream_of(signal=[1, 2]))


def test_dead_time_pruning():
    t = np.array([0, 10, 25, 31, 100, 105, 140])
    np.testing.assert_array_equal(mc._apply_dead_time(t, 30), [0, 31, 100, 140])
    np.testing.assert_array_equal(mc._apply_dead_time(t, 0), t)


def test_unnormalizable_correlation():
    cf = CorrelationFunction(np.arange(10.0), np.zeros(10))
    with pytest.raises(mc.UnnormalizableError):
        mc.sample_experiment(mc.ExperimentConfig(duration_s=0.001), cf)


def test_delay_sampler_moments(decay, rng):
    tau = mc.delay_sampler(decay)(rng, 200_000)
    assert tau.mean() == pytest.approx(1000.0, rel=0.01)
    assert tau.min() >= -1.0


@pytest.mark.parametrize("suffix", [".csv", ".bin"])
def test_stream_roundtrip(tmp_path, decay, suffix):
    cfg = mc.ExperimentConfig(duration_s=0.005, splitter_present=True, split_channel="signal")
    st = mc.sample_experiment(cfg, decay)
    path = tmp_path / f"events{suffix}"
    st.to_csv(path) if suffix == ".csv" else st.to_binary(path)
    back = mc.EventStream.from_file(path)
    for ch in cfg.channels():
        np.testing.assert_array_equal(back[ch], st[ch])
    codes, times = st.merged()
    assert np.all(np.diff(times) >= 0)
    if suffix == ".bin":
        assert path.stat().st_size == 9 * times.size


@pytest.mark.parametrize("kwargs", [
    {"signal_path_transmittance": 1.2}, {"tdc_bin_ps": 0}, {"duration_s": 0},
    {"pair_statistics": "coherent"}, {"split_channel": "pump"},
])
def test_config_invariants(kwargs):
    with pytest.raises(ValueError):
        mc.ExperimentConfig(**kwargs)


def test_detector_invariants():
    with pytest.raises(ValueError):
        mc.DetectorModel(efficiency=1.5)
    with pytest.raises(ValueError):
        mc.DetectorModel(dark_rate=-1)

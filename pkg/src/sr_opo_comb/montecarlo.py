"""
Synthetic time-tagger streams for the pair source.

Pairs are emitted at pump_power * intrinsic_pair_rate. The idler leaves at
the emission time and the signal follows after a delay drawn from the
normalized coincidence density G(tau) (tau = t_signal - t_idler). Each photon
survives its path independently, is registered with its detector's quantum
efficiency and Gaussian jitter, and dark counts are added as independent
Poisson processes. Timestamps are integers in ps.

Long runs are cut into time slices; every slice draws from its own generator
spawned from the master seed with ``numpy.random.SeedSequence.spawn``, so a run
is bit-reproducible whether slices are evaluated serially or concurrently.
"""

from __future__ import annotations

import csv
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .correlation import FWHM_PER_SIGMA, CorrelationFunction

CHANNEL_CODES = {"idler": 0, "signal": 1, "idler_a": 2, "idler_b": 3, "signal_a": 4, "signal_b": 5}
CODE_NAMES = {v: k for k, v in CHANNEL_CODES.items()}
PAIR_STATISTICS = ("poisson", "thermal_single_mode", "single_pair")
MAX_PAIRS_PER_SLICE = 2_000_000
BINARY_DTYPE = np.dtype([("channel", "u1"), ("timestamp_ps", "<u8")])


class UnnormalizableError(ValueError):
    """Correlation density has no positive mass to sample from."""


class UndefinedEstimateError(ValueError):
    pass


def _probability(name, value):
    if not 0 <= value <= 1:
        raise ValueError(f"{name} must lie in [0, 1], got {value}")


@dataclass(frozen=True)
class DetectorModel:
    efficiency: float = 0.6
    dark_rate: float = 100.0  # counts/s
    jitter_fwhm_ps: float = 80.0
    dead_time_ns: float = 0.0

    def __post_init__(self):
        _probability("efficiency", self.efficiency)
        for name in ("dark_rate", "jitter_fwhm_ps", "dead_time_ns"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be non-negative")

    @property
    def jitter_sigma_ps(self):
        return self.jitter_fwhm_ps / FWHM_PER_SIGMA


@dataclass(frozen=True)
class ExperimentConfig:
    """
    ``split_channel`` names the photon sent to the 50/50 splitter when
    ``splitter_present``; its partner is the herald. ``signal_port_split`` is
    the fraction of signal photons leaving the cavity through the collected
    face. ``coherence_time_ps`` sets the burst size for thermal statistics.
    """

    pump_power_mw: float = 1.0
    intrinsic_pair_rate: float = 4e6  # pairs / (s mW)
    signal_path_transmittance: float = 0.009
    idler_path_transmittance: float = 0.013
    signal_port_split: float = 1.0
    splitter_present: bool = False
    split_channel: str = "idler"
    signal_delay_ps: float = 0.0
    idler_delay_ps: float = 0.0
    tdc_bin_ps: float = 16.0
    histogram_window_ns: float = 9.0
    duration_s: float = 0.1
    rng_seed: int = 0
    pair_statistics: str = "poisson"
    coherence_time_ps: float = 1000.0

    def __post_init__(self):
        for name in ("signal_path_transmittance", "idler_path_transmittance", "signal_port_split"):
            _probability(name, getattr(self, name))
        if self.pump_power_mw < 0 or self.intrinsic_pair_rate < 0:
            raise ValueError("pump power and pair rate must be non-negative")
        if self.tdc_bin_ps <= 0 or self.histogram_window_ns <= 0:
            raise ValueError("TDC bin and histogram window must be positive")
        if self.duration_s <= 0:
            raise ValueError("duration must be positive")
        if self.split_channel not in ("signal", "idler"):
            raise ValueError("split_channel must be 'signal' or 'idler'")
        if self.pair_statistics not in PAIR_STATISTICS:
            raise ValueError(f"pair_statistics must be one of {PAIR_STATISTICS}")
        if not 0 <= self.rng_seed < 2**64:
            raise ValueError("rng_seed must be a 64-bit unsigned integer")

    @property
    def pair_rate(self):
        """Emitted pairs per second."""
        return self.pump_power_mw * self.intrinsic_pair_rate

    def channels(self):
        if not self.splitter_present:
            return ("idler", "signal")
        if self.split_channel == "idler":
            return ("signal", "idler_a", "idler_b")
        return ("idler", "signal_a", "signal_b")


def default_detectors(config: ExperimentConfig, detector: DetectorModel | None = None):
    detector = detector or DetectorModel()
    return {name: detector for name in config.channels()}


@dataclass(frozen=True)
class EventStream:
    """Sorted integer-ps timestamps per channel."""

    timestamps: dict = field(default_factory=dict)
    duration_ps: int = 0

    def __post_init__(self):
        for name, t in self.timestamps.items():
            if name not in CHANNEL_CODES:
                raise ValueError(f"unknown channel {name!r}")
            if np.any(np.diff(t) < 0):
                raise ValueError(f"timestamps of {name} are not sorted")

    def __getitem__(self, name):
        return self.timestamps.get(name, np.empty(0, dtype=np.int64))

    @property
    def channels(self):
        return tuple(sorted(self.timestamps, key=CHANNEL_CODES.get))

    def counts(self):
        return {name: int(t.size) for name, t in self.timestamps.items()}

    def total(self, photon):
        """Singles of a photon summed over its splitter outputs."""
        return sum(int(self[n].size) for n in (photon, f"{photon}_a", f"{photon}_b"))

    def merged(self):
        """(channel codes, timestamps) ordered by time, ties by channel code."""
        if not self.timestamps:
            return np.empty(0, dtype=np.uint8), np.empty(0, dtype=np.int64)
        codes = np.concatenate([np.full(t.size, CHANNEL_CODES[n], dtype=np.uint8)
                                for n, t in self.timestamps.items()])
        times = np.concatenate(list(self.timestamps.values())).astype(np.int64)
        order = np.lexsort((codes, times))
        return codes[order], times[order]

    def to_csv(self, path):
        codes, times = self.merged()
        with Path(path).open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["channel", "timestamp_ps"])
            w.writerows(zip(codes.tolist(), times.tolist()))

    def to_binary(self, path):
        codes, times = self.merged()
        if np.any(times < 0):
            raise ValueError("binary layout stores unsigned timestamps")
        rec = np.empty(codes.size, dtype=BINARY_DTYPE)
        rec["channel"], rec["timestamp_ps"] = codes, times
        rec.tofile(path)

    @classmethod
    def from_records(cls, codes, times, duration_ps=0):
        codes = np.asarray(codes, dtype=np.uint8)
        times = np.asarray(times, dtype=np.int64)
        out = {}
        for code in np.unique(codes):
            if int(code) not in CODE_NAMES:
                raise ValueError(f"unknown channel code {int(code)}")
            out[CODE_NAMES[int(code)]] = np.sort(times[codes == code], kind="stable")
        return cls(out, int(duration_ps))

    @classmethod
    def from_file(cls, path):
        """Read either the CSV or the binary layout (chosen by suffix)."""
        path = Path(path)
        if not path.is_file():
            raise FileNotFoundError(f"event file not found: {path}")
        if path.suffix == ".csv":
            data = np.loadtxt(path, delimiter=",", skiprows=1, dtype=np.int64, ndmin=2)
            if data.size == 0:
                return cls({}, 0)
            return cls.from_records(data[:, 0], data[:, 1])
        rec = np.fromfile(path, dtype=BINARY_DTYPE)
        return cls.from_records(rec["channel"], rec["timestamp_ps"].astype(np.int64))


def delay_sampler(cf: CorrelationFunction):
    """Inverse-CDF sampler of tau (ps) from G, uniform within each bin."""
    g = np.asarray(cf.density, dtype=float)
    if g.size == 0 or not np.all(np.isfinite(g)) or np.any(g < 0) or g.sum() <= 0:
        raise UnnormalizableError("correlation density cannot be normalized to a delay distribution")
    cdf = np.cumsum(g)
    cdf /= cdf[-1]
    left = cf.delays_ps - cf.step_ps / 2

    def sample(rng, n):
        u = rng.random(n)
        k = np.minimum(np.searchsorted(cdf, u, side="right"), g.size - 1)
        return left[k] + cf.step_ps * rng.random(n)

    return sample


def _emission_times(config, rng, t0, t1, phase):
    rate = config.pair_rate
    span = t1 - t0
    if rate == 0:
        return np.empty(0)
    if config.pair_statistics == "single_pair":
        # one pair per 1/rate on a grid with a run-wide random phase
        period = 1 / rate
        k = np.arange(np.ceil(t0 / period - phase), np.ceil(t1 / period - phase))
        return (k + phase) * period
    if config.pair_statistics == "poisson":
        n = rng.poisson(rate * span)
        return np.sort(t0 + span * rng.random(n))
    mu = rate * config.coherence_time_ps * 1e-12
    bursts = rng.poisson(rate * span / (1 + mu))
    starts = np.sort(t0 + span * rng.random(bursts))
    return np.repeat(starts, rng.geometric(1 / (1 + mu), size=bursts))


def _slice(config, detectors, sampler, seed, t0, t1, phase):
    rng = np.random.default_rng(seed)
    t = _emission_times(config, rng, t0, t1, phase)
    n = t.size
    idler_t = t + config.idler_delay_ps * 1e-12
    signal_t = t + (config.signal_delay_ps + sampler(rng, n)) * 1e-12
    keep_s = rng.random(n) < config.signal_path_transmittance * config.signal_port_split
    keep_i = rng.random(n) < config.idler_path_transmittance
    arrivals = {"signal": signal_t[keep_s], "idler": idler_t[keep_i]}

    out = {}
    for photon, times in arrivals.items():
        if config.splitter_present and photon == config.split_channel:
            port_b = rng.random(times.size) < 0.5
            routed = {f"{photon}_a": times[~port_b], f"{photon}_b": times[port_b]}
        else:
            routed = {photon: times}
        for name, tt in routed.items():
            det = detectors[name]
            tt = tt[rng.random(tt.size) < det.efficiency]
            tt = tt + rng.normal(0.0, det.jitter_sigma_ps * 1e-12, tt.size)
            darks = t0 + (t1 - t0) * rng.random(rng.poisson(det.dark_rate * (t1 - t0)))
            out[name] = np.concatenate([tt, darks])
    return out


def _apply_dead_time(t, dead_ps):
    if dead_ps <= 0 or t.size < 2:
        return t
    keep = np.ones(t.size, dtype=bool)
    # an event whose gap to its predecessor is at least the dead time is always kept
    last = t[0]
    for k in np.flatnonzero(np.diff(t) < dead_ps) + 1:
        if keep[k - 1]:
            last = t[k - 1]
        if t[k] - last < dead_ps:
            keep[k] = False
    return t[keep]


def slice_seeds(rng_seed, n_slices):
    """Per-slice seeds: SeedSequence(rng_seed).spawn(n_slices)."""
    return np.random.SeedSequence(rng_seed).spawn(n_slices)


def sample_experiment(
    config: ExperimentConfig,
    correlation: CorrelationFunction,
    detectors: dict | None = None,
    workers: int = 1,
) -> EventStream:
    """Sample one seeded run. ``detectors`` maps channel name to DetectorModel."""
    detectors = default_detectors(config) if detectors is None else dict(detectors)
    missing = [n for n in config.channels() if n not in detectors]
    if missing:
        raise ValueError(f"no detector model for channels {missing}")
    sampler = delay_sampler(correlation)
    duration = config.duration_s
    n_slices = max(1, int(np.ceil(config.pair_rate * duration / MAX_PAIRS_PER_SLICE)))
    master = np.random.SeedSequence(config.rng_seed)
    phase_seed, *seeds = master.spawn(n_slices + 1)
    phase = np.random.default_rng(phase_seed).random()
    edges = np.linspace(0.0, duration, n_slices + 1)
    jobs = [(config, detectors, sampler, s, edges[k], edges[k + 1], phase) for k, s in enumerate(seeds)]
    if workers > 1 and n_slices > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(lambda a: _slice(*a), jobs))
    else:
        parts = [_slice(*a) for a in jobs]

    duration_ps = int(round(duration * 1e12))
    stream = {}
    for name in config.channels():
        t = np.concatenate([p[name] for p in parts]) if parts else np.empty(0)
        ps = np.sort(np.rint(t * 1e12).astype(np.int64))
        ps = ps[(ps >= 0) & (ps < duration_ps)]
        stream[name] = _apply_dead_time(ps, detectors[name].dead_time_ns * 1e3)
    return EventStream(stream, duration_ps)


@dataclass(frozen=True)
class TdcHistogram:
    edges_ps: np.ndarray
    counts: np.ndarray
    start_channel: str
    stop_channel: str

    @property
    def centers_ps(self):
        return 0.5 * (self.edges_ps[1:] + self.edges_ps[:-1])

    def to_csv(self, path):
        with Path(path).open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["tau_ps", "counts"])
            for t, n in zip(self.centers_ps, self.counts):
                w.writerow([f"{t:.3f}", int(n)])


def _pairs_in_window(start, stop, lo_ps, hi_ps):
    """Indices (i, j) with lo <= stop[j] - start[i] < hi."""
    lo = np.searchsorted(stop, start + lo_ps, side="left")
    hi = np.searchsorted(stop, start + hi_ps, side="left")
    n = hi - lo
    total = int(n.sum())
    i = np.repeat(np.arange(start.size), n)
    first = np.repeat(lo - np.concatenate([[0], np.cumsum(n)[:-1]]), n)
    j = first + np.arange(total)
    return i, j


def tdc_histogram(stream: EventStream, start_channel, stop_channel, bin_ps=16.0, window_ns=9.0, offset_ps=0.0):
    """
    Start-stop histogram with multi-stop: every stop event within
    [offset, offset + window) of a start is counted. The bin count is
    floor(window / bin), so the bin has to divide the window to within one bin.
    """
    if bin_ps <= 0 or window_ns <= 0:
        raise ValueError("bin and window must be positive")
    window_ps = window_ns * 1e3
    nbins = int(np.floor(window_ps / bin_ps + 1e-9))
    if nbins < 1:
        raise ValueError("window shorter than one bin")
    edges = offset_ps + bin_ps * np.arange(nbins + 1)
    start, stop = stream[start_channel], stream[stop_channel]
    counts = np.zeros(nbins, dtype=np.int64)
    if start.size and stop.size:
        i, j = _pairs_in_window(start, stop, edges[0], edges[-1])
        d = (stop[j] - start[i]).astype(float)
        k = np.floor((d - offset_ps) / bin_ps).astype(np.int64)
        k = k[(k >= 0) & (k < nbins)]
        counts = np.bincount(k, minlength=nbins).astype(np.int64)
    return TdcHistogram(edges, counts, start_channel, stop_channel)


@dataclass(frozen=True)
class Estimate:
    value: float
    error: float
    counts: dict = field(default_factory=dict)


def _has_partner(start, stop, lo_ps, hi_ps):
    if stop.size == 0:
        return np.zeros(start.size, dtype=bool)
    lo = np.searchsorted(stop, start + lo_ps, side="left")
    hi = np.searchsorted(stop, start + hi_ps, side="right")
    return hi > lo


def coincidences(stream: EventStream, start_channel, stop_channel, window_ns, offset_ps=0.0):
    """Start events with at least one stop in [offset - W/2, offset + W/2]."""
    half = window_ns * 1e3 / 2
    return int(np.count_nonzero(
        _has_partner(stream[start_channel], stream[stop_channel], offset_ps - half, offset_ps + half)
    ))


def heralded_g2(stream: EventStream, herald, arm_a, arm_b, window_ns=9.0, offset_ps=0.0) -> Estimate:
    """
    g2 = N_H N_HAB / (N_HA N_HB) with all coincidences inside a window of
    width ``window_ns`` centred ``offset_ps`` after each herald. The error
    propagates binomial counting errors of the three conditional counts. With
    no triples the estimate is 0 and the error is that of a single count.
    """
    if window_ns <= 0:
        raise ValueError("window must be positive")
    h = stream[herald]
    half = window_ns * 1e3 / 2
    a = _has_partner(h, stream[arm_a], offset_ps - half, offset_ps + half)
    b = _has_partner(h, stream[arm_b], offset_ps - half, offset_ps + half)
    n_h, n_a, n_b, n_ab = h.size, int(a.sum()), int(b.sum()), int((a & b).sum())
    counts = {"N_H": n_h, "N_HA": n_a, "N_HB": n_b, "N_HAB": n_ab}
    if n_a == 0 or n_b == 0:
        raise UndefinedEstimateError(f"no pairwise coincidences {counts}")
    scale = n_h / (n_a * n_b)
    g2 = scale * n_ab
    rel2 = (1 - n_a / n_h) / n_a + (1 - n_b / n_h) / n_b
    if n_ab == 0:
        return Estimate(0.0, scale, counts)
    rel2 += (1 - n_ab / n_h) / n_ab
    return Estimate(float(g2), float(g2 * np.sqrt(rel2)), counts)


def singles_ratio(stream: EventStream) -> Estimate:
    """Signal singles over idler singles (splitter outputs summed), Poisson error."""
    n_s, n_i = stream.total("signal"), stream.total("idler")
    if n_i == 0 or n_s == 0:
        raise UndefinedEstimateError("singles ratio needs counts on both photons")
    r = n_s / n_i
    return Estimate(r, r * np.sqrt(1 / n_s + 1 / n_i), {"signal": n_s, "idler": n_i})


def channel_efficiency(
    stream: EventStream, herald, partner, window_ns=40.0, offset_ps=0.0, background_offset_ns=None
) -> Estimate:
    """
    Detection efficiency of the ``partner`` channel: heralds with a partner
    inside the window, minus the same count in a displaced background window,
    over all heralds. The default background window sits five widths away.
    """
    n_h = stream[herald].size
    if n_h == 0:
        raise UndefinedEstimateError(f"no events on herald channel {herald}")
    shift = (5 * window_ns if background_offset_ns is None else background_offset_ns) * 1e3
    n_c = coincidences(stream, herald, partner, window_ns, offset_ps)
    n_acc = coincidences(stream, herald, partner, window_ns, offset_ps + shift)
    value = (n_c - n_acc) / n_h
    p = max(value, 0.0)
    error = np.sqrt(n_h * p * (1 - p) + 2 * n_acc) / n_h
    return Estimate(float(value), float(error), {"herald": n_h, "coincidences": n_c, "accidentals": n_acc})

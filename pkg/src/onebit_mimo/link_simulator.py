"""Monte Carlo link experiments: SER, mutual information, transmit PSD and
robustness to receive-filter mismatch."""

from __future__ import annotations

import csv
import dataclasses
import json
import logging
import math
from dataclasses import dataclass, field

import numpy as np

from . import mimo_channel, onebit_receiver, quant_precoder, spatial_precoder
from .dsp_filters import (
    EffectiveFilterMatrix,
    PulseShape,
    RateConfig,
    build_effective_filter,
    design_pulse,
    normalized_pulse_energy,
)
from .quant_precoder import Budget, Constellation, Spectrum

logger = logging.getLogger(__name__)

DEFAULT_SEED = 20170417
MAPPING_MODES = ("perfect", "pilot")
CSI_MODES = ("mmse", "perfect")
# fine TX-pulse grid used for P_g and for the PSD waveform
FINE_SAMPLES_PER_TU = 16


@dataclass(frozen=True)
class ExperimentConfig:
    """Every knob of a link experiment; defaults follow the reference setup.

    Grids are tuples of dB values.  ``tx_rolloff=None`` picks 0.1 for
    oversampled precoding and the system roll-off when ``mu_tx == 1``.
    """

    n_users: int = 5
    n_antennas: int = 100
    constellation_size: int = 4
    mu_tx: int = 2
    mu_rx: int = 2
    n_block: int = 50
    eps_tx: float = 0.22
    tx_rolloff: float | None = None
    tx_span: int = 6
    rx_kind: str = "root-raised-cosine"
    rx_param: float = 0.22
    rx_span: int = 6
    rx_cutoff: float = 0.25
    alpha: float = 1e-3
    p0: float = 1.0
    snr_db: tuple[float, ...] = (0.0, 5.0, 10.0, 15.0, 20.0)
    trials: int = 20
    precoder: str = "zf"
    csi: str = "mmse"
    uplink_snr_db: float = 15.0
    mapping_mode: str = "perfect"
    benchmarks: tuple[str, ...] = ("two-bit", "infinite-bit")
    fnr_db: tuple[float, ...] = (10.0, 20.0, 30.0, 40.0)
    agc_margin: float = 0.10
    gain_mse_db: float = -20.0
    psd_nfft: int = 1024
    psd_oversample: int = 4
    transient: int | None = None
    seed: int = DEFAULT_SEED

    def __post_init__(self):
        def need(cond, key, msg):
            if not cond:
                raise ValueError(f"{key}: {msg}")

        need(self.n_users >= 1, "n_users", "must be >= 1")
        need(self.n_antennas >= self.n_users, "n_antennas", "must be >= n_users")
        need(self.constellation_size >= 2, "constellation_size", "must be >= 2")
        need(2**self.mu_rx >= self.constellation_size, "mu_rx",
             f"2**mu_rx must be >= constellation_size={self.constellation_size}")
        need(self.mu_tx >= 1 and self.mu_rx % self.mu_tx == 0, "mu_tx", "must divide mu_rx")
        need(self.n_block >= 2, "n_block", "must be >= 2")
        need(0.0 <= self.eps_tx <= 1.0, "eps_tx", "must lie in [0, 1]")
        need(self.tx_rolloff is None or 0.0 <= self.tx_rolloff <= 1.0, "tx_rolloff", "must lie in [0, 1]")
        need(self.tx_span >= 1 and self.rx_span >= 1, "rx_span", "spans must be >= 1")
        need(self.rx_kind in ("root-raised-cosine", "raised-cosine", "butterworth"), "rx_kind",
             "must be root-raised-cosine, raised-cosine or butterworth")
        need(0.0 < self.alpha < 1.0, "alpha", "must lie in (0, 1)")
        need(self.p0 > 0, "p0", "must be positive")
        need(len(self.snr_db) >= 1, "snr_db", "grid must not be empty")
        need(self.trials >= 1, "trials", "must be >= 1")
        need(self.precoder in spatial_precoder.KINDS, "precoder", f"must be one of {spatial_precoder.KINDS}")
        need(self.csi in CSI_MODES, "csi", f"must be one of {CSI_MODES}")
        need(self.mapping_mode in MAPPING_MODES, "mapping_mode", f"must be one of {MAPPING_MODES}")
        need(all(b in onebit_receiver.BENCHMARK_KINDS for b in self.benchmarks), "benchmarks",
             f"entries must be in {onebit_receiver.BENCHMARK_KINDS}")
        need(self.agc_margin >= 0, "agc_margin", "must be >= 0")
        need(self.psd_oversample >= 1, "psd_oversample", "must be >= 1")
        need(self.transient is None or self.transient >= 0, "transient", "must be >= 0")
        need(0 <= self.seed < 2**64, "seed", "must be an unsigned 64-bit integer")

    def replace(self, **changes) -> "ExperimentConfig":
        return dataclasses.replace(self, **changes)

    @property
    def rates(self) -> RateConfig:
        return RateConfig(self.mu_tx, self.mu_rx, self.n_block)

    @property
    def constellation(self) -> Constellation:
        return Constellation.ask(self.constellation_size)

    @property
    def tx_pulse_rolloff(self) -> float:
        if self.tx_rolloff is not None:
            return self.tx_rolloff
        return 0.1 if self.mu_tx > 1 else self.eps_tx


@dataclass(frozen=True, eq=False)
class Link:
    """Pulses and matrices derived once from a configuration."""

    config: ExperimentConfig
    tx_pulse: PulseShape
    rx_pulse: PulseShape
    filt: EffectiveFilterMatrix
    p_g: float
    bench_tx: PulseShape
    bench_offset: int
    bench_peak: float

    @property
    def rates(self) -> RateConfig:
        return self.config.rates


def build_link(config: ExperimentConfig) -> Link:
    rates = config.rates
    rho = config.tx_pulse_rolloff
    tx = design_pulse("raised-cosine", rho, config.tx_span, rates.stride)
    fine = design_pulse("raised-cosine", rho, config.tx_span, FINE_SAMPLES_PER_TU)
    p_g = normalized_pulse_energy(fine)
    param = config.rx_param
    if config.rx_kind == "butterworth":
        param = int(param)
    rx = design_pulse(config.rx_kind, param, config.rx_span, rates.mu_rx, cutoff=config.rx_cutoff)
    filt = build_effective_filter(tx, rx, rates, transient=config.transient)

    # symbol-rate reference link: root-raised-cosine at T_sym on the receiver grid
    bench_tx = design_pulse("root-raised-cosine", config.eps_tx, 6, rates.mu_rx)
    h = np.convolve(bench_tx.coefficients, rx.coefficients)
    offset = int(np.argmax(np.abs(h)))
    return Link(config, tx, rx, filt, p_g, bench_tx, offset, float(h[offset]))


def trial_streams(seed: int, trial: int, names=("channel", "estimate", "symbols", "noise", "bench")) -> dict:
    """Independent generators derived from (master seed, trial index)."""
    children = np.random.SeedSequence([int(seed), int(trial)]).spawn(len(names))
    return {name: np.random.default_rng(child) for name, child in zip(names, children)}


def pilot_positions(filt: EffectiveFilterMatrix, r_in: int) -> np.ndarray:
    """Pilots occupy the first ``r_in`` symbols after the leading transient."""
    first = filt.transient_prefix
    return np.arange(first, first + r_in)


def data_symbols(filt: EffectiveFilterMatrix, pilots: np.ndarray | None) -> np.ndarray:
    interior = filt.interior_symbols
    if pilots is None:
        return interior
    return np.setdiff1d(interior, pilots)


def draw_symbols(config: ExperimentConfig, filt: EffectiveFilterMatrix, rng):
    """Level indices ``(N_u, 2, N_block)``, with the pilot prefix when enabled."""
    r_in = config.constellation_size
    idx = rng.integers(0, r_in, size=(config.n_users, 2, config.n_block))
    pilots = None
    if config.mapping_mode == "pilot":
        pilots = pilot_positions(filt, r_in)
        if pilots[-1] >= config.n_block - filt.transient_suffix:
            raise ValueError("block too short for the pilot prefix")
        idx[:, :, pilots] = np.arange(r_in)
    return idx, pilots


def confusion_mutual_information(counts) -> float:
    """Plug-in mutual information (bits) of a joint count table."""
    counts = np.asarray(counts, dtype=float)
    total = counts.sum()
    if total <= 0:
        raise ValueError("empty confusion counts")
    joint = counts / total
    px = joint.sum(axis=1, keepdims=True)
    py = joint.sum(axis=0, keepdims=True)
    mask = joint > 0
    return float(np.sum(joint[mask] * np.log2(joint[mask] / (px @ py)[mask])))


def estimate_mutual_information(counts) -> float:
    """Average plug-in MI over users from ``(N_u, R, R)`` or a single ``(R, R)`` table."""
    counts = np.asarray(counts)
    if counts.ndim == 2:
        return confusion_mutual_information(counts)
    if counts.size == 0:
        raise ValueError("empty confusion counts")
    return float(np.mean([confusion_mutual_information(c) for c in counts]))


@dataclass
class _Tally:
    """Per-trial, per-user error counts and confusion tables for one curve."""

    n_points: int
    n_users: int
    r_in: int
    errors: list = field(default_factory=list)
    totals: list = field(default_factory=list)
    confusion: np.ndarray | None = None

    def __post_init__(self):
        self.confusion = np.zeros((self.n_points, self.n_users, self.r_in, self.r_in), dtype=np.int64)

    def start_trial(self):
        self.errors.append(np.zeros((self.n_points, self.n_users)))
        self.totals.append(np.zeros((self.n_points, self.n_users)))

    def add(self, point: int, user: int, true_idx: np.ndarray, det_idx: np.ndarray):
        self.errors[-1][point, user] += np.count_nonzero(true_idx != det_idx)
        self.totals[-1][point, user] += true_idx.size
        np.add.at(self.confusion[point, user], (true_idx, det_idx), 1)

    def summary(self) -> dict:
        err = np.array(self.errors)
        tot = np.array(self.totals)
        per_trial = np.mean(err / np.maximum(tot, 1), axis=2)  # trial x point
        # users first averaged over blocks, then across users
        ser = np.mean(err.sum(axis=0) / np.maximum(tot.sum(axis=0), 1), axis=1)
        n = per_trial.shape[0]
        stderr = per_trial.std(axis=0, ddof=1) / math.sqrt(n) if n > 1 else np.full(ser.shape, np.nan)
        mi = np.array([estimate_mutual_information(c) for c in self.confusion])
        return {"ser": ser, "ser_stderr": stderr, "mi_bits": mi}


@dataclass
class LinkMetrics:
    """Results of one sweep.

    ``curves`` maps a receiver name (``one-bit``, ``one-bit-pilot``,
    ``two-bit``, ``infinite-bit``) to arrays ``ser``, ``ser_stderr`` and
    ``mi_bits`` aligned with ``axis``.
    """

    axis_name: str
    axis: np.ndarray
    curves: dict
    trials: int
    failures: int
    pilot_failures: int
    gamma: np.ndarray
    mappings: list
    config: ExperimentConfig

    def curve(self, name: str = "one-bit") -> dict:
        return self.curves[name]

    def spectral_efficiency(self, name: str = "one-bit") -> np.ndarray:
        """MI per real dimension divided by the occupied bandwidth factor 1 + eps_tx."""
        return self.curves[name]["mi_bits"] / (1.0 + self.config.eps_tx)

    def gamma_stats(self) -> dict:
        g = np.asarray(self.gamma, dtype=float)
        if g.size == 0:
            return {}
        return {"min": float(g.min()), "mean": float(g.mean()), "median": float(np.median(g)),
                "max": float(g.max()), "count": int(g.size)}

    def to_csv(self, path, name: str = "one-bit") -> None:
        c = self.curves[name]
        se = self.spectral_efficiency(name)
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow([self.axis_name, "ser", "ser_stderr", "mi_bits", "spectral_efficiency", "trials", "failures"])
            for k, x in enumerate(self.axis):
                w.writerow([_fmt(x), _fmt(c["ser"][k]), _fmt(c["ser_stderr"][k]), _fmt(c["mi_bits"][k]),
                            _fmt(se[k]), self.trials, self.failures])

    def metadata(self) -> dict:
        return {
            "config": dataclasses.asdict(self.config),
            "seed": self.config.seed,
            "trials": self.trials,
            "design_failures": self.failures,
            "pilot_inference_failures": self.pilot_failures,
            "gamma": self.gamma_stats(),
            "mappings": self.mappings,
            "curves": sorted(self.curves),
        }

    def write_metadata(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.metadata(), fh, indent=2, default=_json_default)
            fh.write("\n")


def _fmt(x) -> str:
    return repr(float(x))


def _json_default(obj):
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.floating,)):
        return float(obj)
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, tuple):
        return list(obj)
    raise TypeError(f"cannot serialize {type(obj).__name__}")


@dataclass(eq=False)
class TrialDesign:
    """Everything one trial produces before reception."""

    channel: np.ndarray
    precoder: spatial_precoder.SpatialPrecoder
    symbols: np.ndarray  # level indices (N_u, 2, N_block)
    pilots: np.ndarray | None
    solutions: list
    transmit: spatial_precoder.TransmitBlock


def design_trial(link: Link, streams: dict, filters=None, perfect_csi: bool | None = None) -> TrialDesign:
    """Draw channel and symbols, precode spatially and temporally, rescale power."""
    cfg = link.config
    h = mimo_channel.draw_channel(cfg.n_users, cfg.n_antennas, rng=streams["channel"])
    perfect = cfg.csi == "perfect" if perfect_csi is None else perfect_csi
    if perfect:
        estimate = h
    else:
        pilots_cfg = mimo_channel.UplinkPilotConfig(cfg.n_users, uplink_snr=10 ** (cfg.uplink_snr_db / 10))
        estimate = mimo_channel.estimate_channel(h, pilots_cfg, rng=streams["estimate"])
    precoder = spatial_precoder.build_precoder(estimate, cfg.precoder)

    idx, pilots = draw_symbols(cfg, link.filt, streams["symbols"])
    levels = cfg.constellation.array[idx]
    budget = Budget(cfg.p0, link.p_g, cfg.n_users)
    spectrum = Spectrum(cfg.alpha, cfg.eps_tx, cfg.tx_pulse_rolloff, cfg.mu_tx)
    sols = quant_precoder.design_block(levels, filters if filters is not None else link.filt,
                                       budget, spectrum, cfg.constellation)
    u = np.array([s[0].u + 1j * s[1].u for s in sols])
    transmit = spatial_precoder.apply_and_rescale(precoder, u, cfg.p0, link.p_g)
    return TrialDesign(h, precoder, idx, pilots, sols, transmit)


def _benchmark_samples(link: Link, design: TrialDesign, streams: dict):
    """Noiseless symbol-rate reference samples ``(N_u, N_block)`` and true gains."""
    cfg = link.config
    x = cfg.constellation.array[design.symbols]
    xc = x[:, 0, :] + 1j * x[:, 1, :]
    rates = cfg.rates
    stuffed = np.zeros((cfg.n_users, rates.n_tot), dtype=complex)
    stuffed[:, ::rates.mu_rx] = xc
    s = design.precoder.matrix @ stuffed
    p_g = normalized_pulse_energy(link.bench_tx, rates.t_sym)
    c = math.sqrt((cfg.p0 / p_g) / np.vdot(s, s).real)
    shaped = link.bench_tx.filter(c * s, axis=-1)
    received = link.rx_pulse.filter(design.channel @ shaped, axis=-1)
    start = link.bench_offset
    y = received[:, start:start + rates.n_tot:rates.mu_rx][:, :cfg.n_block]
    gains = c * np.real(np.diag(design.channel @ design.precoder.matrix)) * link.bench_peak
    return y, gains


def _detect_one_bit(z_user: np.ndarray, sol, rates: RateConfig, constellation: Constellation,
                    pilots, inferred: bool):
    """Return detected level indices for one branch and whether inference failed."""
    words = z_user.reshape(rates.n_block, rates.mu_rx)
    if not inferred:
        order = np.argsort(sol.mapping.indices, kind="stable")
        best, _ = onebit_receiver.hamming_decisions(words, sol.mapping.codewords[order])
        return order[best], False
    pilot_words = words[pilots]
    try:
        mapping = onebit_receiver.infer_mapping_from_pilots(pilot_words, constellation, rates.mu_rx)
    except onebit_receiver.MappingInferenceError:
        best, _ = onebit_receiver.hamming_decisions(words, pilot_words)
        return best, True
    order = np.argsort(mapping.indices, kind="stable")
    best, _ = onebit_receiver.hamming_decisions(words, mapping.codewords[order])
    return order[best], False


def run_ser_sweep(config: ExperimentConfig, progress=None) -> LinkMetrics:
    """SER and MI versus SNR for the 1-bit design and the enabled benchmarks.

    Each trial draws one channel, one symbol block and one unit noise
    realization that is rescaled for every SNR point.
    """
    link = build_link(config)
    rates = config.rates
    r_in = config.constellation_size
    snrs = np.asarray(config.snr_db, dtype=float)
    names = ["one-bit"] + (["one-bit-pilot"] if config.mapping_mode == "pilot" else []) + list(config.benchmarks)
    tallies = {n: _Tally(snrs.size, config.n_users, r_in) for n in names}
    bench_cfg = {b: onebit_receiver.BenchmarkReceiverConfig(b, config.agc_margin, config.gain_mse_db)
                 for b in config.benchmarks}
    failures = pilot_failures = 0
    gammas, mappings = [], []

    for trial in range(config.trials):
        streams = trial_streams(config.seed, trial)
        design = design_trial(link, streams)
        for t in tallies.values():
            t.start_trial()
        for user_sols in design.solutions:
            for sol in user_sols:
                gammas.append(sol.gamma)
                mappings.append(sol.mapping_index)
                failures += int(not sol.feasible)
        keep = data_symbols(link.filt, design.pilots)
        clean = onebit_receiver.noiseless_reception(design.transmit, design.channel, link.tx_pulse,
                                                    link.rx_pulse, rates, link.filt.sample_offset)
        unit = onebit_receiver.filtered_noise(link.rx_pulse, config.n_users, rates.n_tot, streams["noise"])
        if config.benchmarks:
            y_bench, gains = _benchmark_samples(link, design, streams)
            unit_bench = unit[:, ::rates.mu_rx][:, :config.n_block]
            est = {b: [bench_cfg[b].estimate_gain(g, streams["bench"]) for g in gains] for b in config.benchmarks}

        for p, snr in enumerate(snrs):
            noise = onebit_receiver.NoiseModel.from_snr(snr, link.rx_pulse, config.p0)
            y = clean + math.sqrt(noise.n0) * unit
            for k in range(config.n_users):
                for b, part in enumerate((y[k].real, y[k].imag)):
                    z = onebit_receiver.quantize(part)
                    truth = design.symbols[k, b]
                    sol = design.solutions[k][b]
                    det, _ = _detect_one_bit(z, sol, rates, config.constellation, design.pilots, False)
                    tallies["one-bit"].add(p, k, truth[keep], det[keep])
                    if design.pilots is not None:
                        det, failed = _detect_one_bit(z, sol, rates, config.constellation, design.pilots, True)
                        pilot_failures += int(failed)
                        tallies["one-bit-pilot"].add(p, k, truth[keep], det[keep])
            if config.benchmarks:
                yb = y_bench + math.sqrt(noise.n0) * unit_bench
                for name in config.benchmarks:
                    for k in range(config.n_users):
                        for b, part in enumerate((yb[k].real, yb[k].imag)):
                            det = onebit_receiver.benchmark_detect(part, bench_cfg[name], config.constellation,
                                                                   est[name][k])
                            det_idx = config.constellation.index_of(det)
                            truth = design.symbols[k, b]
                            tallies[name].add(p, k, truth[keep], det_idx[keep])
        if progress is not None:
            progress(trial + 1, config.trials)
        logger.info("trial %d/%d done", trial + 1, config.trials)

    curves = {n: t.summary() for n, t in tallies.items()}
    return LinkMetrics("snr_db", snrs, curves, config.trials, failures, pilot_failures,
                       np.array(gammas), mappings, config)


def perturbed_rx_pulse(pulse: PulseShape, fnr_db: float, rng) -> PulseShape:
    """``g + eta`` with i.i.d. real Gaussian eta of variance ``||g||^2 / FNR``."""
    g = pulse.coefficients
    if math.isinf(fnr_db) and fnr_db > 0:
        return pulse
    fnr = 10.0 ** (fnr_db / 10.0)
    sigma = math.sqrt(float(g @ g) / fnr)
    return dataclasses.replace(pulse, coefficients=g + sigma * rng.standard_normal(g.size), iir=None)


def run_fnr_sweep(config: ExperimentConfig, progress=None) -> LinkMetrics:
    """Noiseless, perfect-CSI SER when the transmitter designs with a perturbed RX filter.

    Channel and symbols are shared across FNR points; one standard
    perturbation per user and trial is scaled to each FNR.
    """
    if not config.fnr_db:
        raise ValueError("fnr_db: grid must not be empty")
    link = build_link(config)
    rates = config.rates
    fnrs = np.asarray(config.fnr_db, dtype=float)
    tally = _Tally(fnrs.size, config.n_users, config.constellation_size)
    failures = 0
    gammas, mappings = [], []
    for trial in range(config.trials):
        streams = trial_streams(config.seed, trial, ("channel", "estimate", "symbols", "noise", "bench", "filter"))
        tally.start_trial()
        g = link.rx_pulse.coefficients
        unit = streams["filter"].standard_normal((config.n_users, g.size))
        for p, fnr in enumerate(fnrs):
            scale = 0.0 if math.isinf(fnr) else math.sqrt(float(g @ g) / 10.0 ** (fnr / 10.0))
            filters = []
            for k in range(config.n_users):
                rx_hat = dataclasses.replace(link.rx_pulse, coefficients=g + scale * unit[k], iir=None)
                filters.append(build_effective_filter(link.tx_pulse, rx_hat, rates,
                                                      sample_offset=link.filt.sample_offset,
                                                      transient=(link.filt.transient_prefix,
                                                                 link.filt.transient_suffix)))
            # identical draws for every FNR point
            sub = trial_streams(config.seed, trial)
            design = design_trial(link, sub, filters=filters, perfect_csi=True)
            for user_sols in design.solutions:
                for sol in user_sols:
                    gammas.append(sol.gamma)
                    mappings.append(sol.mapping_index)
                    failures += int(not sol.feasible)
            keep = data_symbols(link.filt, design.pilots)
            y = onebit_receiver.noiseless_reception(design.transmit, design.channel, link.tx_pulse,
                                                    link.rx_pulse, rates, link.filt.sample_offset)
            for k in range(config.n_users):
                for b, part in enumerate((y[k].real, y[k].imag)):
                    z = onebit_receiver.quantize(part)
                    det, _ = _detect_one_bit(z, design.solutions[k][b], rates, config.constellation, None, False)
                    tally.add(p, k, design.symbols[k, b][keep], det[keep])
        if progress is not None:
            progress(trial + 1, config.trials)
    return LinkMetrics("fnr_db", fnrs, {"one-bit": tally.summary()}, config.trials, failures, 0,
                       np.array(gammas), mappings, config)


def transmit_waveform(samples: np.ndarray, rolloff: float, span: int, oversample: int) -> np.ndarray:
    """Per-antenna continuous-time proxy: samples at T_u shaped by the TX pulse."""
    pulse = design_pulse("raised-cosine", rolloff, span, oversample)
    return pulse.filter(_stuff(np.atleast_2d(samples), oversample), axis=-1)


def _stuff(x: np.ndarray, factor: int) -> np.ndarray:
    out = np.zeros(x.shape[:-1] + (x.shape[-1] * factor,), dtype=complex)
    out[..., ::factor] = x
    return out


def compute_psd(waveforms, fft_size: int = 1024, sample_rate: float = 1.0):
    """Averaged periodogram of a stack of waveforms, peak-normalized to 0 dB.

    Parameters
    ----------
    waveforms : array_like or list of arrays
        Each array is ``(n_streams, n_samples)``; all streams of all arrays
        are averaged.
    fft_size : int
        Must be at least the longest waveform.
    sample_rate : float
        Samples per unit of the returned frequency axis.

    Returns
    -------
    freq, psd_db : ndarray
        Centered frequency grid and the normalized PSD.
    """
    if isinstance(waveforms, np.ndarray):
        waveforms = [waveforms]
    acc = np.zeros(fft_size)
    count = 0
    for w in waveforms:
        w = np.atleast_2d(w)
        if w.shape[-1] > fft_size:
            raise ValueError(f"fft_size {fft_size} is shorter than the {w.shape[-1]}-sample waveform")
        acc += np.sum(np.abs(np.fft.fft(w, fft_size, axis=-1)) ** 2, axis=0)
        count += w.shape[0]
    if count == 0:
        raise ValueError("no waveforms given")
    psd = np.fft.fftshift(acc / count)
    freq = np.fft.fftshift(np.fft.fftfreq(fft_size, d=1.0 / sample_rate))
    with np.errstate(divide="ignore"):
        psd_db = 10.0 * np.log10(psd / psd.max())
    return freq, psd_db


def out_of_band_suppression(freq, psd_db, band_edge: float, plateau: tuple[float, float]) -> float:
    """In-band peak minus the mean out-of-band level over ``plateau`` (both in dB).

    Frequencies are in units of 1/T_sym; the mean is taken in linear scale.
    """
    freq = np.abs(np.asarray(freq))
    psd_db = np.asarray(psd_db)
    inband = freq <= band_edge
    lo, hi = plateau
    oob = (freq >= lo) & (freq <= hi)
    if not np.any(inband) or not np.any(oob):
        raise ValueError("empty in-band or plateau region")
    peak = psd_db[inband].max()
    level = 10.0 * np.log10(np.mean(10.0 ** (psd_db[oob] / 10.0)))
    return float(peak - level)


@dataclass
class PsdResult:
    freq: np.ndarray  # units of 1/T_sym
    psd_db: np.ndarray
    suppression_db: float
    gamma: np.ndarray

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["normalized_frequency", "psd_db"])
            for f, p in zip(self.freq, self.psd_db):
                w.writerow([_fmt(f), _fmt(p)])


def psd_plateau(config: ExperimentConfig) -> tuple[float, float, float]:
    """Band edge and the out-of-band measurement window, in units of 1/T_sym.

    The window starts 10% above the system band edge ``(1+eps)/2`` and stops
    where the TX pulse starts rolling off, ``(1-rho) mu_tx / 2``.
    """
    edge = (1.0 + config.eps_tx) / 2.0
    top = (1.0 - config.tx_pulse_rolloff) * config.mu_tx / 2.0
    return edge, 1.1 * edge, max(top, 1.1 * edge + 1e-9)


def run_psd(config: ExperimentConfig, progress=None) -> PsdResult:
    """Average transmit PSD over trials and antennas for the configured design."""
    link = build_link(config)
    waves = []
    gammas = []
    for trial in range(config.trials):
        design = design_trial(link, trial_streams(config.seed, trial))
        gammas.extend(s.gamma for user in design.solutions for s in user)
        waves.append(transmit_waveform(design.transmit.samples, config.tx_pulse_rolloff,
                                       config.tx_span, config.psd_oversample))
        if progress is not None:
            progress(trial + 1, config.trials)
    fs = config.psd_oversample * config.mu_tx  # samples per T_sym
    freq, psd = compute_psd(waves, config.psd_nfft, fs)
    edge, lo, hi = psd_plateau(config)
    return PsdResult(freq, psd, out_of_band_suppression(freq, psd, edge, (lo, hi)), np.array(gammas))

"""Receiver side: filtered-noise reception, 1-bit quantization, Hamming
detection, pilot-based mapping inference and the multi-bit benchmarks."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .dsp_filters import PulseShape, RateConfig
from .quant_precoder import Constellation, ForwardMapping, codeword_set

# impulse-response length used to measure the energy of recursive filters
_IIR_ENERGY_TAPS = 4096
# settling samples prepended to the noise before recursive filtering
_IIR_WARMUP = 256


@dataclass(frozen=True)
class ReceivedBlock:
    """Samples of one user, both branches.

    ``y`` and ``z`` have shape ``(2, N_tot)``; row 0 is the in-phase branch.
    """

    y: np.ndarray
    mu_rx: int

    @property
    def z(self) -> np.ndarray:
        return quantize(self.y)

    def symbol_view(self, branch: int = 0) -> np.ndarray:
        """``z(i)`` words stacked as ``(N_block, mu_rx)``."""
        return self.z[branch].reshape(-1, self.mu_rx)


def quantize(y) -> np.ndarray:
    """Elementwise sign with sign(0) = +1."""
    return np.where(np.asarray(y) >= 0, 1, -1).astype(int)


def pulse_energy(pulse: PulseShape) -> float:
    """sum_m g(m)^2, taken over a long impulse response for recursive filters."""
    if pulse.iir is None:
        return float(np.sum(pulse.coefficients**2))
    from scipy import signal

    b, a = pulse.iir
    impulse = np.zeros(_IIR_ENERGY_TAPS)
    impulse[0] = 1.0
    return float(np.sum(signal.lfilter(b, a, impulse) ** 2))


@dataclass(frozen=True)
class NoiseModel:
    """White noise of density N0/2 per real branch ahead of the RX filter.

    SNR is the total transmit power over the complex filtered-noise variance
    of one receiver sample, so ``N0 * sum g^2 = P0 / SNR``.
    """

    n0: float
    filter_energy: float

    def __post_init__(self):
        if self.n0 < 0 or self.filter_energy <= 0:
            raise ValueError("N0 must be >= 0 and the filter energy positive")

    @classmethod
    def from_snr(cls, snr_db: float, rx_pulse: PulseShape, p0: float = 1.0) -> "NoiseModel":
        energy = pulse_energy(rx_pulse)
        if math.isinf(snr_db) and snr_db > 0:
            return cls(0.0, energy)
        snr = 10.0 ** (snr_db / 10.0)
        return cls(p0 / (snr * energy), energy)

    @property
    def sigma2_filt(self) -> float:
        """Filtered per-sample variance of one real branch."""
        return 0.5 * self.n0 * self.filter_energy

    @property
    def noiseless(self) -> bool:
        return self.n0 == 0.0


def _upsample(x: np.ndarray, factor: int) -> np.ndarray:
    if factor == 1:
        return x
    out = np.zeros(x.shape[:-1] + (x.shape[-1] * factor,), dtype=x.dtype)
    out[..., ::factor] = x
    return out


def noiseless_reception(transmit, channel, tx_pulse: PulseShape, rx_pulse: PulseShape,
                        rates: RateConfig, sample_offset: int) -> np.ndarray:
    """Complex noiseless samples ``(N_u, N_tot)`` for every user.

    Each antenna stream is zero-stuffed to the receiver grid, shaped by the
    TX pulse, mixed by the true channel and filtered by the RX pulse.  The
    output keeps receiver samples ``sample_offset .. sample_offset+N_tot-1``
    of the full convolution.
    """
    s = np.asarray(getattr(transmit, "samples", transmit))
    channel = np.asarray(channel)
    if channel.shape[1] != s.shape[0]:
        raise ValueError(f"channel has {channel.shape[1]} antennas, block has {s.shape[0]}")
    if s.shape[1] != rates.n_q:
        raise ValueError(f"block has {s.shape[1]} samples, expected N_q={rates.n_q}")
    shaped = tx_pulse.filter(_upsample(s, rates.stride), axis=-1)
    mixed = channel @ shaped
    filtered = rx_pulse.filter(mixed, axis=-1)
    stop = sample_offset + rates.n_tot
    if filtered.shape[-1] < stop:
        filtered = np.pad(filtered, [(0, 0), (0, stop - filtered.shape[-1])])
    return filtered[:, sample_offset:stop]


def filtered_noise(rx_pulse: PulseShape, n_users: int, n_samples: int, rng) -> np.ndarray:
    """Unit-density complex white noise passed through the RX filter.

    Returns ``(n_users, n_samples)`` stationary samples whose real and imaginary
    parts each have variance ``sum g^2 / 2``; scale by ``sqrt(N0)``.
    """
    warm = _IIR_WARMUP if rx_pulse.iir is not None else len(rx_pulse)
    shape = (n_users, n_samples + warm)
    white = (rng.standard_normal(shape) + 1j * rng.standard_normal(shape)) / np.sqrt(2.0)
    out = rx_pulse.filter(white, axis=-1)
    return out[:, warm:warm + n_samples]


def simulate_reception(transmit, channel, tx_pulse: PulseShape, rx_pulse: PulseShape,
                       rates: RateConfig, noise: NoiseModel, rng, sample_offset: int) -> list[ReceivedBlock]:
    """Noisy received blocks, one per user."""
    clean = noiseless_reception(transmit, channel, tx_pulse, rx_pulse, rates, sample_offset)
    y = clean
    if not noise.noiseless:
        rng = np.random.default_rng(rng)
        y = clean + np.sqrt(noise.n0) * filtered_noise(rx_pulse, clean.shape[0], clean.shape[1], rng)
    return [ReceivedBlock(np.vstack([row.real, row.imag]), rates.mu_rx) for row in y]


def hamming_decisions(words: np.ndarray, codebook: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Index of the nearest codebook row for every word, and its distance.

    Ties go to the lowest codebook row.
    """
    words = np.asarray(words)
    distances = np.sum(words[:, None, :] != np.asarray(codebook)[None, :, :], axis=-1)
    best = np.argmin(distances, axis=1)
    return best, distances[np.arange(words.shape[0]), best]


def detect(z_block, mapping: ForwardMapping, constellation: Constellation = Constellation()) -> np.ndarray:
    """Minimum-Hamming-distance detection of a ``(N_block * mu_rx,)`` word.

    The codebook is the mapping's codewords; ties resolve to the codeword
    with the lowest enumeration index.
    """
    z = np.asarray(z_block).reshape(-1, mapping.mu_rx)
    order = np.argsort(mapping.indices, kind="stable")
    codebook = mapping.codewords[order]
    best, _ = hamming_decisions(z, codebook)
    return constellation.array[order[best]]


class MappingInferenceError(ValueError):
    """Two pilot intervals produced the same codeword."""

    def __init__(self, words):
        super().__init__("pilot codewords are not distinct; mapping cannot be inverted")
        self.words = np.asarray(words)


def infer_mapping_from_pilots(z_pilot_block, constellation: Constellation = Constellation(),
                              mu_rx: int = 2) -> ForwardMapping:
    """Read the codeword observed during each pilot interval.

    The pilot prefix carries the levels in increasing order, one per symbol.
    """
    words = np.asarray(z_pilot_block).reshape(-1, mu_rx)
    if words.shape[0] != constellation.size:
        raise ValueError(f"expected {constellation.size} pilot symbols, got {words.shape[0]}")
    if len({tuple(w) for w in words}) != words.shape[0]:
        raise MappingInferenceError(words)
    return ForwardMapping.from_codewords(words)


def detect_with_codebook(z_block, codebook, constellation: Constellation = Constellation()) -> np.ndarray:
    """Hamming detection against an arbitrary level-ordered codebook."""
    codebook = np.asarray(codebook)
    best, _ = hamming_decisions(np.asarray(z_block).reshape(-1, codebook.shape[1]), codebook)
    return constellation.array[best]


BENCHMARK_KINDS = ("two-bit", "infinite-bit")


@dataclass(frozen=True)
class BenchmarkReceiverConfig:
    """Multi-bit reference receiver for symbol-rate linear precoding."""

    kind: str = "two-bit"
    agc_margin: float = 0.10
    gain_knowledge_mse_db: float = -20.0

    def __post_init__(self):
        if self.kind not in BENCHMARK_KINDS:
            raise ValueError(f"unknown benchmark receiver {self.kind!r}; expected {BENCHMARK_KINDS}")
        if self.agc_margin < 0:
            raise ValueError(f"agc_margin must be >= 0, got {self.agc_margin}")

    def estimate_gain(self, gain: float, rng) -> float:
        """True gain with a multiplicative Gaussian error of the configured MSE."""
        if math.isinf(self.gain_knowledge_mse_db):
            return float(gain)
        sd = math.sqrt(10.0 ** (self.gain_knowledge_mse_db / 10.0))
        return float(gain * (1.0 + sd * rng.standard_normal()))


def uniform_quantize(y, bits: int, full_scale: float) -> np.ndarray:
    """Midpoint reconstruction of a mid-rise uniform quantizer on [-full_scale, full_scale]."""
    cells = 2**bits
    step = 2.0 * full_scale / cells
    idx = np.clip(np.floor((np.asarray(y) + full_scale) / step), 0, cells - 1)
    return -full_scale + (idx + 0.5) * step


def nearest_level(values, constellation: Constellation) -> np.ndarray:
    levels = constellation.array
    return levels[np.argmin(np.abs(np.asarray(values)[..., None] - levels), axis=-1)]


def benchmark_detect(y_block, config: BenchmarkReceiverConfig, constellation: Constellation,
                     gain_estimate: float) -> np.ndarray:
    """Detect real symbol-rate samples ``y`` given the estimated gain.

    The two-bit receiver's AGC range spans the noiseless constellation at the
    estimated gain, widened by ``agc_margin``.
    """
    y = np.asarray(y_block, dtype=float)
    if gain_estimate == 0:
        raise ValueError("gain estimate is zero")
    if config.kind == "two-bit":
        full_scale = np.max(np.abs(constellation.array)) * abs(gain_estimate) * (1.0 + config.agc_margin)
        y = uniform_quantize(y, 2, full_scale)
    return nearest_level(y / gain_estimate, constellation)

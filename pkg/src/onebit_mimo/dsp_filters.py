"""Pulse-shaping filters and the effective TX->RX filter matrix.

All pulses are sampled causally, starting at t = 0, on a grid of
``samples_per_interval`` points per interval (one symbol for RX pulses,
one precoded sample ``T_u`` for TX pulses).  The effective filter matrix
maps a block of precoded samples ``u`` to the noiseless received samples
``G u`` at the receiver rate.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import signal

PULSE_KINDS = ("raised-cosine", "root-raised-cosine", "butterworth", "impulse")


@dataclass(frozen=True)
class RateConfig:
    """Symbol period, oversampling factors and block length.

    Attributes
    ----------
    mu_tx : int
        Precoded samples per symbol.
    mu_rx : int
        Receiver samples per symbol.
    n_block : int
        Symbols per block.
    t_sym : float
        Symbol period in seconds.
    """

    mu_tx: int = 2
    mu_rx: int = 2
    n_block: int = 50
    t_sym: float = 1.0

    def __post_init__(self):
        for name in ("mu_tx", "mu_rx", "n_block"):
            value = getattr(self, name)
            if int(value) != value or value < 1:
                raise ValueError(f"{name} must be a positive integer, got {value}")
        if self.t_sym <= 0:
            raise ValueError(f"t_sym must be positive, got {self.t_sym}")

    @property
    def t_u(self) -> float:
        return self.t_sym / self.mu_tx

    @property
    def t_s(self) -> float:
        return self.t_sym / self.mu_rx

    @property
    def n_q(self) -> int:
        return self.mu_tx * self.n_block

    @property
    def n_tot(self) -> int:
        return self.mu_rx * self.n_block

    @property
    def stride(self) -> int:
        """Receiver samples per precoded sample."""
        if self.mu_rx % self.mu_tx:
            raise ValueError(
                f"mu_rx={self.mu_rx} must be a multiple of mu_tx={self.mu_tx}"
            )
        return self.mu_rx // self.mu_tx

    def supports(self, levels: int) -> bool:
        """True when 2**mu_rx codewords can label ``levels`` amplitudes."""
        return 2**self.mu_rx >= levels


@dataclass(frozen=True, eq=False)
class PulseShape:
    kind: str
    span: int
    samples_per_interval: int
    coefficients: np.ndarray
    rolloff: float | None = None
    order: int | None = None
    cutoff: float | None = None
    interval: float = 1.0
    # recursive (b, a) form, kept for Butterworth pulses
    iir: tuple[np.ndarray, np.ndarray] | None = field(default=None, repr=False)

    @property
    def dt(self) -> float:
        return self.interval / self.samples_per_interval

    def __len__(self):
        return self.coefficients.size

    def filter(self, x: np.ndarray, axis: int = -1) -> np.ndarray:
        """Full-length causal filtering of ``x`` (recursive when available).

        The output has ``x.shape[axis] + len(self) - 1`` samples, so FIR
        filtering equals full linear convolution.
        """
        x = np.asarray(x)
        pad = [(0, 0)] * x.ndim
        pad[axis] = (0, len(self) - 1)
        x = np.pad(x, pad)
        if self.iir is not None:
            b, a = self.iir
            return signal.lfilter(b, a, x, axis=axis)
        return signal.lfilter(self.coefficients, [1.0], x, axis=axis)

    def to_csv(self, path) -> None:
        np.savetxt(path, self.coefficients, fmt="%.17g")


def raised_cosine(t: np.ndarray, period: float, rolloff: float) -> np.ndarray:
    """Raised-cosine impulse response with unit peak."""
    x = np.asarray(t, dtype=float) / period
    out = np.sinc(x)
    if rolloff == 0:
        return out
    denom = 1.0 - (2.0 * rolloff * x) ** 2
    singular = np.isclose(denom, 0.0, atol=1e-12)
    safe = np.where(singular, 1.0, denom)
    out = out * np.cos(np.pi * rolloff * x) / safe
    return np.where(singular, np.pi / 4 * np.sinc(1.0 / (2.0 * rolloff)), out)


def root_raised_cosine(t: np.ndarray, period: float, rolloff: float) -> np.ndarray:
    """Root-raised-cosine impulse response, scaled so that the integral
    of its square equals ``period``."""
    x = np.asarray(t, dtype=float) / period
    if rolloff == 0:
        return np.sinc(x)
    b = rolloff
    out = np.empty_like(x)
    at_zero = np.isclose(x, 0.0, atol=1e-12)
    at_sing = np.isclose(np.abs(x), 1.0 / (4.0 * b), atol=1e-12)
    rest = ~(at_zero | at_sing)
    xr = x[rest]
    num = np.sin(np.pi * xr * (1 - b)) + 4 * b * xr * np.cos(np.pi * xr * (1 + b))
    den = np.pi * xr * (1 - (4 * b * xr) ** 2)
    out[rest] = num / den
    out[at_zero] = 1 - b + 4 * b / np.pi
    out[at_sing] = b / np.sqrt(2) * (
        (1 + 2 / np.pi) * np.sin(np.pi / (4 * b)) + (1 - 2 / np.pi) * np.cos(np.pi / (4 * b))
    )
    return out


def design_pulse(
    kind: str,
    param: float | int | None = None,
    span: int = 6,
    samples_per_interval: int = 2,
    *,
    interval: float = 1.0,
    cutoff: float = 0.25,
) -> PulseShape:
    """Sample a pulse on ``span * samples_per_interval + 1`` causal points.

    Parameters
    ----------
    kind : str
        ``"raised-cosine"``, ``"root-raised-cosine"``, ``"butterworth"`` or
        ``"impulse"``.
    param : float or int
        Roll-off for the cosine pulses, filter order for Butterworth.
    span : int
        Support length in intervals.  For Butterworth this is the length of
        the FIR truncation (8 symbol durations by default in experiments).
    samples_per_interval : int
        Grid density.
    interval : float
        Duration of one interval in seconds.
    cutoff : float
        Butterworth -3 dB frequency as a fraction of the sample rate.
    """
    if kind not in PULSE_KINDS:
        raise ValueError(f"unsupported pulse kind {kind!r}; expected one of {PULSE_KINDS}")
    if int(span) != span or span < 1:
        raise ValueError(f"span must be a positive integer, got {span}")
    if int(samples_per_interval) != samples_per_interval or samples_per_interval < 1:
        raise ValueError(f"samples_per_interval must be a positive integer, got {samples_per_interval}")
    n = span * samples_per_interval + 1
    spi = samples_per_interval

    if kind == "impulse":
        coeffs = np.zeros(n)
        coeffs[0] = 1.0
        return PulseShape(kind, span, spi, coeffs, interval=interval)

    if kind == "butterworth":
        order = int(param if param is not None else 5)
        if order < 1:
            raise ValueError(f"butterworth order must be >= 1, got {order}")
        if not 0 < cutoff < 0.5:
            raise ValueError(f"cutoff must lie in (0, 0.5) of the sample rate, got {cutoff}")
        b, a = signal.butter(order, 2.0 * cutoff)
        impulse = np.zeros(n)
        impulse[0] = 1.0
        coeffs = signal.lfilter(b, a, impulse)
        return PulseShape(kind, span, spi, coeffs, order=order, cutoff=cutoff,
                          interval=interval, iir=(b, a))

    rolloff = float(param if param is not None else 0.22)
    if not 0.0 <= rolloff <= 1.0:
        raise ValueError(f"rolloff must lie in [0, 1], got {rolloff}")
    t = (np.arange(n) - (n - 1) / 2) * interval / spi
    shape = raised_cosine if kind == "raised-cosine" else root_raised_cosine
    coeffs = shape(t, interval, rolloff)
    return PulseShape(kind, span, spi, coeffs, rolloff=rolloff, interval=interval)


def normalized_pulse_energy(pulse: PulseShape, t_u: float | None = None) -> float:
    """Discrete approximation of (1/T_u) * integral |g(t)|^2 dt."""
    g = np.asarray(pulse.coefficients, dtype=float)
    if g.size == 0 or not np.any(g):
        raise ValueError("pulse has no energy")
    t_u = pulse.interval if t_u is None else t_u
    return float(np.sum(g**2) * pulse.dt / t_u)


def autocorrelation(pulse: PulseShape, t_u: float | None = None, max_lag: int | None = None):
    """Normalized autocorrelation R_g(i) at lags i * T_u, i = 0..max_lag.

    Requires the pulse grid to be an integer number of samples per T_u.
    """
    t_u = pulse.interval if t_u is None else t_u
    step = t_u / pulse.dt
    if not math.isclose(step, round(step)):
        raise ValueError("T_u is not a whole number of pulse samples")
    step = int(round(step))
    g = pulse.coefficients
    full = np.correlate(g, g, mode="full")[g.size - 1:] * pulse.dt / t_u
    lags = full[::step]
    if max_lag is not None:
        lags = lags[: max_lag + 1]
    return lags


@dataclass(frozen=True, eq=False)
class EffectiveFilterMatrix:
    """Matrix G (N_tot x N_q) with s_RX = beta * G @ u.

    Row ``n`` holds the receiver sample taken at absolute index
    ``n + sample_offset`` of the full convolution, so that the rows of
    symbol ``i`` are ``i*mu_rx .. i*mu_rx + mu_rx - 1``.
    """

    matrix: np.ndarray
    rates: RateConfig
    sample_offset: int
    transient_prefix: int
    transient_suffix: int
    response: np.ndarray = field(repr=False)

    @property
    def interior_symbols(self) -> np.ndarray:
        return np.arange(self.transient_prefix, self.rates.n_block - self.transient_suffix)

    @property
    def interior_rows(self) -> np.ndarray:
        mu = self.rates.mu_rx
        return (self.interior_symbols[:, None] * mu + np.arange(mu)).ravel()

    def block(self, i: int) -> np.ndarray:
        """Rows G_tot(i) belonging to symbol ``i``."""
        mu = self.rates.mu_rx
        return self.matrix[i * mu:(i + 1) * mu]

    def apply(self, u: np.ndarray) -> np.ndarray:
        return self.matrix @ u


def default_transient(tx_span: int, rx_span: int) -> int:
    """ceil((N_TX + N_RX)/2) symbols, clamped to 1..3."""
    return int(min(3, max(1, math.ceil((tx_span + rx_span) / 2))))


def combined_response(tx: PulseShape, rx: PulseShape) -> np.ndarray:
    """TX and RX pulses convolved on the receiver grid."""
    return np.convolve(tx.coefficients, rx.coefficients)


def build_effective_filter(
    tx: PulseShape,
    rx: PulseShape,
    rates: RateConfig,
    *,
    sample_offset: int | None = None,
    transient: int | tuple[int, int] | None = None,
) -> EffectiveFilterMatrix:
    """Build G with G[n, q] = sum_m g_tx(n + d - m - q*stride) g_rx(m).

    Both pulses must be sampled at the receiver rate.  ``d`` defaults to
    the peak position of the combined response, which aligns each symbol
    with the samples where its precoded samples arrive.
    """
    stride = rates.stride
    if tx.kind != "impulse" and tx.samples_per_interval != stride:
        raise ValueError(
            f"TX pulse has {tx.samples_per_interval} samples per T_u, "
            f"expected {stride} (receiver grid)"
        )
    if rx.samples_per_interval != rates.mu_rx and rx.kind != "impulse":
        raise ValueError(
            f"RX pulse has {rx.samples_per_interval} samples per symbol, expected {rates.mu_rx}"
        )
    h = combined_response(tx, rx)
    if h.size > rates.n_tot:
        raise ValueError(
            f"combined filter spans {h.size} samples, longer than the "
            f"{rates.n_tot}-sample block"
        )
    if sample_offset is None:
        sample_offset = int(np.argmax(np.abs(h)))
    if sample_offset < 0:
        raise ValueError("sample_offset must be non-negative")
    if transient is None:
        tx_symbols = math.ceil(tx.span / rates.mu_tx) if tx.kind != "impulse" else 0
        rx_symbols = rx.span if rx.kind != "impulse" else 0
        transient = default_transient(tx_symbols, rx_symbols) if (tx_symbols + rx_symbols) else 0
    prefix, suffix = (transient, transient) if np.isscalar(transient) else transient
    if prefix + suffix >= rates.n_block:
        raise ValueError(
            f"transient symbols ({prefix}+{suffix}) leave no interior in a "
            f"block of {rates.n_block}"
        )

    n = np.arange(rates.n_tot)[:, None] + sample_offset
    q = np.arange(rates.n_q)[None, :] * stride
    idx = n - q
    valid = (idx >= 0) & (idx < h.size)
    matrix = np.where(valid, h[np.clip(idx, 0, h.size - 1)], 0.0)
    return EffectiveFilterMatrix(matrix, rates, int(sample_offset), int(prefix), int(suffix), h)

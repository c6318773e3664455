"""Rayleigh flat-fading multi-user channel and uplink pilot estimation."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


def draw_channel(n_u: int, n_t: int, sigma_h: float = 1.0, rng=None) -> np.ndarray:
    """Draw an ``n_u x n_t`` i.i.d. CN(0, sigma_h**2) channel matrix."""
    if not 1 <= n_u <= n_t:
        raise ValueError(f"need 1 <= n_u <= n_t, got n_u={n_u}, n_t={n_t}")
    if sigma_h < 0:
        raise ValueError(f"sigma_h must be non-negative, got {sigma_h}")
    rng = np.random.default_rng(rng)
    z = rng.standard_normal((n_u, n_t)) + 1j * rng.standard_normal((n_u, n_t))
    return sigma_h / np.sqrt(2.0) * z


def pilot_matrix(n_u: int, n_p: int) -> np.ndarray:
    """First ``n_u`` rows of the unitary ``n_p``-point DFT matrix."""
    if n_p < n_u:
        raise ValueError(f"need at least n_u={n_u} pilots, got {n_p}")
    k = np.arange(n_u)[:, None]
    p = np.arange(n_p)[None, :]
    return np.exp(-2j * np.pi * k * p / n_p) / np.sqrt(n_p)


@dataclass(frozen=True)
class UplinkPilotConfig:
    """Orthogonal uplink pilots; ``uplink_snr`` is linear (15 dB default)."""

    n_users: int
    pilot_count: int | None = None
    uplink_snr: float = 10 ** 1.5
    noise_variance: float = 1.0

    def __post_init__(self):
        if self.uplink_snr <= 0:
            raise ValueError(f"uplink_snr must be positive, got {self.uplink_snr}")
        if self.noise_variance < 0:
            raise ValueError("noise_variance must be non-negative")
        if self.n_pilots < self.n_users:
            raise ValueError(f"pilot_count {self.n_pilots} < n_users {self.n_users}")

    @property
    def n_pilots(self) -> int:
        return self.n_users if self.pilot_count is None else self.pilot_count

    @property
    def matrix(self) -> np.ndarray:
        return pilot_matrix(self.n_users, self.n_pilots)

    def shrinkage(self, sigma_h: float = 1.0) -> float:
        signal = sigma_h**2 * self.uplink_snr
        return signal / (signal + self.noise_variance)


def estimate_channel(
    channel: np.ndarray, pilots: UplinkPilotConfig, rng=None, sigma_h: float = 1.0
) -> np.ndarray:
    """MMSE channel estimate from simultaneous orthogonal uplink pilots.

    The base station receives ``Y = sqrt(rho) H^T X_p + N`` (``N_t x N_p``),
    correlates with ``X_p^H`` and applies the scalar MMSE shrinkage
    ``sigma_h^2 rho / (sigma_h^2 rho + sigma_n^2)`` to the per-coefficient
    least-squares estimate.
    """
    channel = np.asarray(channel)
    n_u, n_t = channel.shape
    if n_u != pilots.n_users:
        raise ValueError(f"channel has {n_u} users, pilots configured for {pilots.n_users}")
    rng = np.random.default_rng(rng)
    x_p = pilots.matrix
    rho = pilots.uplink_snr
    shape = (n_t, pilots.n_pilots)
    noise = np.sqrt(pilots.noise_variance / 2.0) * (
        rng.standard_normal(shape) + 1j * rng.standard_normal(shape)
    )
    y_p = np.sqrt(rho) * channel.T @ x_p + noise
    least_squares = (y_p @ x_p.conj().T).T / np.sqrt(rho)
    return pilots.shrinkage(sigma_h) * least_squares


def channel_to_csv(channel: np.ndarray, path) -> None:
    """Row-major dump, one ``re,im`` pair per line."""
    flat = np.asarray(channel).ravel()
    np.savetxt(path, np.column_stack([flat.real, flat.imag]), delimiter=",", fmt="%.17g")

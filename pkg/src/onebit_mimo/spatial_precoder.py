"""MRT / ZF spatial precoding and transmit-power rescaling."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg

KINDS = ("mrt", "zf")
MAX_CONDITION = 1e12


class SingularChannelError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class SpatialPrecoder:
    matrix: np.ndarray  # N_t x N_u
    kind: str
    scale: float
    condition_number: float

    @property
    def n_t(self) -> int:
        return self.matrix.shape[0]


def build_precoder(estimate: np.ndarray, kind: str = "zf") -> SpatialPrecoder:
    """``c_MRT H^H`` with ``c_MRT = sqrt(1/N_t)`` or
    ``c_ZF H^H (H H^H)^-1`` with ``c_ZF = sqrt(N_t)``.

    ZF goes through a QR factorization of ``H^H`` so that
    ``H^H (H H^H)^-1 = Q R^-H`` without forming the Gram inverse.
    """
    kind = kind.lower()
    if kind not in KINDS:
        raise ValueError(f"unknown spatial precoder {kind!r}; expected one of {KINDS}")
    h = np.asarray(estimate, dtype=complex)
    n_u, n_t = h.shape
    cond = float(np.linalg.cond(h)) if np.any(h) else np.inf
    if kind == "mrt":
        c = np.sqrt(1.0 / n_t)
        return SpatialPrecoder(c * h.conj().T, kind, c, cond)

    if n_t < n_u or not np.isfinite(cond) or cond > MAX_CONDITION:
        raise SingularChannelError(
            f"H H^H is singular or ill-conditioned (condition number {cond:.3g})"
        )
    c = np.sqrt(n_t)
    q, r = np.linalg.qr(h.conj().T)
    a = scipy.linalg.solve_triangular(r, q.conj().T, lower=False).conj().T
    return SpatialPrecoder(c * a, kind, c, cond)


def hardened_gains(channel: np.ndarray, precoder: SpatialPrecoder) -> np.ndarray:
    """Realized beamforming gains: real part of diag(H A)."""
    return np.real(np.diag(np.asarray(channel) @ precoder.matrix))


@dataclass(frozen=True, eq=False)
class TransmitBlock:
    samples: np.ndarray  # N_t x N_q complex
    scale: float

    def power(self, p_g: float) -> float:
        return float(p_g * np.vdot(self.samples, self.samples).real)


def apply_and_rescale(precoder: SpatialPrecoder, quant_block: np.ndarray, p0: float, p_g: float) -> TransmitBlock:
    """Return ``S = c A U`` scaled so that ``P_g trace(S^H S) = P0``."""
    if p0 <= 0 or p_g <= 0:
        raise ValueError(f"P0 and P_g must be positive, got {p0}, {p_g}")
    s = precoder.matrix @ np.asarray(quant_block)
    energy = np.vdot(s, s).real
    if energy == 0:
        raise ValueError("quantization-precoded block is all zero; scale undefined")
    c = float(np.sqrt((p0 / p_g) / energy))
    return TransmitBlock(c * s, c)

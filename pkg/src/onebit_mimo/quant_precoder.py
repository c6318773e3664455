"""Quantization precoding: forward mappings, the max-min margin program and
the exhaustive search over mappings.

For one user and one real branch the precoder looks for samples ``u`` such
that every noiseless received sample ``G u`` carries the sign dictated by
the codeword of its symbol, with the smallest magnitude ``gamma`` as large
as possible::

    maximize gamma  s.t.  C G u >= gamma,  ||u||^2 <= P0 / (2 N_u P_g),
                          ||V F u||^2 <= alpha P0'

where ``C`` holds the codeword signs and ``V F`` picks the out-of-band
bins of an N-point DFT.  The unknown is stacked as ``r = [u, -gamma]``.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field

import numpy as np

from . import socp_solver
from .dsp_filters import EffectiveFilterMatrix

MAX_MAPPINGS = 1000


@dataclass(frozen=True)
class Constellation:
    """Real ASK amplitudes per dimension, strictly increasing."""

    levels: tuple[float, ...] = (-3.0, -1.0, 1.0, 3.0)

    def __post_init__(self):
        levels = tuple(float(v) for v in self.levels)
        if len(levels) < 1:
            raise ValueError("constellation needs at least one level")
        if any(b <= a for a, b in zip(levels, levels[1:])):
            raise ValueError(f"levels must be strictly increasing, got {levels}")
        object.__setattr__(self, "levels", levels)

    @classmethod
    def ask(cls, size: int) -> "Constellation":
        return cls(tuple(float(v) for v in np.arange(-(size - 1), size, 2)))

    @property
    def size(self) -> int:
        return len(self.levels)

    @property
    def array(self) -> np.ndarray:
        return np.array(self.levels)

    def index_of(self, symbols) -> np.ndarray:
        symbols = np.asarray(symbols, dtype=float)
        idx = np.searchsorted(self.array, symbols)
        idx = np.clip(idx, 0, self.size - 1)
        if not np.all(self.array[idx] == symbols):
            bad = symbols[self.array[idx] != symbols]
            raise ValueError(f"symbols outside the alphabet: {np.unique(bad)[:5]}")
        return idx

    def random_indices(self, shape, rng) -> np.ndarray:
        return rng.integers(0, self.size, size=shape)


def codeword_set(mu_rx: int) -> np.ndarray:
    """All 2**mu_rx sign words, ``+1`` before ``-1`` in each position."""
    return np.array(list(itertools.product((1, -1), repeat=mu_rx)), dtype=int)


@dataclass(frozen=True)
class ForwardMapping:
    """Level ``j`` is sent as codeword ``codeword_set(mu_rx)[indices[j]]``."""

    indices: tuple[int, ...]
    mu_rx: int

    def __post_init__(self):
        if len(set(self.indices)) != len(self.indices):
            raise ValueError(f"mapping is not one-to-one: {self.indices}")
        if any(not 0 <= i < 2**self.mu_rx for i in self.indices):
            raise ValueError(f"codeword index out of range in {self.indices}")

    @property
    def codewords(self) -> np.ndarray:
        """R_in x mu_rx array of +-1."""
        return codeword_set(self.mu_rx)[list(self.indices)]

    def describe(self, constellation: Constellation) -> list[str]:
        """``level->bits`` strings, with bit 1 for +1 and 0 for -1."""
        out = []
        for level, word in zip(constellation.levels, self.codewords):
            bits = "".join("1" if c > 0 else "0" for c in word)
            out.append(f"{level:g}->{bits}")
        return out

    @classmethod
    def from_codewords(cls, words) -> "ForwardMapping":
        words = np.asarray(words, dtype=int)
        mu = words.shape[1]
        table = {tuple(w): i for i, w in enumerate(codeword_set(mu))}
        return cls(tuple(table[tuple(w)] for w in words), mu)


def mapping_count(r_in: int, mu_rx: int) -> int:
    r_out = 2**mu_rx
    return math.comb(r_out, r_in) * math.factorial(r_in) if r_in <= r_out else 0


def enumerate_forward_mappings(r_in: int, mu_rx: int, limit: int = MAX_MAPPINGS) -> list[ForwardMapping]:
    """All injective level->codeword assignments in lexicographic order."""
    r_out = 2**mu_rx
    if r_in > r_out:
        raise ValueError(f"R_in={r_in} levels cannot be labelled by {r_out} codewords (mu_rx={mu_rx})")
    count = mapping_count(r_in, mu_rx)
    if count > limit:
        raise ValueError(f"{count} forward mappings exceed the exhaustive-search limit of {limit}")
    return [ForwardMapping(p, mu_rx) for p in itertools.permutations(range(r_out), r_in)]


def build_codeword_matrix(symbols, mapping: ForwardMapping, constellation: Constellation) -> np.ndarray:
    """Diagonal of C: the codeword of each symbol, stacked (length mu_rx * N_block)."""
    idx = constellation.index_of(symbols)
    if mapping.codewords.shape[0] != constellation.size:
        raise ValueError("mapping and constellation sizes differ")
    return mapping.codewords[idx].ravel()


def spectral_bins(n_q: int, mu_tx: int, eps_tx: float, eps_tx_g: float, dft_size: int | None = None):
    """Return ``(N, p0, p1)`` for the out-of-band DFT mask."""
    n = 2 * n_q if dft_size is None else int(dft_size)
    if n < n_q:
        raise ValueError(f"DFT size {n} is smaller than the block length {n_q}")
    p0 = (1.0 + eps_tx) / (1.0 + eps_tx_g) * (n - 1) / (2.0 * mu_tx)
    p1 = int(math.ceil(p0))
    if not 1 <= p1 <= n / 2:
        raise ValueError(f"mask edge p1={p1} outside [1, N/2] for N={n}")
    return n, p0, p1


def out_of_band_operator(n_q: int, n: int, p1: int) -> np.ndarray:
    """Rows p1..N-1-p1 of the N-point DFT acting on n_q samples (V F)."""
    p = np.arange(p1, n - p1)[:, None]
    i = np.arange(n_q)[None, :]
    return np.exp(-2j * np.pi * p * i / n)


@dataclass(frozen=True)
class Budget:
    p0: float = 1.0
    p_g: float = 1.0
    n_users: int = 1

    @property
    def branch_power(self) -> float:
        """Per-user, per-branch bound P0 / (2 N_u P_g)."""
        return self.p0 / (2.0 * self.n_users * self.p_g)


@dataclass(frozen=True)
class Spectrum:
    alpha: float = 1e-3
    eps_tx: float = 0.22
    eps_tx_g: float = 0.1
    mu_tx: int = 2
    dft_size: int | None = None

    def __post_init__(self):
        if not 0.0 < self.alpha < 1.0:
            raise ValueError(f"alpha must lie in (0, 1), got {self.alpha}")


@dataclass(eq=False)
class PrecoderProblem:
    """Stacked program in ``r = [u, -gamma]``."""

    objective: np.ndarray
    b_matrix: np.ndarray
    power: socp_solver.QuadraticConstraint
    spectral: socp_solver.QuadraticConstraint | None
    dft_size: int
    p0: float
    p1: int

    @property
    def n_q(self) -> int:
        return self.objective.size - 1

    def program(self) -> socp_solver.ConvexProgram:
        quad = [self.power] + ([self.spectral] if self.spectral is not None else [])
        rows = self.b_matrix
        return socp_solver.ConvexProgram(self.objective, rows, np.zeros(rows.shape[0]), quad)


class _SharedConstraints:
    """Power/spectral constraints reused across every mapping of a design."""

    def __init__(self, n_q: int, budget: Budget, spectrum: Spectrum):
        pad = np.zeros((n_q, 1))
        self.power = socp_solver.QuadraticConstraint(np.hstack([np.eye(n_q), pad]), budget.branch_power)
        n, p0, p1 = spectral_bins(n_q, spectrum.mu_tx, spectrum.eps_tx, spectrum.eps_tx_g, spectrum.dft_size)
        self.dft_size, self.p0, self.p1 = n, p0, p1
        self.spectral = None
        if n - 2 * p1 > 0:
            d = out_of_band_operator(n_q, n, p1)
            bound = spectrum.alpha * (n - 1) * budget.p0 / (1.0 + spectrum.eps_tx_g)
            self.spectral = socp_solver.QuadraticConstraint(
                np.hstack([d, np.zeros((d.shape[0], 1))]), bound
            )


def assemble_problem(
    codewords: np.ndarray,
    filt: EffectiveFilterMatrix,
    budget: Budget,
    spectrum: Spectrum,
    _shared: _SharedConstraints | None = None,
) -> PrecoderProblem:
    """Build a, B, W and D = V F W for one mapping (transient rows dropped)."""
    n_q = filt.rates.n_q
    codewords = np.asarray(codewords)
    if codewords.size != filt.rates.n_tot:
        raise ValueError(f"codeword diagonal has {codewords.size} entries, expected {filt.rates.n_tot}")
    shared = _shared or _SharedConstraints(n_q, budget, spectrum)
    rows = filt.interior_rows
    cg = codewords[rows, None] * filt.matrix[rows]
    b = -np.hstack([cg, np.ones((rows.size, 1))])
    a = np.zeros(n_q + 1)
    a[-1] = 1.0
    return PrecoderProblem(a, b, shared.power, shared.spectral, shared.dft_size, shared.p0, shared.p1)


@dataclass
class PrecoderSolution:
    u: np.ndarray
    gamma: float
    mapping: ForwardMapping | None
    mapping_index: int
    status: str
    gamma_table: list[float] = field(default_factory=list)
    statuses: list[str] = field(default_factory=list)

    @property
    def feasible(self) -> bool:
        return self.gamma > 0


def solve_single_mapping(problem: PrecoderProblem, tol: socp_solver.Tolerances | None = None) -> PrecoderSolution:
    """Maximize the margin for one mapping; gamma may come out <= 0."""
    prog = problem.program()
    # u = 0, gamma = -1 is strictly feasible for every mapping
    x0 = np.zeros(problem.n_q + 1)
    x0[-1] = 1.0
    report = socp_solver.solve(prog, tol, x0=x0)
    if report.x is None:
        return PrecoderSolution(np.zeros(problem.n_q), -np.inf, None, -1, report.status)
    return PrecoderSolution(report.x[:-1].copy(), -report.objective, None, -1, report.status)


def design_branch(
    symbols,
    filt: EffectiveFilterMatrix,
    budget: Budget,
    spectrum: Spectrum,
    constellation: Constellation = Constellation(),
    mappings: list[ForwardMapping] | None = None,
    tol: socp_solver.Tolerances | None = None,
) -> PrecoderSolution:
    """Search every mapping and keep the one with the largest margin.

    Margins that agree to within the solver's gap tolerance count as ties,
    and ties keep the earliest mapping in enumeration order.
    """
    tie = (tol or socp_solver.Tolerances()).gap
    if mappings is None:
        mappings = enumerate_forward_mappings(constellation.size, filt.rates.mu_rx)
    shared = _SharedConstraints(filt.rates.n_q, budget, spectrum)
    best = None
    gammas, statuses = [], []
    for index, mapping in enumerate(mappings):
        diag = build_codeword_matrix(symbols, mapping, constellation)
        sol = solve_single_mapping(assemble_problem(diag, filt, budget, spectrum, shared), tol)
        gammas.append(sol.gamma)
        statuses.append(sol.status)
        if best is None or sol.gamma > best.gamma + tie:
            sol.mapping, sol.mapping_index = mapping, index
            best = sol
    best.gamma_table, best.statuses = gammas, statuses
    return best


def design_block(
    symbols,
    filters,
    budget: Budget,
    spectrum: Spectrum,
    constellation: Constellation = Constellation(),
    mappings: list[ForwardMapping] | None = None,
    tol: socp_solver.Tolerances | None = None,
) -> list[list[PrecoderSolution]]:
    """Design every user and branch independently.

    Parameters
    ----------
    symbols : array_like, shape (N_u, 2, N_block)
        Real-valued I and Q symbols per user.
    filters : EffectiveFilterMatrix or sequence of them
        One shared filter matrix or one per user.

    Returns
    -------
    list of [I-solution, Q-solution] per user.
    """
    symbols = np.asarray(symbols, dtype=float)
    if symbols.ndim != 3 or symbols.shape[1] != 2:
        raise ValueError(f"symbols must have shape (N_u, 2, N_block), got {symbols.shape}")
    n_u = symbols.shape[0]
    if isinstance(filters, EffectiveFilterMatrix):
        filters = [filters] * n_u
    if mappings is None:
        mappings = enumerate_forward_mappings(constellation.size, filters[0].rates.mu_rx)
    return [
        [design_branch(symbols[k, b], filters[k], budget, spectrum, constellation, mappings, tol) for b in range(2)]
        for k in range(n_u)
    ]


@dataclass(frozen=True)
class ConstraintReport:
    """Residuals of a design: positive violations mean a broken bound."""

    power_violation: float
    spectral_violation: float
    min_margin: float
    signs_match: bool

    def ok(self, tol: float = 1e-8) -> bool:
        return self.power_violation <= tol and self.spectral_violation <= tol and self.signs_match


def check_design(symbols, solution: PrecoderSolution, filt: EffectiveFilterMatrix, budget: Budget,
                 spectrum: Spectrum, constellation: Constellation = Constellation()) -> ConstraintReport:
    """Recompute power, spectral and sign constraints of ``solution`` from scratch."""
    u = np.asarray(solution.u, dtype=float)
    power = float(u @ u) - budget.branch_power
    n, _, p1 = spectral_bins(filt.rates.n_q, spectrum.mu_tx, spectrum.eps_tx, spectrum.eps_tx_g, spectrum.dft_size)
    spectral = -np.inf
    if n - 2 * p1 > 0:
        oob = np.fft.fft(u, n)[p1:n - p1]
        bound = spectrum.alpha * (n - 1) * budget.p0 / (1.0 + spectrum.eps_tx_g)
        spectral = float(np.sum(np.abs(oob) ** 2)) - bound
    rows = filt.interior_rows
    words = build_codeword_matrix(symbols, solution.mapping, constellation)[rows]
    received = filt.apply(u)[rows]
    signs = np.where(received >= 0, 1, -1)
    return ConstraintReport(power, spectral, float(np.min(words * received)), bool(np.all(signs == words)))

"""Log-barrier interior-point solver for linear objectives with linear and
convex quadratic-ball constraints.

Problems have the form::

    minimize    c^T x
    subject to  A x <= b
                ||M_j x||^2 <= rho_j,   j = 1..J

which covers the max-min margin programs built by :mod:`quant_precoder`.
The method is the classical barrier path-following scheme: for a growing
barrier weight ``t`` the smooth function

    t c^T x - sum log(b - A x) - sum log(rho_j - ||M_j x||^2)

is minimized with damped Newton steps, until the duality-gap bound
``m / t`` drops below the requested tolerance.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
import scipy.linalg

logger = logging.getLogger(__name__)

OPTIMAL = "optimal"
INFEASIBLE = "infeasible"
MAX_ITERATIONS = "max-iterations"


@dataclass(frozen=True)
class Tolerances:
    feasibility: float = 1e-8
    gap: float = 1e-7
    barrier_growth: float = 10.0
    armijo_alpha: float = 0.3
    armijo_beta: float = 0.5
    max_outer: int = 60
    max_newton: int = 200
    newton_decrement: float = 1e-10
    slack_min: float = 1e-9


class QuadraticConstraint:
    """Constraint ``||M x||^2 <= rho``; ``M`` may be complex.

    The Gram matrix ``Re(M^H M)`` is computed once and cached so a single
    instance can be shared by many programs.
    """

    def __init__(self, matrix, bound):
        matrix = np.atleast_2d(np.asarray(matrix))
        if not bound > 0:
            raise ValueError(f"quadratic bound must be positive, got {bound}")
        self.matrix = matrix
        self.bound = float(bound)

    @cached_property
    def gram(self) -> np.ndarray:
        m = self.matrix
        q = (m.conj().T @ m).real
        return 0.5 * (q + q.T)

    def value(self, x: np.ndarray) -> float:
        return float(x @ self.gram @ x)


@dataclass
class ConvexProgram:
    """Linear objective, ``A x <= b`` rows and quadratic-ball constraints."""

    objective: np.ndarray
    a_ineq: np.ndarray | None = None
    b_ineq: np.ndarray | None = None
    quadratic: list[QuadraticConstraint] = field(default_factory=list)

    def __post_init__(self):
        self.objective = np.asarray(self.objective, dtype=float).ravel()
        n = self.objective.size
        if n == 0:
            raise ValueError("empty program")
        if self.a_ineq is None:
            self.a_ineq = np.zeros((0, n))
            self.b_ineq = np.zeros(0)
        self.a_ineq = np.atleast_2d(np.asarray(self.a_ineq, dtype=float))
        self.b_ineq = np.asarray(self.b_ineq, dtype=float).ravel()
        if self.a_ineq.shape[1] != n or self.a_ineq.shape[0] != self.b_ineq.size:
            raise ValueError(
                f"inequality block has shape {self.a_ineq.shape} with "
                f"{self.b_ineq.size} bounds for {n} variables"
            )
        for q in self.quadratic:
            if q.matrix.shape[1] != n:
                raise ValueError(
                    f"quadratic constraint has {q.matrix.shape[1]} columns, expected {n}"
                )

    @property
    def dimension(self) -> int:
        return self.objective.size

    @property
    def n_constraints(self) -> int:
        return self.b_ineq.size + len(self.quadratic)

    def slacks(self, x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        lin = self.b_ineq - self.a_ineq @ x
        quad = np.array([q.bound - q.value(x) for q in self.quadratic])
        return lin, quad

    def max_violation(self, x: np.ndarray) -> float:
        lin, quad = self.slacks(x)
        worst = 0.0
        if lin.size:
            worst = max(worst, float(-lin.min()))
        if quad.size:
            worst = max(worst, float(-quad.min()))
        return worst


@dataclass
class SolveReport:
    x: np.ndarray | None
    objective: float
    status: str
    iterations: int
    gap: float
    max_violation: float
    kkt_residual: float
    history: list[tuple[float, float, float, int]] = field(default_factory=list)

    @property
    def optimal(self) -> bool:
        return self.status == OPTIMAL


class _NewtonBreakdown(RuntimeError):
    pass


def _barrier_terms(prog: ConvexProgram, x: np.ndarray, t: float):
    """Gradient and Hessian of the barrier-augmented objective at x."""
    a = prog.a_ineq
    s = prog.b_ineq - a @ x
    inv_s = 1.0 / s
    grad = t * prog.objective + a.T @ inv_s
    hess = (a.T * inv_s**2) @ a
    for q in prog.quadratic:
        qx = q.gram @ x
        f = q.bound - x @ qx
        grad += 2.0 * qx / f
        hess += 2.0 * q.gram / f + 4.0 * np.outer(qx, qx) / f**2
    return grad, hess


def _barrier_value(prog: ConvexProgram, x: np.ndarray, t: float) -> float:
    lin, quad = prog.slacks(x)
    if (lin.size and lin.min() <= 0) or (quad.size and quad.min() <= 0):
        return np.inf
    return t * float(prog.objective @ x) - np.log(lin).sum() - np.log(quad).sum()


def _newton_direction(hess: np.ndarray, grad: np.ndarray) -> np.ndarray:
    try:
        factor = scipy.linalg.cho_factor(hess, check_finite=False)
        dx = -scipy.linalg.cho_solve(factor, grad, check_finite=False)
    except np.linalg.LinAlgError:
        try:
            dx = -np.linalg.solve(hess, grad)
        except np.linalg.LinAlgError as exc:
            raise _NewtonBreakdown(str(exc)) from exc
    if not np.all(np.isfinite(dx)):
        raise _NewtonBreakdown("non-finite Newton direction")
    return dx


def _center(prog: ConvexProgram, x: np.ndarray, t: float, tol: Tolerances):
    """Damped Newton minimization of the barrier function for fixed t.

    Returns ``(x, steps, centered)``; ``centered`` is False when the step
    budget ran out or the line search stalled before the Newton decrement
    fell below tolerance.
    """
    value = _barrier_value(prog, x, t)
    previous = np.inf
    for step in range(1, tol.max_newton + 1):
        grad, hess = _barrier_terms(prog, x, t)
        dx = _newton_direction(hess, grad)
        decrement = float(-grad @ dx)
        if decrement / 2.0 <= tol.newton_decrement:
            return x, step - 1, True
        # below this the decrement is rounding noise of the barrier value
        floor = max(tol.newton_decrement, 1e-13 * (1.0 + abs(value)))
        if decrement < 0.25:
            # quadratic region of a self-concordant barrier: the full step
            # stays feasible, so no line search on the noisy barrier value
            if decrement > 0.5 * previous:
                return x, step - 1, decrement / 2.0 <= floor
            trial = x + dx
            trial_value = _barrier_value(prog, trial, t)
            if np.isfinite(trial_value):
                x, value, previous = trial, trial_value, decrement
                continue
        slope = grad @ dx
        h = 1.0
        while True:
            trial = x + h * dx
            trial_value = _barrier_value(prog, trial, t)
            if trial_value <= value + tol.armijo_alpha * h * slope:
                break
            h *= tol.armijo_beta
            if h < 1e-14:
                # no descent possible at working precision
                return x, step, decrement / 2.0 <= 1e3 * floor
        x, value = trial, trial_value
    return x, tol.max_newton, False


def _kkt_residual(prog: ConvexProgram, x: np.ndarray, t: float) -> float:
    grad, _ = _barrier_terms(prog, x, t)
    return float(np.linalg.norm(grad) / t)


def _barrier_path(prog: ConvexProgram, x: np.ndarray, tol: Tolerances, stop=None):
    """Follow the central path from the strictly feasible point x.

    ``stop(x, t)`` may end the path early (used by phase I).
    """
    m = max(prog.n_constraints, 1)
    scale = max(abs(float(prog.objective @ x)), 1.0)
    t = m / scale
    history = []
    total = 0
    status = MAX_ITERATIONS
    for _ in range(tol.max_outer):
        try:
            x, steps, centered = _center(prog, x, t, tol)
        except _NewtonBreakdown as exc:
            logger.debug("Newton breakdown at t=%g: %s", t, exc)
            break
        total += steps
        if not centered:
            # the m/t gap bound only holds on the central path
            logger.debug("centering did not converge at t=%g", t)
            history.append((t, float(prog.objective @ x), m / t, steps))
            break
        objective = float(prog.objective @ x)
        history.append((t, objective, m / t, steps))
        logger.debug("t=%.3g obj=%.10g gap=%.3g newton=%d", t, objective, m / t, steps)
        if stop is not None and stop(x, t):
            status = OPTIMAL
            break
        if m / t <= tol.gap:
            status = OPTIMAL
            break
        t *= tol.barrier_growth
    return x, t, status, total, history


def find_interior_point(program: ConvexProgram, tol: Tolerances | None = None):
    """Phase I: return x with every constraint slack >= slack_min, or None.

    Minimizes a common slack ``s`` subject to ``A x - b <= s`` and
    ``||M_j x||^2 - rho_j <= s`` (with ``s >= -1`` to stay bounded); the
    program is strictly feasible iff the optimal ``s`` is negative.
    """
    tol = tol or Tolerances()
    n = program.dimension
    x0 = np.zeros(n)
    lin, quad = program.slacks(x0)
    slack_floor = tol.slack_min
    if (not lin.size or lin.min() > slack_floor) and (not quad.size or quad.min() > slack_floor):
        return x0

    # variables z = [x, s]
    a = program.a_ineq
    a_aug = np.vstack([
        np.hstack([a, -np.ones((a.shape[0], 1))]),
        np.hstack([np.zeros((1, n)), -np.ones((1, 1))]),
    ])
    b_aug = np.concatenate([program.b_ineq, [1.0]])
    worst = -min(lin.min() if lin.size else np.inf, quad.min() if quad.size else np.inf)
    s0 = max(worst, 0.0) + 1.0

    # quadratic rows x^T Q x - s <= rho: not a pure ball, so handled with a
    # dedicated barrier below instead of QuadraticConstraint.
    grams = [q.gram for q in program.quadratic]
    bounds = [q.bound for q in program.quadratic]
    c = np.zeros(n + 1)
    c[-1] = 1.0

    def slacks(z):
        x, s = z[:-1], z[-1]
        ls = b_aug - a_aug @ z
        qs = np.array([rho + s - x @ g @ x for g, rho in zip(grams, bounds)])
        return ls, qs

    def value(z, t):
        ls, qs = slacks(z)
        if ls.min() <= 0 or (qs.size and qs.min() <= 0):
            return np.inf
        return t * z[-1] - np.log(ls).sum() - np.log(qs).sum()

    def terms(z, t):
        x = z[:-1]
        ls = b_aug - a_aug @ z
        inv = 1.0 / ls
        grad = t * c + a_aug.T @ inv
        hess = (a_aug.T * inv**2) @ a_aug
        for g, rho in zip(grams, bounds):
            gx = g @ x
            f = rho + z[-1] - x @ gx
            dfd = np.concatenate([-2.0 * gx, [1.0]])
            d2 = np.zeros((n + 1, n + 1))
            d2[:n, :n] = -2.0 * g
            grad += -dfd / f
            hess += np.outer(dfd, dfd) / f**2 - d2 / f
        return grad, hess

    z = np.concatenate([x0, [s0]])
    m = a_aug.shape[0] + len(grams)
    t = 1.0
    for _ in range(tol.max_outer):
        val = value(z, t)
        for _ in range(tol.max_newton):
            grad, hess = terms(z, t)
            try:
                dz = -np.linalg.solve(hess, grad)
            except np.linalg.LinAlgError:
                return None
            dec = float(-grad @ dz)
            if dec / 2.0 <= tol.newton_decrement:
                break
            h = 1.0
            while True:
                trial = z + h * dz
                tv = value(trial, t)
                if tv <= val + tol.armijo_alpha * h * (grad @ dz):
                    break
                h *= tol.armijo_beta
                if h < 1e-14:
                    break
            if h < 1e-14:
                break
            z, val = trial, tv
            if z[-1] < -slack_floor:
                break
        if z[-1] < -slack_floor:
            return z[:-1]
        # s* >= s - m/t at the centered point
        if z[-1] - m / t > 0 or m / t < tol.gap:
            return None
        t *= tol.barrier_growth
    return None


def solve(program: ConvexProgram, tol: Tolerances | None = None, x0=None) -> SolveReport:
    """Solve ``program`` by barrier path-following.

    ``x0`` is an optional strictly feasible starting point; phase I runs
    when it is missing or not strictly feasible.
    """
    tol = tol or Tolerances()
    x = None
    if x0 is not None:
        x0 = np.asarray(x0, dtype=float)
        lin, quad = program.slacks(x0)
        if (not lin.size or lin.min() > 0) and (not quad.size or quad.min() > 0):
            x = x0
    if x is None:
        x = find_interior_point(program, tol)
        if x is None:
            return SolveReport(None, np.inf, INFEASIBLE, 0, np.inf, np.inf, np.inf)

    x, t, status, iterations, history = _barrier_path(program, x, tol)
    m = max(program.n_constraints, 1)
    violation = program.max_violation(x)
    if status == OPTIMAL and violation > tol.feasibility:
        status = MAX_ITERATIONS
    return SolveReport(
        x=x,
        objective=float(program.objective @ x),
        status=status,
        iterations=iterations,
        gap=m / t,
        max_violation=violation,
        kkt_residual=_kkt_residual(program, x, t),
        history=history,
    )

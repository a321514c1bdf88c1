"""
L-BFGS with a strong-Wolfe line search.

The line search brackets a step by doubling and then zooms with cubic,
quadratic and bisection interpolation (Nocedal & Wright, Algorithms 3.5/3.6).
The objective returns (value, gradient) in one call; line-search trial
points reuse that single evaluation for both.
"""
import logging
import time
from collections import deque
from typing import Callable, Optional, Tuple

import numpy as np

from models.optimize import HyperState, OptimizeConfig, OptimizeResult, TraceRecord
from utils.errors import NumericError

logger = logging.getLogger(__name__)

BRACKET_ITERS = 10

Objective = Callable[[np.ndarray], Tuple[float, np.ndarray]]


def _cubicmin(a, fa, fpa, b, fb, c, fc):
    """Minimizer of the cubic through (a, fa), (b, fb), (c, fc) with slope fpa at a, or None."""
    with np.errstate(divide='raise', over='raise', invalid='raise'):
        try:
            C = fpa
            db = b - a
            dc = c - a
            denom = (db * dc) ** 2 * (db - dc)
            d1 = np.array([[dc ** 2, -db ** 2], [-dc ** 3, db ** 3]])
            A, B = d1 @ np.array([fb - fa - C * db, fc - fa - C * dc])
            A /= denom
            B /= denom
            xmin = a + (-B + np.sqrt(B * B - 3 * A * C)) / (3 * A)
        except ArithmeticError:
            return None
    return xmin if np.isfinite(xmin) else None


def _quadmin(a, fa, fpa, b, fb):
    """Minimizer of the quadratic through (a, fa), (b, fb) with slope fpa at a, or None."""
    with np.errstate(divide='raise', over='raise', invalid='raise'):
        try:
            db = b - a
            B = (fb - fa - fpa * db) / (db * db)
            xmin = a - fpa / (2.0 * B)
        except ArithmeticError:
            return None
    return xmin if np.isfinite(xmin) else None


class _LineFunction:
    """phi(t) = f(x + t p) with memoized (value, gradient) evaluations."""

    def __init__(self, objective: Objective, x: np.ndarray, direction: np.ndarray):
        self.objective = objective
        self.x = x
        self.direction = direction
        self._memo = {}

    def evaluate(self, t: float):
        if t not in self._memo:
            point = self.x + t * self.direction
            try:
                value, grad = self.objective(point)
            except NumericError as error:
                logger.debug("Trial step %.3e failed: %s", t, error)
                value, grad = np.inf, np.full_like(point, np.nan)
            if not np.isfinite(value):
                value = np.inf
            self._memo[t] = (float(value), np.asarray(grad, dtype=np.float64), point)
        return self._memo[t]

    def phi(self, t: float) -> float:
        return self.evaluate(t)[0]

    def derphi(self, t: float) -> float:
        return float(self.evaluate(t)[1] @ self.direction)


def _zoom(line, a_lo, a_hi, phi_lo, phi_hi, derphi_lo, phi0, derphi0, c1, c2, max_zoom):
    phi_rec, a_rec = phi0, 0.0
    for i in range(max_zoom):
        dalpha = a_hi - a_lo
        a, b = (a_hi, a_lo) if dalpha < 0 else (a_lo, a_hi)

        a_j = None
        if i > 0:
            cchk = 0.2 * dalpha
            a_j = _cubicmin(a_lo, phi_lo, derphi_lo, a_hi, phi_hi, a_rec, phi_rec)
        if i == 0 or a_j is None or a_j > b - cchk or a_j < a + cchk:
            qchk = 0.1 * dalpha
            a_j = _quadmin(a_lo, phi_lo, derphi_lo, a_hi, phi_hi)
            if a_j is None or a_j > b - qchk or a_j < a + qchk:
                a_j = a_lo + 0.5 * dalpha

        phi_j = line.phi(a_j)
        if phi_j > phi0 + c1 * a_j * derphi0 or phi_j >= phi_lo:
            phi_rec, a_rec = phi_hi, a_hi
            a_hi, phi_hi = a_j, phi_j
        else:
            derphi_j = line.derphi(a_j)
            if abs(derphi_j) <= -c2 * derphi0:
                return a_j
            if derphi_j * (a_hi - a_lo) >= 0:
                phi_rec, a_rec = phi_hi, a_hi
                a_hi, phi_hi = a_lo, phi_lo
            else:
                phi_rec, a_rec = phi_lo, a_lo
            a_lo, phi_lo, derphi_lo = a_j, phi_j, derphi_j
    return None


def strong_wolfe_search(line: _LineFunction, phi0: float, derphi0: float, alpha1: float,
                        c1: float, c2: float, max_zoom: int) -> Optional[float]:
    """Step length satisfying the strong Wolfe conditions, or None."""
    alpha0, phi_a0, derphi_a0 = 0.0, phi0, derphi0
    for i in range(BRACKET_ITERS):
        phi_a1 = line.phi(alpha1)
        if phi_a1 > phi0 + c1 * alpha1 * derphi0 or (i > 0 and phi_a1 >= phi_a0):
            return _zoom(line, alpha0, alpha1, phi_a0, phi_a1, derphi_a0, phi0, derphi0, c1, c2, max_zoom)
        derphi_a1 = line.derphi(alpha1)
        if abs(derphi_a1) <= -c2 * derphi0:
            return alpha1
        if derphi_a1 >= 0:
            return _zoom(line, alpha1, alpha0, phi_a1, phi_a0, derphi_a1, phi0, derphi0, c1, c2, max_zoom)
        alpha0, phi_a0, derphi_a0 = alpha1, phi_a1, derphi_a1
        alpha1 = 2 * alpha1
    return None


def _two_loop(grad: np.ndarray, memory) -> np.ndarray:
    """-H grad from the stored (s, y, rho) pairs, scaled by gamma = s'y / y'y."""
    q = grad.copy()
    alphas = []
    for s, y, rho in reversed(memory):
        a = rho * (s @ q)
        alphas.append(a)
        q -= a * y
    if memory:
        s, y, _ = memory[-1]
        q *= (s @ y) / (y @ y)
    for (s, y, rho), a in zip(memory, reversed(alphas)):
        b = rho * (y @ q)
        q += s * (a - b)
    return -q


def lbfgs_minimize(objective, x0, cfg: Optional[OptimizeConfig] = None,
                   callback: Optional[Callable[[np.ndarray], None]] = None) -> OptimizeResult:
    """
    Minimize ``objective`` from ``x0`` (flat vector or HyperState).

    ``callback`` receives every accepted point. Status is one of
    'converged', 'max_iters' or 'line_search_failed'; on line-search failure
    the last accepted point is returned.
    """
    cfg = cfg or OptimizeConfig()
    state = x0 if isinstance(x0, HyperState) else None
    if state is not None:
        def flat_objective(vector):
            return objective(state.with_vector(vector))
        x = state.to_vector()
    else:
        flat_objective = objective
        x = np.array(x0, dtype=np.float64)

    started = time.perf_counter()
    value, grad = flat_objective(x)
    grad = np.asarray(grad, dtype=np.float64)
    if not np.isfinite(value) or not np.all(np.isfinite(grad)):
        raise NumericError("Objective is not finite at the starting point.")

    def record(iteration, step):
        trace.append(TraceRecord(iter=iteration, nll=float(value), grad_norm=float(np.max(np.abs(grad), initial=0.0)),
                                 step=float(step), wallclock_ms=1000.0 * (time.perf_counter() - started)))

    trace = []
    record(0, 0.0)
    memory = deque(maxlen=cfg.memory)
    status = 'max_iters'
    iterations = 0

    while True:
        grad_norm = float(np.max(np.abs(grad), initial=0.0))
        if grad_norm <= cfg.grad_tol:
            status = 'converged'
            break
        if iterations >= cfg.max_iters:
            break

        direction = _two_loop(grad, memory)
        derphi0 = float(grad @ direction)
        if derphi0 >= 0:
            memory.clear()
            direction = -grad
            derphi0 = float(grad @ direction)
        alpha1 = min(1.0, 1.0 / grad_norm) if iterations == 0 else 1.0

        line = _LineFunction(flat_objective, x, direction)
        alpha = strong_wolfe_search(line, value, derphi0, alpha1, cfg.wolfe_c1, cfg.wolfe_c2, cfg.max_zoom)
        if alpha is None:
            status = 'line_search_failed'
            logger.warning("Line search failed at iteration %d; keeping the last accepted point", iterations + 1)
            break

        new_value, new_grad, new_x = line.evaluate(alpha)
        assert new_value <= value + cfg.wolfe_c1 * alpha * derphi0, "sufficient decrease violated"
        assert abs(new_grad @ direction) <= -cfg.wolfe_c2 * derphi0, "curvature condition violated"

        s, y = new_x - x, new_grad - grad
        sy = float(s @ y)
        if sy > 1e-12 * float(np.linalg.norm(s) * np.linalg.norm(y)):
            memory.append((s, y, 1.0 / sy))

        x, value, grad = new_x, new_value, new_grad
        iterations += 1
        if callback is not None:
            callback(x)
        record(iterations, alpha)
        logger.info("L-BFGS iter %d: value=%.6f grad_inf=%.3e step=%.3e",
                    iterations, value, trace[-1].grad_norm, alpha)

    result_x = state.with_vector(x) if state is not None else x
    return OptimizeResult(x=result_x, value=float(value), gradient=grad, status=status,
                          iterations=iterations, trace=trace)

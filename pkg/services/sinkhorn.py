"""
Log-domain Sinkhorn solver for entropic optimal transport.

Cost is c(x, y) = 1/2 |x - y|^2. One update is

    f_i <- -eps * log sum_j w_j exp((g_j - C_ij) / eps)
    g_j <- -eps * log sum_i p_i exp((f_i - C_ij) / eps)

After the g-update the reference marginal holds exactly, so the stopping
rule measures the violation of the other optimality condition. Results are
centered so that sum_j w_j g_j = 0, with f shifted by the same constant.
Measures sharing one support can be solved as a batch, which runs the same
updates on scalings with Anderson extrapolation.
"""
import logging
from typing import List, Optional, Tuple

import numpy as np
from scipy.spatial.distance import cdist
from scipy.special import logsumexp

from models.measure import DiscreteMeasure
from models.transport import DualPotentials, SinkhornConfig, TransportPlan
from utils.errors import NumericError, ValidationError

logger = logging.getLogger(__name__)

# largest exponent the scaling-form batch may meet before it switches to the log domain
SCALING_EXPONENT_LIMIT = 600.0
ANDERSON_MEMORY = 5
# extrapolations moving any g_j / eps further than this from the plain step are dropped
MAX_EXTRAPOLATION = 30.0


def cost_matrix(X, Y) -> np.ndarray:
    """Half squared Euclidean distances, shape (n, q), clamped at zero."""
    X = np.asarray(X, dtype=np.float64)
    Y = np.asarray(Y, dtype=np.float64)
    if X.ndim == 1:
        X = X.reshape(-1, 1)
    if Y.ndim == 1:
        Y = Y.reshape(-1, 1)
    if X.shape[1] != Y.shape[1]:
        raise ValidationError(f"Dimension mismatch: {X.shape[1]} vs {Y.shape[1]}.")
    return np.maximum(0.5 * cdist(X, Y, 'sqeuclidean'), 0.0)


def _f_update(log_w, g, cost, eps):
    return -eps * logsumexp(log_w + (g - cost) / eps, axis=-1)


def _g_update(log_p, f, cost, eps):
    return -eps * logsumexp(log_p[..., :, None] + (f[..., :, None] - cost) / eps, axis=-2)


def _sinkhorn_loop(log_p, log_w, cost, eps, g, max_iter, tol):
    """
    Run updates from the iterate ``g`` until the marginal residual drops
    below ``tol``.

    Returns (f, g, iterations, residual, converged) with raw (uncentered)
    potentials.
    """
    f = _f_update(log_w, g, cost, eps)
    residual = np.inf
    iterations = 0
    converged = False
    for iterations in range(1, max_iter + 1):
        g = _g_update(log_p, f, cost, eps)
        f_next = _f_update(log_w, g, cost, eps)
        residual = float(np.max(np.abs(np.expm1((f - f_next) / eps))))
        if not np.isfinite(residual):
            raise NumericError(f"Sinkhorn iterate became non-finite at update {iterations}.")
        if residual <= tol:
            converged = True
            break
        f = f_next
    return f, g, iterations, residual, converged


def _center(f, g, weights):
    shift = weights @ g
    return f + shift, g - shift


def solve(P: DiscreteMeasure, U: DiscreteMeasure, cfg: SinkhornConfig,
          warm: Optional[DualPotentials] = None) -> DualPotentials:
    """
    Solve the entropic transport problem between P and U.

    ``warm`` seeds the g iterate; it changes the iteration count, not the
    fixed point. Non-convergence is reported through ``converged=False``.
    """
    if P.dim != U.dim:
        raise ValidationError(f"Dimension mismatch: P has d={P.dim}, reference has d={U.dim}.")
    if warm is not None and (warm.f.shape[0] != P.size or warm.g.shape[0] != U.size):
        raise ValidationError(
            f"Warm start has sizes ({warm.f.shape[0]}, {warm.g.shape[0]}), "
            f"expected ({P.size}, {U.size}).")

    cost = cost_matrix(P.points, U.points)
    g0 = np.zeros(U.size) if warm is None else np.array(warm.g, dtype=np.float64)
    f, g, iterations, residual, converged = _sinkhorn_loop(
        np.log(P.weights), np.log(U.weights), cost, cfg.epsilon, g0, cfg.max_iter, cfg.tol)
    f, g = _center(f, g, U.weights)

    if not converged:
        logger.debug("Sinkhorn stopped after %d updates with residual %.3e", iterations, residual)
    return DualPotentials(
        f=f, g=g, epsilon=cfg.epsilon, iterations=iterations, residual=residual,
        converged=converged)


def _shared_log_loop(log_p, log_w, cost, eps, support, max_iter, tol):
    """Row-masked log-domain updates; a row stops once its residual is below ``tol``."""
    count = log_p.shape[0]
    g = np.zeros((count, cost.shape[1]))
    f = _f_update(log_w, g[:, None, :], cost, eps)
    active = np.ones(count, dtype=bool)
    iterations = np.zeros(count, dtype=int)
    residual = np.full(count, np.inf)

    for _ in range(max_iter):
        g_new = _g_update(log_p, f, cost, eps)
        f_next = _f_update(log_w, g_new[:, None, :], cost, eps)
        gap = np.where(support, np.abs(np.expm1((f - f_next) / eps)), 0.0).max(axis=1)
        if not np.all(np.isfinite(gap[active])):
            raise NumericError("Batched Sinkhorn iterate became non-finite.")
        g = np.where(active[:, None], g_new, g)
        residual = np.where(active, gap, residual)
        iterations += active
        done = active & (gap <= tol)
        f = np.where((active & ~done)[:, None], f_next, f)
        active &= ~done
        if not active.any():
            break
    return f, g, iterations, residual


def _gibbs_representable(cost, eps, ref_weights) -> bool:
    spread = float(cost.max() - cost.min()) / eps
    return spread - float(np.log(ref_weights.min())) <= SCALING_EXPONENT_LIMIT


def _shared_scaling_loop(weights, ref_weights, cost, eps, support, max_iter, tol):
    """
    The same updates written on scalings against one Gibbs kernel, with
    Anderson extrapolation of x = g / eps.

    The kernel is shifted per support point so every row peaks at 1; f gets
    the shift back. Rows whose residual grows tenfold past their best drop
    their history and take a plain step. Returns None once an iterate stops
    being finite.
    """
    count, q = weights.shape[0], cost.shape[1]
    row_min = cost.min(axis=1)
    K = np.exp(-(cost - row_min[:, None]) / eps)

    def scalings(x):
        top = x.max(axis=1, keepdims=True)
        return (ref_weights * np.exp(x - top)) @ K.T, top

    f = np.zeros((count, cost.shape[0]))
    g = np.zeros((count, q))
    iterations = np.zeros(count, dtype=int)
    residual = np.full(count, np.inf)

    rows = np.arange(count)
    p, mask = weights, support
    x = np.zeros((count, q))
    s, top = scalings(x)
    dX = np.zeros((count, ANDERSON_MEMORY, q))
    dR = np.zeros_like(dX)
    filled = np.zeros((count, ANDERSON_MEMORY), dtype=bool)
    best = np.full(count, np.inf)
    x_prev = r_prev = None
    eye = np.eye(ANDERSON_MEMORY)

    with np.errstate(divide='ignore', over='ignore', invalid='ignore', under='ignore'):
        for k in range(1, max_iter + 1):
            T = top - np.log((p / s) @ K)
            r = T - x
            sT, topT = scalings(T)
            gap = np.where(mask, np.abs(sT / s * np.exp(topT - top) - 1.0), 0.0).max(axis=1)
            if not (np.all(np.isfinite(gap)) and np.all(np.isfinite(T))):
                return None

            done = (gap <= tol) | (k == max_iter)
            if done.any():
                idx = rows[done]
                f[idx] = row_min - eps * (np.log(s[done]) + top[done])
                g[idx] = eps * T[done]
                iterations[idx] = k
                residual[idx] = gap[done]
            keep = ~done
            if not keep.any():
                break

            rows, p, mask = rows[keep], p[keep], mask[keep]
            x, r, T, gap, s, top = x[keep], r[keep], T[keep], gap[keep], s[keep], top[keep]
            dX, dR, filled, best = dX[keep], dR[keep], filled[keep], best[keep]
            if x_prev is not None:
                x_prev, r_prev = x_prev[keep], r_prev[keep]
                col = k % ANDERSON_MEMORY
                dX[:, col] = x - x_prev
                dR[:, col] = r - r_prev
                filled[:, col] = True
            filled[gap > 10.0 * best] = False
            best = np.minimum(best, gap)

            dRm = dR * filled[..., None]
            A = np.einsum('bmq,bnq->bmn', dRm, dRm)
            rhs = np.einsum('bmq,bq->bm', dRm, r)
            scale = 1e-10 * np.max(np.diagonal(A, axis1=1, axis2=2), axis=1) + 1e-300
            A = A + np.where(filled, scale[:, None], 1.0)[:, :, None] * eye
            gamma = np.linalg.solve(A, rhs[..., None])[..., 0]

            x_prev, r_prev = x, r
            if filled.any():
                step = np.einsum('bm,bmq->bq', gamma, (dX + dR) * filled[..., None])
                wild = ~(np.abs(step).max(axis=1) <= MAX_EXTRAPOLATION)
                step[wild] = 0.0
                filled[wild] = False
                x = T - step
                s, top = scalings(x)
            else:
                x, s, top = T, sT[keep], topT[keep]
    return f, g, iterations, residual


def solve_shared_support(points, weight_matrix, U: DiscreteMeasure,
                         cfg: SinkhornConfig) -> List[DualPotentials]:
    """
    Solve many measures that share one support in a single batched loop.

    Row b of ``weight_matrix`` holds the weights of measure b over ``points``
    (zeros allowed). The batch runs on scalings against one precomputed Gibbs
    kernel when exp(-C / eps) is representable, and in the log domain
    otherwise. Both stop on the same residual, so each result matches an
    individual solve to within the tolerance. f is returned over the full
    shared support.
    """
    points = np.asarray(points, dtype=np.float64)
    weights = np.asarray(weight_matrix, dtype=np.float64)
    if weights.ndim != 2 or weights.shape[1] != points.shape[0]:
        raise ValidationError(
            f"Weight matrix must have shape (count, {points.shape[0]}), got {weights.shape}.")
    if np.any(weights < 0) or np.any(weights.sum(axis=1) <= 0):
        raise ValidationError("Every row of the weight matrix needs nonnegative weights with positive mass.")
    weights = weights / weights.sum(axis=1, keepdims=True)

    cost = cost_matrix(points, U.points)
    eps = cfg.epsilon
    support = weights > 0

    raw = None
    if _gibbs_representable(cost, eps, U.weights):
        raw = _shared_scaling_loop(weights, U.weights, cost, eps, support, cfg.max_iter, cfg.tol)
        if raw is None:
            logger.debug("Scaling-form batch lost finiteness; rerunning %d rows in the log domain",
                         weights.shape[0])
    if raw is None:
        with np.errstate(divide='ignore'):
            log_p = np.log(weights)
        raw = _shared_log_loop(log_p, np.log(U.weights), cost, eps, support, cfg.max_iter, cfg.tol)
    f, g, iterations, residual = raw

    results = []
    for b in range(weights.shape[0]):
        fb, gb = _center(f[b], g[b], U.weights)
        results.append(DualPotentials(
            f=fb, g=gb, epsilon=eps, iterations=int(iterations[b]),
            residual=float(residual[b]), converged=bool(residual[b] <= cfg.tol)))
    return results


def _log_gibbs(P, U, pot):
    cost = cost_matrix(P.points, U.points)
    return (pot.f[:, None] + pot.g[None, :] - cost) / pot.epsilon


def _check_shapes(P, U, pot):
    if pot.f.shape[0] != P.size or pot.g.shape[0] != U.size:
        raise ValidationError(
            f"Potentials of sizes ({pot.f.shape[0]}, {pot.g.shape[0]}) do not match "
            f"measures of sizes ({P.size}, {U.size}).")


def marginal_residual(P: DiscreteMeasure, U: DiscreteMeasure,
                      pot: DualPotentials) -> Tuple[float, float]:
    """L-infinity violations (rP, rU) of the two optimality conditions."""
    _check_shapes(P, U, pot)
    log_kernel = _log_gibbs(P, U, pot)
    r_p = np.max(np.abs(np.expm1(logsumexp(log_kernel + np.log(U.weights)[None, :], axis=1))))
    r_u = np.max(np.abs(np.expm1(logsumexp(log_kernel + np.log(P.weights)[:, None], axis=0))))
    return float(r_p), float(r_u)


def plan(P: DiscreteMeasure, U: DiscreteMeasure, pot: DualPotentials) -> TransportPlan:
    """pi_ij = p_i w_j exp((f_i + g_j - C_ij) / eps)."""
    if not pot.converged:
        raise ValidationError("A transport plan needs converged potentials.")
    _check_shapes(P, U, pot)
    log_plan = _log_gibbs(P, U, pot) + np.log(P.weights)[:, None] + np.log(U.weights)[None, :]
    return TransportPlan(np.exp(log_plan))


def divergence_value(P: DiscreteMeasure, U: DiscreteMeasure, pot: DualPotentials,
                     cfg: Optional[SinkhornConfig] = None) -> float:
    """Dual objective <f, P> + <g, U> - eps * (total Gibbs mass - 1)."""
    _check_shapes(P, U, pot)
    if cfg is not None and cfg.epsilon != pot.epsilon:
        raise ValidationError(f"Potentials were computed at eps={pot.epsilon}, not {cfg.epsilon}.")
    log_mass = logsumexp(_log_gibbs(P, U, pot) + np.log(P.weights)[:, None] + np.log(U.weights)[None, :])
    return float(P.weights @ pot.f + U.weights @ pot.g - pot.epsilon * np.expm1(log_mass))


def extend_potential(P: DiscreteMeasure, f, query, epsilon: float) -> np.ndarray:
    """
    Canonical extension of g to arbitrary points:
    g(y) = -eps * log sum_i p_i exp((f_i - 1/2 |x_i - y|^2) / eps).
    """
    query = np.asarray(query, dtype=np.float64)
    if query.ndim == 1:
        query = query.reshape(-1, 1) if P.dim == 1 else query.reshape(1, -1)
    f = np.asarray(f, dtype=np.float64)
    if f.shape[0] != P.size:
        raise ValidationError(f"f has {f.shape[0]} entries for a measure of size {P.size}.")
    cost = cost_matrix(P.points, query)
    return -epsilon * logsumexp(np.log(P.weights)[:, None] + (f[:, None] - cost) / epsilon, axis=0)

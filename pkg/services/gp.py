"""
Gaussian-process regression and Laplace binary classification over Gram
matrices of embeddings.

Zero prior mean throughout. Regression factors K + noise*I; classification
runs Newton iterations for the MAP latent vector with a logistic likelihood
(labels in {0, 1}) and factors B = I + W^1/2 K W^1/2 at the mode.
"""
import logging
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import List, Optional, Sequence, Tuple

import numpy as np
from numpy.polynomial.hermite import hermgauss
from scipy.linalg import LinAlgError, cho_solve, cholesky, solve_triangular
from scipy.special import expit

from models.embedding import Embedding, ReferenceParams
from models.gp import GPModel, PredictionResult
from models.kernel import GramMatrix, KernelSpec
from models.measure import AffineMap
from models.transport import SinkhornConfig
from services.embedding import Reference, as_measure, reference_version
from services.kernels import cross_gram, gram
from utils import formats
from utils.errors import NumericError, ValidationError

logger = logging.getLogger(__name__)

JITTER_LADDER = (0.0, 1e-10, 1e-8, 1e-6)
NEWTON_MAX_ITER = 100
NEWTON_TOL = 1e-8
QUADRATURE_POINTS = 32
LOG_2PI = np.log(2 * np.pi)


def cholesky_with_jitter(A: np.ndarray, scale: float) -> Tuple[np.ndarray, float]:
    """Lower Cholesky factor of A + jitter*I, escalating jitter along (0, 1e-10, 1e-8, 1e-6) * scale."""
    identity = np.eye(A.shape[0])
    for factor in JITTER_LADDER:
        jitter = factor * scale
        try:
            L = cholesky(A + jitter * identity, lower=True)
        except LinAlgError:
            continue
        if jitter > 0:
            logger.warning("Cholesky needed jitter %.1e on the diagonal", jitter)
        return L, jitter
    ladder = ', '.join(f"{factor * scale:.1e}" for factor in JITTER_LADDER)
    raise NumericError(f"Cholesky factorization failed with jitter ladder ({ladder}).",
                       jitter_ladder=[factor * scale for factor in JITTER_LADDER])


def _values(G) -> np.ndarray:
    values = G.values if isinstance(G, GramMatrix) else np.asarray(G, dtype=np.float64)
    if values.ndim != 2 or values.shape[0] != values.shape[1]:
        raise ValidationError("Gram matrix must be square.")
    return values


def _scale(K: np.ndarray) -> float:
    return float(np.max(np.diag(K))) if K.size else 1.0


# ---------------------------------------------------------------------------
# Regression
# ---------------------------------------------------------------------------

@dataclass
class RegressionFactor:
    chol: np.ndarray
    alpha: np.ndarray
    lml: float
    jitter: float


def factor_regression(K: np.ndarray, y: np.ndarray, noise: float) -> RegressionFactor:
    y = np.asarray(y, dtype=np.float64)
    if y.shape[0] != K.shape[0]:
        raise ValidationError(f"{K.shape[0]} Gram rows but {y.shape[0]} targets.")
    if not np.all(np.isfinite(y)):
        raise ValidationError("Targets must be finite.")
    if noise < 0:
        raise ValidationError(f"Noise must be nonnegative (got {noise}).")
    n = y.shape[0]
    L, jitter = cholesky_with_jitter(K + noise * np.eye(n), _scale(K))
    alpha = cho_solve((L, True), y)
    lml = -0.5 * y @ alpha - np.sum(np.log(np.diag(L))) - 0.5 * n * LOG_2PI
    return RegressionFactor(L, alpha, float(lml), jitter)


def log_marginal_likelihood(G, y, noise: float) -> float:
    """log N(y | 0, K + noise*I) via Cholesky."""
    return factor_regression(_values(G), y, noise).lml


def regression_gram_gradient(factor: RegressionFactor) -> np.ndarray:
    """dLML/dK = 1/2 (alpha alpha^T - (K + noise I)^-1)."""
    inverse = cho_solve((factor.chol, True), np.eye(factor.alpha.shape[0]))
    return 0.5 * (np.outer(factor.alpha, factor.alpha) - inverse)


def fit_regression(embeddings: Sequence[Embedding], ref: Reference, y, spec: KernelSpec,
                   noise: float) -> GPModel:
    y = np.asarray(y, dtype=np.float64)
    if len(embeddings) != y.shape[0]:
        raise ValidationError(f"{len(embeddings)} embeddings but {y.shape[0]} targets.")
    G = gram(embeddings, ref, spec)
    factor = factor_regression(G.values, y, noise)
    return GPModel(
        kind='regression', embeddings=tuple(embeddings), ref=as_measure(ref), spec=spec,
        noise=float(noise), chol=factor.chol, alpha=factor.alpha,
        log_marginal_likelihood=factor.lml, targets=y, jitter=factor.jitter,
        reference=ref if isinstance(ref, ReferenceParams) else None)


def _check_queries(model: GPModel, new_embeddings: Sequence[Embedding]) -> None:
    versions = {e.ref_version for e in new_embeddings}
    if versions and versions != {model.ref_version}:
        raise ValidationError(
            f"Query embeddings use reference {', '.join(sorted(versions))} "
            f"but the model was trained against {model.ref_version}.")


def predict_regression(model: GPModel, new_embeddings: Sequence[Embedding]) -> List[PredictionResult]:
    """Posterior mean k^T alpha and variance l - k^T (K + noise I)^-1 k (clamped at 0)."""
    if model.kind != 'regression':
        raise ValidationError("predict_regression needs a regression model.")
    _check_queries(model, new_embeddings)
    if not new_embeddings:
        return []
    Ks = cross_gram(new_embeddings, model.embeddings, model.ref, model.spec)
    mean = Ks @ model.alpha
    v = solve_triangular(model.chol, Ks.T, lower=True)
    variance = np.maximum(model.spec.variance - np.sum(v ** 2, axis=0), 0.0)
    return [PredictionResult(float(m), float(s)) for m, s in zip(mean, variance)]


# ---------------------------------------------------------------------------
# Laplace classification
# ---------------------------------------------------------------------------

@dataclass
class LaplaceState:
    """Mode of the latent posterior and the factorization used there."""
    latent: np.ndarray
    w_sqrt: np.ndarray
    chol: np.ndarray
    grad: np.ndarray
    lml: float
    iterations: int
    converged: bool
    objective_trace: List[float] = field(default_factory=list)


def _log_likelihood(labels, latent):
    return float(np.sum(labels * latent - np.logaddexp(0.0, latent)))


def laplace_mode(K: np.ndarray, labels, max_iter: int = NEWTON_MAX_ITER,
                 tol: float = NEWTON_TOL) -> LaplaceState:
    """
    Newton iterations on Psi(a) = log p(y | K a) - 1/2 a^T K a with step halving.

    Converged when the L-infinity change of the latent vector is at most
    ``tol``; the Laplace approximation of log p(y) is Psi - sum log diag(L).
    """
    y = np.asarray(labels, dtype=np.float64)
    n = y.shape[0]
    if K.shape[0] != n:
        raise ValidationError(f"{K.shape[0]} Gram rows but {n} labels.")
    if n and (y.min() == y.max()):
        logger.warning("All %d training labels belong to one class", n)

    def psi(a):
        latent = K @ a
        return _log_likelihood(y, latent) - 0.5 * a @ latent, latent

    a = np.zeros(n)
    value, latent = psi(a)
    trace = [value]
    converged = False
    iterations = 0
    for iterations in range(1, max_iter + 1):
        pi = expit(latent)
        w_sqrt = np.sqrt(pi * (1 - pi))
        L, _ = cholesky_with_jitter(np.eye(n) + w_sqrt[:, None] * K * w_sqrt[None, :], 1.0)
        b = w_sqrt ** 2 * latent + (y - pi)
        direction = b - w_sqrt * cho_solve((L, True), w_sqrt * (K @ b)) - a

        step = 1.0
        new_value, new_latent = psi(a + direction)
        while new_value < value - 1e-10 * (1.0 + abs(value)):
            step *= 0.5
            if step < 1e-10:
                raise NumericError("Laplace Newton iteration failed to increase the objective.")
            new_value, new_latent = psi(a + step * direction)
        change = float(np.max(np.abs(new_latent - latent))) if n else 0.0
        a, latent, value = a + step * direction, new_latent, new_value
        trace.append(value)
        if change <= tol:
            converged = True
            break
    if not converged:
        logger.warning("Laplace Newton stopped after %d iterations without converging", iterations)

    pi = expit(latent)
    w_sqrt = np.sqrt(pi * (1 - pi))
    L, _ = cholesky_with_jitter(np.eye(n) + w_sqrt[:, None] * K * w_sqrt[None, :], 1.0)
    lml = value - float(np.sum(np.log(np.diag(L))))
    logger.debug("Laplace fit: n=%d iterations=%d lml=%.6f", n, iterations, lml)
    return LaplaceState(latent, w_sqrt, L, y - pi, lml, iterations, converged, trace)


def classification_gram_gradient(K: np.ndarray, state: LaplaceState) -> np.ndarray:
    """
    dLML/dK for the Laplace approximation, including the implicit
    dependence of the mode on K through the third likelihood derivative.
    """
    n = K.shape[0]
    sW = state.w_sqrt
    pi = expit(state.latent)
    Z = sW[:, None] * cho_solve((state.chol, True), np.diag(sW))
    C = solve_triangular(state.chol, sW[:, None] * K, lower=True)
    third = -(sW ** 2) * (1 - 2 * pi)
    s2 = -0.5 * (np.diag(K) - np.sum(C ** 2, axis=0)) * third
    u = s2 - Z @ (K @ s2)
    a = state.grad
    M = 0.5 * np.outer(a, a) - 0.5 * Z + np.outer(u, a)
    return 0.5 * (M + M.T) if n else M


def lml_gradient_wrt_gram(G, responses, kind: str, noise: float = 0.0) -> Tuple[float, np.ndarray]:
    """Log marginal likelihood and its gradient with respect to the Gram matrix."""
    K = _values(G)
    if kind == 'regression':
        factor = factor_regression(K, responses, noise)
        return factor.lml, regression_gram_gradient(factor)
    if kind == 'classification':
        state = laplace_mode(K, np.asarray(responses).astype(np.int64))
        return state.lml, classification_gram_gradient(K, state)
    raise ValidationError(f"unknown model kind '{kind}'")


def laplace_fit_classification(G, labels, embeddings: Sequence[Embedding] = (),
                               ref: Optional[Reference] = None) -> GPModel:
    K = _values(G)
    labels = np.asarray(labels).astype(np.int64)
    state = laplace_mode(K, labels)
    spec = G.spec if isinstance(G, GramMatrix) else None
    return GPModel(
        kind='classification', embeddings=tuple(embeddings),
        ref=as_measure(ref) if ref is not None else None, spec=spec, noise=0.0,
        chol=state.chol, alpha=state.grad, log_marginal_likelihood=state.lml,
        labels=labels, latent_map=state.latent, w_sqrt=state.w_sqrt,
        reference=ref if isinstance(ref, ReferenceParams) else None)


def fit_classification(embeddings: Sequence[Embedding], ref: Reference, labels,
                       spec: KernelSpec) -> GPModel:
    if len(embeddings) != len(labels):
        raise ValidationError(f"{len(embeddings)} embeddings but {len(labels)} labels.")
    return laplace_fit_classification(gram(embeddings, ref, spec), labels, embeddings, ref)


def predict_classification(model: GPModel, new_embeddings: Sequence[Embedding]) -> List[PredictionResult]:
    """
    Latent mean k^T (y - pi), variance l - |L^-1 W^1/2 k|^2, and the class
    probability averaged over the latent Gaussian by Gauss-Hermite quadrature.
    """
    if model.kind != 'classification':
        raise ValidationError("predict_classification needs a classification model.")
    _check_queries(model, new_embeddings)
    if not new_embeddings:
        return []
    Ks = cross_gram(new_embeddings, model.embeddings, model.ref, model.spec)
    mean = Ks @ model.alpha
    v = solve_triangular(model.chol, model.w_sqrt[:, None] * Ks.T, lower=True)
    variance = np.maximum(model.spec.variance - np.sum(v ** 2, axis=0), 0.0)

    nodes, weights = hermgauss(QUADRATURE_POINTS)
    latent = mean[:, None] + np.sqrt(2 * variance)[:, None] * nodes[None, :]
    probability = np.clip(expit(latent) @ weights / np.sqrt(np.pi), 0.0, 1.0)
    return [PredictionResult(float(m), float(s), float(p))
            for m, s, p in zip(mean, variance, probability)]


def predict(model: GPModel, new_embeddings: Sequence[Embedding]) -> List[PredictionResult]:
    if model.kind == 'regression':
        return predict_regression(model, new_embeddings)
    return predict_classification(model, new_embeddings)


# ---------------------------------------------------------------------------
# Scores
# ---------------------------------------------------------------------------

def evs(y_true, y_pred) -> float:
    """Explained variance score 1 - Var(y_true - y_pred) / Var(y_true)."""
    y_true = np.asarray(y_true, dtype=np.float64)
    y_pred = np.asarray(y_pred, dtype=np.float64)
    if y_true.shape != y_pred.shape or y_true.size == 0:
        raise ValidationError("EVS needs two vectors of equal nonzero length.")
    variance = np.var(y_true)
    if variance <= 0:
        raise ValidationError("EVS is undefined for targets with zero variance.")
    return float(1.0 - np.var(y_true - y_pred) / variance)


def accuracy(labels, probabilities) -> float:
    labels = np.asarray(labels).astype(np.int64)
    probabilities = np.asarray(probabilities, dtype=np.float64)
    if labels.shape != probabilities.shape or labels.size == 0:
        raise ValidationError("Accuracy needs two vectors of equal nonzero length.")
    return float(np.mean((probabilities >= 0.5).astype(np.int64) == labels))


# ---------------------------------------------------------------------------
# Model files
# ---------------------------------------------------------------------------

def save_model(model: GPModel, path) -> Path:
    """Write the model JSON; factorizations are recomputed on load."""
    if model.reference is None or model.sinkhorn is None:
        raise ValidationError("Only models with trainable-reference parameters and a Sinkhorn config can be saved.")
    payload = {
        'kind': model.kind,
        'spec': model.spec.to_dict(),
        'noise': model.noise,
        'reference': model.reference.to_dict(),
        'sinkhorn': model.sinkhorn.to_dict(),
        'ref_version': model.ref_version,
        'embeddings': [e.values.tolist() for e in model.embeddings],
        'log_marginal_likelihood': model.log_marginal_likelihood,
        'normalization': model.normalization.to_dict() if model.normalization is not None else None,
    }
    if model.kind == 'regression':
        payload['targets'] = model.targets.tolist()
    else:
        payload['labels'] = model.labels.tolist()
        payload['latent_map'] = model.latent_map.tolist()
    return formats.write_json(path, formats.MODEL_FORMAT, payload)


def load_model(path) -> GPModel:
    document = formats.read_json(path, formats.MODEL_FORMAT)
    try:
        reference = ReferenceParams.from_dict(document['reference'])
        sink_cfg = SinkhornConfig.from_dict(document['sinkhorn'])
        spec = KernelSpec.from_dict(document['spec'])
        kind = document['kind']
        rows = document['embeddings']
    except KeyError as e:
        raise ValidationError(f"{path}: model is missing field {e}.") from e

    version = reference_version(reference, sink_cfg.epsilon)
    if document.get('ref_version') not in (None, version):
        raise ValidationError(f"{path}: stored ref_version does not match its reference parameters.")
    embeddings = [Embedding(np.asarray(row, dtype=np.float64), version, True) for row in rows]

    if kind == 'regression':
        model = fit_regression(embeddings, reference, document['targets'], spec, float(document['noise']))
    elif kind == 'classification':
        model = fit_classification(embeddings, reference, document['labels'], spec)
    else:
        raise ValidationError(f"{path}: unknown model kind '{kind}'.")

    normalization = document.get('normalization')
    return replace(model, sinkhorn=sink_cfg,
                   normalization=AffineMap.from_dict(normalization) if normalization else None)

"""
Kernels on embeddings, Gram matrices and the MMD baseline.

Families (l = variance, sigma = lengthscale, d = embedding distance):
    sqexp     l * exp(-d^2 / (2 sigma^2))
    exp_norm  l * exp(-d / (2 sigma^2))
    matern32  l * (1 + r) exp(-r),            r = sqrt(3) d / sigma
    matern52  l * (1 + r + r^2 / 3) exp(-r),  r = sqrt(5) d / sigma
"""
import logging
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy.linalg import eigvalsh
from scipy.spatial.distance import cdist, pdist, squareform

from models.embedding import Embedding
from models.kernel import GramMatrix, KernelSpec, PSDReport
from models.measure import DiscreteMeasure
from models.transport import SinkhornConfig
from services.embedding import Reference, as_measure, check_versions, embed, embedding_distance
from services.measures import subsample
from utils import formats
from utils.errors import ValidationError

logger = logging.getLogger(__name__)

MMD_VERSION = 'mmd'


def kernel_from_distance(spec: KernelSpec, distance) -> np.ndarray:
    """Vectorized kernel of nonnegative distances."""
    d = np.asarray(distance, dtype=np.float64)
    l, sigma = spec.variance, spec.lengthscale
    if spec.family == 'sqexp':
        return l * np.exp(-d ** 2 / (2 * sigma ** 2))
    if spec.family == 'exp_norm':
        return l * np.exp(-d / (2 * sigma ** 2))
    if spec.family == 'matern32':
        r = np.sqrt(3.0) * d / sigma
        return l * (1 + r) * np.exp(-r)
    r = np.sqrt(5.0) * d / sigma
    return l * (1 + r + r ** 2 / 3) * np.exp(-r)


def kernel_value(spec: KernelSpec, distance: float) -> float:
    if not distance >= 0:
        raise ValidationError(f"Distance must be nonnegative (got {distance}).")
    return float(kernel_from_distance(spec, distance))


def kernel_derivatives(spec: KernelSpec, squared_distance) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """
    Derivatives of the kernel with respect to (d^2, log l, log sigma).

    The exp_norm derivative in d^2 is singular at zero distance and is set
    to zero there; it only ever multiplies zero embedding differences.
    """
    s = np.maximum(np.asarray(squared_distance, dtype=np.float64), 0.0)
    d = np.sqrt(s)
    l, sigma = spec.variance, spec.lengthscale
    k = kernel_from_distance(spec, d)

    if spec.family == 'sqexp':
        dk_ds = -k / (2 * sigma ** 2)
        dk_dlogsigma = k * s / sigma ** 2
    elif spec.family == 'exp_norm':
        with np.errstate(divide='ignore', invalid='ignore'):
            dk_ds = np.where(d > 0, -k / (4 * sigma ** 2 * d), 0.0)
        dk_dlogsigma = k * d / sigma ** 2
    elif spec.family == 'matern32':
        r = np.sqrt(3.0) * d / sigma
        dk_ds = -l * 3.0 / (2 * sigma ** 2) * np.exp(-r)
        dk_dlogsigma = l * r ** 2 * np.exp(-r)
    else:
        r = np.sqrt(5.0) * d / sigma
        dk_ds = -l * (1 + r) * np.exp(-r) * 5.0 / (6 * sigma ** 2)
        dk_dlogsigma = l * r ** 2 * (1 + r) * np.exp(-r) / 3
    return dk_ds, k, dk_dlogsigma


def stack_embeddings(embeddings: Sequence[Embedding], weights: np.ndarray) -> np.ndarray:
    values = np.array([e.values for e in embeddings], dtype=np.float64)
    if values.shape[1] != weights.shape[0]:
        raise ValidationError(
            f"Embeddings have {values.shape[1]} coordinates but the reference has {weights.shape[0]} atoms.")
    return values


def squared_distance_matrix(values: np.ndarray, weights: np.ndarray) -> np.ndarray:
    """Pairwise weighted squared distances of embedding rows, symmetric with zero diagonal."""
    if values.shape[0] == 1:
        return np.zeros((1, 1))
    return squareform(pdist(values * np.sqrt(weights), 'sqeuclidean'))


def gram(embeddings: Sequence[Embedding], ref: Reference, spec: KernelSpec) -> GramMatrix:
    """Each unordered pair is evaluated once and mirrored."""
    version = check_versions(embeddings)
    if not embeddings:
        return GramMatrix(np.zeros((0, 0)), spec, version or '')
    weights = as_measure(ref).weights
    s = squared_distance_matrix(stack_embeddings(embeddings, weights), weights)
    return GramMatrix(kernel_from_distance(spec, np.sqrt(s)), spec, version)


def cross_gram(a: Sequence[Embedding], b: Sequence[Embedding], ref: Reference,
               spec: KernelSpec) -> np.ndarray:
    """Rectangular kernel matrix K(a_i, b_j)."""
    check_versions(list(a) + list(b))
    if not a or not b:
        return np.zeros((len(a), len(b)))
    weights = as_measure(ref).weights
    root = np.sqrt(weights)
    s = cdist(stack_embeddings(a, weights) * root, stack_embeddings(b, weights) * root, 'sqeuclidean')
    return kernel_from_distance(spec, np.sqrt(np.maximum(s, 0.0)))


def check_psd(G, tol: float = 1e-8) -> PSDReport:
    values = G.values if isinstance(G, GramMatrix) else np.asarray(G, dtype=np.float64)
    if values.ndim != 2 or values.shape[0] != values.shape[1]:
        raise ValidationError("A Gram matrix must be square.")
    asymmetry = np.max(np.abs(values - values.T)) if values.size else 0.0
    if asymmetry > 1e-10:
        raise ValidationError(f"Matrix is not symmetric (max asymmetry {asymmetry:.3e}).")
    if values.size == 0:
        return PSDReport(min_eig=0.0, ok=True)
    min_eig = float(eigvalsh(values, subset_by_index=[0, 0])[0])
    return PSDReport(min_eig=min_eig, ok=min_eig >= -tol * float(np.trace(values)))


# ---------------------------------------------------------------------------
# MMD baseline
# ---------------------------------------------------------------------------

def _rbf(X, Y, rbf_sigma):
    return np.exp(-cdist(X, Y, 'sqeuclidean') / (2 * rbf_sigma ** 2))


def mmd_sq(P: DiscreteMeasure, Q: DiscreteMeasure, rbf_sigma: float) -> float:
    """Weighted V-statistic with the unit-variance sqexp kernel on points, clamped at 0."""
    if P.dim != Q.dim:
        raise ValidationError(f"Dimension mismatch: {P.dim} vs {Q.dim}.")
    value = (P.weights @ _rbf(P.points, P.points, rbf_sigma) @ P.weights
             + Q.weights @ _rbf(Q.points, Q.points, rbf_sigma) @ Q.weights
             - 2 * P.weights @ _rbf(P.points, Q.points, rbf_sigma) @ Q.weights)
    return max(float(value), 0.0)


def mmd_kernel(P: DiscreteMeasure, Q: DiscreteMeasure, rbf_sigma: float, hat_sigma: float) -> float:
    return hat_sigma * float(np.exp(-mmd_sq(P, Q, rbf_sigma)))


def mmd_gram_shared(points, weight_matrix, rbf_sigma: float, hat_sigma: float) -> GramMatrix:
    """
    MMD Gram for measures given as weight rows over one support.

    The point kernel is computed once. Every pair then gets its own
    V-statistic d^T K d with d = w_i - w_j, at O(m^2) per pair.
    """
    weights = np.asarray(weight_matrix, dtype=np.float64)
    weights = weights / weights.sum(axis=1, keepdims=True)
    points = np.asarray(points, dtype=np.float64)
    K = _rbf(points, points, rbf_sigma)
    n = weights.shape[0]
    values = np.full((n, n), float(hat_sigma))
    for i in range(n - 1):
        diff = weights[i] - weights[i + 1:]
        sq = np.maximum(np.einsum('km,km->k', diff @ K, diff), 0.0)
        values[i, i + 1:] = values[i + 1:, i] = hat_sigma * np.exp(-sq)
    return GramMatrix(values, None, MMD_VERSION)


def mmd_gram(measures: Sequence[DiscreteMeasure], rbf_sigma: float, hat_sigma: float) -> GramMatrix:
    """MMD Gram; measures on one identical support share the point-kernel matrix."""
    n = len(measures)
    if n and all(m.size == measures[0].size and np.array_equal(m.points, measures[0].points)
                 for m in measures):
        return mmd_gram_shared(measures[0].points, np.array([m.weights for m in measures]),
                               rbf_sigma, hat_sigma)
    values = np.empty((n, n))
    for i in range(n):
        values[i, i] = hat_sigma
        for j in range(i + 1, n):
            values[i, j] = values[j, i] = mmd_kernel(measures[i], measures[j], rbf_sigma, hat_sigma)
    return GramMatrix(values, None, MMD_VERSION)


# ---------------------------------------------------------------------------
# Empirical consistency and export
# ---------------------------------------------------------------------------

def consistency_curve(P: DiscreteMeasure, Q: DiscreteMeasure, rp: Reference, cfg: SinkhornConfig,
                      spec: KernelSpec, sizes: Sequence[int], seeds: Sequence[int]) -> List[Dict]:
    """
    Mean |K(P_k, Q_k) - K(P, Q)| over seeds for each subsample size k.

    For seed s, P_k uses subsample seed 2s and Q_k uses 2s + 1.
    """
    sizes = list(sizes)
    if any(b <= a for a, b in zip(sizes, sizes[1:])):
        raise ValidationError("Subsample sizes must be strictly increasing.")
    ref = as_measure(rp)
    full = kernel_value(spec, embedding_distance(embed(P, ref, cfg), embed(Q, ref, cfg), ref))

    rows = []
    for k in sizes:
        errors = []
        for seed in seeds:
            a = embed(subsample(P, k, 2 * seed), ref, cfg)
            b = embed(subsample(Q, k, 2 * seed + 1), ref, cfg)
            errors.append(abs(kernel_value(spec, embedding_distance(a, b, ref)) - full))
        rows.append({'k': k, 'mean_abs_error': float(np.mean(errors)), 'seeds': len(errors)})
        logger.debug("consistency k=%d mean error %.3e", k, rows[-1]['mean_abs_error'])
    return rows


def write_gram(G: GramMatrix, path, sidecar: Optional[Dict] = None) -> Tuple[Path, Path]:
    """Headerless dense CSV plus a JSON sidecar describing the kernel."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    np.savetxt(path, G.values, delimiter=',', fmt='%.17g')
    payload = {'n': G.size, 'ref_version': G.ref_version,
               'spec': G.spec.to_dict() if G.spec is not None else None}
    payload.update(sidecar or {})
    sidecar_path = formats.write_json(path.with_suffix('.json'), formats.GRAM_FORMAT, payload)
    return path, sidecar_path

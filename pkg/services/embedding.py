"""
Embedding service.

Maps measures to the centered g-potential of their transport to a reference
measure. The reference is either fixed (a DiscreteMeasure) or trainable
(ReferenceParams, realized as S * tanh(x_raw) with softmax(w_raw) weights).
Embeddings are tagged with a content hash of the realized reference so that
only embeddings computed against the same reference are ever compared.
"""
import hashlib
import logging
import threading
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
from scipy.special import softmax

from extensions import map_ordered
from models.embedding import Embedding, ReferenceParams
from models.measure import DiscreteMeasure, LabeledDataset
from models.transport import DualPotentials, SinkhornConfig
from services import sinkhorn, unroll
from utils import formats
from utils.errors import (
    BatchError,
    ConvergenceError,
    NumericError,
    SinkgpError,
    ValidationError,
)

logger = logging.getLogger(__name__)

FD_STEP = 1e-5

Reference = Union[ReferenceParams, DiscreteMeasure]


# ---------------------------------------------------------------------------
# Reference measures
# ---------------------------------------------------------------------------

def realize_reference(rp: ReferenceParams) -> DiscreteMeasure:
    """Points S * tanh(x_raw), weights softmax(w_raw)."""
    weights = softmax(rp.w_raw)
    if np.any(weights <= 0):
        raise NumericError("Reference weights underflowed to zero; w_raw spread is too large.")
    return DiscreteMeasure(rp.scale * np.tanh(rp.x_raw), weights)


def as_measure(ref: Reference) -> DiscreteMeasure:
    if isinstance(ref, ReferenceParams):
        return realize_reference(ref)
    return ref


def reference_version(ref: Reference, epsilon: float) -> str:
    """Content hash of the realized reference and the regularization."""
    measure = as_measure(ref)
    digest = hashlib.sha1()
    digest.update(np.ascontiguousarray(measure.points).tobytes())
    digest.update(np.ascontiguousarray(measure.weights).tobytes())
    digest.update(repr(float(epsilon)).encode('ascii'))
    return digest.hexdigest()[:16]


def initial_reference(q: int, dim: int, scale: float, seed: int) -> ReferenceParams:
    """x_raw i.i.d. uniform on [-1, 1], w_raw = 0 (uniform weights)."""
    rng = np.random.default_rng(seed)
    return ReferenceParams(rng.uniform(-1.0, 1.0, size=(q, dim)), np.zeros(q), scale)


def grid_reference(side: int, dim: int = 2) -> DiscreteMeasure:
    """Uniform measure on a regular side^dim grid of [0, 1]^dim."""
    if side < 1 or dim < 1:
        raise ValidationError("Grid side and dimension must be at least 1.")
    axis = np.linspace(0.0, 1.0, side) if side > 1 else np.array([0.5])
    mesh = np.meshgrid(*([axis] * dim), indexing='ij')
    return DiscreteMeasure.uniform(np.column_stack([m.ravel() for m in mesh]))


def write_reference(rp: ReferenceParams, path) -> Path:
    return formats.write_json(path, formats.REFERENCE_FORMAT, rp.to_dict())


def load_reference(path) -> ReferenceParams:
    return ReferenceParams.from_dict(formats.read_json(path, formats.REFERENCE_FORMAT))


# ---------------------------------------------------------------------------
# Potential cache
# ---------------------------------------------------------------------------

class PotentialCache:
    """
    Warm starts keyed by measure content.

    Each measure keeps the potentials of its most recent solve, whatever
    reference version produced them; a lookup only returns them when the
    support sizes still match. Entries seed solves, they are never returned
    as answers.
    """

    def __init__(self):
        self._entries: Dict[str, Tuple[str, DualPotentials]] = {}
        self._lock = threading.Lock()
        self.hits = 0
        self.misses = 0

    def lookup(self, measure: DiscreteMeasure, ref_size: int) -> Optional[DualPotentials]:
        with self._lock:
            entry = self._entries.get(measure.fingerprint)
            if entry is None or entry[1].f.shape[0] != measure.size or entry[1].g.shape[0] != ref_size:
                self.misses += 1
                return None
            self.hits += 1
            return entry[1]

    def store(self, measure: DiscreteMeasure, ref_version: str, potentials: DualPotentials) -> None:
        with self._lock:
            self._entries[measure.fingerprint] = (ref_version, potentials)

    def version_of(self, measure: DiscreteMeasure) -> Optional[str]:
        entry = self._entries.get(measure.fingerprint)
        return entry[0] if entry else None

    def clear(self) -> None:
        with self._lock:
            self._entries.clear()

    def __len__(self):
        return len(self._entries)


# ---------------------------------------------------------------------------
# Embeddings
# ---------------------------------------------------------------------------

def _to_embedding(potentials: DualPotentials, version: str) -> Embedding:
    return Embedding(values=potentials.g, ref_version=version,
                     converged=potentials.converged, iterations=potentials.iterations)


def solve_against(P: DiscreteMeasure, ref: DiscreteMeasure, cfg: SinkhornConfig,
                  cache: Optional[PotentialCache] = None, update_cache: bool = True,
                  version: Optional[str] = None) -> DualPotentials:
    """One warm-started solve of P against the realized reference."""
    if P.dim != ref.dim:
        raise ValidationError(f"Measure has d={P.dim} but the reference has d={ref.dim}.")
    warm = cache.lookup(P, ref.size) if cache is not None else None
    potentials = sinkhorn.solve(P, ref, cfg, warm=warm)
    if cache is not None and update_cache:
        cache.store(P, version or reference_version(ref, cfg.epsilon), potentials)
    return potentials


def embed(P: DiscreteMeasure, ref: Reference, cfg: SinkhornConfig,
          cache: Optional[PotentialCache] = None) -> Embedding:
    measure = as_measure(ref)
    version = reference_version(measure, cfg.epsilon)
    potentials = solve_against(P, measure, cfg, cache, version=version)
    return _to_embedding(potentials, version)


def solve_dataset(measures: Sequence[DiscreteMeasure], ref: DiscreteMeasure, cfg: SinkhornConfig,
                  cache: Optional[PotentialCache] = None, threads: int = 1,
                  update_cache: bool = True) -> List[DualPotentials]:
    """
    Solve every measure against ``ref``; results keep input order.

    Per-item failures are collected and raised together as a BatchError.
    """
    version = reference_version(ref, cfg.epsilon)

    def work(item):
        index, measure = item
        try:
            return solve_against(measure, ref, cfg, cache, update_cache, version)
        except SinkgpError as error:
            return (index, error)

    outcomes = map_ordered(work, list(enumerate(measures)), threads=threads)
    failures = [outcome for outcome in outcomes if isinstance(outcome, tuple)]
    if failures:
        raise BatchError(failures)

    stalled = sum(1 for potentials in outcomes if not potentials.converged)
    if stalled:
        logger.warning("%d of %d Sinkhorn solves did not reach tol=%g within %d updates",
                       stalled, len(outcomes), cfg.tol, cfg.max_iter)
    return outcomes


def embed_dataset(ds: Union[LabeledDataset, Sequence[DiscreteMeasure]], rp: Reference,
                  cfg: SinkhornConfig, cache: Optional[PotentialCache] = None,
                  threads: int = 1) -> List[Embedding]:
    measures = ds.measures if isinstance(ds, LabeledDataset) else list(ds)
    if not measures:
        return []
    ref = as_measure(rp)
    if ref.size < 2:
        logger.warning("Reference has a single atom: every centered embedding is zero")
    version = reference_version(ref, cfg.epsilon)
    potentials = solve_dataset(measures, ref, cfg, cache, threads)
    return [_to_embedding(p, version) for p in potentials]


def embed_shared_support(points, weight_matrix, rp: Reference,
                         cfg: SinkhornConfig) -> List[Embedding]:
    """Embeddings of measures given as weight rows over one shared support."""
    ref = as_measure(rp)
    version = reference_version(ref, cfg.epsilon)
    return [_to_embedding(p, version)
            for p in sinkhorn.solve_shared_support(points, weight_matrix, ref, cfg)]


def check_versions(embeddings: Sequence[Embedding]) -> Optional[str]:
    """Return the common ref_version, rejecting mixtures."""
    versions = {e.ref_version for e in embeddings}
    if len(versions) > 1:
        raise ValidationError(
            f"Embeddings come from {len(versions)} different references ({', '.join(sorted(versions))}).")
    return versions.pop() if versions else None


def embedding_distance(a: Embedding, b: Embedding, ref: Reference) -> float:
    """sqrt(sum_j w_j (a_j - b_j)^2), the L2(reference) distance."""
    check_versions([a, b])
    weights = as_measure(ref).weights
    if a.size != b.size or a.size != weights.shape[0]:
        raise ValidationError(
            f"Embedding sizes {a.size}, {b.size} do not match a reference of size {weights.shape[0]}.")
    return float(np.sqrt(max(weights @ (a.values - b.values) ** 2, 0.0)))


def embedding_jacobian(P: DiscreteMeasure, rp: ReferenceParams, cfg: SinkhornConfig,
                       mode: str = 'unrolled') -> np.ndarray:
    """
    Jacobian (q, q*d + q) of P's embedding with respect to [x_raw, w_raw].

    ``unrolled`` differentiates the exact sequence of updates a cold solve
    executes; ``finite_diff`` uses central differences of cold solves.
    """
    if mode == 'unrolled':
        ref = realize_reference(rp)
        potentials = sinkhorn.solve(P, ref, cfg)
        if potentials.iterations > cfg.unroll_cap:
            raise ConvergenceError(
                f"Forward solve took {potentials.iterations} updates, above unroll_cap={cfg.unroll_cap}; "
                f"raise the cap or use mode='finite_diff'.",
                iterations=potentials.iterations)
        if not potentials.converged:
            raise ConvergenceError(
                f"Forward solve did not converge within {cfg.max_iter} updates; use mode='finite_diff'.")
        return unroll.unrolled_jacobian(P, rp, cfg.epsilon, potentials.iterations)

    if mode == 'finite_diff':
        vector = rp.to_vector()
        columns = []
        for i in range(vector.shape[0]):
            step = np.zeros_like(vector)
            step[i] = FD_STEP
            plus = sinkhorn.solve(P, realize_reference(rp.with_vector(vector + step)), cfg).g
            minus = sinkhorn.solve(P, realize_reference(rp.with_vector(vector - step)), cfg).g
            columns.append((plus - minus) / (2 * FD_STEP))
        return np.column_stack(columns)

    raise ValidationError(f"Unknown Jacobian mode '{mode}' (use 'unrolled' or 'finite_diff').")


# ---------------------------------------------------------------------------
# Embedding CSV
# ---------------------------------------------------------------------------

def write_embeddings(path, ids: Sequence[str], embeddings: Sequence[Embedding]) -> Path:
    q = embeddings[0].size if embeddings else 0
    header = ['id'] + [f"g_{j + 1}" for j in range(q)] + ['converged']
    rows = ([item] + [float(v) for v in e.values] + [e.converged] for item, e in zip(ids, embeddings))
    return formats.write_table(path, header, rows)


def load_embeddings(path, ref_version: str) -> Tuple[List[str], List[Embedding]]:
    """Read an embedding CSV; the caller vouches for the reference it came from."""
    ids, embeddings = [], []
    for row in formats.read_table(path):
        columns = sorted((k for k in row if k.startswith('g_')), key=lambda k: int(k[2:]))
        ids.append(row['id'])
        embeddings.append(Embedding(
            values=np.array([float(row[k]) for k in columns]),
            ref_version=ref_version,
            converged=row['converged'] == 'true'))
    return ids, embeddings

"""
Joint training of the reference measure and the kernel parameters.

The objective is the negative (Laplace-approximate for classification) log
marginal likelihood of the Gram built from the current embeddings. Its
gradient chains the likelihood derivative with respect to the Gram, the
kernel derivative with respect to squared embedding distances and the
reference weights, and a reverse pass through unrolled Sinkhorn updates.

Cache policy: every evaluation warm-starts from the potentials committed at
the last accepted point (the starting point before the first step), so the
objective does not depend on which trial points the line search visited.
"""
import logging
from dataclasses import replace
from pathlib import Path
from typing import Dict, List, Optional, Tuple

import numpy as np

from models.embedding import ReferenceParams
from models.gp import GPModel
from models.kernel import KernelSpec
from models.measure import LabeledDataset
from models.optimize import HyperState, OptimizeConfig, TraceRecord
from models.transport import SinkhornConfig
from services import unroll
from services.embedding import (
    PotentialCache,
    embed_dataset,
    initial_reference,
    realize_reference,
    reference_version,
    solve_dataset,
)
from services.gp import fit_classification, fit_regression, lml_gradient_wrt_gram
from services.kernels import kernel_derivatives, squared_distance_matrix
from services.lbfgs import lbfgs_minimize
from services.measures import coordinate_scale
from utils import formats
from utils.errors import ValidationError

logger = logging.getLogger(__name__)

DEFAULT_NOISE_FACTOR = 1e-6


class NLLObjective:
    """
    Negative log marginal likelihood as a function of the flat HyperState vector.

    Potentials of evaluated points are held until ``commit`` accepts one of
    them as the warm start of later evaluations.
    """

    def __init__(self, ds: LabeledDataset, template: HyperState, sink_cfg: SinkhornConfig,
                 cache: Optional[PotentialCache] = None, family: str = 'sqexp', threads: int = 1):
        if ds.dim != template.ref.dim:
            raise ValidationError(f"Dataset has d={ds.dim} but the reference has d={template.ref.dim}.")
        if len(ds) == 0:
            raise ValidationError("Cannot train on an empty dataset.")
        self.ds = ds
        self.template = template
        self.sink_cfg = sink_cfg
        self.cache = cache if cache is not None else PotentialCache()
        self.family = family
        self.threads = threads
        self.evaluations = 0
        self.all_converged = True
        self._pending: Dict[bytes, Tuple[str, list]] = {}

    def __call__(self, vector: np.ndarray) -> Tuple[float, np.ndarray]:
        vector = np.asarray(vector, dtype=np.float64)
        state = self.template.with_vector(vector)
        ref = realize_reference(state.ref)
        potentials = solve_dataset(self.ds.measures, ref, self.sink_cfg, self.cache,
                                   threads=self.threads, update_cache=False)
        self._pending[vector.tobytes()] = (reference_version(ref, self.sink_cfg.epsilon), potentials)
        if self.evaluations == 0:
            self.commit(vector)
        self.evaluations += 1

        self.all_converged = all(p.converged for p in potentials)
        longest = max(p.iterations for p in potentials)
        if longest > self.sink_cfg.unroll_cap:
            logger.warning("Forward solves needed up to %d updates; gradient truncated to the last %d",
                           longest, self.sink_cfg.unroll_cap)

        E = np.array([p.g for p in potentials])
        w = ref.weights
        spec = KernelSpec(self.family, state.variance, state.lengthscale)
        dk_ds, K, dk_dlogsigma = kernel_derivatives(spec, squared_distance_matrix(E, w))

        noise_grad = None
        lml, M = lml_gradient_wrt_gram(K, self.ds.responses, self.ds.kind, state.noise)
        if self.ds.kind == 'regression' and state.log_noise is not None:
            noise_grad = state.noise * float(np.trace(M))

        A = M * dk_ds
        row = A.sum(axis=1)
        AE = A @ E
        grad_E = 4.0 * w * (row[:, None] * E - AE)
        grad_w = 2.0 * ((row[:, None] * E ** 2).sum(axis=0) - (E * AE).sum(axis=0))

        steps = [self.sink_cfg.unroll_cap] * len(potentials)
        grad_ref = unroll.reference_vjp(self.ds.measures, state.ref, self.sink_cfg.epsilon,
                                        E, steps, grad_E, grad_w)
        tail = [float(np.sum(M * K)), float(np.sum(M * dk_dlogsigma))]
        if noise_grad is not None:
            tail.append(noise_grad)
        gradient = -np.concatenate([grad_ref, np.asarray(tail)])
        return -lml, gradient

    def commit(self, vector: np.ndarray) -> None:
        """Store the potentials of an accepted point in the cache and drop the rest."""
        entry = self._pending.get(np.asarray(vector, dtype=np.float64).tobytes())
        if entry is not None:
            version, potentials = entry
            for measure, pot in zip(self.ds.measures, potentials):
                self.cache.store(measure, version, pot)
        self._pending.clear()


def nll_objective(ds: LabeledDataset, state: HyperState, cfg: SinkhornConfig,
                  cache: Optional[PotentialCache] = None, family: str = 'sqexp',
                  threads: int = 1) -> Tuple[float, np.ndarray]:
    return NLLObjective(ds, state, cfg, cache, family, threads)(state.to_vector())


def finite_diff_grad(objective, x, h: float = 1e-5) -> np.ndarray:
    """Central differences; ``objective`` may return a value or a (value, gradient) pair."""
    x = np.asarray(x, dtype=np.float64)

    def value(point):
        result = objective(point)
        return float(result[0] if isinstance(result, tuple) else result)

    grad = np.zeros_like(x)
    for i in range(x.shape[0]):
        step = np.zeros_like(x)
        step[i] = h
        grad[i] = (value(x + step) - value(x - step)) / (2 * h)
    return grad


def initial_state(ds: LabeledDataset, q: int, seed: int, sink_cfg: SinkhornConfig,
                  family: str = 'sqexp', noise: Optional[float] = None,
                  optimize_noise: bool = False, threads: int = 1,
                  reference: Optional[ReferenceParams] = None) -> HyperState:
    """
    Default initialization.

    The reference scale S is the largest absolute coordinate of the pooled
    data, the lengthscale the median pairwise embedding distance at the
    initial reference (its square root for exp_norm, whose
    exponent is d / 2 sigma^2), the variance Var(y) for regression and 1 for
    classification. Regression noise defaults to 1e-6 * variance.
    A given ``reference`` replaces the random reference initialization.
    """
    if len(ds) == 0:
        raise ValidationError("Cannot initialize from an empty dataset.")
    if reference is None:
        ref = initial_reference(q, ds.dim, coordinate_scale(ds.measures), seed)
    elif reference.dim != ds.dim:
        raise ValidationError(f"Reference has d={reference.dim} but the dataset has d={ds.dim}.")
    else:
        ref = reference

    embeddings = embed_dataset(ds, ref, sink_cfg, threads=threads)
    E = np.array([e.values for e in embeddings])
    s = squared_distance_matrix(E, realize_reference(ref).weights)
    distances = np.sqrt(s[np.triu_indices(len(ds), k=1)])
    lengthscale = float(np.median(distances)) if distances.size else 0.0
    if lengthscale <= 0:
        lengthscale = 1.0
    elif family == 'exp_norm':
        lengthscale = np.sqrt(lengthscale)

    if ds.kind == 'regression':
        variance = float(np.var(ds.targets)) or 1.0
        noise = DEFAULT_NOISE_FACTOR * variance if noise is None else float(noise)
    else:
        variance, noise, optimize_noise = 1.0, 0.0, False

    if optimize_noise:
        return HyperState(ref, np.log(variance), np.log(lengthscale),
                          log_noise=float(np.log(max(noise, 1e-12 * variance))))
    return HyperState(ref, np.log(variance), np.log(lengthscale), fixed_noise=noise)


def train(ds: LabeledDataset, init: HyperState, opt_cfg: OptimizeConfig, sink_cfg: SinkhornConfig,
          family: str = 'sqexp', cache: Optional[PotentialCache] = None,
          threads: int = 1) -> Tuple[GPModel, HyperState, List[TraceRecord]]:
    """L-BFGS over the flat HyperState, then a refit of the model at the final state."""
    objective = NLLObjective(ds, init, sink_cfg, cache, family, threads)
    result = lbfgs_minimize(objective, init.to_vector(), opt_cfg, callback=objective.commit)
    state = init.with_vector(result.x)
    logger.info("Training finished: status=%s iterations=%d nll=%.6f",
                result.status, result.iterations, result.value)

    embeddings = embed_dataset(ds, state.ref, sink_cfg, objective.cache, threads)
    spec = KernelSpec(family, state.variance, state.lengthscale)
    if ds.kind == 'regression':
        model = fit_regression(embeddings, state.ref, ds.targets, spec, state.noise)
    else:
        model = fit_classification(embeddings, state.ref, ds.labels, spec)
    return replace(model, sinkhorn=sink_cfg), state, result.trace


def write_trace(trace: List[TraceRecord], path) -> Path:
    return formats.write_jsonl(path, formats.TRACE_FORMAT, (record.to_dict() for record in trace))

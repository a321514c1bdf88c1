"""
Runtime comparison of Gram construction: Sinkhorn embeddings against MMD.

Clouds share one grid support of [0, 1]^2 and differ only by their weights,
so both methods precompute their point-level kernel once per run: the Gibbs
kernel against the reference for Sinkhorn, the RBF kernel between support
points for MMD.
"""
import logging
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Dict, List, Sequence, Tuple

import numpy as np

from models.kernel import KernelSpec
from models.measure import DiscreteMeasure
from models.transport import SinkhornConfig
from services.embedding import embed_shared_support
from services.kernels import gram, mmd_gram_shared
from utils import formats
from utils.validators import ensure, validate_min_int

logger = logging.getLogger(__name__)

REFERENCE_SIZES = (6, 12)
BENCHMARK_COLUMNS = ['n_clouds', 'cloud_size', 'method', 'q', 'median_seconds', 'repeats']


@dataclass(frozen=True)
class BenchmarkConfig:
    repeats: int = 5
    rbf_sigma: float = 0.1
    hat_sigma: float = 1.0
    reference_sizes: Tuple[int, ...] = REFERENCE_SIZES

    def __post_init__(self):
        ensure(validate_min_int('repeats', self.repeats, 1))


def grid_support(cloud_size: int) -> np.ndarray:
    """The first ``cloud_size`` nodes (row-major) of the smallest square grid holding them."""
    ensure(validate_min_int('cloud_size', cloud_size, 1))
    side = int(np.ceil(np.sqrt(cloud_size)))
    axis = (np.arange(side) + 0.5) / side
    rows, cols = np.meshgrid(axis, axis, indexing='ij')
    return np.column_stack([cols.ravel(), rows.ravel()])[:cloud_size]


def grid_clouds(n_clouds: int, cloud_size: int, seed: int) -> Tuple[np.ndarray, np.ndarray]:
    """Shared support plus one weight row per cloud: a Gaussian bump with random centre and width."""
    ensure(validate_min_int('n_clouds', n_clouds, 1))
    rng = np.random.default_rng(seed)
    points = grid_support(cloud_size)
    centres = rng.uniform(0.2, 0.8, size=(n_clouds, 2))
    widths = rng.uniform(0.1, 0.3, size=n_clouds)
    sq = ((points[None, :, :] - centres[:, None, :]) ** 2).sum(axis=2)
    weights = np.exp(-sq / (2 * widths[:, None] ** 2)) + 1e-12
    return points, weights / weights.sum(axis=1, keepdims=True)


def benchmark_reference(q: int, seed: int) -> DiscreteMeasure:
    """q uniform-weight points drawn uniformly from the unit square."""
    ensure(validate_min_int('q', q, 1))
    return DiscreteMeasure.uniform(np.random.default_rng(seed).uniform(0.0, 1.0, size=(q, 2)))


def median_time(fn: Callable[[], object], repeats: int) -> float:
    """Median wall-clock seconds over ``repeats`` runs after one discarded warmup."""
    fn()
    timings = []
    for _ in range(repeats):
        started = time.perf_counter()
        fn()
        timings.append(time.perf_counter() - started)
    return float(np.median(timings))


def run_benchmark(sizes: Sequence[Tuple[int, int]], sink_cfg: SinkhornConfig, seed: int = 0,
                  bench_cfg: BenchmarkConfig = BenchmarkConfig()) -> List[Dict]:
    """One row per (size, method): Sinkhorn for each reference size, then MMD."""
    rows = []
    spec = KernelSpec('sqexp', 1.0, 1.0)
    for n_clouds, cloud_size in sizes:
        points, weights = grid_clouds(n_clouds, cloud_size, seed)
        for q in bench_cfg.reference_sizes:
            ref = benchmark_reference(q, seed)

            def sinkhorn_gram():
                return gram(embed_shared_support(points, weights, ref, sink_cfg), ref, spec)

            seconds = median_time(sinkhorn_gram, bench_cfg.repeats)
            rows.append({'n_clouds': n_clouds, 'cloud_size': cloud_size, 'method': 'sinkhorn',
                         'q': q, 'median_seconds': seconds, 'repeats': bench_cfg.repeats})
            logger.info("benchmark n=%d m=%d sinkhorn q=%d: %.4fs", n_clouds, cloud_size, q, seconds)

        seconds = median_time(
            lambda: mmd_gram_shared(points, weights, bench_cfg.rbf_sigma, bench_cfg.hat_sigma),
            bench_cfg.repeats)
        rows.append({'n_clouds': n_clouds, 'cloud_size': cloud_size, 'method': 'mmd',
                     'q': '', 'median_seconds': seconds, 'repeats': bench_cfg.repeats})
        logger.info("benchmark n=%d m=%d mmd: %.4fs", n_clouds, cloud_size, seconds)
    return rows


def write_benchmark(rows: Sequence[Dict], path) -> Path:
    return formats.write_table(path, BENCHMARK_COLUMNS, ([row[c] for c in BENCHMARK_COLUMNS] for row in rows))

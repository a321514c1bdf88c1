"""
Shared pieces of the command line: run configuration, parent parsers and
reference resolution.
"""
import argparse
import json
import logging
import sys
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence

from models.kernel import KERNEL_FAMILIES
from models.measure import DiscreteMeasure
from models.optimize import OptimizeConfig
from models.transport import SinkhornConfig
from services.datasets import ImageOptions
from services.embedding import Reference, grid_reference, initial_reference, load_reference
from services.measures import coordinate_scale, load_measure
from utils.errors import ConvergenceError, ValidationError

logger = logging.getLogger(__name__)

KERNEL_CHOICES = KERNEL_FAMILIES + ('sinkhorn',)


@dataclass(frozen=True)
class RunConfig:
    """Settings of one command run: configuration-class defaults overridden by flags."""
    epsilon: float
    tol: float
    max_iter: int
    unroll_cap: int
    seed: int
    threads: int
    kernel: str
    noise: Optional[float]
    strict: bool
    reference_size: int
    train_iters: int
    lbfgs_memory: int
    grad_tol: float

    @classmethod
    def from_args(cls, args: argparse.Namespace, cfg, allow_mmd: bool = False) -> 'RunConfig':
        def pick(name, default):
            value = getattr(args, name, None)
            return default if value is None else value

        noise = pick('noise', cfg.NOISE)
        run = cls(
            epsilon=pick('eps', cfg.EPSILON),
            tol=pick('tol', cfg.TOL),
            max_iter=pick('max_iter', cfg.MAX_ITER),
            unroll_cap=pick('unroll_cap', cfg.UNROLL_CAP),
            seed=pick('seed', cfg.SEED),
            threads=pick('threads', cfg.THREADS),
            kernel=pick('kernel', cfg.KERNEL),
            noise=None if noise is None else float(noise),
            strict=bool(getattr(args, 'strict', False)),
            reference_size=pick('ref_size', cfg.REFERENCE_SIZE),
            train_iters=pick('train_iters', cfg.TRAIN_ITERS),
            lbfgs_memory=cfg.LBFGS_MEMORY,
            grad_tol=cfg.GRAD_TOL,
        )
        # materialize once so invalid values fail before any work starts
        run.sinkhorn()
        run.optimize()
        if run.threads < 1:
            raise ValidationError(f"threads must be at least 1 (got {run.threads}).")
        if run.kernel == 'mmd' and not allow_mmd:
            raise ValidationError("--kernel mmd is only available for the gram command.")
        return run

    @property
    def family(self) -> str:
        """Kernel family; 'sinkhorn' is an alias of the default family."""
        return 'sqexp' if self.kernel in ('sinkhorn', 'mmd') else self.kernel

    def sinkhorn(self) -> SinkhornConfig:
        return SinkhornConfig(epsilon=self.epsilon, max_iter=self.max_iter,
                              tol=self.tol, unroll_cap=self.unroll_cap)

    def optimize(self) -> OptimizeConfig:
        return OptimizeConfig(memory=self.lbfgs_memory, max_iters=self.train_iters, grad_tol=self.grad_tol)


def _offset(text: str):
    try:
        dr, dc = (int(part) for part in text.split(','))
    except ValueError:
        raise argparse.ArgumentTypeError(f"offset must look like 'dr,dc' (got '{text}')")
    return dr, dc


def size_pair(text: str):
    try:
        n, m = (int(part) for part in text.split(','))
    except ValueError:
        raise argparse.ArgumentTypeError(f"size must look like 'n_clouds,cloud_size' (got '{text}')")
    return n, m


def common_parser() -> argparse.ArgumentParser:
    """Flags every subcommand accepts; unset values fall back to the configuration class."""
    parser = argparse.ArgumentParser(add_help=False)
    group = parser.add_argument_group('run options')
    group.add_argument('--eps', type=float, help='entropic regularization epsilon')
    group.add_argument('--tol', type=float, help='Sinkhorn marginal tolerance')
    group.add_argument('--max-iter', dest='max_iter', type=int, help='Sinkhorn update limit')
    group.add_argument('--unroll-cap', dest='unroll_cap', type=int, help='updates replayed for gradients')
    group.add_argument('--seed', type=int, help='random seed')
    group.add_argument('--threads', type=int, help='worker threads for per-measure solves')
    group.add_argument('--kernel', choices=KERNEL_CHOICES + ('mmd',), help='kernel family')
    group.add_argument('--noise', type=float, help='regression noise variance')
    group.add_argument('--strict', action='store_true', help='fail (exit 4) on any non-converged solve')
    group.add_argument('--out', help='output path')
    group.add_argument('--log-level', dest='log_level', help='DEBUG, INFO, WARNING, ...')
    group.add_argument('--log-json', dest='log_json', action='store_true', default=None,
                       help='structured JSON log lines')
    return parser


def image_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(add_help=False)
    group = parser.add_argument_group('image items')
    group.add_argument('--image-mode', dest='image_mode', choices=('cloud', 'glcm'), default='cloud')
    group.add_argument('--crop', type=int, help='center-crop size in pixels')
    group.add_argument('--levels', type=int, default=8, help='gray levels for co-occurrence measures')
    group.add_argument('--offset', dest='offsets', type=_offset, action='append',
                       help='co-occurrence offset dr,dc (repeatable)')
    return parser


def reference_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(add_help=False)
    group = parser.add_argument_group('reference')
    group.add_argument('--ref', help='reference JSON (trainable parameters) or measure CSV (fixed)')
    group.add_argument('--ref-size', dest='ref_size', type=int, help='atoms of a freshly initialized reference')
    group.add_argument('--grid', type=int, help='uniform grid reference with this many nodes per side')
    return parser


def image_options(args: argparse.Namespace) -> ImageOptions:
    return ImageOptions(mode=args.image_mode, crop=args.crop, levels=args.levels,
                        offsets=tuple(args.offsets or ((0, 1),)))


def resolve_reference(args: argparse.Namespace, run: RunConfig, dim: int,
                      measures: Sequence[DiscreteMeasure]) -> Reference:
    if getattr(args, 'ref', None):
        path = Path(args.ref)
        if path.suffix.lower() == '.json':
            reference = load_reference(path)
        else:
            reference = load_measure(path)
        if reference.dim != dim:
            raise ValidationError(f"Reference {path} has d={reference.dim} but the data has d={dim}.")
        return reference
    if getattr(args, 'grid', None):
        return grid_reference(args.grid, dim)
    return initial_reference(run.reference_size, dim, coordinate_scale(measures), run.seed)


def require_converged(flags: Sequence[bool], run: RunConfig, what: str = 'embeddings') -> None:
    stalled = [i for i, ok in enumerate(flags) if not ok]
    if stalled and run.strict:
        raise ConvergenceError(f"{len(stalled)} of {len(flags)} {what} did not converge.", indices=stalled)


def emit(summary: dict) -> None:
    """Print the command summary as one JSON line on stdout."""
    print(json.dumps(summary, sort_keys=True, default=float), file=sys.stdout)


def output_path(args: argparse.Namespace, default: str) -> Path:
    return Path(args.out or default)

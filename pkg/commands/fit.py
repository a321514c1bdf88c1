"""fit: train the reference and kernel parameters, then save the model and its trace."""
import logging
from dataclasses import replace
from pathlib import Path

from commands.common import RunConfig, emit, image_options, image_parser, output_path, require_converged
from services.datasets import load_dataset
from services.embedding import PotentialCache, load_reference
from services.gp import save_model
from services.measures import normalize_dataset
from services.optimize import initial_state, train, write_trace

logger = logging.getLogger(__name__)


def register(subparsers, parents):
    parser = subparsers.add_parser('fit', parents=parents + [image_parser()],
                                   help='train a GP model on a manifest')
    parser.add_argument('manifest', help='dataset manifest JSON with targets or labels')
    parser.add_argument('--ref', help='reference JSON used as the starting point')
    parser.add_argument('--ref-size', dest='ref_size', type=int, help='atoms of the initial reference')
    parser.add_argument('--max-iters', '--train-iters', dest='train_iters', type=int,
                        help='L-BFGS iterations')
    parser.add_argument('--optimize-noise', dest='optimize_noise', action='store_true',
                        help='train the regression noise as well')
    parser.add_argument('--normalize', action='store_true',
                        help='standardize coordinates first; the map is stored with the model')
    parser.add_argument('--trace', help='trace JSONL path (default: next to the model)')
    parser.set_defaults(handler=run)
    return parser


def run(args, cfg) -> int:
    settings = RunConfig.from_args(args, cfg)
    ds = load_dataset(args.manifest, image_options(args))
    normalization = None
    if args.normalize:
        ds, normalization = normalize_dataset(ds)

    sink_cfg = settings.sinkhorn()
    cache = PotentialCache()
    init = initial_state(
        ds, settings.reference_size, settings.seed, sink_cfg, family=settings.family,
        noise=settings.noise, optimize_noise=args.optimize_noise, threads=settings.threads,
        reference=load_reference(args.ref) if args.ref else None)
    logger.info("Training %s model on %d measures (q=%d, family=%s)",
                ds.kind, len(ds), init.ref.size, settings.family)

    model, state, trace = train(ds, init, settings.optimize(), sink_cfg,
                                family=settings.family, cache=cache, threads=settings.threads)
    require_converged([e.converged for e in model.embeddings], settings)
    model = replace(model, normalization=normalization)

    model_path = save_model(model, output_path(args, 'model.json'))
    trace_path = write_trace(trace, Path(args.trace) if args.trace else model_path.with_suffix('.trace.jsonl'))
    emit({
        'model': str(model_path),
        'trace': str(trace_path),
        'kind': model.kind,
        'q': state.ref.size,
        'iterations': len(trace) - 1,
        'initial_nll': trace[0].nll,
        'nll': trace[-1].nll,
        'variance': state.variance,
        'lengthscale': state.lengthscale,
        'noise': state.noise,
    })
    return 0

"""toygen: write a synthetic dataset as measure CSVs plus a manifest."""
import logging

from commands.common import RunConfig, emit, output_path
from services.datasets import write_manifest
from services.measures import sample_mixture_dataset, sample_toy_dataset

logger = logging.getLogger(__name__)


def register(subparsers, parents):
    parser = subparsers.add_parser('toygen', parents=parents, help='generate a synthetic dataset')
    parser.add_argument('--count', type=int, default=100, help='number of measures')
    parser.add_argument('--cloud-size', dest='cloud_size', type=int, default=30, help='points per cloud')
    parser.add_argument('--task', choices=('regression', 'classification'), default='regression')
    parser.add_argument('--separation', type=float, default=1.0, help='class separation (classification)')
    parser.set_defaults(handler=run)
    return parser


def run(args, cfg) -> int:
    settings = RunConfig.from_args(args, cfg)
    if args.task == 'regression':
        ds = sample_toy_dataset(args.count, args.cloud_size, settings.seed)
    else:
        ds = sample_mixture_dataset(args.count, args.cloud_size, settings.seed, separation=args.separation)
    manifest = write_manifest(ds, output_path(args, 'toy'))
    logger.info("Wrote %d %s measures to %s", len(ds), args.task, manifest.parent)
    emit({'manifest': str(manifest), 'count': len(ds), 'task': args.task})
    return 0

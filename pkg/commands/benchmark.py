"""benchmark: wall-clock Gram construction, Sinkhorn embeddings against MMD."""
import logging

from commands.common import RunConfig, emit, output_path, size_pair
from services.benchmark import BenchmarkConfig, run_benchmark, write_benchmark

logger = logging.getLogger(__name__)

DEFAULT_SIZES = ((50, 100), (400, 400))


def register(subparsers, parents):
    parser = subparsers.add_parser('benchmark', parents=parents, help='time Gram construction')
    parser.add_argument('--size', dest='sizes', type=size_pair, action='append',
                        help='n_clouds,cloud_size (repeatable)')
    parser.add_argument('--repeats', type=int, default=5, help='timed runs per cell after one warmup')
    parser.add_argument('--rbf-sigma', dest='rbf_sigma', type=float, default=0.1)
    parser.set_defaults(handler=run)
    return parser


def run(args, cfg) -> int:
    settings = RunConfig.from_args(args, cfg)
    sizes = args.sizes or list(DEFAULT_SIZES)
    bench_cfg = BenchmarkConfig(repeats=args.repeats, rbf_sigma=args.rbf_sigma)
    rows = run_benchmark(sizes, settings.sinkhorn(), seed=settings.seed, bench_cfg=bench_cfg)
    path = write_benchmark(rows, output_path(args, 'benchmark.csv'))
    logger.info("Benchmark of %d sizes written to %s", len(sizes), path)
    emit({'benchmark': str(path), 'rows': len(rows)})
    return 0

"""embed: embeddings of every manifest item against one reference."""
import logging

from commands.common import (
    RunConfig,
    emit,
    image_options,
    image_parser,
    output_path,
    reference_parser,
    require_converged,
    resolve_reference,
)
from services.datasets import load_manifest
from services.embedding import (
    PotentialCache,
    as_measure,
    embed_dataset,
    reference_version,
    write_embeddings,
)

logger = logging.getLogger(__name__)


def register(subparsers, parents):
    parser = subparsers.add_parser('embed', parents=parents + [image_parser(), reference_parser()],
                                   help='embed the measures of a manifest')
    parser.add_argument('manifest', help='dataset manifest JSON')
    parser.set_defaults(handler=run)
    return parser


def run(args, cfg) -> int:
    settings = RunConfig.from_args(args, cfg)
    manifest = load_manifest(args.manifest, image_options(args))
    reference = resolve_reference(args, settings, manifest.dim, manifest.measures)
    sink_cfg = settings.sinkhorn()

    embeddings = embed_dataset(manifest.measures, reference, sink_cfg, PotentialCache(), settings.threads)
    require_converged([e.converged for e in embeddings], settings)

    path = write_embeddings(output_path(args, 'embeddings.csv'), manifest.ids, embeddings)
    logger.info("Wrote %d embeddings to %s", len(embeddings), path)
    emit({
        'embeddings': str(path),
        'count': len(embeddings),
        'converged': sum(e.converged for e in embeddings),
        'ref_version': reference_version(as_measure(reference), sink_cfg.epsilon),
    })
    return 0

"""gram: export a precomputed kernel matrix (Sinkhorn embedding kernel or MMD)."""
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
from models.embedding import ReferenceParams
from models.kernel import KernelSpec
from services.datasets import load_manifest
from services.embedding import as_measure, embed_dataset
from services.kernels import check_psd, gram, mmd_gram, write_gram

logger = logging.getLogger(__name__)


def register(subparsers, parents):
    parser = subparsers.add_parser('gram', parents=parents + [image_parser(), reference_parser()],
                                   help='write the Gram matrix of a manifest')
    parser.add_argument('manifest', help='dataset manifest JSON')
    parser.add_argument('--variance', type=float, default=1.0, help='kernel variance l')
    parser.add_argument('--lengthscale', type=float, default=1.0, help='kernel lengthscale sigma')
    parser.add_argument('--rbf-sigma', dest='rbf_sigma', type=float, default=0.1,
                        help='bandwidth of the point kernel inside MMD')
    parser.add_argument('--hat-sigma', dest='hat_sigma', type=float, default=1.0,
                        help='prefactor of the MMD kernel')
    parser.set_defaults(handler=run)
    return parser


def run(args, cfg) -> int:
    settings = RunConfig.from_args(args, cfg, allow_mmd=True)
    manifest = load_manifest(args.manifest, image_options(args))

    if settings.kernel == 'mmd':
        G = mmd_gram(manifest.measures, args.rbf_sigma, args.hat_sigma)
        sidecar = {'kernel': 'mmd', 'rbf_sigma': args.rbf_sigma, 'hat_sigma': args.hat_sigma}
    else:
        reference = resolve_reference(args, settings, manifest.dim, manifest.measures)
        sink_cfg = settings.sinkhorn()
        spec = KernelSpec(settings.family, args.variance, args.lengthscale)
        embeddings = embed_dataset(manifest.measures, reference, sink_cfg, threads=settings.threads)
        require_converged([e.converged for e in embeddings], settings)
        G = gram(embeddings, reference, spec)
        realized = as_measure(reference)
        sidecar = {
            'kernel': 'sinkhorn',
            'sinkhorn': sink_cfg.to_dict(),
            'reference_points': realized.points.tolist(),
            'reference_weights': realized.weights.tolist(),
        }
        if isinstance(reference, ReferenceParams):
            sidecar['reference'] = reference.to_dict()

    sidecar['ids'] = list(manifest.ids)
    report = check_psd(G)
    if not report.ok:
        logger.warning("Gram matrix has min eigenvalue %.3e below the PSD tolerance", report.min_eig)
    path, sidecar_path = write_gram(G, output_path(args, 'gram.csv'), sidecar)
    emit({'gram': str(path), 'sidecar': str(sidecar_path), 'n': G.size,
          'kernel': sidecar['kernel'], 'min_eig': report.min_eig})
    return 0

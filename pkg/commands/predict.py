"""predict: posterior predictions of a saved model for the items of a manifest."""
import logging

import numpy as np

from commands.common import RunConfig, emit, image_options, image_parser, output_path, require_converged
from services.datasets import load_manifest
from services.embedding import embed_dataset
from services.gp import accuracy, evs, load_model, predict
from utils import formats

logger = logging.getLogger(__name__)


def register(subparsers, parents):
    parser = subparsers.add_parser('predict', parents=parents + [image_parser()],
                                   help='predict with a saved model')
    parser.add_argument('model', help='model JSON written by fit')
    parser.add_argument('manifest', help='manifest of the measures to predict')
    parser.set_defaults(handler=run)
    return parser


def run(args, cfg) -> int:
    settings = RunConfig.from_args(args, cfg)
    model = load_model(args.model)
    manifest = load_manifest(args.manifest, image_options(args))
    measures = list(manifest.measures)
    if model.normalization is not None:
        measures = [model.normalization.apply(m) for m in measures]

    embeddings = embed_dataset(measures, model.reference, model.sinkhorn, threads=settings.threads)
    require_converged([e.converged for e in embeddings], settings)
    results = predict(model, embeddings)

    summary = {'count': len(results), 'kind': model.kind}
    if model.kind == 'regression':
        header = ['id', 'mean', 'variance']
        rows = [[item, r.mean, r.variance] for item, r in zip(manifest.ids, results)]
        if manifest.targets is not None and len(results) > 1 and np.var(manifest.targets) > 0:
            summary['evs'] = evs(manifest.targets, [r.mean for r in results])
    else:
        header = ['id', 'latent_mean', 'latent_variance', 'probability']
        rows = [[item, r.mean, r.variance, r.probability] for item, r in zip(manifest.ids, results)]
        if manifest.labels is not None and results:
            summary['accuracy'] = accuracy(manifest.labels, [r.probability for r in results])

    path = formats.write_table(output_path(args, 'predictions.csv'), header, rows)
    logger.info("Wrote %d predictions to %s", len(rows), path)
    summary['predictions'] = str(path)
    emit(summary)
    return 0

"""
Fitted Gaussian-process models and their predictions.
"""
from dataclasses import dataclass, field
from typing import Optional, Tuple

import numpy as np

from models.embedding import Embedding, ReferenceParams
from models.kernel import KernelSpec
from models.measure import AffineMap, DiscreteMeasure
from models.transport import SinkhornConfig


@dataclass(frozen=True, eq=False)
class GPModel:
    """
    A trained GP over embeddings.

    Regression: ``chol`` factors K + noise*I (+ jitter) and ``alpha`` solves
    that system against the targets. Classification: ``chol`` factors
    B = I + W^1/2 K W^1/2 at the MAP latent vector, ``alpha`` is
    y - sigmoid(latent_map) and ``w_sqrt`` holds W^1/2.
    """
    kind: str
    embeddings: Tuple[Embedding, ...]
    ref: Optional[DiscreteMeasure]
    spec: Optional[KernelSpec]
    noise: float
    chol: np.ndarray
    alpha: np.ndarray
    log_marginal_likelihood: float
    targets: Optional[np.ndarray] = None
    labels: Optional[np.ndarray] = None
    latent_map: Optional[np.ndarray] = None
    w_sqrt: Optional[np.ndarray] = None
    jitter: float = 0.0
    reference: Optional[ReferenceParams] = None
    sinkhorn: Optional[SinkhornConfig] = None
    normalization: Optional[AffineMap] = field(default=None)

    @property
    def ref_version(self) -> Optional[str]:
        return self.embeddings[0].ref_version if self.embeddings else None

    @property
    def size(self) -> int:
        return self.alpha.shape[0]


@dataclass(frozen=True)
class PredictionResult:
    """Regression: mean and variance. Classification: latent moments and probability."""
    mean: float
    variance: float
    probability: Optional[float] = None

"""
Reverse-mode differentiation through unrolled Sinkhorn updates (torch, float64).

Measures of different sizes are padded to one batch; padded atoms carry
log-weight -inf so they never contribute to a log-sum-exp. Each measure runs
its own number of updates, after which its iterate is frozen.
"""
import logging
from typing import Callable, Sequence

import numpy as np
import torch

from extensions import TORCH_DTYPE
from models.embedding import ReferenceParams
from models.measure import DiscreteMeasure

logger = logging.getLogger(__name__)


def _pad(measures: Sequence[DiscreteMeasure]):
    size = max(m.size for m in measures)
    dim = measures[0].dim
    points = np.zeros((len(measures), size, dim))
    log_p = np.full((len(measures), size), -np.inf)
    for b, measure in enumerate(measures):
        points[b, :measure.size] = measure.points
        log_p[b, :measure.size] = np.log(measure.weights)
    return torch.as_tensor(points, dtype=TORCH_DTYPE), torch.as_tensor(log_p, dtype=TORCH_DTYPE)


def unrolled_embeddings(measures: Sequence[DiscreteMeasure], x_raw: torch.Tensor,
                        w_raw: torch.Tensor, scale: float, epsilon: float,
                        starts: np.ndarray, steps: Sequence[int]) -> torch.Tensor:
    """
    Centered embeddings (B, q) as a differentiable function of (x_raw, w_raw).

    ``starts`` holds the g iterate each measure starts from and ``steps`` the
    number of updates to replay. Centering happens once, after the last update.
    """
    points, log_p = _pad(measures)
    ref_points = scale * torch.tanh(x_raw)
    log_w = torch.log_softmax(w_raw, dim=0)

    cost = 0.5 * ((points[:, :, None, :] - ref_points[None, None, :, :]) ** 2).sum(dim=-1)
    g = torch.as_tensor(np.asarray(starts), dtype=TORCH_DTYPE)
    steps = torch.as_tensor(np.asarray(steps, dtype=np.int64))

    for t in range(int(steps.max())):
        f = -epsilon * torch.logsumexp(log_w[None, None, :] + (g[:, None, :] - cost) / epsilon, dim=2)
        g_new = -epsilon * torch.logsumexp(log_p[:, :, None] + (f[:, :, None] - cost) / epsilon, dim=1)
        g = torch.where((t < steps)[:, None], g_new, g)

    weights = torch.exp(log_w)
    return g - (g * weights).sum(dim=1, keepdim=True)


def reference_vjp(measures: Sequence[DiscreteMeasure], rp: ReferenceParams, epsilon: float,
                  starts: np.ndarray, steps: Sequence[int],
                  grad_embeddings: np.ndarray, grad_weights: np.ndarray) -> np.ndarray:
    """
    Pull a cotangent on (embeddings, realized weights) back to the flat
    reference vector [x_raw (row-major), w_raw].
    """
    x_raw = torch.tensor(np.array(rp.x_raw), dtype=TORCH_DTYPE, requires_grad=True)
    w_raw = torch.tensor(np.array(rp.w_raw), dtype=TORCH_DTYPE, requires_grad=True)
    embeddings = unrolled_embeddings(measures, x_raw, w_raw, rp.scale, epsilon, starts, steps)
    weights = torch.softmax(w_raw, dim=0)

    surrogate = (embeddings * torch.as_tensor(grad_embeddings, dtype=TORCH_DTYPE)).sum()
    surrogate = surrogate + (weights * torch.as_tensor(grad_weights, dtype=TORCH_DTYPE)).sum()
    grad_x, grad_w = torch.autograd.grad(surrogate, (x_raw, w_raw), allow_unused=True)

    grad_x = torch.zeros_like(x_raw) if grad_x is None else grad_x
    grad_w = torch.zeros_like(w_raw) if grad_w is None else grad_w
    return np.concatenate([grad_x.detach().numpy().ravel(), grad_w.detach().numpy()])


def embedding_function(P: DiscreteMeasure, rp: ReferenceParams, epsilon: float,
                       steps: int) -> Callable[[torch.Tensor], torch.Tensor]:
    """Map the flat reference vector to P's embedding by ``steps`` cold-start updates."""
    q, d = rp.x_raw.shape
    starts = np.zeros((1, q))

    def fn(vector: torch.Tensor) -> torch.Tensor:
        x_raw = vector[:q * d].reshape(q, d)
        w_raw = vector[q * d:]
        return unrolled_embeddings([P], x_raw, w_raw, rp.scale, epsilon, starts, [steps])[0]

    return fn


def unrolled_jacobian(P: DiscreteMeasure, rp: ReferenceParams, epsilon: float,
                      steps: int) -> np.ndarray:
    vector = torch.as_tensor(rp.to_vector(), dtype=TORCH_DTYPE)
    jac = torch.autograd.functional.jacobian(embedding_function(P, rp, epsilon, steps), vector)
    return jac.detach().numpy()

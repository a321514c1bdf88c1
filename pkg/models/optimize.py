"""
Optimizer configuration, training state and traces.
"""
from dataclasses import dataclass, field
from typing import List, Optional

import numpy as np

from models.embedding import ReferenceParams
from utils.errors import ValidationError
from utils.validators import ensure, validate_min_int, validate_positive, validate_wolfe


@dataclass(frozen=True)
class OptimizeConfig:
    memory: int = 10
    max_iters: int = 30
    grad_tol: float = 1e-5
    wolfe_c1: float = 1e-4
    wolfe_c2: float = 0.9
    max_zoom: int = 25

    def __post_init__(self):
        ensure(validate_min_int('memory', self.memory, 1))
        ensure(validate_min_int('max_iters', self.max_iters, 0))
        ensure(validate_positive('grad_tol', self.grad_tol))
        ensure(validate_wolfe(self.wolfe_c1, self.wolfe_c2))
        ensure(validate_min_int('max_zoom', self.max_zoom, 1))


@dataclass(frozen=True, eq=False)
class HyperState:
    """
    Joint training state: reference parameters plus log kernel parameters.

    ``log_noise`` is optimized when set; otherwise ``fixed_noise`` is used.
    Flat layout: [x_raw (q*d), w_raw (q), log_variance, log_lengthscale, (log_noise)].
    """
    ref: ReferenceParams
    log_variance: float
    log_lengthscale: float
    log_noise: Optional[float] = None
    fixed_noise: float = 0.0

    def __post_init__(self):
        values = [self.log_variance, self.log_lengthscale]
        if self.log_noise is not None:
            values.append(self.log_noise)
        if not np.all(np.isfinite(values)):
            raise ValidationError("Hyperparameters must be finite.")
        if not np.isfinite(self.fixed_noise) or self.fixed_noise < 0:
            raise ValidationError("fixed_noise must be a finite nonnegative number.")

    @property
    def variance(self) -> float:
        return float(np.exp(self.log_variance))

    @property
    def lengthscale(self) -> float:
        return float(np.exp(self.log_lengthscale))

    @property
    def noise(self) -> float:
        if self.log_noise is None:
            return self.fixed_noise
        return float(np.exp(self.log_noise))

    @property
    def n_params(self) -> int:
        return self.ref.n_params + (3 if self.log_noise is not None else 2)

    def to_vector(self) -> np.ndarray:
        tail = [self.log_variance, self.log_lengthscale]
        if self.log_noise is not None:
            tail.append(self.log_noise)
        return np.concatenate([self.ref.to_vector(), np.asarray(tail, dtype=np.float64)])

    def with_vector(self, vector: np.ndarray) -> 'HyperState':
        vector = np.asarray(vector, dtype=np.float64)
        k = self.ref.n_params
        return HyperState(
            ref=self.ref.with_vector(vector[:k]),
            log_variance=float(vector[k]),
            log_lengthscale=float(vector[k + 1]),
            log_noise=float(vector[k + 2]) if self.log_noise is not None else None,
            fixed_noise=self.fixed_noise,
        )

    def to_dict(self):
        return {
            'reference': self.ref.to_dict(),
            'log_variance': self.log_variance,
            'log_lengthscale': self.log_lengthscale,
            'log_noise': self.log_noise,
            'fixed_noise': self.fixed_noise,
        }


@dataclass(frozen=True)
class TraceRecord:
    iter: int
    nll: float
    grad_norm: float
    step: float
    wallclock_ms: float

    def to_dict(self):
        return {'iter': self.iter, 'nll': self.nll, 'grad_norm': self.grad_norm,
                'step': self.step, 'wallclock_ms': self.wallclock_ms}


@dataclass(eq=False)
class OptimizeResult:
    x: object
    value: float
    gradient: np.ndarray
    status: str
    iterations: int
    trace: List[TraceRecord] = field(default_factory=list)

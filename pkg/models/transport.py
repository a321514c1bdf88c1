"""
Types for entropic optimal transport.
"""
from dataclasses import dataclass

import numpy as np

from utils.validators import ensure, validate_min_int, validate_positive


@dataclass(frozen=True)
class SinkhornConfig:
    """Regularization and stopping rule of the log-domain Sinkhorn solver."""
    epsilon: float = 1e-2
    max_iter: int = 1000
    tol: float = 1e-6
    unroll_cap: int = 200

    def __post_init__(self):
        ensure(validate_positive('epsilon', self.epsilon))
        ensure(validate_min_int('max_iter', self.max_iter, 1))
        ensure(validate_positive('tol', self.tol))
        ensure(validate_min_int('unroll_cap', self.unroll_cap, 1))

    def to_dict(self):
        return {'epsilon': self.epsilon, 'max_iter': self.max_iter,
                'tol': self.tol, 'unroll_cap': self.unroll_cap}

    @classmethod
    def from_dict(cls, payload) -> 'SinkhornConfig':
        return cls(**{key: payload[key] for key in ('epsilon', 'max_iter', 'tol', 'unroll_cap')
                      if key in payload})


@dataclass(frozen=True, eq=False)
class DualPotentials:
    """
    Dual pair (f on supp(P), g on supp(U)) of one solve.

    g is centered against the reference weights.
    """
    f: np.ndarray
    g: np.ndarray
    epsilon: float
    iterations: int
    residual: float
    converged: bool

    def __repr__(self):
        return (f"<DualPotentials n={self.f.shape[0]} q={self.g.shape[0]} "
                f"iterations={self.iterations} residual={self.residual:.2e} "
                f"converged={self.converged}>")


@dataclass(frozen=True, eq=False)
class TransportPlan:
    values: np.ndarray

    def row_sums(self) -> np.ndarray:
        return self.values.sum(axis=1)

    def column_sums(self) -> np.ndarray:
        return self.values.sum(axis=0)

"""
Kernel specifications and Gram matrices.
"""
from dataclasses import dataclass
from typing import Optional

import numpy as np

from utils.errors import ValidationError
from utils.validators import ensure, validate_positive

KERNEL_FAMILIES = ('sqexp', 'exp_norm', 'matern32', 'matern52')


@dataclass(frozen=True)
class KernelSpec:
    """
    Kernel family F with parameters theta = (variance l, lengthscale sigma).

    ``variance`` is the prefactor (value at distance zero).
    """
    family: str = 'sqexp'
    variance: float = 1.0
    lengthscale: float = 1.0

    def __post_init__(self):
        if self.family not in KERNEL_FAMILIES:
            raise ValidationError(
                f"Unknown kernel family '{self.family}' (choose from {', '.join(KERNEL_FAMILIES)}).")
        ensure(validate_positive('variance', self.variance))
        ensure(validate_positive('lengthscale', self.lengthscale))

    def to_dict(self):
        return {'family': self.family, 'variance': self.variance, 'lengthscale': self.lengthscale}

    @classmethod
    def from_dict(cls, payload) -> 'KernelSpec':
        return cls(payload['family'], float(payload['variance']), float(payload['lengthscale']))


@dataclass(frozen=True, eq=False)
class GramMatrix:
    values: np.ndarray
    spec: Optional[KernelSpec]
    ref_version: str

    @property
    def size(self) -> int:
        return self.values.shape[0]


@dataclass(frozen=True)
class PSDReport:
    min_eig: float
    ok: bool

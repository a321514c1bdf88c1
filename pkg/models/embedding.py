"""
Trainable reference measures and the embeddings computed against them.
"""
from dataclasses import dataclass

import numpy as np

from utils.errors import ValidationError
from utils.validators import ensure, validate_positive


@dataclass(frozen=True, eq=False)
class ReferenceParams:
    """
    Unconstrained parameters of the reference measure.

    Realized points are ``scale * tanh(x_raw)`` and weights ``softmax(w_raw)``.
    """
    x_raw: np.ndarray
    w_raw: np.ndarray
    scale: float

    def __post_init__(self):
        x_raw = np.array(self.x_raw, dtype=np.float64)
        if x_raw.ndim == 1:
            x_raw = x_raw.reshape(-1, 1)
        w_raw = np.array(self.w_raw, dtype=np.float64).reshape(-1)
        if x_raw.ndim != 2 or x_raw.shape[0] < 1 or x_raw.shape[1] < 1:
            raise ValidationError(f"x_raw must be a (q, d) matrix with q, d >= 1, got {x_raw.shape}.")
        if w_raw.shape[0] != x_raw.shape[0]:
            raise ValidationError(f"w_raw has {w_raw.shape[0]} entries for {x_raw.shape[0]} atoms.")
        if not (np.all(np.isfinite(x_raw)) and np.all(np.isfinite(w_raw))):
            raise ValidationError("Reference parameters must be finite.")
        ensure(validate_positive('scale', self.scale))
        x_raw.setflags(write=False)
        w_raw.setflags(write=False)
        object.__setattr__(self, 'x_raw', x_raw)
        object.__setattr__(self, 'w_raw', w_raw)
        object.__setattr__(self, 'scale', float(self.scale))

    @property
    def size(self) -> int:
        return self.x_raw.shape[0]

    @property
    def dim(self) -> int:
        return self.x_raw.shape[1]

    @property
    def n_params(self) -> int:
        return self.x_raw.size + self.w_raw.size

    def to_vector(self) -> np.ndarray:
        return np.concatenate([self.x_raw.ravel(), self.w_raw])

    def with_vector(self, vector: np.ndarray) -> 'ReferenceParams':
        q, d = self.x_raw.shape
        vector = np.asarray(vector, dtype=np.float64)
        return ReferenceParams(vector[:q * d].reshape(q, d), vector[q * d:q * d + q], self.scale)

    def to_dict(self):
        return {'scale': self.scale, 'x_raw': self.x_raw.tolist(), 'w_raw': self.w_raw.tolist()}

    @classmethod
    def from_dict(cls, payload) -> 'ReferenceParams':
        try:
            return cls(np.asarray(payload['x_raw'], dtype=np.float64),
                       np.asarray(payload['w_raw'], dtype=np.float64),
                       float(payload['scale']))
        except KeyError as exc:
            raise ValidationError(f"Reference is missing field {exc}.") from exc


@dataclass(frozen=True, eq=False)
class Embedding:
    """Centered g-potential of one measure at the reference atoms."""
    values: np.ndarray
    ref_version: str
    converged: bool
    iterations: int = 0

    @property
    def size(self) -> int:
        return self.values.shape[0]

    def __repr__(self):
        return f"<Embedding q={self.size} ref={self.ref_version} converged={self.converged}>"

"""
Discrete probability measures and labeled collections of them.
"""
import hashlib
from dataclasses import dataclass, field
from typing import Optional, Sequence, Tuple

import numpy as np

from utils.errors import EmptyMeasureError, ValidationError
from utils.validators import (
    ensure,
    validate_labels,
    validate_points,
    validate_same_dim,
    validate_weights,
)


def _frozen(array: np.ndarray) -> np.ndarray:
    array = np.array(array, dtype=np.float64, copy=True)
    array.setflags(write=False)
    return array


@dataclass(frozen=True, eq=False)
class DiscreteMeasure:
    """
    A weighted point cloud: sum_i weights[i] * delta(points[i]).

    Construction drops zero-weight atoms and renormalizes, so every instance
    has strictly positive weights summing to one. Arrays are read-only.
    """
    points: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        points = np.asarray(self.points, dtype=np.float64)
        if points.ndim == 1:
            points = points.reshape(-1, 1)
        weights = np.asarray(self.weights, dtype=np.float64).reshape(-1)
        ensure(validate_points(points))
        ensure(validate_weights(weights, points.shape[0]))

        keep = weights > 0
        if not np.any(keep):
            raise EmptyMeasureError("All weights are zero; a measure needs positive mass.")
        points, weights = points[keep], weights[keep]
        weights = weights / weights.sum()

        object.__setattr__(self, 'points', _frozen(points))
        object.__setattr__(self, 'weights', _frozen(weights))

    @classmethod
    def uniform(cls, points) -> 'DiscreteMeasure':
        points = np.asarray(points, dtype=np.float64)
        if points.ndim == 1:
            points = points.reshape(-1, 1)
        return cls(points, np.full(points.shape[0], 1.0 / points.shape[0]))

    @classmethod
    def dirac(cls, point) -> 'DiscreteMeasure':
        return cls(np.asarray(point, dtype=np.float64).reshape(1, -1), np.ones(1))

    @property
    def size(self) -> int:
        return self.points.shape[0]

    @property
    def dim(self) -> int:
        return self.points.shape[1]

    @property
    def fingerprint(self) -> str:
        """Content hash identifying the measure (used as cache key)."""
        digest = hashlib.sha1()
        digest.update(np.ascontiguousarray(self.points).tobytes())
        digest.update(np.ascontiguousarray(self.weights).tobytes())
        return digest.hexdigest()

    def mean(self) -> np.ndarray:
        return self.weights @ self.points

    def transformed(self, matrix: Optional[np.ndarray] = None,
                    shift: Optional[np.ndarray] = None) -> 'DiscreteMeasure':
        """Push forward through x -> x @ matrix.T + shift (weights unchanged)."""
        points = self.points
        if matrix is not None:
            points = points @ np.asarray(matrix, dtype=np.float64).T
        if shift is not None:
            points = points + np.asarray(shift, dtype=np.float64)
        return DiscreteMeasure(points, self.weights)

    def __eq__(self, other):
        if not isinstance(other, DiscreteMeasure):
            return NotImplemented
        return (np.array_equal(self.points, other.points)
                and np.array_equal(self.weights, other.weights))

    __hash__ = None

    def __repr__(self):
        return f"<DiscreteMeasure n={self.size} d={self.dim}>"


@dataclass(frozen=True)
class AffineMap:
    """Coordinate-wise map x -> (x - shift) / scale."""
    shift: np.ndarray
    scale: np.ndarray

    def apply(self, measure: DiscreteMeasure) -> DiscreteMeasure:
        return DiscreteMeasure((measure.points - self.shift) / self.scale, measure.weights)

    def inverse(self, measure: DiscreteMeasure) -> DiscreteMeasure:
        return DiscreteMeasure(measure.points * self.scale + self.shift, measure.weights)

    def to_dict(self):
        return {'shift': np.asarray(self.shift).tolist(), 'scale': np.asarray(self.scale).tolist()}

    @classmethod
    def from_dict(cls, payload) -> 'AffineMap':
        return cls(np.asarray(payload['shift'], dtype=np.float64),
                   np.asarray(payload['scale'], dtype=np.float64))


@dataclass(frozen=True)
class LabeledDataset:
    """
    Measures with either regression targets or binary labels.

    Exactly one of ``targets`` / ``labels`` is set. ``ids`` name the items
    (file paths or generated names) for tabular outputs.
    """
    measures: Tuple[DiscreteMeasure, ...]
    dim: int
    targets: Optional[np.ndarray] = None
    labels: Optional[np.ndarray] = None
    ids: Tuple[str, ...] = field(default=())

    def __post_init__(self):
        measures = tuple(self.measures)
        object.__setattr__(self, 'measures', measures)
        if (self.targets is None) == (self.labels is None):
            raise ValidationError("A dataset needs exactly one of targets or labels.")
        ensure(validate_same_dim([self.dim] + [m.dim for m in measures]))

        if self.targets is not None:
            values = np.asarray(self.targets, dtype=np.float64).reshape(-1)
            if not np.all(np.isfinite(values)):
                raise ValidationError("Targets must be finite.")
            object.__setattr__(self, 'targets', _frozen(values))
        else:
            values = np.asarray(self.labels).reshape(-1).astype(np.int64)
            ensure(validate_labels(values))
            values = values.copy()
            values.setflags(write=False)
            object.__setattr__(self, 'labels', values)
        if values.shape[0] != len(measures):
            raise ValidationError(
                f"{len(measures)} measures but {values.shape[0]} "
                f"{'targets' if self.targets is not None else 'labels'}.")

        ids = tuple(self.ids) or tuple(f"item-{i:04d}" for i in range(len(measures)))
        if len(ids) != len(measures):
            raise ValidationError(f"{len(measures)} measures but {len(ids)} ids.")
        object.__setattr__(self, 'ids', ids)

    @property
    def kind(self) -> str:
        return 'regression' if self.targets is not None else 'classification'

    @property
    def responses(self) -> np.ndarray:
        """Targets for regression, labels (as floats) for classification."""
        if self.targets is not None:
            return self.targets
        return self.labels.astype(np.float64)

    def __len__(self):
        return len(self.measures)

    def subset(self, indices: Sequence[int]) -> 'LabeledDataset':
        indices = list(indices)
        return LabeledDataset(
            measures=tuple(self.measures[i] for i in indices),
            dim=self.dim,
            targets=None if self.targets is None else self.targets[indices],
            labels=None if self.labels is None else self.labels[indices],
            ids=tuple(self.ids[i] for i in indices),
        )

    def with_measures(self, measures: Sequence[DiscreteMeasure]) -> 'LabeledDataset':
        return LabeledDataset(tuple(measures), self.dim, self.targets, self.labels, self.ids)

"""
Measure ingestion and synthetic datasets.

This module provides:
1. Measure CSV reading/writing (header x1,...,xd,weight)
2. Grayscale images (PGM or CSV grid) as point clouds or co-occurrence measures
3. The toy regression and two-class mixture datasets
4. Dataset normalization, subsampling and random affine perturbations
"""
import csv
import logging
from pathlib import Path
from typing import Iterable, Optional, Sequence, Tuple, Union

import numpy as np

from models.measure import AffineMap, DiscreteMeasure, LabeledDataset
from utils.errors import EmptyMeasureError, ParseError, ValidationError
from utils.validators import ensure, validate_min_int, validate_offset

logger = logging.getLogger(__name__)

PathLike = Union[str, Path]

TOY_MEAN_RANGE = (-0.3, 0.3)
TOY_VARIANCE_RANGE = (0.01 ** 2, 0.02 ** 2)


# ---------------------------------------------------------------------------
# Measure CSV
# ---------------------------------------------------------------------------

def _parse_header(header: Sequence[str], path: PathLike) -> int:
    names = [name.strip() for name in header]
    if len(names) < 2 or names[-1] != 'weight':
        raise ParseError("header must be x1,...,xd,weight", path=path, row=1)
    expected = [f"x{i + 1}" for i in range(len(names) - 1)]
    if names[:-1] != expected:
        raise ParseError(f"header must be {','.join(expected)},weight", path=path, row=1)
    return len(expected)


def load_measure(path: PathLike) -> DiscreteMeasure:
    """
    Read a measure CSV.

    Zero-weight rows are dropped and the remaining weights renormalized;
    row order is preserved.

    Raises:
        ParseError: malformed header or row (with its 1-based line number)
        ValidationError: negative weight
        EmptyMeasureError: every weight is zero
    """
    points, weights = [], []
    with open(path, 'r', encoding='utf-8', newline='') as handle:
        reader = csv.reader(handle)
        try:
            header = next(reader)
        except StopIteration:
            raise ParseError("file is empty", path=path) from None
        dim = _parse_header(header, path)

        for line_number, row in enumerate(reader, start=2):
            if not row or all(not cell.strip() for cell in row):
                continue
            if len(row) != dim + 1:
                raise ParseError(f"expected {dim + 1} columns, got {len(row)}", path=path, row=line_number)
            try:
                values = [float(cell) for cell in row]
            except ValueError:
                raise ParseError("non-numeric value", path=path, row=line_number) from None
            if not np.all(np.isfinite(values)):
                raise ParseError("values must be finite", path=path, row=line_number)
            if values[-1] < 0:
                raise ValidationError(f"{path}: row {line_number}: negative weight {values[-1]}")
            points.append(values[:-1])
            weights.append(values[-1])

    if not weights or not any(w > 0 for w in weights):
        raise EmptyMeasureError(f"{path}: no row has a positive weight")
    return DiscreteMeasure(np.asarray(points), np.asarray(weights))


def write_measure(measure: DiscreteMeasure, path: PathLike) -> None:
    """Write a measure CSV with 17 significant digits (exact float round trip)."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    header = [f"x{i + 1}" for i in range(measure.dim)] + ['weight']
    with open(path, 'w', encoding='utf-8', newline='') as handle:
        writer = csv.writer(handle, lineterminator='\n')
        writer.writerow(header)
        for point, weight in zip(measure.points, measure.weights):
            writer.writerow([format(value, '.17g') for value in point] + [format(weight, '.17g')])


# ---------------------------------------------------------------------------
# Images
# ---------------------------------------------------------------------------

def _pgm_tokens(data: bytes, count: int, path: PathLike) -> Tuple[list, int]:
    """Read ``count`` whitespace-separated header tokens, skipping # comments."""
    tokens, position = [], 0
    while len(tokens) < count:
        while position < len(data) and data[position:position + 1].isspace():
            position += 1
        if position >= len(data):
            raise ParseError("truncated PGM header", path=path)
        if data[position:position + 1] == b'#':
            while position < len(data) and data[position:position + 1] not in (b'\n', b'\r'):
                position += 1
            continue
        start = position
        while position < len(data) and not data[position:position + 1].isspace():
            position += 1
        tokens.append(data[start:position])
    return tokens, position + 1


def load_grayscale(path: PathLike) -> np.ndarray:
    """
    Read a grayscale image as an H x W float matrix.

    Supports PGM (P2 ascii, P5 binary) and headerless CSV grids.
    """
    path = Path(path)
    if path.suffix.lower() == '.pgm':
        data = path.read_bytes()
        tokens, offset = _pgm_tokens(data, 4, path)
        magic = tokens[0]
        try:
            width, height, maxval = (int(t) for t in tokens[1:4])
        except ValueError:
            raise ParseError("non-integer PGM header field", path=path) from None
        if maxval < 1 or maxval > 65535:
            raise ParseError(f"invalid PGM maxval {maxval}", path=path)
        if magic == b'P5':
            dtype = np.dtype('>u2') if maxval > 255 else np.dtype('u1')
            expected = width * height * dtype.itemsize
            raw = data[offset:offset + expected]
            if len(raw) != expected:
                raise ParseError("truncated PGM pixel data", path=path)
            pixels = np.frombuffer(raw, dtype=dtype)
        elif magic == b'P2':
            try:
                pixels = np.array([int(t) for t in data[offset - 1:].split()], dtype=np.int64)
            except ValueError:
                raise ParseError("non-integer PGM pixel", path=path) from None
            if pixels.size != width * height:
                raise ParseError(f"expected {width * height} pixels, got {pixels.size}", path=path)
        else:
            raise ParseError(f"unsupported PGM magic {magic!r}", path=path)
        return pixels.reshape(height, width).astype(np.float64)

    rows = []
    with open(path, 'r', encoding='utf-8', newline='') as handle:
        for line_number, row in enumerate(csv.reader(handle), start=1):
            if not row:
                continue
            try:
                rows.append([float(cell) for cell in row])
            except ValueError:
                raise ParseError("non-numeric pixel", path=path, row=line_number) from None
            if rows and len(rows[-1]) != len(rows[0]):
                raise ParseError("ragged image grid", path=path, row=line_number)
    if not rows:
        raise ParseError("empty image grid", path=path)
    return np.asarray(rows, dtype=np.float64)


def center_crop(image: np.ndarray, crop: Optional[int]) -> np.ndarray:
    if crop is None:
        return image
    ensure(validate_min_int('crop', crop, 1))
    height, width = image.shape
    size_r, size_c = min(crop, height), min(crop, width)
    top, left = (height - size_r) // 2, (width - size_c) // 2
    return image[top:top + size_r, left:left + size_c]


def image_to_cloud(intensities, crop: Optional[int] = None) -> DiscreteMeasure:
    """
    Turn an image into a point cloud weighted by pixel intensity.

    Pixel (r, c) of an H x W image maps to ((c + 0.5) / W, 1 - (r + 0.5) / H),
    so the cloud renders in standard orientation inside [0, 1]^2.
    """
    image = np.asarray(intensities, dtype=np.float64)
    if image.ndim != 2:
        raise ValidationError(f"Image must be a 2-D matrix, got {image.ndim} dimension(s).")
    if np.any(image < 0) or not np.all(np.isfinite(image)):
        raise ValidationError("Pixel intensities must be finite and nonnegative.")
    image = center_crop(image, crop)
    rows, cols = np.nonzero(image > 0)
    if rows.size == 0:
        raise EmptyMeasureError("Image has no positive pixel.")
    height, width = image.shape
    points = np.column_stack([(cols + 0.5) / width, 1.0 - (rows + 0.5) / height])
    return DiscreteMeasure(points, image[rows, cols])


def _glcm_counts(gray: np.ndarray, offset: Sequence[int], levels: int) -> np.ndarray:
    ensure(validate_offset(offset, gray.shape))
    dr, dc = int(offset[0]), int(offset[1])
    height, width = gray.shape
    r0, r1 = max(0, -dr), min(height, height - dr)
    c0, c1 = max(0, -dc), min(width, width - dc)
    first = gray[r0:r1, c0:c1].ravel()
    second = gray[r0 + dr:r1 + dr, c0 + dc:c1 + dc].ravel()
    counts = np.zeros((levels, levels), dtype=np.float64)
    np.add.at(counts, (first, second), 1.0)
    return counts


def _check_gray(gray_image, levels: int) -> np.ndarray:
    ensure(validate_min_int('levels', levels, 1))
    gray = np.asarray(gray_image)
    if gray.ndim != 2:
        raise ValidationError("Gray image must be a 2-D matrix.")
    if not np.all(np.equal(np.mod(gray, 1), 0)):
        raise ValidationError("Gray levels must be integers.")
    gray = gray.astype(np.int64)
    if gray.min() < 0 or gray.max() >= levels:
        raise ValidationError(f"Gray levels must lie in [0, {levels}).")
    return gray


def _levels_to_measure(matrix: np.ndarray, levels: int) -> DiscreteMeasure:
    grid = np.arange(levels, dtype=np.float64) / max(levels - 1, 1)
    ii, jj = np.meshgrid(grid, grid, indexing='ij')
    points = np.column_stack([ii.ravel(), jj.ravel()])
    return DiscreteMeasure(points, matrix.ravel())


def glcm(gray_image, offset: Sequence[int], levels: int) -> DiscreteMeasure:
    """
    Gray-level co-occurrence measure for one offset.

    Counts pairs (image[r, c], image[r + dr, c + dc]) over all positions where
    both pixels exist; atoms sit on {0, ..., L-1}^2 scaled to [0, 1]^2.
    """
    gray = _check_gray(gray_image, levels)
    return _levels_to_measure(_glcm_counts(gray, offset, levels), levels)


def glcm_average(gray_image, offsets: Iterable[Sequence[int]], levels: int) -> DiscreteMeasure:
    """Average of the normalized co-occurrence matrices of several offsets."""
    gray = _check_gray(gray_image, levels)
    offsets = list(offsets)
    if not offsets:
        raise ValidationError("At least one offset is required.")
    total = np.zeros((levels, levels))
    for offset in offsets:
        counts = _glcm_counts(gray, offset, levels)
        total += counts / counts.sum()
    return _levels_to_measure(total / len(offsets), levels)


# ---------------------------------------------------------------------------
# Synthetic datasets
# ---------------------------------------------------------------------------

def toy_field(mean: Sequence[float], sigma: float) -> float:
    """Random-field value of an isotropic Gaussian: (m1 + 0.5 - (m2 + 0.5)^2) / (1 + sigma)."""
    m1, m2 = float(mean[0]), float(mean[1])
    return (m1 + 0.5 - (m2 + 0.5) ** 2) / (1.0 + sigma)


def sample_toy_dataset(count: int, cloud_size: int, seed: int) -> LabeledDataset:
    """
    Isotropic 2-D Gaussians approximated by uniform-weight point clouds.

    Generator: numpy PCG64 seeded with ``seed``. Stream order: all means,
    then all variances, then the cloud samples measure by measure. The
    variance is drawn from [0.01^2, 0.02^2] and sigma = sqrt(variance)
    enters the field formula.
    """
    ensure(validate_min_int('count', count, 1))
    ensure(validate_min_int('cloud_size', cloud_size, 1))
    rng = np.random.default_rng(seed)
    means = rng.uniform(*TOY_MEAN_RANGE, size=(count, 2))
    sigmas = np.sqrt(rng.uniform(*TOY_VARIANCE_RANGE, size=count))

    measures, targets = [], []
    for mean, sigma in zip(means, sigmas):
        points = mean + sigma * rng.standard_normal((cloud_size, 2))
        measures.append(DiscreteMeasure.uniform(points))
        targets.append(toy_field(mean, sigma))

    ids = tuple(f"toy-{i:04d}" for i in range(count))
    return LabeledDataset(tuple(measures), dim=2, targets=np.asarray(targets), ids=ids)


def sample_mixture_dataset(count: int, cloud_size: int, seed: int,
                           separation: float = 1.0, spread: float = 0.25) -> LabeledDataset:
    """
    Two-class task: each cloud comes from a two-component Gaussian mixture.

    Class 0 mixes components centred at (-s, 0) and (0, -s), class 1 at
    (s, 0) and (0, s), with s = ``separation``. Stream order: the label
    permutation, then per measure the mixing proportion, the centre jitter
    and the samples.
    """
    ensure(validate_min_int('count', count, 1))
    ensure(validate_min_int('cloud_size', cloud_size, 1))
    rng = np.random.default_rng(seed)
    labels = rng.permutation(np.arange(count) % 2)
    centres = {
        0: np.array([[-separation, 0.0], [0.0, -separation]]),
        1: np.array([[separation, 0.0], [0.0, separation]]),
    }

    measures = []
    for label in labels:
        proportion = rng.uniform(0.3, 0.7)
        jitter = 0.1 * separation * rng.standard_normal((2, 2))
        component = (rng.random(cloud_size) >= proportion).astype(int)
        points = (centres[int(label)] + jitter)[component] + spread * rng.standard_normal((cloud_size, 2))
        measures.append(DiscreteMeasure.uniform(points))

    ids = tuple(f"mix-{i:04d}" for i in range(count))
    return LabeledDataset(tuple(measures), dim=2, labels=labels, ids=ids)


# ---------------------------------------------------------------------------
# Transformations
# ---------------------------------------------------------------------------

def normalize_dataset(ds: LabeledDataset) -> Tuple[LabeledDataset, AffineMap]:
    """
    Center and rescale so the pooled point set has zero mean and unit
    variance per coordinate (clouds weighted equally, atoms by their weight).

    Returns the normalized dataset and the map that was applied.
    """
    if len(ds) == 0:
        raise ValidationError("Cannot normalize an empty dataset.")
    means = np.array([m.mean() for m in ds.measures])
    shift = means.mean(axis=0)
    variance = np.mean([m.weights @ (m.points - shift) ** 2 for m in ds.measures], axis=0)
    flat = np.nonzero(variance <= 0)[0]
    if flat.size:
        names = ', '.join(f"x{i + 1}" for i in flat)
        raise ValidationError(f"Pooled variance is zero in coordinate(s) {names}.")
    mapping = AffineMap(shift=shift, scale=np.sqrt(variance))
    return ds.with_measures([mapping.apply(m) for m in ds.measures]), mapping


def coordinate_scale(measures: Sequence[DiscreteMeasure]) -> float:
    """Largest absolute coordinate over all measures, 1 for empty or all-zero data."""
    if not measures:
        return 1.0
    return max(float(np.max(np.abs(m.points))) for m in measures) or 1.0


def subsample(measure: DiscreteMeasure, k: int, seed: int) -> DiscreteMeasure:
    """
    Empirical measure of ``k`` i.i.d. draws from ``measure``.

    Repeated draws of one atom merge into a single atom of weight count / k.
    """
    ensure(validate_min_int('k', k, 1))
    rng = np.random.default_rng(seed)
    draws = rng.choice(measure.size, size=k, p=measure.weights)
    counts = np.bincount(draws, minlength=measure.size)
    keep = counts > 0
    return DiscreteMeasure(measure.points[keep], counts[keep] / k)


def random_affine(measure: DiscreteMeasure, max_shift: float, max_angle: float,
                  seed: int) -> DiscreteMeasure:
    """Random rotation about the measure's mean followed by a random translation (2-D)."""
    if measure.dim != 2:
        raise ValidationError("Random affine perturbations are defined for 2-D measures.")
    rng = np.random.default_rng(seed)
    angle = rng.uniform(-max_angle, max_angle)
    shift = rng.uniform(-max_shift, max_shift, size=2)
    cos, sin = np.cos(angle), np.sin(angle)
    rotation = np.array([[cos, -sin], [sin, cos]])
    centre = measure.mean()
    points = (measure.points - centre) @ rotation.T + centre + shift
    return DiscreteMeasure(points, measure.weights)

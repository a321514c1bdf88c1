"""
Dataset manifests.

A manifest is a JSON document listing measure files with their responses:

    {"format": "sinkgp.manifest/1", "dim": 2,
     "items": [{"id": "toy-0000", "path": "toy-0000.csv", "target": 0.25},
               {"image": "digit.pgm", "label": 1}, ...]}

Relative paths resolve against the manifest's directory. ``path`` items are
measure CSVs; ``image`` items are grayscale files turned into measures by
``ImageOptions`` (point cloud or co-occurrence matrix).
"""
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import List, Optional, Tuple

import numpy as np

from models.measure import DiscreteMeasure, LabeledDataset
from services.measures import (
    center_crop,
    glcm_average,
    image_to_cloud,
    load_grayscale,
    load_measure,
    write_measure,
)
from utils import formats
from utils.errors import BatchError, SinkgpError, ValidationError

logger = logging.getLogger(__name__)

IMAGE_MODES = ('cloud', 'glcm')


@dataclass(frozen=True)
class ImageOptions:
    """How image items become measures."""
    mode: str = 'cloud'
    crop: Optional[int] = None
    levels: int = 8
    offsets: Tuple[Tuple[int, int], ...] = ((0, 1),)

    def __post_init__(self):
        if self.mode not in IMAGE_MODES:
            raise ValidationError(f"Unknown image mode '{self.mode}' (choose from {', '.join(IMAGE_MODES)}).")
        if self.mode == 'glcm' and not self.offsets:
            raise ValidationError("GLCM mode needs at least one offset.")

    def convert(self, image: np.ndarray) -> DiscreteMeasure:
        if self.mode == 'cloud':
            return image_to_cloud(image, self.crop)
        gray = center_crop(np.asarray(image, dtype=np.float64), self.crop)
        top = float(np.max(gray)) if gray.size else 0.0
        quantized = np.zeros(gray.shape, dtype=np.int64) if top <= 0 else \
            np.minimum((gray / top * self.levels).astype(np.int64), self.levels - 1)
        return glcm_average(quantized, self.offsets, self.levels)


@dataclass(frozen=True, eq=False)
class Manifest:
    """Measures of a manifest with whatever responses it carries."""
    ids: Tuple[str, ...]
    measures: Tuple[DiscreteMeasure, ...]
    dim: int
    targets: Optional[np.ndarray] = None
    labels: Optional[np.ndarray] = None
    source: Optional[Path] = None

    def __len__(self):
        return len(self.measures)

    @property
    def has_responses(self) -> bool:
        return self.targets is not None or self.labels is not None

    def to_dataset(self) -> LabeledDataset:
        if not self.has_responses:
            raise ValidationError(f"{self.source}: manifest items carry neither targets nor labels.")
        return LabeledDataset(self.measures, self.dim, self.targets, self.labels, self.ids)


def _load_item(item: dict, base: Path, image: ImageOptions) -> DiscreteMeasure:
    try:
        if 'path' in item:
            return load_measure(base / item['path'])
        if 'image' in item:
            return image.convert(load_grayscale(base / item['image']))
    except OSError as e:
        raise ValidationError(f"cannot read {e.filename}: {e.strerror}") from e
    raise ValidationError("item needs a 'path' (measure CSV) or an 'image' entry")


def _column(items: List[dict], key: str, cast, path) -> np.ndarray:
    values = []
    for index, item in enumerate(items):
        try:
            values.append(cast(item[key]))
        except (TypeError, ValueError) as e:
            raise ValidationError(f"{path}: item {index} has an invalid {key} {item[key]!r}.") from e
    return np.array(values)


def _responses(items: List[dict], path) -> Tuple[Optional[np.ndarray], Optional[np.ndarray]]:
    has_target = ['target' in item for item in items]
    has_label = ['label' in item for item in items]
    if any(has_target) and any(has_label):
        raise ValidationError(f"{path}: manifest mixes targets and labels.")
    if any(has_target):
        if not all(has_target):
            raise ValidationError(f"{path}: some items have no target.")
        return _column(items, 'target', float, path), None
    if any(has_label):
        if not all(has_label):
            raise ValidationError(f"{path}: some items have no label.")
        return None, _column(items, 'label', int, path)
    return None, None


def load_manifest(path, image: Optional[ImageOptions] = None) -> Manifest:
    """Read a manifest and every measure it lists; per-item failures are reported together."""
    path = Path(path)
    document = formats.read_json(path, formats.MANIFEST_FORMAT)
    items = document.get('items')
    if not isinstance(items, list):
        raise ValidationError(f"{path}: manifest needs an 'items' list.")
    image = image or ImageOptions()
    base = path.parent

    measures, failures = [], []
    for index, item in enumerate(items):
        try:
            measures.append(_load_item(item, base, image))
        except SinkgpError as error:
            failures.append((index, error))
    if failures:
        raise BatchError(failures)

    dims = {m.dim for m in measures}
    dim = document.get('dim')
    if dim is None:
        if len(dims) > 1:
            raise ValidationError(f"{path}: measures have different dimensions {sorted(dims)}.")
        dim = dims.pop() if dims else 2
    dim = int(dim)
    if dims - {dim}:
        raise ValidationError(f"{path}: manifest declares dim={dim} but measures have {sorted(dims)}.")

    targets, labels = _responses(items, path)
    ids = tuple(str(item.get('id', item.get('path', item.get('image', f"item-{i:04d}"))))
                for i, item in enumerate(items))
    logger.debug("Loaded %d measures from %s", len(measures), path)
    return Manifest(ids, tuple(measures), dim, targets, labels, path)


def load_dataset(path, image: Optional[ImageOptions] = None) -> LabeledDataset:
    return load_manifest(path, image).to_dataset()


def write_manifest(ds: LabeledDataset, out_dir, name: str = 'manifest.json') -> Path:
    """Write every measure as ``<id>.csv`` next to a manifest listing them."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    items = []
    for index, (item_id, measure) in enumerate(zip(ds.ids, ds.measures)):
        filename = f"{item_id}.csv"
        write_measure(measure, out_dir / filename)
        entry = {'id': item_id, 'path': filename}
        if ds.targets is not None:
            entry['target'] = float(ds.targets[index])
        else:
            entry['label'] = int(ds.labels[index])
        items.append(entry)
    return formats.write_json(out_dir / name, formats.MANIFEST_FORMAT, {'dim': ds.dim, 'items': items})

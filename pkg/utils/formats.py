"""
Versioned file formats.

Every JSON/JSONL document written by sinkgp carries a ``format`` tag and
readers reject tags they do not know. Tabular outputs are plain CSV with a
header row.
"""
import csv
import json
import logging
from pathlib import Path
from typing import Dict, Iterable, List, Sequence, Union

import numpy as np

from utils.errors import ParseError
from utils.validators import validate_format_tag

logger = logging.getLogger(__name__)

PathLike = Union[str, Path]

MANIFEST_FORMAT = 'sinkgp.manifest/1'
REFERENCE_FORMAT = 'sinkgp.reference/1'
MODEL_FORMAT = 'sinkgp.model/1'
GRAM_FORMAT = 'sinkgp.gram/1'
TRACE_FORMAT = 'sinkgp.trace/1'


def write_json(path: PathLike, fmt: str, payload: Dict) -> Path:
    """Write ``payload`` with its format tag first."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    document = {'format': fmt}
    document.update(payload)
    with open(path, 'w', encoding='utf-8') as f:
        json.dump(document, f, indent=2)
    logger.debug("Wrote %s to %s", fmt, path)
    return path


def read_json(path: PathLike, fmt: str) -> Dict:
    path = Path(path)
    try:
        with open(path, 'r', encoding='utf-8') as f:
            document = json.load(f)
    except json.JSONDecodeError as e:
        raise ParseError(f"invalid JSON ({e.msg})", path=path, row=e.lineno) from e
    if not isinstance(document, dict):
        raise ParseError("expected a JSON object", path=path)
    is_valid, error = validate_format_tag(document, fmt)
    if not is_valid:
        raise ParseError(error, path=path)
    return document


def write_jsonl(path: PathLike, fmt: str, records: Iterable[Dict]) -> Path:
    """One JSON object per line, each tagged with ``fmt``."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, 'w', encoding='utf-8') as f:
        for record in records:
            line = {'format': fmt}
            line.update(record)
            f.write(json.dumps(line) + '\n')
    return path


def read_jsonl(path: PathLike, fmt: str) -> List[Dict]:
    records = []
    with open(path, 'r', encoding='utf-8') as f:
        for line_number, line in enumerate(f, start=1):
            if not line.strip():
                continue
            try:
                record = json.loads(line)
            except json.JSONDecodeError as e:
                raise ParseError(f"invalid JSON ({e.msg})", path=path, row=line_number) from e
            is_valid, error = validate_format_tag(record, fmt)
            if not is_valid:
                raise ParseError(error, path=path, row=line_number)
            records.append(record)
    return records


def write_table(path: PathLike, header: Sequence[str], rows: Iterable[Sequence]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, 'w', encoding='utf-8', newline='') as f:
        writer = csv.writer(f, lineterminator='\n')
        writer.writerow(header)
        for row in rows:
            writer.writerow([format_cell(value) for value in row])
    return path


def read_table(path: PathLike) -> List[Dict[str, str]]:
    with open(path, 'r', encoding='utf-8', newline='') as f:
        return list(csv.DictReader(f))


def format_cell(value) -> str:
    if isinstance(value, (bool, np.bool_)):
        return 'true' if value else 'false'
    if isinstance(value, float):
        return format(value, '.17g')
    return str(value)

"""File helpers: atomic writes, CSV and JSON artifacts"""

import csv
import gzip
import io
import json
import os
import tempfile
from pathlib import Path
from typing import Any, Iterable, List, Sequence, Union

PathLike = Union[str, Path]


def atomic_write_text(path: PathLike, text: str) -> Path:
    """Write text to path via a temporary file and rename"""
    return atomic_write_bytes(path, text.encode("utf-8"))


def atomic_write_bytes(path: PathLike, data: bytes) -> Path:
    """Write bytes to path via a temporary file in the same directory and rename"""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as f:
            f.write(data)
            f.flush()
            os.fsync(f.fileno())
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
    return path


def format_float(value: float) -> str:
    """Shortest round-tripping text for a float"""
    return repr(float(value))


def csv_text(header: Sequence[str], rows: Iterable[Sequence[Any]]) -> str:
    """Render rows as CSV text with floats in round-trip form"""
    buffer = io.StringIO()
    writer = csv.writer(buffer, lineterminator="\n")
    writer.writerow(header)
    for row in rows:
        writer.writerow([format_float(v) if isinstance(v, float) else v for v in row])
    return buffer.getvalue()


def write_csv(path: PathLike, header: Sequence[str], rows: Iterable[Sequence[Any]]) -> Path:
    """Atomically write a CSV file"""
    return atomic_write_text(path, csv_text(header, rows))


def write_csv_gz(path: PathLike, header: Sequence[str], rows: Iterable[Sequence[Any]]) -> Path:
    """Atomically write a gzip-compressed CSV file (mtime pinned for stable bytes)"""
    raw = csv_text(header, rows).encode("utf-8")
    buffer = io.BytesIO()
    with gzip.GzipFile(fileobj=buffer, mode="wb", mtime=0) as gz:
        gz.write(raw)
    return atomic_write_bytes(path, buffer.getvalue())


def read_csv(path: PathLike) -> List[dict]:
    """Read a CSV file (optionally gzip-compressed) into dict rows"""
    path = Path(path)
    opener = gzip.open if path.suffix == ".gz" else open
    with opener(path, "rt", newline="") as f:
        return list(csv.DictReader(f))


def write_json(path: PathLike, payload: Any) -> Path:
    """Atomically write JSON with sorted keys"""
    return atomic_write_text(path, json.dumps(payload, indent=2, sort_keys=True) + "\n")


def read_json(path: PathLike) -> Any:
    """Read a JSON file"""
    with open(path, "r", encoding="utf-8") as f:
        return json.load(f)

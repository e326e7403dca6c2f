"""
Artifact encoding and atomic writes.

CSV: comma separated, '.' decimal point, header row, LF line endings, UTF-8.
Every row starts with the run's (master_seed, config_hash, version); every
JSON document carries them under "meta".
"""
import csv
import hashlib
import io
import json
import os
import tempfile
from pathlib import Path

META_COLUMNS = ["master_seed", "config_hash", "version"]


def _cell(value):
    if isinstance(value, float):
        return repr(float(value))
    return value


def csv_bytes(header, rows, meta: dict) -> bytes:
    buffer = io.StringIO()
    writer = csv.writer(buffer, lineterminator="\n")
    writer.writerow(META_COLUMNS + list(header))
    prefix = [meta[k] for k in META_COLUMNS]
    for row in rows:
        if isinstance(row, dict):
            row = [row.get(column, "") for column in header]
        writer.writerow(prefix + [_cell(v) for v in row])
    return buffer.getvalue().encode("utf-8")


def json_bytes(payload: dict, meta: dict) -> bytes:
    document = {"meta": meta, **payload}
    return (json.dumps(document, indent=2, sort_keys=True, default=_json_default) + "\n").encode("utf-8")


def _json_default(value):
    if hasattr(value, "tolist"):
        return value.tolist()
    if hasattr(value, "numerator") and hasattr(value, "denominator"):
        return f"{value.numerator}/{value.denominator}"
    raise TypeError(f"Cannot serialise {type(value).__name__}.")


def sha256(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


def atomic_write(path, data: bytes) -> None:
    """Write to a temporary file in the target directory, then rename over the target."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", dir=path.parent)
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
            fh.flush()
            os.fsync(fh.fileno())
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise

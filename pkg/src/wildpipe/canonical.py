"""Canonical JSON document helpers shared by every pipeline stage.

All on-disk documents use the same shape: two-space indentation, sorted
keys, UTF-8, LF line endings, one trailing newline. Equal inputs always
produce byte-identical output; the orchestrator's content digests and the
idempotence guarantees of the CLI depend on this.
"""

from __future__ import annotations

import hashlib
import json
import os
import tempfile
from pathlib import Path
from typing import Any


def canonical_dumps(obj: Any) -> str:
    return json.dumps(obj, indent=2, sort_keys=True, ensure_ascii=False) + "\n"


def write_bytes_atomic(path: Path | str, data: bytes) -> None:
    """Write via a temp file in the same directory, fsync, then rename."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
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


def write_document(path: Path | str, obj: Any) -> None:
    write_bytes_atomic(path, canonical_dumps(obj).encode("utf-8"))


def sha256_hex(data: bytes | str) -> str:
    if isinstance(data, str):
        data = data.encode("utf-8")
    return hashlib.sha256(data).hexdigest()


def file_digest(path: Path | str) -> str:
    return sha256_hex(Path(path).read_bytes())

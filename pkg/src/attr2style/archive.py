"""Single-file container for named arrays plus JSON metadata.

Layout: a zip holding ``params.npz`` (numpy typed arrays) and ``meta.json``.
"""

from __future__ import annotations

import io
import json
import zipfile
from pathlib import Path

import numpy as np


class CorruptArchiveError(ValueError):
    pass


def write_archive(path: str | Path, arrays: dict[str, np.ndarray], meta: dict) -> None:
    buf = io.BytesIO()
    np.savez(buf, **arrays)
    with zipfile.ZipFile(path, "w", compression=zipfile.ZIP_STORED) as zf:
        zf.writestr("params.npz", buf.getvalue())
        zf.writestr("meta.json", json.dumps(meta, indent=2, sort_keys=True))


def read_archive(path: str | Path) -> tuple[dict[str, np.ndarray], dict]:
    try:
        with zipfile.ZipFile(path) as zf:
            meta = json.loads(zf.read("meta.json"))
            with np.load(io.BytesIO(zf.read("params.npz")), allow_pickle=False) as npz:
                arrays = {k: npz[k] for k in npz.files}
    except FileNotFoundError:
        raise
    except (zipfile.BadZipFile, KeyError, ValueError, OSError, EOFError) as exc:
        raise CorruptArchiveError(f"corrupt checkpoint {path}: {exc}") from None
    return arrays, meta

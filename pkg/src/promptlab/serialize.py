"""Deterministic JSON persistence helpers used by every file format.

All artifact files are plain JSON with sorted keys so that identical runs
produce byte-identical files (float64 values round-trip exactly through
repr). Every format carries a ``format_version`` field.
"""

from __future__ import annotations

import hashlib
import json
import os

from .errors import DataError


def dump_json(obj, path: str) -> None:
    tmp = path + ".tmp"
    with open(tmp, "w") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)
        fh.write("\n")
    os.replace(tmp, path)


def dumps_json(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True) + "\n"


def load_json(path: str):
    try:
        with open(path) as fh:
            return json.load(fh)
    except FileNotFoundError:
        raise DataError(f"file not found: {path}")
    except json.JSONDecodeError as exc:
        raise DataError(f"not valid JSON: {path} ({exc})")


def file_sha256(path: str) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            digest.update(chunk)
    return digest.hexdigest()


def expect_version(payload: dict, kind: str, version: int, path: str) -> None:
    if not isinstance(payload, dict) or payload.get("kind") != kind:
        raise DataError(f"{path}: expected a {kind!r} file")
    if payload.get("format_version") != version:
        raise DataError(
            f"{path}: format_version {payload.get('format_version')!r}, expected {version}"
        )

"""Weight files: a text header followed by a little-endian float64 payload.

Layout::

    DABW <format version>\n
    <one line of JSON: kind, vocabulary, config, tensor table, sha256>\n
    <payload bytes>

The tensor table lists name, shape and byte offset of each matrix. Loading
checks the magic line, the version, every shape and the payload checksum.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict
from pathlib import Path
from typing import Any, Mapping

import numpy as np

from .model import LMBundle, LMConfig
from .vocab import Vocabulary

MAGIC = "DABW"
FORMAT_VERSION = 1


class WeightFileError(ValueError):
    """The weight file is malformed, corrupted or of the wrong kind."""


def save_weights(
    path: str | Path,
    kind: str,
    vocabulary: tuple[str, ...],
    config: Mapping[str, Any],
    arrays: Mapping[str, np.ndarray],
) -> None:
    table, chunks, offset = [], [], 0
    for name in sorted(arrays):
        arr = np.ascontiguousarray(arrays[name], dtype="<f8")
        raw = arr.tobytes()
        table.append({"name": name, "shape": list(arr.shape), "offset": offset, "nbytes": len(raw)})
        chunks.append(raw)
        offset += len(raw)
    payload = b"".join(chunks)
    header = {
        "kind": kind,
        "format_version": FORMAT_VERSION,
        "vocabulary": list(vocabulary),
        "config": dict(config),
        "tensors": table,
        "sha256": hashlib.sha256(payload).hexdigest(),
    }
    text = json.dumps(header, sort_keys=True, separators=(",", ":"))
    with open(path, "wb") as fh:
        fh.write(f"{MAGIC} {FORMAT_VERSION}\n".encode())
        fh.write(text.encode("utf-8") + b"\n")
        fh.write(payload)


def load_weights(path: str | Path, kind: str | None = None) -> tuple[dict[str, Any], dict[str, np.ndarray]]:
    data = Path(path).read_bytes()
    try:
        first, rest = data.split(b"\n", 1)
        header_line, payload = rest.split(b"\n", 1)
        magic, version = first.decode().split()
        header = json.loads(header_line)
    except (ValueError, UnicodeDecodeError) as exc:
        raise WeightFileError(f"{path}: unreadable header") from exc
    if magic != MAGIC or int(version) != FORMAT_VERSION:
        raise WeightFileError(f"{path}: unsupported format {magic} {version}")
    if kind is not None and header.get("kind") != kind:
        raise WeightFileError(f"{path}: expected kind {kind!r}, found {header.get('kind')!r}")
    if hashlib.sha256(payload).hexdigest() != header["sha256"]:
        raise WeightFileError(f"{path}: payload checksum mismatch")
    arrays = {}
    for entry in header["tensors"]:
        shape = tuple(entry["shape"])
        start, nbytes = entry["offset"], entry["nbytes"]
        if nbytes != 8 * int(np.prod(shape, dtype=np.int64)) or start + nbytes > len(payload):
            raise WeightFileError(f"{path}: tensor {entry['name']} does not match its shape")
        arrays[entry["name"]] = np.frombuffer(payload[start:start + nbytes], dtype="<f8").reshape(shape).copy()
    return header, arrays


def save_lm(path: str | Path, bundle: LMBundle) -> None:
    save_weights(path, "lm", bundle.vocabulary.tokens, asdict(bundle.config), bundle.params)


def load_lm(path: str | Path) -> LMBundle:
    header, arrays = load_weights(path, "lm")
    try:
        return LMBundle(Vocabulary(tuple(header["vocabulary"])), LMConfig(**header["config"]), arrays)
    except (TypeError, ValueError) as exc:
        raise WeightFileError(f"{path}: {exc}") from exc

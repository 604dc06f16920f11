"""Versioned binary container for model parameters and bound tables.

Layout: an 8-byte magic, one JSON header line (utf-8, newline terminated),
then the raw array payload. Arrays are stored C-order little-endian in
sorted-name order; the header records dtype, shape, offset and byte length
per array plus a sha256 over the whole payload. Round-trips are bit exact.

Structured-text artifacts (split manifests, prototype sets, experiment
results) use plain JSON with a ``format``/``version`` field; helpers for
those live here too so every format writes through one choke point.
"""

from __future__ import annotations

import hashlib
import json
from pathlib import Path

import numpy as np

MAGIC = b"ACFBIN1\n"
CONTAINER_VERSION = 1

class ContainerError(ValueError):
    """Raised for malformed, truncated or checksum-failing container files."""


def _canonical(arr: np.ndarray) -> np.ndarray:
    """Return ``arr`` as a C-contiguous array in one of the storable dtypes."""
    if arr.dtype.kind == "f":
        return np.ascontiguousarray(arr, dtype="<f8")
    if arr.dtype.kind in "iub":
        return np.ascontiguousarray(arr, dtype="<i8")
    raise ContainerError(f"unsupported array dtype {arr.dtype!r}")


def save_container(path: str | Path, kind: str, meta: dict, arrays: dict[str, np.ndarray]) -> None:
    """Write ``arrays`` plus scalar metadata to ``path``.

    ``kind`` tags what the file holds (``"mcvq"``, ``"naive_bayes"``,
    ``"bound_tables"``); loaders check it before touching the payload.
    ``meta`` must be JSON-serializable.
    """
    payload = bytearray()
    directory = []
    for name in sorted(arrays):
        arr = _canonical(np.asarray(arrays[name]))
        raw = arr.tobytes(order="C")
        directory.append(
            {
                "name": name,
                "dtype": str(arr.dtype.str),
                "shape": list(arr.shape),
                "offset": len(payload),
                "nbytes": len(raw),
            }
        )
        payload.extend(raw)
    header = {
        "format": "activecf-container",
        "version": CONTAINER_VERSION,
        "kind": kind,
        "meta": meta,
        "arrays": directory,
        "payload_sha256": hashlib.sha256(bytes(payload)).hexdigest(),
    }
    header_line = json.dumps(header, sort_keys=True, separators=(",", ":")).encode() + b"\n"
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(header_line)
        fh.write(bytes(payload))


def load_container(path: str | Path, expected_kind: str | None = None) -> tuple[dict, dict[str, np.ndarray]]:
    """Read a container, verify its checksum, and return ``(meta, arrays)``.

    Loaded arrays are marked read-only; callers that need to mutate must copy.
    """
    with open(path, "rb") as fh:
        blob = fh.read()
    if not blob.startswith(MAGIC):
        raise ContainerError(f"{path}: not an activecf container (bad magic)")
    nl = blob.find(b"\n", len(MAGIC))
    if nl < 0:
        raise ContainerError(f"{path}: truncated header")
    try:
        header = json.loads(blob[len(MAGIC) : nl + 1].decode())
    except json.JSONDecodeError as exc:
        raise ContainerError(f"{path}: unparseable header: {exc}") from exc
    if header.get("format") != "activecf-container":
        raise ContainerError(f"{path}: unknown format tag {header.get('format')!r}")
    if header.get("version") != CONTAINER_VERSION:
        raise ContainerError(f"{path}: unsupported container version {header.get('version')!r}")
    if expected_kind is not None and header.get("kind") != expected_kind:
        raise ContainerError(f"{path}: kind is {header.get('kind')!r}, expected {expected_kind!r}")
    payload = blob[nl + 1 :]
    digest = hashlib.sha256(payload).hexdigest()
    if digest != header.get("payload_sha256"):
        raise ContainerError(f"{path}: payload checksum mismatch")
    arrays: dict[str, np.ndarray] = {}
    for entry in header["arrays"]:
        start, nbytes = entry["offset"], entry["nbytes"]
        if start + nbytes > len(payload):
            raise ContainerError(f"{path}: array {entry['name']!r} overruns payload")
        arr = np.frombuffer(payload[start : start + nbytes], dtype=np.dtype(entry["dtype"]))
        arr = arr.reshape(entry["shape"])
        arr.flags.writeable = False
        arrays[entry["name"]] = arr
    return header["meta"], arrays


def container_kind(path: str | Path) -> str:
    """Read just the kind tag, without validating the payload."""
    with open(path, "rb") as fh:
        blob = fh.read(len(MAGIC) + 65536)
    if not blob.startswith(MAGIC):
        raise ContainerError(f"{path}: not an activecf container (bad magic)")
    nl = blob.find(b"\n", len(MAGIC))
    if nl < 0:
        raise ContainerError(f"{path}: truncated header")
    header = json.loads(blob[len(MAGIC) : nl + 1].decode())
    return header.get("kind", "")


def save_json(path: str | Path, doc: dict) -> None:
    """Write a structured-text artifact deterministically (sorted keys)."""
    text = json.dumps(doc, sort_keys=True, indent=2) + "\n"
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(text)


def load_json(path: str | Path, expected_format: str, max_version: int = 1) -> dict:
    with open(path, "r", encoding="utf-8") as fh:
        doc = json.load(fh)
    if doc.get("format") != expected_format:
        raise ContainerError(f"{path}: format is {doc.get('format')!r}, expected {expected_format!r}")
    if not isinstance(doc.get("version"), int) or doc["version"] > max_version:
        raise ContainerError(f"{path}: unsupported version {doc.get('version')!r}")
    return doc
